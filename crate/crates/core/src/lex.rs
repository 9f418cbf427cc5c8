//! Tokenizer and the expression/condition grammar shared by the model and feature languages.

use std::fmt;

use thiserror::Error;

use crate::model::{Condition, Expr, Porv, Rel};

/// Positioned syntax error. Lines and columns are 1-based.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{line}:{column}: {message}")]
pub struct ParseDiagnostic {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    Ident(String),
    Num(f64),
    Sym(&'static str),
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "`{s}`"),
            Tok::Num(v) => write!(f, "number {v}"),
            Tok::Sym(s) => write!(f, "`{s}`"),
            Tok::Eof => write!(f, "end of input"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub tok: Tok,
    pub line: usize,
    pub column: usize,
}

// Longest match first.
const SYMBOLS: &[&str] = &[
    "|=>", "|->", "##", "@+", "@-", "&&", "||", "==", "<=", ">=", "!=", "(", ")", "[", "]", ",", ";", ":",
    "=", "<", ">", "+", "-", "*", "/", "'", "$", "&", "@", "!", "|",
];

pub fn tokenize(text: &str) -> Result<Vec<Token>, ParseDiagnostic> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    let err = |line, column, message: String| ParseDiagnostic { line, column, message };
    while i < chars.len() {
        let c = chars[i];
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == '/' && chars.get(i + 1) == Some(&'/') {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        let (start_line, start_col) = (line, col);
        if c.is_ascii_alphabetic() || c == '_' {
            let s = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            col += i - s;
            out.push(Token { tok: Tok::Ident(chars[s..i].iter().collect()), line: start_line, column: start_col });
            continue;
        }
        if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
            let s = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let lit: String = chars[s..i].iter().collect();
            col += i - s;
            let v: f64 = lit
                .parse()
                .map_err(|_| err(start_line, start_col, format!("malformed number `{lit}`")))?;
            out.push(Token { tok: Tok::Num(v), line: start_line, column: start_col });
            continue;
        }
        let rest: String = chars[i..chars.len().min(i + 3)].iter().collect();
        match SYMBOLS.iter().find(|s| rest.starts_with(**s)) {
            Some(s) => {
                i += s.len();
                col += s.len();
                out.push(Token { tok: Tok::Sym(s), line: start_line, column: start_col });
            }
            None => return Err(err(line, col, format!("unexpected character `{c}`"))),
        }
    }
    out.push(Token { tok: Tok::Eof, line, column: col });
    Ok(out)
}

/// One atom of a condition as written; callers decide which kinds they accept.
#[derive(Debug, Clone, PartialEq)]
pub enum Atom {
    Porv(Porv),
    /// `mode'==X`
    NextLocation(String),
    /// `x'==e`
    Assign(String, Expr),
    True,
}

#[derive(Debug, Clone)]
pub struct Cursor {
    toks: Vec<Token>,
    pos: usize,
}

impl Cursor {
    pub fn new(text: &str) -> Result<Self, ParseDiagnostic> {
        Ok(Self { toks: tokenize(text)?, pos: 0 })
    }

    pub fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    pub fn peek_at(&self, k: usize) -> &Tok {
        &self.toks[(self.pos + k).min(self.toks.len() - 1)].tok
    }

    pub fn token(&self) -> &Token {
        &self.toks[self.pos]
    }

    pub fn pos(&self) -> usize {
        self.pos
    }

    pub fn reset(&mut self, pos: usize) {
        self.pos = pos;
    }

    pub fn bump(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    pub fn at_eof(&self) -> bool {
        matches!(self.peek(), Tok::Eof)
    }

    pub fn error_here(&self, message: impl Into<String>) -> ParseDiagnostic {
        let t = self.token();
        ParseDiagnostic { line: t.line, column: t.column, message: message.into() }
    }

    pub fn unexpected(&self, wanted: &str) -> ParseDiagnostic {
        self.error_here(format!("expected {wanted}, found {}", self.peek()))
    }

    pub fn is_sym(&self, s: &str) -> bool {
        matches!(self.peek(), Tok::Sym(x) if *x == s)
    }

    pub fn is_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(x) if x == kw)
    }

    pub fn eat_sym(&mut self, s: &str) -> bool {
        if self.is_sym(s) {
            self.bump();
            true
        } else {
            false
        }
    }

    pub fn eat_kw(&mut self, kw: &str) -> bool {
        if self.is_kw(kw) {
            self.bump();
            true
        } else {
            false
        }
    }

    pub fn expect_sym(&mut self, s: &str) -> Result<(), ParseDiagnostic> {
        if self.eat_sym(s) {
            Ok(())
        } else {
            Err(self.unexpected(&format!("`{s}`")))
        }
    }

    pub fn expect_kw(&mut self, kw: &str) -> Result<(), ParseDiagnostic> {
        if self.eat_kw(kw) {
            Ok(())
        } else {
            Err(self.unexpected(&format!("`{kw}`")))
        }
    }

    pub fn ident(&mut self) -> Result<String, ParseDiagnostic> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.bump();
                Ok(s)
            }
            _ => Err(self.unexpected("identifier")),
        }
    }

    /// Number with an optional leading sign.
    pub fn signed_number(&mut self) -> Result<f64, ParseDiagnostic> {
        let neg = if self.eat_sym("-") {
            true
        } else {
            self.eat_sym("+");
            false
        };
        match *self.peek() {
            Tok::Num(v) => {
                self.bump();
                Ok(if neg { -v } else { v })
            }
            _ => Err(self.unexpected("number")),
        }
    }

    /// Comma-separated identifiers (possibly empty when `allow_empty`).
    pub fn ident_list(&mut self, allow_empty: bool) -> Result<Vec<String>, ParseDiagnostic> {
        let mut out = Vec::new();
        if allow_empty && !matches!(self.peek(), Tok::Ident(_)) {
            return Ok(out);
        }
        out.push(self.ident()?);
        while self.eat_sym(",") {
            out.push(self.ident()?);
        }
        Ok(out)
    }

    pub fn expr(&mut self) -> Result<Expr, ParseDiagnostic> {
        let mut lhs = self.term()?;
        loop {
            if self.eat_sym("+") {
                lhs = Expr::add(lhs, self.term()?);
            } else if self.eat_sym("-") {
                lhs = Expr::sub(lhs, self.term()?);
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ParseDiagnostic> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat_sym("*") {
                lhs = Expr::mul(lhs, self.unary()?);
            } else if self.eat_sym("/") {
                lhs = Expr::div(lhs, self.unary()?);
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseDiagnostic> {
        if self.eat_sym("-") {
            return Ok(Expr::neg(self.unary()?));
        }
        if self.eat_sym("+") {
            return self.unary();
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr, ParseDiagnostic> {
        match self.peek().clone() {
            Tok::Num(v) => {
                self.bump();
                Ok(Expr::Num(v))
            }
            Tok::Ident(s) => {
                self.bump();
                Ok(Expr::Name(s))
            }
            Tok::Sym("$") => {
                self.bump();
                if self.eat_kw("time") {
                    Ok(Expr::Name(TIME_CAPTURE.into()))
                } else {
                    Err(self.unexpected("`time` after `$`"))
                }
            }
            Tok::Sym("(") => {
                self.bump();
                let e = self.expr()?;
                self.expect_sym(")")?;
                Ok(e)
            }
            _ => Err(self.unexpected("expression")),
        }
    }

    fn rel(&mut self) -> Option<Rel> {
        let r = match self.peek() {
            Tok::Sym("<=") => Rel::Le,
            Tok::Sym("<") => Rel::Lt,
            Tok::Sym(">=") => Rel::Ge,
            Tok::Sym(">") => Rel::Gt,
            Tok::Sym("==") => Rel::Eq,
            _ => return None,
        };
        self.bump();
        Some(r)
    }

    /// Atoms joined by `&&` (and `&` when `single_amp`). Parenthesized sub-conditions are flattened.
    pub fn atoms(&mut self, single_amp: bool) -> Result<Vec<(Atom, Token)>, ParseDiagnostic> {
        let mut out = Vec::new();
        self.atom_into(&mut out, single_amp)?;
        while self.eat_sym("&&") || (single_amp && self.eat_sym("&")) {
            self.atom_into(&mut out, single_amp)?;
        }
        Ok(out)
    }

    /// One atom, or a parenthesized conjunction flattened into `out`.
    pub fn atom_into(&mut self, out: &mut Vec<(Atom, Token)>, single_amp: bool) -> Result<(), ParseDiagnostic> {
        let at = self.token().clone();
        if self.is_kw("true") && !matches!(self.peek_at(1), Tok::Sym("==") | Tok::Sym("'")) {
            self.bump();
            out.push((Atom::True, at));
            return Ok(());
        }
        if let Tok::Ident(name) = self.peek().clone() {
            let primed = matches!(self.peek_at(1), Tok::Sym("'"));
            let eq_at = if primed { 2 } else { 1 };
            if matches!(self.peek_at(eq_at), Tok::Sym("==")) && (name == "mode" || name == "state") {
                self.pos += eq_at + 1;
                let loc = self.ident()?;
                out.push((if primed { Atom::NextLocation(loc) } else { Atom::Porv(Porv::InLocation(loc)) }, at));
                return Ok(());
            }
            if primed {
                self.pos += 2;
                self.expect_sym("==")?;
                let e = self.expr()?;
                out.push((Atom::Assign(name, e), at));
                return Ok(());
            }
        }
        let save = self.pos;
        let first = (|| {
            let lhs = self.expr()?;
            let rel = self.rel().ok_or_else(|| self.unexpected("comparison operator"))?;
            let rhs = self.expr()?;
            Ok::<_, ParseDiagnostic>(Porv::Compare { lhs, rel, rhs })
        })();
        match first {
            Ok(p) => {
                out.push((Atom::Porv(p), at));
                Ok(())
            }
            Err(e) => {
                if !self.toks[save].tok.eq(&Tok::Sym("(")) {
                    return Err(e);
                }
                self.pos = save + 1;
                let inner = self.atoms(single_amp).map_err(|inner| if inner.line > e.line || (inner.line == e.line && inner.column >= e.column) { inner } else { e.clone() })?;
                self.expect_sym(")")?;
                out.extend(inner);
                Ok(())
            }
        }
    }

    /// A condition made only of predicates (and `true`).
    pub fn condition(&mut self, single_amp: bool) -> Result<Condition, ParseDiagnostic> {
        let mut c = Vec::new();
        for (a, t) in self.atoms(single_amp)? {
            match a {
                Atom::Porv(p) => c.push(p),
                Atom::True => {}
                _ => {
                    return Err(ParseDiagnostic {
                        line: t.line,
                        column: t.column,
                        message: "primed name not allowed here".into(),
                    })
                }
            }
        }
        Ok(Condition::new(c))
    }
}

/// Name standing for the current global time inside feature captures.
pub const TIME_CAPTURE: &str = "$time";
