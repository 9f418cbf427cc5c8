//! `.drh` text for bounded reachability queries, plus a syntax checker for the emitted dialect.
//!
//! Layout:
//!
//! ```text
//! #define P 0.5
//! [lo, hi] x;
//! [0, H] time;
//! { mode 1;
//!   invt: (x <= 5);
//!   flow: d/dt[x] = 1;
//!   jump: (and (x >= 2)) ==> @2 (and (x' = x));
//! }
//! init: @1 (and (x = 0));
//! goal: @2 (and (feat >= 1.9) (feat <= 2.1));
//! ```
//!
//! Modes are numbered from 1 in product location order. Every jump lists all
//! variables in its reset, since unlisted ones would be left free. Variable
//! names that collide with keywords of the format get a `v_` prefix.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::flowpipe::ReachSets;
use crate::interval::Interval;
use crate::model::{fmt_num, Condition, Expr, Porv, Rel};
use crate::monitor::ProductModel;

const RESERVED: &[&str] = &[
    "time", "mode", "invt", "flow", "jump", "init", "goal", "and", "or", "not", "true", "false", "sin", "cos", "tan",
    "exp", "log", "sqrt", "abs", "pow", "min", "max", "define",
];

fn sanitize(name: &str) -> String {
    let plain: String = name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '_' }).collect();
    if RESERVED.contains(&plain.as_str()) || plain.starts_with(|c: char| c.is_ascii_digit()) {
        format!("v_{plain}")
    } else {
        plain
    }
}

fn rel_text(r: Rel) -> &'static str {
    match r {
        Rel::Eq => "=",
        other => other.symbol(),
    }
}

struct Names {
    map: BTreeMap<String, String>,
}

impl Names {
    fn expr(&self, e: &Expr) -> String {
        e.rename(&self.map).to_string()
    }

    fn atom(&self, p: &Porv) -> Option<String> {
        match p {
            Porv::Compare { lhs, rel, rhs } => Some(format!("({} {} {})", self.expr(lhs), rel_text(*rel), self.expr(rhs))),
            Porv::InLocation(_) => None,
        }
    }

    fn conj(&self, c: &Condition) -> String {
        let atoms: Vec<String> = c.conjuncts.iter().filter_map(|p| self.atom(p)).collect();
        if atoms.is_empty() {
            "(true)".into()
        } else {
            format!("(and {})", atoms.join(" "))
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DrhError {
    #[error("variable `{0}` has no finite range")]
    UnboundedVariable(String),
    #[error("empty goal interval [{0}, {1}]")]
    EmptyGoal(f64, f64),
}

/// Declared range of every product variable: the flowpipe hull widened by 10%.
pub fn variable_ranges(pm: &ProductModel, rs: &ReachSets) -> Result<Vec<(String, Interval)>, DrhError> {
    let all: Vec<usize> = (0..rs.locations.len()).collect();
    pm.automaton
        .variables
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let h = rs.hull(i, &all).ok_or_else(|| DrhError::UnboundedVariable(v.clone()))?;
            if !(h.lo.is_finite() && h.hi.is_finite()) {
                return Err(DrhError::UnboundedVariable(v.clone()));
            }
            let pad = 0.1 * h.width() + 1e-9 * h.mag().max(1.0);
            Ok((v.clone(), Interval::new(h.lo - pad, h.hi + pad)))
        })
        .collect()
}

/// Hop bound passed to the solver: model jumps plus one monitor move per stage.
pub fn solver_hops(pm: &ProductModel, k: usize) -> usize {
    k + pm.stage_count()
}

pub fn emit_drh(pm: &ProductModel, ranges: &[(String, Interval)], horizon: f64, a: f64, b: f64) -> Result<String, DrhError> {
    if !(a <= b) {
        return Err(DrhError::EmptyGoal(a, b));
    }
    let ha = &pm.automaton;
    let mut taken = BTreeSet::new();
    let mut map = BTreeMap::new();
    for n in ha.variables.iter().chain(ha.parameters.keys()) {
        let mut s = sanitize(n);
        while taken.contains(&s) {
            s.push('_');
        }
        taken.insert(s.clone());
        map.insert(n.clone(), s);
    }
    let names = Names { map };
    let mut out = String::new();
    for (p, v) in &ha.parameters {
        let _ = writeln!(out, "#define {} {}", names.map[p], fmt_num(*v));
    }
    for (v, r) in ranges {
        let name = names.map.get(v).cloned().unwrap_or_else(|| sanitize(v));
        if !(r.lo.is_finite() && r.hi.is_finite()) {
            return Err(DrhError::UnboundedVariable(v.clone()));
        }
        let _ = writeln!(out, "[{}, {}] {};", fmt_num(r.lo), fmt_num(r.hi), name);
    }
    let _ = writeln!(out, "[0, {}] time;", fmt_num(horizon));
    let mode_id: BTreeMap<&str, usize> = ha.locations.iter().enumerate().map(|(i, l)| (l.name.as_str(), i + 1)).collect();
    for (i, l) in ha.locations.iter().enumerate() {
        let _ = writeln!(out, "\n// {}", l.name);
        let _ = writeln!(out, "{{ mode {};", i + 1);
        let inv: Vec<String> = l.invariant.conjuncts.iter().filter_map(|p| names.atom(p)).collect();
        if !inv.is_empty() {
            let _ = writeln!(out, "  invt:");
            for a in inv {
                let _ = writeln!(out, "    {a};");
            }
        }
        let _ = writeln!(out, "  flow:");
        for v in &ha.variables {
            let rhs = l.flow_of(v).expect("validated flow");
            let _ = writeln!(out, "    d/dt[{}] = {};", names.map[v], names.expr(rhs));
        }
        let _ = writeln!(out, "  jump:");
        for t in ha.transitions.iter().filter(|t| t.source == l.name) {
            let resets: Vec<String> = ha
                .variables
                .iter()
                .map(|v| {
                    let e = t.reset_of(v).cloned().unwrap_or_else(|| Expr::name(v));
                    format!("({}' = {})", names.map[v], names.expr(&e))
                })
                .collect();
            let _ = writeln!(
                out,
                "    {} ==> @{} (and {});",
                names.conj(&t.guard),
                mode_id[t.target.as_str()],
                resets.join(" ")
            );
        }
        let _ = writeln!(out, "}}");
    }
    let _ = writeln!(out, "\ninit:\n@{} {};", mode_id[ha.initial.location.as_str()], names.conj(&ha.initial.condition));
    let _ = writeln!(out, "\ngoal:");
    let feat = &names.map[&pm.feat_var];
    for acc in &pm.accept_locations {
        let _ = writeln!(out, "@{} (and ({feat} >= {}) ({feat} <= {}));", mode_id[acc.as_str()], fmt_num(a), fmt_num(b));
    }
    Ok(out)
}

/// What the syntax checker found in a `.drh` text.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DrhSummary {
    pub defines: Vec<String>,
    pub variables: Vec<String>,
    pub modes: Vec<usize>,
    pub jumps: usize,
    /// Per goal entry: mode and the `(var rel number)` atoms.
    pub goals: Vec<(usize, Vec<(String, String, f64)>)>,
}

#[derive(Debug, Clone, PartialEq)]
enum T {
    Num(f64),
    Id(String),
    Sym(&'static str),
}

fn lex(text: &str) -> Result<Vec<T>, String> {
    let syms = ["==>", "<=", ">=", "d/dt", "(", ")", "[", "]", ",", ";", ":", "@", "{", "}", "=", "<", ">", "+", "-", "*", "/", "^", "'", "#"];
    let mut out = Vec::new();
    let b = text.as_bytes();
    let mut i = 0;
    'next: while i < b.len() {
        let c = b[i] as char;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if text[i..].starts_with("//") {
            while i < b.len() && b[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        if c.is_ascii_digit() || (c == '.' && b.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
            let s = i;
            while i < b.len() && (b[i].is_ascii_digit() || b[i] == b'.') {
                i += 1;
            }
            if i < b.len() && (b[i] == b'e' || b[i] == b'E') {
                let mut j = i + 1;
                if j < b.len() && (b[j] == b'+' || b[j] == b'-') {
                    j += 1;
                }
                if j < b.len() && b[j].is_ascii_digit() {
                    i = j;
                    while i < b.len() && b[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            out.push(T::Num(text[s..i].parse().map_err(|_| format!("bad number `{}`", &text[s..i]))?));
            continue;
        }
        for s in syms {
            if text[i..].starts_with(s) {
                out.push(T::Sym(s));
                i += s.len();
                continue 'next;
            }
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let s = i;
            while i < b.len() && (b[i].is_ascii_alphanumeric() || b[i] == b'_') {
                i += 1;
            }
            out.push(T::Id(text[s..i].to_string()));
            continue;
        }
        return Err(format!("unexpected character `{c}`"));
    }
    Ok(out)
}

struct P {
    t: Vec<T>,
    i: usize,
    vars: BTreeSet<String>,
    defines: BTreeSet<String>,
}

impl P {
    fn peek(&self) -> Option<&T> {
        self.t.get(self.i)
    }
    fn is(&self, s: &str) -> bool {
        matches!(self.peek(), Some(T::Sym(x)) if *x == s)
    }
    fn is_id(&self, s: &str) -> bool {
        matches!(self.peek(), Some(T::Id(x)) if x == s)
    }
    fn sym(&mut self, s: &str) -> Result<(), String> {
        if self.is(s) {
            self.i += 1;
            Ok(())
        } else {
            Err(format!("expected `{s}` at token {}, found {:?}", self.i, self.peek()))
        }
    }
    fn kw(&mut self, s: &str) -> Result<(), String> {
        if self.is_id(s) {
            self.i += 1;
            Ok(())
        } else {
            Err(format!("expected `{s}` at token {}, found {:?}", self.i, self.peek()))
        }
    }
    fn id(&mut self) -> Result<String, String> {
        match self.peek() {
            Some(T::Id(x)) => {
                let x = x.clone();
                self.i += 1;
                Ok(x)
            }
            other => Err(format!("expected a name at token {}, found {other:?}", self.i)),
        }
    }
    fn num(&mut self) -> Result<f64, String> {
        let neg = if self.is("-") {
            self.i += 1;
            true
        } else {
            false
        };
        match self.peek() {
            Some(T::Num(v)) => {
                let v = *v;
                self.i += 1;
                Ok(if neg { -v } else { v })
            }
            other => Err(format!("expected a number at token {}, found {other:?}", self.i)),
        }
    }
    fn known(&self, n: &str) -> bool {
        self.vars.contains(n) || self.defines.contains(n) || n == "time"
    }

    // expr := term (('+'|'-') term)*; term := factor (('*'|'/') factor)*; factor := '-' factor | num | name | '(' expr ')'
    fn expr(&mut self) -> Result<(), String> {
        self.term()?;
        while self.is("+") || self.is("-") {
            self.i += 1;
            self.term()?;
        }
        Ok(())
    }
    fn term(&mut self) -> Result<(), String> {
        self.factor()?;
        while self.is("*") || self.is("/") || self.is("^") {
            self.i += 1;
            self.factor()?;
        }
        Ok(())
    }
    fn factor(&mut self) -> Result<(), String> {
        match self.peek().cloned() {
            Some(T::Sym("-")) => {
                self.i += 1;
                self.factor()
            }
            Some(T::Num(_)) => {
                self.i += 1;
                Ok(())
            }
            Some(T::Id(n)) => {
                if !self.known(&n) {
                    return Err(format!("undeclared name `{n}`"));
                }
                self.i += 1;
                Ok(())
            }
            Some(T::Sym("(")) => {
                self.i += 1;
                self.expr()?;
                self.sym(")")
            }
            other => Err(format!("expected an expression at token {}, found {other:?}", self.i)),
        }
    }
    fn rel(&mut self) -> Result<String, String> {
        for r in ["<=", ">=", "<", ">", "="] {
            if self.is(r) {
                self.i += 1;
                return Ok(r.to_string());
            }
        }
        Err(format!("expected a relation at token {}", self.i))
    }
    /// formula := '(' 'and' formula+ ')' | '(' 'true' ')' | '(' expr rel expr ')'
    fn formula(&mut self, atoms: &mut Vec<(String, String, f64)>) -> Result<(), String> {
        self.sym("(")?;
        if self.is_id("and") {
            self.i += 1;
            let mut n = 0;
            while self.is("(") {
                self.formula(atoms)?;
                n += 1;
            }
            if n == 0 {
                return Err("empty conjunction".into());
            }
            return self.sym(")");
        }
        if self.is_id("true") {
            self.i += 1;
            return self.sym(")");
        }
        let start = self.i;
        self.expr()?;
        let lhs_simple = self.i == start + 1;
        let r = self.rel()?;
        let rs = self.i;
        self.expr()?;
        if lhs_simple && self.i == rs + 1 {
            if let (T::Id(v), T::Num(x)) = (&self.t[start], &self.t[rs]) {
                atoms.push((v.clone(), r, *x));
            }
        }
        self.sym(")")
    }
    fn reset(&mut self) -> Result<(), String> {
        self.sym("(")?;
        if self.is_id("and") {
            self.i += 1;
            while self.is("(") {
                self.sym("(")?;
                let v = self.id()?;
                if !self.vars.contains(&v) {
                    return Err(format!("reset of undeclared `{v}`"));
                }
                self.sym("'")?;
                self.sym("=")?;
                self.expr()?;
                self.sym(")")?;
            }
            return self.sym(")");
        }
        let v = self.id()?;
        if !self.vars.contains(&v) {
            return Err(format!("reset of undeclared `{v}`"));
        }
        self.sym("'")?;
        self.sym("=")?;
        self.expr()?;
        self.sym(")")
    }
}

/// Checks `text` against the grammar written by [`emit_drh`].
pub fn check_drh_syntax(text: &str) -> Result<DrhSummary, String> {
    let mut p = P { t: lex(text)?, i: 0, vars: BTreeSet::new(), defines: BTreeSet::new() };
    let mut sum = DrhSummary::default();
    while p.is("#") {
        p.i += 1;
        p.kw("define")?;
        let n = p.id()?;
        p.num()?;
        p.defines.insert(n.clone());
        sum.defines.push(n);
    }
    while p.is("[") {
        p.i += 1;
        let lo = p.num()?;
        p.sym(",")?;
        let hi = p.num()?;
        p.sym("]")?;
        let n = p.id()?;
        p.sym(";")?;
        if lo > hi {
            return Err(format!("empty range for `{n}`"));
        }
        if n != "time" {
            p.vars.insert(n.clone());
            sum.variables.push(n);
        }
    }
    let mut jump_targets = Vec::new();
    while p.is("{") {
        p.i += 1;
        p.kw("mode")?;
        let m = p.num()?;
        if m < 1.0 || m.fract() != 0.0 {
            return Err(format!("bad mode id {m}"));
        }
        p.sym(";")?;
        if p.is_id("invt") {
            p.i += 1;
            p.sym(":")?;
            while p.is("(") {
                p.formula(&mut Vec::new())?;
                p.sym(";")?;
            }
        }
        p.kw("flow")?;
        p.sym(":")?;
        let mut flows = BTreeSet::new();
        while p.is("d/dt") {
            p.i += 1;
            p.sym("[")?;
            let v = p.id()?;
            p.sym("]")?;
            p.sym("=")?;
            p.expr()?;
            p.sym(";")?;
            if !p.vars.contains(&v) || !flows.insert(v.clone()) {
                return Err(format!("bad flow for `{v}` in mode {m}"));
            }
        }
        if flows.len() != p.vars.len() {
            return Err(format!("mode {m} does not give a flow for every variable"));
        }
        p.kw("jump")?;
        p.sym(":")?;
        while p.is("(") {
            p.formula(&mut Vec::new())?;
            p.sym("==>")?;
            p.sym("@")?;
            jump_targets.push(p.num()? as usize);
            p.reset()?;
            p.sym(";")?;
            sum.jumps += 1;
        }
        p.sym("}")?;
        let m = m as usize;
        if sum.modes.contains(&m) {
            return Err(format!("mode {m} declared twice"));
        }
        sum.modes.push(m);
    }
    if sum.modes.is_empty() {
        return Err("no mode blocks".into());
    }
    let known_mode = |m: usize, sum: &DrhSummary| sum.modes.contains(&m);
    if let Some(t) = jump_targets.iter().find(|t| !known_mode(**t, &sum)) {
        return Err(format!("jump to undeclared mode {t}"));
    }
    p.kw("init")?;
    p.sym(":")?;
    p.sym("@")?;
    let im = p.num()? as usize;
    if !known_mode(im, &sum) {
        return Err(format!("init in undeclared mode {im}"));
    }
    p.formula(&mut Vec::new())?;
    p.sym(";")?;
    p.kw("goal")?;
    p.sym(":")?;
    while p.is("@") {
        p.i += 1;
        let gm = p.num()? as usize;
        if !known_mode(gm, &sum) {
            return Err(format!("goal in undeclared mode {gm}"));
        }
        let mut atoms = Vec::new();
        p.formula(&mut atoms)?;
        p.sym(";")?;
        sum.goals.push((gm, atoms));
    }
    if sum.goals.is_empty() {
        return Err("empty goal".into());
    }
    if p.i != p.t.len() {
        return Err(format!("trailing input at token {}", p.i));
    }
    Ok(sum)
}
