//! Hybrid automata and the affine expression language shared by every front end.
//!
//! Expressions are kept symbolic ([`Expr`]) so that parameter names survive
//! printing and `.drh` emission; analysis code lowers them to numeric
//! [`LinExpr`] / [`LinConstraint`] forms once parameters are known.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("unresolved name `{0}`")]
    Unresolved(String),
    #[error("non-affine expression `{0}`")]
    NonAffine(String),
    #[error("division by zero in `{0}`")]
    DivisionByZero(String),
    #[error("non-finite value in `{0}`")]
    NonFinite(String),
}

/// Symbolic arithmetic over numbers and names (variables or parameters).
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Name(String),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn num(v: f64) -> Expr {
        Expr::Num(v)
    }

    pub fn name(n: impl Into<String>) -> Expr {
        Expr::Name(n.into())
    }

    pub fn add(a: Expr, b: Expr) -> Expr {
        Expr::Add(Box::new(a), Box::new(b))
    }

    pub fn sub(a: Expr, b: Expr) -> Expr {
        Expr::Sub(Box::new(a), Box::new(b))
    }

    pub fn mul(a: Expr, b: Expr) -> Expr {
        Expr::Mul(Box::new(a), Box::new(b))
    }

    pub fn div(a: Expr, b: Expr) -> Expr {
        Expr::Div(Box::new(a), Box::new(b))
    }

    /// Unary minus, folding literals so that `-2` stays a single number.
    pub fn neg(a: Expr) -> Expr {
        match a {
            Expr::Num(v) => Expr::Num(-v),
            other => Expr::Neg(Box::new(other)),
        }
    }

    pub fn collect_names(&self, out: &mut BTreeSet<String>) {
        match self {
            Expr::Num(_) => {}
            Expr::Name(n) => {
                out.insert(n.clone());
            }
            Expr::Neg(a) => a.collect_names(out),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.collect_names(out);
                b.collect_names(out);
            }
        }
    }

    pub fn names(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_names(&mut out);
        out
    }

    pub fn mentions(&self, is_var: &dyn Fn(&str) -> bool) -> bool {
        match self {
            Expr::Num(_) => false,
            Expr::Name(n) => is_var(n),
            Expr::Neg(a) => a.mentions(is_var),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.mentions(is_var) || b.mentions(is_var)
            }
        }
    }

    /// True when the expression is affine in the names accepted by `is_var`
    /// (all other names are treated as constants).
    pub fn is_affine_in(&self, is_var: &dyn Fn(&str) -> bool) -> bool {
        match self {
            Expr::Num(_) | Expr::Name(_) => true,
            Expr::Neg(a) => a.is_affine_in(is_var),
            Expr::Add(a, b) | Expr::Sub(a, b) => a.is_affine_in(is_var) && b.is_affine_in(is_var),
            Expr::Mul(a, b) => {
                a.is_affine_in(is_var)
                    && b.is_affine_in(is_var)
                    && !(a.mentions(is_var) && b.mentions(is_var))
            }
            Expr::Div(a, b) => a.is_affine_in(is_var) && !b.mentions(is_var),
        }
    }

    pub fn eval(&self, lookup: &dyn Fn(&str) -> Option<f64>) -> Result<f64, ModelError> {
        Ok(match self {
            Expr::Num(v) => *v,
            Expr::Name(n) => lookup(n).ok_or_else(|| ModelError::Unresolved(n.clone()))?,
            Expr::Neg(a) => -a.eval(lookup)?,
            Expr::Add(a, b) => a.eval(lookup)? + b.eval(lookup)?,
            Expr::Sub(a, b) => a.eval(lookup)? - b.eval(lookup)?,
            Expr::Mul(a, b) => a.eval(lookup)? * b.eval(lookup)?,
            Expr::Div(a, b) => a.eval(lookup)? / b.eval(lookup)?,
        })
    }

    /// Evaluates against a point state: names resolve to variables first, then parameters.
    pub fn eval_at(&self, v: &Valuation, params: &BTreeMap<String, f64>) -> Result<f64, ModelError> {
        self.eval(&|n| v.values.get(n).or_else(|| params.get(n)).copied())
    }

    /// Replaces names by expressions; names absent from `map` are kept.
    pub fn substitute(&self, map: &BTreeMap<String, Expr>) -> Expr {
        match self {
            Expr::Num(v) => Expr::Num(*v),
            Expr::Name(n) => map.get(n).cloned().unwrap_or_else(|| Expr::Name(n.clone())),
            Expr::Neg(a) => Expr::neg(a.substitute(map)),
            Expr::Add(a, b) => Expr::add(a.substitute(map), b.substitute(map)),
            Expr::Sub(a, b) => Expr::sub(a.substitute(map), b.substitute(map)),
            Expr::Mul(a, b) => Expr::mul(a.substitute(map), b.substitute(map)),
            Expr::Div(a, b) => Expr::div(a.substitute(map), b.substitute(map)),
        }
    }

    pub fn rename(&self, map: &BTreeMap<String, String>) -> Expr {
        let m: BTreeMap<String, Expr> = map
            .iter()
            .map(|(k, v)| (k.clone(), Expr::Name(v.clone())))
            .collect();
        self.substitute(&m)
    }

    /// Lowers to affine normal form over the scope's variables, folding parameters.
    pub fn to_lin(&self, scope: &Scope<'_>) -> Result<LinExpr, ModelError> {
        let fail = || ModelError::NonAffine(self.to_string());
        Ok(match self {
            Expr::Num(v) => {
                if !v.is_finite() {
                    return Err(ModelError::NonFinite(self.to_string()));
                }
                LinExpr::constant(*v)
            }
            Expr::Name(n) => {
                if scope.is_var(n) {
                    LinExpr::var(n)
                } else if let Some(p) = scope.param(n) {
                    LinExpr::constant(p)
                } else {
                    return Err(ModelError::Unresolved(n.clone()));
                }
            }
            Expr::Neg(a) => a.to_lin(scope)?.scale(-1.0),
            Expr::Add(a, b) => a.to_lin(scope)?.plus(&b.to_lin(scope)?),
            Expr::Sub(a, b) => a.to_lin(scope)?.plus(&b.to_lin(scope)?.scale(-1.0)),
            Expr::Mul(a, b) => {
                let (la, lb) = (a.to_lin(scope)?, b.to_lin(scope)?);
                if la.is_constant() {
                    lb.scale(la.constant)
                } else if lb.is_constant() {
                    la.scale(lb.constant)
                } else {
                    return Err(fail());
                }
            }
            Expr::Div(a, b) => {
                let (la, lb) = (a.to_lin(scope)?, b.to_lin(scope)?);
                if !lb.is_constant() {
                    return Err(fail());
                }
                if lb.constant == 0.0 {
                    return Err(ModelError::DivisionByZero(self.to_string()));
                }
                la.scale(1.0 / lb.constant)
            }
        })
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Add(..) | Expr::Sub(..) => 1,
            Expr::Mul(..) | Expr::Div(..) => 2,
            Expr::Neg(_) => 3,
            Expr::Num(v) if v.is_sign_negative() => 3,
            Expr::Num(_) | Expr::Name(_) => 4,
        }
    }
}

/// Shortest text that parses back to exactly the same double.
pub fn fmt_num(v: f64) -> String {
    let s = format!("{v:?}");
    // `{:?}` prints `-0.0` and exponent forms such as `1e-5`, both of which the lexers accept.
    s
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn child(f: &mut fmt::Formatter<'_>, e: &Expr, min: u8) -> fmt::Result {
            if e.precedence() < min {
                write!(f, "({e})")
            } else {
                write!(f, "{e}")
            }
        }
        match self {
            Expr::Num(v) => write!(f, "{}", fmt_num(*v)),
            Expr::Name(n) => write!(f, "{n}"),
            Expr::Neg(a) => {
                write!(f, "-")?;
                // `--x` would lex fine, but `-(-2)` must keep its parentheses to survive folding.
                child(f, a, 4)
            }
            Expr::Add(a, b) | Expr::Sub(a, b) => {
                child(f, a, 1)?;
                write!(f, "{}", if matches!(self, Expr::Add(..)) { " + " } else { " - " })?;
                child(f, b, 2)
            }
            Expr::Mul(a, b) | Expr::Div(a, b) => {
                child(f, a, 2)?;
                write!(f, "{}", if matches!(self, Expr::Mul(..)) { "*" } else { "/" })?;
                child(f, b, 3)
            }
        }
    }
}

/// Name resolution context for lowering expressions.
#[derive(Clone, Copy)]
pub struct Scope<'a> {
    pub variables: &'a [String],
    pub params: &'a BTreeMap<String, f64>,
}

impl<'a> Scope<'a> {
    pub fn new(variables: &'a [String], params: &'a BTreeMap<String, f64>) -> Self {
        Self { variables, params }
    }

    pub fn is_var(&self, n: &str) -> bool {
        self.variables.iter().any(|v| v == n)
    }

    pub fn param(&self, n: &str) -> Option<f64> {
        self.params.get(n).copied()
    }
}

/// Affine form `constant + Σ coeff·var` with numeric coefficients.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LinExpr {
    pub constant: f64,
    pub coefficients: BTreeMap<String, f64>,
}

impl LinExpr {
    pub fn constant(c: f64) -> Self {
        Self { constant: c, coefficients: BTreeMap::new() }
    }

    pub fn var(n: &str) -> Self {
        let mut coefficients = BTreeMap::new();
        coefficients.insert(n.to_string(), 1.0);
        Self { constant: 0.0, coefficients }
    }

    pub fn is_constant(&self) -> bool {
        self.coefficients.is_empty()
    }

    pub fn scale(mut self, k: f64) -> Self {
        self.constant *= k;
        for c in self.coefficients.values_mut() {
            *c *= k;
        }
        self.coefficients.retain(|_, c| *c != 0.0);
        self
    }

    pub fn plus(mut self, other: &LinExpr) -> Self {
        self.constant += other.constant;
        for (n, c) in &other.coefficients {
            *self.coefficients.entry(n.clone()).or_insert(0.0) += c;
        }
        self.coefficients.retain(|_, c| *c != 0.0);
        self
    }

    pub fn coeff(&self, n: &str) -> f64 {
        self.coefficients.get(n).copied().unwrap_or(0.0)
    }

    /// `constant + Σ coeff·value`; names resolve against the valuation, then `params`.
    pub fn eval(&self, v: &Valuation, params: &BTreeMap<String, f64>) -> Result<f64, ModelError> {
        let mut acc = self.constant;
        for (n, c) in &self.coefficients {
            let x = v
                .values
                .get(n)
                .or_else(|| params.get(n))
                .ok_or_else(|| ModelError::Unresolved(n.clone()))?;
            acc += c * x;
        }
        Ok(acc)
    }
}

/// Relation of a predicate over real variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Rel {
    Le,
    Lt,
    Ge,
    Gt,
    Eq,
}

impl Rel {
    pub fn symbol(self) -> &'static str {
        match self {
            Rel::Le => "<=",
            Rel::Lt => "<",
            Rel::Ge => ">=",
            Rel::Gt => ">",
            Rel::Eq => "==",
        }
    }

    pub fn holds(self, lhs: f64, rhs: f64) -> bool {
        match self {
            Rel::Le => lhs <= rhs,
            Rel::Lt => lhs < rhs,
            Rel::Ge => lhs >= rhs,
            Rel::Gt => lhs > rhs,
            Rel::Eq => lhs == rhs,
        }
    }
}

/// Predicate over real variables, or over the current location (`state==X` / `mode==X`).
#[derive(Debug, Clone, PartialEq)]
pub enum Porv {
    Compare { lhs: Expr, rel: Rel, rhs: Expr },
    InLocation(String),
}

impl Porv {
    pub fn cmp(lhs: Expr, rel: Rel, rhs: Expr) -> Self {
        Porv::Compare { lhs, rel, rhs }
    }

    pub fn collect_names(&self, out: &mut BTreeSet<String>) {
        if let Porv::Compare { lhs, rhs, .. } = self {
            lhs.collect_names(out);
            rhs.collect_names(out);
        }
    }

    pub fn substitute(&self, map: &BTreeMap<String, Expr>) -> Porv {
        match self {
            Porv::Compare { lhs, rel, rhs } => Porv::Compare {
                lhs: lhs.substitute(map),
                rel: *rel,
                rhs: rhs.substitute(map),
            },
            Porv::InLocation(l) => Porv::InLocation(l.clone()),
        }
    }

    /// Lowered `lhs - rhs rel 0`; `None` for location predicates.
    pub fn to_constraint(&self, scope: &Scope<'_>) -> Result<Option<LinConstraint>, ModelError> {
        match self {
            Porv::Compare { lhs, rel, rhs } => {
                let expr = lhs.to_lin(scope)?.plus(&rhs.to_lin(scope)?.scale(-1.0));
                Ok(Some(LinConstraint { expr, rel: *rel }))
            }
            Porv::InLocation(_) => Ok(None),
        }
    }

    pub fn eval(&self, v: &Valuation, params: &BTreeMap<String, f64>) -> Result<bool, ModelError> {
        match self {
            Porv::Compare { lhs, rel, rhs } => Ok(rel.holds(lhs.eval_at(v, params)?, rhs.eval_at(v, params)?)),
            Porv::InLocation(l) => Ok(location_matches(l, &v.mode)),
        }
    }
}

impl fmt::Display for Porv {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Porv::Compare { lhs, rel, rhs } => write!(f, "{lhs} {} {rhs}", rel.symbol()),
            Porv::InLocation(l) => write!(f, "state == {l}"),
        }
    }
}

/// Location predicates compare names ASCII-case-insensitively (`state==Open` names mode `open`).
pub fn location_matches(pattern: &str, location: &str) -> bool {
    pattern.eq_ignore_ascii_case(location)
}

/// Conjunction of predicates; empty means `true`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Condition {
    pub conjuncts: Vec<Porv>,
}

impl Condition {
    pub fn truth() -> Self {
        Self::default()
    }

    pub fn new(conjuncts: Vec<Porv>) -> Self {
        Self { conjuncts }
    }

    pub fn is_true(&self) -> bool {
        self.conjuncts.is_empty()
    }

    pub fn and(mut self, other: &Condition) -> Self {
        self.conjuncts.extend(other.conjuncts.iter().cloned());
        self
    }

    pub fn collect_names(&self, out: &mut BTreeSet<String>) {
        for p in &self.conjuncts {
            p.collect_names(out);
        }
    }

    pub fn substitute(&self, map: &BTreeMap<String, Expr>) -> Condition {
        Condition::new(self.conjuncts.iter().map(|p| p.substitute(map)).collect())
    }

    pub fn eval(&self, v: &Valuation, params: &BTreeMap<String, f64>) -> Result<bool, ModelError> {
        for p in &self.conjuncts {
            if !p.eval(v, params)? {
                return Ok(false);
            }
        }
        Ok(true)
    }

    pub fn location_atoms(&self) -> impl Iterator<Item = &str> {
        self.conjuncts.iter().filter_map(|p| match p {
            Porv::InLocation(l) => Some(l.as_str()),
            _ => None,
        })
    }

    pub fn compare_atoms(&self) -> impl Iterator<Item = &Porv> {
        self.conjuncts.iter().filter(|p| matches!(p, Porv::Compare { .. }))
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.conjuncts.is_empty() {
            return write!(f, "true");
        }
        for (i, p) in self.conjuncts.iter().enumerate() {
            if i > 0 {
                write!(f, " && ")?;
            }
            write!(f, "{p}")?;
        }
        Ok(())
    }
}

/// Numeric constraint `expr rel 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinConstraint {
    pub expr: LinExpr,
    pub rel: Rel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Location {
    pub name: String,
    /// One right-hand side per variable, in declaration order of the source text.
    pub flow: Vec<(String, Expr)>,
    pub invariant: Condition,
    pub urgent: bool,
}

impl Location {
    pub fn flow_of(&self, var: &str) -> Option<&Expr> {
        self.flow.iter().find(|(v, _)| v == var).map(|(_, e)| e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub source: String,
    pub target: String,
    pub guard: Condition,
    /// Primed assignments; variables not listed keep their value.
    pub reset: Vec<(String, Expr)>,
}

impl Transition {
    pub fn reset_of(&self, var: &str) -> Option<&Expr> {
        self.reset.iter().find(|(v, _)| v == var).map(|(_, e)| e)
    }

    /// Post-state of each variable as an expression over the pre-state.
    pub fn post_state_map(&self, variables: &[String]) -> BTreeMap<String, Expr> {
        variables
            .iter()
            .map(|v| {
                let e = self.reset_of(v).cloned().unwrap_or_else(|| Expr::Name(v.clone()));
                (v.clone(), e)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitialSet {
    pub location: String,
    pub condition: Condition,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HybridAutomaton {
    pub name: String,
    pub variables: Vec<String>,
    pub parameters: BTreeMap<String, f64>,
    pub locations: Vec<Location>,
    pub transitions: Vec<Transition>,
    pub initial: InitialSet,
}

/// A problem found by [`HybridAutomaton::validate`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub element: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.element, self.message)
    }
}

impl HybridAutomaton {
    pub fn scope(&self) -> Scope<'_> {
        Scope::new(&self.variables, &self.parameters)
    }

    pub fn location(&self, name: &str) -> Option<&Location> {
        self.locations.iter().find(|l| l.name == name)
    }

    pub fn location_index(&self, name: &str) -> Option<usize> {
        self.locations.iter().position(|l| l.name == name)
    }

    /// Resolves a `state==X` pattern to a location index.
    pub fn resolve_location_pattern(&self, pattern: &str) -> Option<usize> {
        self.location_index(pattern)
            .or_else(|| self.locations.iter().position(|l| location_matches(pattern, &l.name)))
    }

    /// Checks the structural invariants; an empty result means the automaton is well formed.
    pub fn validate(&self) -> Vec<Diagnostic> {
        let mut out = Vec::new();
        let mut diag = |element: String, message: String| out.push(Diagnostic { element, message });

        let mut seen = BTreeSet::new();
        for v in &self.variables {
            if !seen.insert(v.as_str()) {
                diag(format!("variable `{v}`"), "duplicate variable".into());
            }
            if self.parameters.contains_key(v) {
                diag(format!("variable `{v}`"), "name is also declared as a parameter".into());
            }
        }
        for (p, val) in &self.parameters {
            if !val.is_finite() {
                diag(format!("parameter `{p}`"), "non-finite value".into());
            }
        }

        let is_var = |n: &str| self.variables.iter().any(|v| v == n);
        let known = |n: &str| is_var(n) || self.parameters.contains_key(n);
        let check_expr = |e: &Expr, element: &str, out: &mut Vec<Diagnostic>| {
            for n in e.names() {
                if !known(&n) {
                    out.push(Diagnostic { element: element.into(), message: format!("unresolved name `{n}`") });
                }
            }
            if !e.is_affine_in(&is_var) {
                out.push(Diagnostic { element: element.into(), message: format!("non-affine expression `{e}`") });
            } else if let Err(ModelError::NonFinite(_)) | Err(ModelError::DivisionByZero(_)) = e.to_lin(&self.scope()) {
                out.push(Diagnostic { element: element.into(), message: format!("invalid constant in `{e}`") });
            }
        };
        let check_cond = |c: &Condition, element: &str, out: &mut Vec<Diagnostic>| {
            for p in &c.conjuncts {
                match p {
                    Porv::Compare { lhs, rhs, .. } => {
                        check_expr(lhs, element, out);
                        check_expr(rhs, element, out);
                    }
                    Porv::InLocation(l) => {
                        if self.resolve_location_pattern(l).is_none() {
                            out.push(Diagnostic { element: element.into(), message: format!("unknown location `{l}`") });
                        }
                    }
                }
            }
        };

        let mut names = BTreeSet::new();
        let mut folded = BTreeSet::new();
        for loc in &self.locations {
            let el = format!("location `{}`", loc.name);
            if !names.insert(loc.name.as_str()) {
                out.push(Diagnostic { element: el.clone(), message: "duplicate location".into() });
            } else if !folded.insert(loc.name.to_ascii_lowercase()) {
                out.push(Diagnostic { element: el.clone(), message: "location name differs from another only by case".into() });
            }
            for v in &self.variables {
                if loc.flow_of(v).is_none() {
                    out.push(Diagnostic { element: el.clone(), message: format!("incomplete flow: no ODE for `{v}`") });
                }
            }
            let mut flow_seen = BTreeSet::new();
            for (v, e) in &loc.flow {
                if !is_var(v) {
                    out.push(Diagnostic { element: el.clone(), message: format!("flow for undeclared variable `{v}`") });
                }
                if !flow_seen.insert(v.as_str()) {
                    out.push(Diagnostic { element: el.clone(), message: format!("duplicate ODE for `{v}`") });
                }
                check_expr(e, &el, &mut out);
            }
            check_cond(&loc.invariant, &el, &mut out);
        }

        for (i, t) in self.transitions.iter().enumerate() {
            let el = format!("transition #{i} ({} -> {})", t.source, t.target);
            for end in [&t.source, &t.target] {
                if self.location(end).is_none() {
                    out.push(Diagnostic { element: el.clone(), message: format!("undeclared location `{end}`") });
                }
            }
            check_cond(&t.guard, &el, &mut out);
            let mut reset_seen = BTreeSet::new();
            for (v, e) in &t.reset {
                if !is_var(v) {
                    out.push(Diagnostic { element: el.clone(), message: format!("reset of undeclared variable `{v}`") });
                }
                if !reset_seen.insert(v.as_str()) {
                    out.push(Diagnostic { element: el.clone(), message: format!("duplicate reset of `{v}`") });
                }
                check_expr(e, &el, &mut out);
            }
        }

        let el = "initial".to_string();
        if self.location(&self.initial.location).is_none() {
            out.push(Diagnostic { element: el.clone(), message: format!("undeclared location `{}`", self.initial.location) });
        }
        for p in &self.initial.condition.conjuncts {
            if let Porv::Compare { lhs, rhs, .. } = p {
                for n in lhs.names().into_iter().chain(rhs.names()) {
                    if !known(&n) {
                        out.push(Diagnostic { element: el.clone(), message: format!("unresolved name `{n}`") });
                    }
                }
            }
        }
        check_cond(
            &Condition::new(self.initial.condition.compare_atoms().cloned().collect()),
            &el,
            &mut Vec::new(),
        );
        out
    }
}

/// A point state of an automaton.
#[derive(Debug, Clone, PartialEq)]
pub struct Valuation {
    pub mode: String,
    pub values: BTreeMap<String, f64>,
    pub time: f64,
}

impl Valuation {
    pub fn new(mode: impl Into<String>, values: impl IntoIterator<Item = (String, f64)>, time: f64) -> Self {
        Self { mode: mode.into(), values: values.into_iter().collect(), time }
    }
}

/// `e` evaluated at `v`; see [`Expr::eval_at`].
pub fn eval_lin(e: &Expr, v: &Valuation, params: &BTreeMap<String, f64>) -> Result<f64, ModelError> {
    e.eval_at(v, params)
}

pub fn eval_condition(c: &Condition, v: &Valuation, params: &BTreeMap<String, f64>) -> Result<bool, ModelError> {
    c.eval(v, params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(kv: &[(&str, f64)]) -> BTreeMap<String, f64> {
        kv.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    fn val(kv: &[(&str, f64)]) -> Valuation {
        Valuation::new("closed", kv.iter().map(|(k, v)| (k.to_string(), *v)), 0.0)
    }

    pub(crate) fn ramp() -> HybridAutomaton {
        HybridAutomaton {
            name: "ramp".into(),
            variables: vec!["x".into()],
            parameters: BTreeMap::new(),
            locations: vec![Location {
                name: "run".into(),
                flow: vec![("x".into(), Expr::num(1.0))],
                invariant: Condition::truth(),
                urgent: false,
            }],
            transitions: vec![],
            initial: InitialSet {
                location: "run".into(),
                condition: Condition::new(vec![Porv::cmp(Expr::name("x"), Rel::Eq, Expr::num(0.0))]),
            },
        }
    }

    #[test]
    fn product_of_parameters() {
        let p = params(&[("D", 0.51667), ("T", 1e-05)]);
        let e = Expr::mul(Expr::name("D"), Expr::name("T"));
        let got = eval_lin(&e, &val(&[]), &p).unwrap();
        assert_eq!(got, 0.51667 * 1e-05);
        assert!((got - 5.1667e-06).abs() < 1e-18);
    }

    #[test]
    fn constant_and_zero_coefficient() {
        assert_eq!(eval_lin(&Expr::num(12.0), &val(&[]), &params(&[])).unwrap(), 12.0);
        let e = Expr::mul(Expr::name("a10c"), Expr::name("i"));
        assert_eq!(eval_lin(&e, &val(&[("i", 7.0)]), &params(&[("a10c", 0.0)])).unwrap(), 0.0);
        let err = eval_lin(&Expr::name("q"), &val(&[]), &params(&[])).unwrap_err();
        assert_eq!(err, ModelError::Unresolved("q".into()));
    }

    #[test]
    fn guard_boundary_is_closed() {
        let p = params(&[("D", 0.51667), ("T", 1e-05)]);
        let guard = Condition::new(vec![Porv::cmp(
            Expr::name("t"),
            Rel::Ge,
            Expr::mul(Expr::name("D"), Expr::name("T")),
        )]);
        assert!(eval_condition(&guard, &val(&[("t", 0.51667 * 1e-05)]), &p).unwrap());

        let p = params(&[("Vr", 12.0), ("E", 0.5)]);
        let c = Condition::new(vec![Porv::cmp(
            Expr::name("v"),
            Rel::Le,
            Expr::add(Expr::name("Vr"), Expr::name("E")),
        )]);
        assert!(!eval_condition(&c, &val(&[("v", 13.0)]), &p).unwrap());
        assert!(eval_condition(&Condition::truth(), &val(&[]), &p).unwrap());
    }

    #[test]
    fn location_predicates_ignore_case() {
        let c = Condition::new(vec![Porv::InLocation("Open".into())]);
        let mut v = val(&[]);
        v.mode = "open".into();
        assert!(c.eval(&v, &BTreeMap::new()).unwrap());
        v.mode = "closed".into();
        assert!(!c.eval(&v, &BTreeMap::new()).unwrap());
    }

    #[test]
    fn lowering_rejects_products_of_variables() {
        let vars = vec!["x".to_string(), "y".to_string()];
        let p = params(&[("k", 2.0)]);
        let scope = Scope::new(&vars, &p);
        let ok = Expr::add(Expr::mul(Expr::name("k"), Expr::name("x")), Expr::div(Expr::name("y"), Expr::num(4.0)));
        let lin = ok.to_lin(&scope).unwrap();
        assert_eq!(lin.coeff("x"), 2.0);
        assert_eq!(lin.coeff("y"), 0.25);
        let bad = Expr::mul(Expr::name("x"), Expr::name("y"));
        assert!(matches!(bad.to_lin(&scope), Err(ModelError::NonAffine(_))));
        assert!(!bad.is_affine_in(&|n| n == "x" || n == "y"));
    }

    #[test]
    fn display_keeps_structure() {
        let e = Expr::sub(Expr::name("a"), Expr::add(Expr::name("b"), Expr::name("c")));
        assert_eq!(e.to_string(), "a - (b + c)");
        let e = Expr::add(
            Expr::add(Expr::mul(Expr::name("a10c"), Expr::name("i")), Expr::mul(Expr::name("a11c"), Expr::name("v"))),
            Expr::mul(Expr::name("b1c"), Expr::name("Vs")),
        );
        assert_eq!(e.to_string(), "a10c*i + a11c*v + b1c*Vs");
        assert_eq!(Expr::mul(Expr::name("x"), Expr::num(-2.0)).to_string(), "x*-2.0");
    }

    #[test]
    fn validate_clean_ramp() {
        assert!(ramp().validate().is_empty());
    }

    #[test]
    fn validate_duplicate_location() {
        let mut ha = ramp();
        ha.locations.push(ha.locations[0].clone());
        let d = ha.validate();
        assert_eq!(d.len(), 1, "{d:?}");
        assert_eq!(d[0].message, "duplicate location");
    }

    #[test]
    fn validate_incomplete_flow() {
        let mut ha = ramp();
        ha.variables.push("t".into());
        let d = ha.validate();
        assert_eq!(d.len(), 1, "{d:?}");
        assert!(d[0].message.starts_with("incomplete flow"));
    }

    #[test]
    fn validate_is_pure() {
        let mut ha = ramp();
        ha.transitions.push(Transition {
            source: "run".into(),
            target: "nowhere".into(),
            guard: Condition::truth(),
            reset: vec![],
        });
        assert_eq!(ha.validate(), ha.validate());
        assert_eq!(ha.validate().len(), 1);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn lin_expr() -> impl Strategy<Value = (f64, f64, f64)> {
            (-100.0..100.0f64, -10.0..10.0f64, -10.0..10.0f64)
        }

        proptest! {
            #[test]
            fn conjunction_splits((c1, c2) in (-5.0..5.0f64, -5.0..5.0f64), x in -10.0..10.0f64, y in -10.0..10.0f64) {
                let a = Condition::new(vec![Porv::cmp(Expr::name("x"), Rel::Le, Expr::num(c1))]);
                let b = Condition::new(vec![Porv::cmp(Expr::name("y"), Rel::Gt, Expr::num(c2))]);
                let v = val(&[("x", x), ("y", y)]);
                let p = BTreeMap::new();
                prop_assert_eq!(a.clone().and(&b).eval(&v, &p).unwrap(), a.eval(&v, &p).unwrap() && b.eval(&v, &p).unwrap());
            }

            #[test]
            fn lowering_is_linear((k, cx, cy) in lin_expr(), x in -10.0..10.0f64, y in -10.0..10.0f64, wx in -10.0..10.0f64, wy in -10.0..10.0f64) {
                let vars = vec!["x".to_string(), "y".to_string()];
                let p = BTreeMap::new();
                let e = Expr::add(Expr::add(Expr::num(k), Expr::mul(Expr::num(cx), Expr::name("x"))), Expr::mul(Expr::name("y"), Expr::num(cy)));
                let lin = e.to_lin(&Scope::new(&vars, &p)).unwrap();
                let at = |x: f64, y: f64| lin.eval(&val(&[("x", x), ("y", y)]), &p).unwrap();
                let diff = at(x + wx, y + wy) - at(wx, wy);
                let expected = cx * x + cy * y;
                prop_assert!((diff - expected).abs() <= 1e-9 * (1.0 + k.abs() + expected.abs() + 100.0));
            }
        }
    }
}
