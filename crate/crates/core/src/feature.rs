//! Feature definitions: parsing, printing and parameter binding.
//!
//! ```text
//! feature settlingTime(Vr,E);
//! begin
//!   var st;
//!   (v>=Vr+E) ##[0:$]
//!   @+(state==Open) && (v<=Vr+E), st=$time
//!   ##[0:$] @+(state==Open) && (v<=Vr+E)
//!     |-> settlingTime = st;
//! end
//! ```
//!
//! A stage is a `&&`-list of predicates with at most one rising edge `@+(..)`,
//! followed by optional captures `, local = expr` where `expr` may use `$time`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use thiserror::Error;

use crate::lex::{Atom, Cursor, ParseDiagnostic, Token, TIME_CAPTURE};
use crate::model::{fmt_num, Condition, Expr, Porv};

#[derive(Debug, Clone, PartialEq)]
pub struct DelayWindow {
    pub lower: f64,
    /// `None` is the open end written `$`.
    pub upper: Option<f64>,
}

impl DelayWindow {
    pub fn contains(&self, d: f64, tol: f64) -> bool {
        d >= self.lower - tol && self.upper.is_none_or(|u| d <= u + tol)
    }
}

/// Rising edge `@+(P)` of a conjunction.
#[derive(Debug, Clone, PartialEq)]
pub struct EventEdge {
    pub predicate: Condition,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaptureKind {
    NowTime,
    Variable,
    Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    pub guard: Condition,
    pub events: Vec<EventEdge>,
    pub captures: Vec<(String, Expr)>,
    pub delay_to_next: Option<DelayWindow>,
}

impl Stage {
    pub fn event(&self) -> Option<&EventEdge> {
        self.events.first()
    }
}

pub fn capture_kind(e: &Expr) -> CaptureKind {
    match e {
        Expr::Name(n) if n == TIME_CAPTURE => CaptureKind::NowTime,
        Expr::Name(_) => CaptureKind::Variable,
        _ => CaptureKind::Linear,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSpec {
    pub name: String,
    pub formals: Vec<String>,
    pub locals: Vec<String>,
    pub stages: Vec<Stage>,
    pub compute: Expr,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundFeature {
    pub spec: FeatureSpec,
    pub bindings: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FeatureError {
    #[error("{0}")]
    Parse(#[from] ParseDiagnostic),
    #[error("feature `{feature}`: missing binding for formal `{formal}`")]
    MissingBinding { feature: String, formal: String },
    #[error("feature `{feature}`: `{formal}` is not a formal parameter")]
    UnknownFormal { feature: String, formal: String },
}

fn diag_at(t: &Token, message: impl Into<String>) -> ParseDiagnostic {
    ParseDiagnostic { line: t.line, column: t.column, message: message.into() }
}

pub fn parse_feature(text: &str) -> Result<FeatureSpec, ParseDiagnostic> {
    let mut c = Cursor::new(text)?;
    c.expect_kw("feature")?;
    let name = c.ident()?;
    c.expect_sym("(")?;
    let formals = c.ident_list(true)?;
    c.expect_sym(")")?;
    c.expect_sym(";")?;
    c.expect_kw("begin")?;
    let mut locals: Vec<String> = Vec::new();
    while c.is_kw("var") {
        c.bump();
        let at = c.token().clone();
        for l in c.ident_list(false)? {
            if locals.contains(&l) || formals.contains(&l) || l == name {
                return Err(diag_at(&at, format!("duplicate declaration of `{l}`")));
            }
            locals.push(l);
        }
        c.expect_sym(";")?;
    }
    let mut seen = BTreeSet::new();
    for f in &formals {
        if !seen.insert(f) {
            return Err(c.error_here(format!("duplicate formal `{f}`")));
        }
    }

    let mut stages = Vec::new();
    loop {
        let mut stage = parse_stage(&mut c, &locals)?;
        if c.eat_sym("##") {
            stage.delay_to_next = Some(parse_window(&mut c)?);
            stages.push(stage);
        } else {
            stages.push(stage);
            break;
        }
    }
    c.expect_sym("|->")?;
    let tt = c.token().clone();
    let target = c.ident()?;
    if target != name {
        return Err(diag_at(&tt, format!("result must be assigned to `{name}`, found `{target}`")));
    }
    c.expect_sym("=")?;
    let ct = c.token().clone();
    let compute = c.expr()?;
    for n in compute.names() {
        if !locals.contains(&n) && !formals.contains(&n) {
            return Err(diag_at(&ct, format!("compute expression may only use locals and formals, found `{n}`")));
        }
    }
    let is_local = |n: &str| locals.iter().any(|l| l == n);
    if !compute.is_affine_in(&is_local) {
        return Err(diag_at(&ct, format!("non-affine compute expression `{compute}`")));
    }
    c.expect_sym(";")?;
    c.expect_kw("end")?;
    if !c.at_eof() {
        return Err(c.unexpected("end of input"));
    }
    Ok(FeatureSpec { name, formals, locals, stages, compute })
}

fn parse_window(c: &mut Cursor) -> Result<DelayWindow, ParseDiagnostic> {
    let at = c.token().clone();
    c.expect_sym("[")?;
    if c.is_sym("$") {
        return Err(c.error_here("`$` is not allowed as a lower bound"));
    }
    let lower = c.signed_number()?;
    c.expect_sym(":")?;
    let upper = if c.eat_sym("$") { None } else { Some(c.signed_number()?) };
    c.expect_sym("]")?;
    if lower < 0.0 {
        return Err(diag_at(&at, "delay lower bound must be non-negative"));
    }
    if let Some(u) = upper {
        if lower > u {
            return Err(diag_at(&at, format!("empty delay window [{lower}:{u}]")));
        }
    }
    Ok(DelayWindow { lower, upper })
}

fn check_predicate(p: &Porv, at: &Token, locals: &[String]) -> Result<(), ParseDiagnostic> {
    let mut names = BTreeSet::new();
    p.collect_names(&mut names);
    for n in names {
        if n == TIME_CAPTURE {
            return Err(diag_at(at, "`$time` may only appear in captures"));
        }
        if locals.contains(&n) {
            return Err(diag_at(at, format!("local `{n}` may not appear in a stage predicate")));
        }
    }
    Ok(())
}

fn parse_stage(c: &mut Cursor, locals: &[String]) -> Result<Stage, ParseDiagnostic> {
    let mut guard = Vec::new();
    let mut events: Vec<EventEdge> = Vec::new();
    loop {
        let at = c.token().clone();
        if c.is_sym("@-") {
            return Err(c.error_here("falling edges `@-` are not supported; use `@+`"));
        }
        if c.eat_sym("@+") {
            c.expect_sym("(")?;
            let cond = c.condition(false)?;
            c.expect_sym(")")?;
            for p in &cond.conjuncts {
                check_predicate(p, &at, locals)?;
            }
            if !events.is_empty() {
                return Err(diag_at(&at, "at most one event `@+` per stage"));
            }
            if cond.is_true() {
                return Err(diag_at(&at, "event over `true` never rises"));
            }
            events.push(EventEdge { predicate: cond });
        } else {
            let mut atoms = Vec::new();
            c.atom_into(&mut atoms, false)?;
            for (a, t) in atoms {
                match a {
                    Atom::Porv(p) => {
                        check_predicate(&p, &t, locals)?;
                        guard.push(p);
                    }
                    Atom::True => {}
                    _ => return Err(diag_at(&t, "primed names are not allowed in features")),
                }
            }
        }
        if !c.eat_sym("&&") {
            break;
        }
    }
    let mut captures: Vec<(String, Expr)> = Vec::new();
    while c.eat_sym(",") {
        let at = c.token().clone();
        let l = c.ident()?;
        if !locals.contains(&l) {
            return Err(diag_at(&at, format!("capture of undeclared local `{l}`")));
        }
        if captures.iter().any(|(x, _)| *x == l) {
            return Err(diag_at(&at, format!("`{l}` captured twice in one stage")));
        }
        c.expect_sym("=")?;
        let et = c.token().clone();
        let e = c.expr()?;
        for n in e.names() {
            if locals.contains(&n) {
                return Err(diag_at(&et, format!("capture may not read local `{n}`")));
            }
        }
        captures.push((l, e));
    }
    Ok(Stage { guard: Condition::new(guard), events, captures, delay_to_next: None })
}

pub fn print_feature(f: &FeatureSpec) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "feature {}({});", f.name, f.formals.join(","));
    let _ = writeln!(s, "begin");
    if !f.locals.is_empty() {
        let _ = writeln!(s, "  var {};", f.locals.join(","));
    }
    for (k, st) in f.stages.iter().enumerate() {
        let mut items = Vec::new();
        for e in &st.events {
            items.push(format!("@+({})", e.predicate));
        }
        for p in &st.guard.conjuncts {
            items.push(format!("({p})"));
        }
        if items.is_empty() {
            items.push("true".into());
        }
        let mut line = items.join(" && ");
        for (l, e) in &st.captures {
            let _ = write!(line, ", {l}={e}");
        }
        let prefix = if k == 0 { String::new() } else {
            let w = f.stages[k - 1].delay_to_next.as_ref().expect("delay between stages");
            format!("##[{}:{}] ", fmt_num(w.lower), w.upper.map(fmt_num).unwrap_or_else(|| "$".into()))
        };
        let _ = writeln!(s, "  {prefix}{line}");
    }
    let _ = writeln!(s, "    |-> {} = {};", f.name, f.compute);
    let _ = writeln!(s, "end");
    s
}

/// Replaces every formal by its numeric value.
pub fn bind_feature_params(spec: &FeatureSpec, values: &BTreeMap<String, f64>) -> Result<BoundFeature, FeatureError> {
    for k in values.keys() {
        if !spec.formals.contains(k) {
            return Err(FeatureError::UnknownFormal { feature: spec.name.clone(), formal: k.clone() });
        }
    }
    for f in &spec.formals {
        if !values.contains_key(f) {
            return Err(FeatureError::MissingBinding { feature: spec.name.clone(), formal: f.clone() });
        }
    }
    let map: BTreeMap<String, Expr> = values.iter().map(|(k, v)| (k.clone(), Expr::Num(*v))).collect();
    let cond = |c: &Condition| c.substitute(&map);
    let stages = spec
        .stages
        .iter()
        .map(|st| Stage {
            guard: cond(&st.guard),
            events: st.events.iter().map(|e| EventEdge { predicate: cond(&e.predicate) }).collect(),
            captures: st.captures.iter().map(|(l, e)| (l.clone(), e.substitute(&map))).collect(),
            delay_to_next: st.delay_to_next.clone(),
        })
        .collect();
    Ok(BoundFeature {
        spec: FeatureSpec {
            name: spec.name.clone(),
            formals: spec.formals.clone(),
            locals: spec.locals.clone(),
            stages,
            compute: spec.compute.substitute(&map),
        },
        bindings: values.clone(),
    })
}

impl BoundFeature {
    /// Names read by stage predicates and captures (model variables or model parameters).
    pub fn model_names(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        for st in &self.spec.stages {
            st.guard.collect_names(&mut out);
            for e in &st.events {
                e.predicate.collect_names(&mut out);
            }
            for (_, e) in &st.captures {
                e.collect_names(&mut out);
            }
        }
        out.remove(TIME_CAPTURE);
        out
    }
}
