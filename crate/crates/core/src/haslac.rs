//! Reader and writer for the HASLAC model language.
//!
//! ```text
//! module buck(v,i,t)
//!     output v,i,t;
//!     parameter Vr = 12, T = 1e-05, D = 0.51667;
//!     mode closed begin ddt t = 1; ... end
//!     property inv closed  mode==closed |=> t<=D*T && t>=0; endproperty
//!     property trans closed_open
//!         mode==closed && mode'==open && t>=D*T |=> i'==i && t'==0 && v'==v;
//!     endproperty
//!     initial begin set begin mode == closed; i == 0; v == 0; t == 0; end end
//! endmodule
//! ```
//!
//! Parameter values may be constant expressions over other parameters, in any order.
//! `input`/`output` declarations are accepted and ignored. `urgent mode` marks an urgent location.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::lex::{Atom, Cursor, ParseDiagnostic, Tok, Token};
use crate::model::{fmt_num, Condition, Expr, HybridAutomaton, InitialSet, Location, Porv, Transition};

#[derive(Debug, Clone)]
pub struct HaslacSource {
    pub text: String,
    pub origin: String,
}

impl HaslacSource {
    pub fn memory(text: impl Into<String>) -> Self {
        Self { text: text.into(), origin: "<memory>".into() }
    }
}

fn diag_at(t: &Token, message: impl Into<String>) -> ParseDiagnostic {
    ParseDiagnostic { line: t.line, column: t.column, message: message.into() }
}

struct ModeDecl {
    at: Token,
    loc: Location,
}

pub fn parse_haslac(src: &HaslacSource) -> Result<HybridAutomaton, ParseDiagnostic> {
    let mut c = Cursor::new(&src.text)?;
    c.expect_kw("module")?;
    let name = c.ident()?;
    c.expect_sym("(")?;
    let variables = c.ident_list(true)?;
    c.expect_sym(")")?;
    c.eat_sym(";");
    for v in &variables {
        if v == "mode" || v == "state" {
            return Err(c.error_here(format!("`{v}` is reserved")));
        }
    }

    let mut param_exprs: Vec<(String, Expr, Token)> = Vec::new();
    let mut modes: Vec<ModeDecl> = Vec::new();
    let mut invs: Vec<(String, Condition, Token)> = Vec::new();
    let mut trans: Vec<(Transition, Token)> = Vec::new();
    let mut initial: Option<(String, Condition, Token)> = None;
    // Every expression with the token it started at, checked once all names are known.
    let mut exprs: Vec<(Expr, Token)> = Vec::new();

    loop {
        if c.at_eof() {
            return Err(c.error_here("missing `endmodule`"));
        }
        if c.eat_kw("endmodule") {
            break;
        }
        if c.eat_kw("output") || c.eat_kw("input") {
            c.ident_list(false)?;
            c.expect_sym(";")?;
        } else if c.eat_kw("parameter") {
            loop {
                let at = c.token().clone();
                let p = c.ident()?;
                c.expect_sym("=")?;
                let e = c.expr()?;
                param_exprs.push((p, e, at));
                if !c.eat_sym(",") {
                    break;
                }
            }
            c.expect_sym(";")?;
        } else if c.is_kw("mode") || c.is_kw("urgent") {
            let urgent = c.eat_kw("urgent");
            c.expect_kw("mode")?;
            let at = c.token().clone();
            let lname = c.ident()?;
            c.expect_kw("begin")?;
            let mut flow = Vec::new();
            while c.eat_kw("ddt") {
                let vt = c.token().clone();
                let v = c.ident()?;
                c.expect_sym("=")?;
                let et = c.token().clone();
                let e = c.expr()?;
                c.expect_sym(";")?;
                if !variables.contains(&v) {
                    return Err(diag_at(&vt, format!("ddt of undeclared variable `{v}`")));
                }
                if flow.iter().any(|(w, _): &(String, Expr)| *w == v) {
                    return Err(diag_at(&vt, format!("duplicate ddt for `{v}`")));
                }
                exprs.push((e.clone(), et));
                flow.push((v, e));
            }
            c.expect_kw("end")?;
            for v in &variables {
                if !flow.iter().any(|(w, _)| w == v) {
                    return Err(diag_at(&at, format!("incomplete flow: mode `{lname}` has no ddt for `{v}`")));
                }
            }
            modes.push(ModeDecl {
                at,
                loc: Location { name: lname, flow, invariant: Condition::truth(), urgent },
            });
        } else if c.eat_kw("property") {
            if c.eat_kw("inv") {
                c.ident()?;
                let at = c.token().clone();
                let ante = c.atoms(false)?;
                let loc = match ante.as_slice() {
                    [(Atom::Porv(Porv::InLocation(l)), _)] => l.clone(),
                    _ => return Err(diag_at(&at, "invariant antecedent must be `mode==NAME`")),
                };
                c.expect_sym("|=>")?;
                let cond = parse_plain_condition(&mut c, &mut exprs)?;
                c.expect_sym(";")?;
                c.expect_kw("endproperty")?;
                invs.push((loc, cond, at));
            } else if c.eat_kw("trans") {
                c.ident()?;
                let at = c.token().clone();
                let mut source = None;
                let mut target = None;
                let mut guard = Vec::new();
                for (a, t) in c.atoms(false)? {
                    match a {
                        Atom::Porv(Porv::InLocation(l)) if source.is_none() => source = Some(l),
                        Atom::NextLocation(l) if target.is_none() => target = Some(l),
                        Atom::Porv(p @ Porv::Compare { .. }) => {
                            collect_porv_exprs(&p, &t, &mut exprs);
                            guard.push(p);
                        }
                        Atom::True => {}
                        _ => return Err(diag_at(&t, "unexpected atom in transition antecedent")),
                    }
                }
                let (Some(source), Some(target)) = (source, target) else {
                    return Err(diag_at(&at, "transition needs `mode==A && mode'==B`"));
                };
                c.expect_sym("|=>")?;
                let mut reset: Vec<(String, Expr)> = Vec::new();
                for (a, t) in c.atoms(false)? {
                    match a {
                        Atom::Assign(v, e) => {
                            if !variables.contains(&v) {
                                return Err(diag_at(&t, format!("reset of undeclared variable `{v}`")));
                            }
                            if reset.iter().any(|(w, _)| *w == v) {
                                return Err(diag_at(&t, format!("duplicate reset of `{v}`")));
                            }
                            exprs.push((e.clone(), t));
                            reset.push((v, e));
                        }
                        Atom::True => {}
                        _ => return Err(diag_at(&t, "transition consequent must be primed assignments")),
                    }
                }
                c.expect_sym(";")?;
                c.expect_kw("endproperty")?;
                trans.push((Transition { source, target, guard: Condition::new(guard), reset }, at));
            } else {
                return Err(c.unexpected("`inv` or `trans`"));
            }
        } else if c.is_kw("initial") {
            let at = c.bump();
            if initial.is_some() {
                return Err(diag_at(&at, "duplicate initial block"));
            }
            c.expect_kw("begin")?;
            c.expect_kw("set")?;
            c.expect_kw("begin")?;
            let mut loc = None;
            let mut cond = Vec::new();
            while !c.is_kw("end") {
                if c.at_eof() {
                    return Err(c.unexpected("`end`"));
                }
                for (a, t) in c.atoms(false)? {
                    match a {
                        Atom::Porv(Porv::InLocation(l)) if loc.is_none() => loc = Some(l),
                        Atom::Porv(p @ Porv::Compare { .. }) => {
                            collect_porv_exprs(&p, &t, &mut exprs);
                            cond.push(p);
                        }
                        Atom::True => {}
                        _ => return Err(diag_at(&t, "unexpected atom in initial set")),
                    }
                }
                c.expect_sym(";")?;
            }
            c.expect_kw("end")?;
            c.expect_kw("end")?;
            let Some(loc) = loc else {
                return Err(diag_at(&at, "initial set needs `mode == NAME`"));
            };
            initial = Some((loc, Condition::new(cond), at));
        } else {
            return Err(c.unexpected("module item"));
        }
    }
    if !c.at_eof() {
        return Err(c.unexpected("end of input after `endmodule`"));
    }
    let end_tok = c.token().clone();

    let parameters = resolve_parameters(&param_exprs, &variables)?;

    let mut names = BTreeSet::new();
    for m in &modes {
        if !names.insert(m.loc.name.clone()) {
            return Err(diag_at(&m.at, format!("duplicate location `{}`", m.loc.name)));
        }
    }
    let mut locations: Vec<Location> = modes.into_iter().map(|m| m.loc).collect();
    for (l, cond, at) in invs {
        let Some(loc) = locations.iter_mut().find(|x| x.name == l) else {
            return Err(diag_at(&at, format!("invariant for undeclared mode `{l}`")));
        };
        loc.invariant = std::mem::take(&mut loc.invariant).and(&cond);
    }
    let mut transitions = Vec::new();
    for (t, at) in trans {
        for end in [&t.source, &t.target] {
            if !names.contains(end) {
                return Err(diag_at(&at, format!("transition references undeclared mode `{end}`")));
            }
        }
        transitions.push(t);
    }
    let Some((init_loc, init_cond, init_at)) = initial else {
        return Err(diag_at(&end_tok, "missing initial block"));
    };
    if !names.contains(&init_loc) {
        return Err(diag_at(&init_at, format!("initial mode `{init_loc}` is not declared")));
    }

    let is_var = |n: &str| variables.iter().any(|v| v == n);
    for (e, at) in &exprs {
        for n in e.names() {
            if !is_var(&n) && !parameters.contains_key(&n) {
                return Err(diag_at(at, format!("unresolved name `{n}`")));
            }
        }
        if !e.is_affine_in(&is_var) {
            return Err(diag_at(at, format!("non-affine expression `{e}`")));
        }
    }

    let ha = HybridAutomaton {
        name,
        variables,
        parameters,
        locations,
        transitions,
        initial: InitialSet { location: init_loc, condition: init_cond },
    };
    if let Some(d) = ha.validate().into_iter().next() {
        return Err(diag_at(&end_tok, d.to_string()));
    }
    Ok(ha)
}

fn collect_porv_exprs(p: &Porv, at: &Token, exprs: &mut Vec<(Expr, Token)>) {
    if let Porv::Compare { lhs, rhs, .. } = p {
        exprs.push((lhs.clone(), at.clone()));
        exprs.push((rhs.clone(), at.clone()));
    }
}

fn parse_plain_condition(c: &mut Cursor, exprs: &mut Vec<(Expr, Token)>) -> Result<Condition, ParseDiagnostic> {
    let mut out = Vec::new();
    for (a, t) in c.atoms(false)? {
        match a {
            Atom::Porv(p) => {
                collect_porv_exprs(&p, &t, exprs);
                out.push(p);
            }
            Atom::True => {}
            _ => return Err(diag_at(&t, "primed name not allowed here")),
        }
    }
    Ok(Condition::new(out))
}

fn resolve_parameters(decls: &[(String, Expr, Token)], variables: &[String]) -> Result<BTreeMap<String, f64>, ParseDiagnostic> {
    let mut by_name: BTreeMap<&str, (&Expr, &Token)> = BTreeMap::new();
    for (p, e, at) in decls {
        if by_name.insert(p, (e, at)).is_some() {
            return Err(diag_at(at, format!("duplicate parameter `{p}`")));
        }
        if variables.contains(p) {
            return Err(diag_at(at, format!("`{p}` is both a variable and a parameter")));
        }
    }
    let mut values: BTreeMap<String, f64> = BTreeMap::new();
    // Repeated passes keep the result independent of declaration order.
    while values.len() < by_name.len() {
        let mut progressed = false;
        for (p, (e, at)) in &by_name {
            if values.contains_key(*p) {
                continue;
            }
            let names = e.names();
            if let Some(bad) = names.iter().find(|n| !by_name.contains_key(n.as_str())) {
                return Err(diag_at(at, format!("parameter `{p}` refers to unknown name `{bad}`")));
            }
            if names.iter().all(|n| values.contains_key(n)) {
                let v = e.eval(&|n| values.get(n).copied()).map_err(|err| diag_at(at, err.to_string()))?;
                if !v.is_finite() {
                    return Err(diag_at(at, format!("parameter `{p}` is not finite")));
                }
                values.insert(p.to_string(), v);
                progressed = true;
            }
        }
        if !progressed {
            let (p, (_, at)) = by_name.iter().find(|(p, _)| !values.contains_key(**p)).expect("unresolved remains");
            return Err(diag_at(at, format!("cyclic definition of parameter `{p}`")));
        }
    }
    Ok(values)
}

/// Transition property names: `source_target`, suffixed on repeats.
pub fn transition_names(ha: &HybridAutomaton) -> Vec<String> {
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    ha.transitions
        .iter()
        .map(|t| {
            let base = format!("{}_{}", t.source, t.target);
            let n = seen.entry(base.clone()).or_insert(0);
            *n += 1;
            if *n == 1 {
                base
            } else {
                format!("{base}_{n}")
            }
        })
        .collect()
}

pub fn print_haslac(ha: &HybridAutomaton) -> String {
    let mut s = String::new();
    let vars = ha.variables.join(",");
    let _ = writeln!(s, "module {}({vars})", ha.name);
    if !ha.variables.is_empty() {
        let _ = writeln!(s, "    output {vars};");
    }
    if !ha.parameters.is_empty() {
        let _ = writeln!(s, "    parameter");
        let n = ha.parameters.len();
        for (k, (p, v)) in ha.parameters.iter().enumerate() {
            let _ = writeln!(s, "        {p} = {}{}", fmt_num(*v), if k + 1 == n { ";" } else { "," });
        }
    }
    for l in &ha.locations {
        let _ = writeln!(s, "    {}mode {}", if l.urgent { "urgent " } else { "" }, l.name);
        let _ = writeln!(s, "    begin");
        for (v, e) in &l.flow {
            let _ = writeln!(s, "        ddt {v} = {e};");
        }
        let _ = writeln!(s, "    end");
    }
    for l in &ha.locations {
        if l.invariant.is_true() {
            continue;
        }
        let _ = writeln!(s, "    property inv {}", l.name);
        let _ = writeln!(s, "        mode=={} |=> {};", l.name, l.invariant);
        let _ = writeln!(s, "    endproperty");
    }
    for (t, name) in ha.transitions.iter().zip(transition_names(ha)) {
        let _ = writeln!(s, "    property trans {name}");
        let mut ante = format!("mode=={} && mode'=={}", t.source, t.target);
        if !t.guard.is_true() {
            let _ = write!(ante, " && {}", t.guard);
        }
        let cons = if t.reset.is_empty() {
            "true".to_string()
        } else {
            t.reset.iter().map(|(v, e)| format!("{v}'=={e}")).collect::<Vec<_>>().join(" && ")
        };
        let _ = writeln!(s, "        {ante} |=> {cons};");
        let _ = writeln!(s, "    endproperty");
    }
    let _ = writeln!(s, "    initial begin");
    let _ = writeln!(s, "        set begin");
    let _ = writeln!(s, "            mode == {};", ha.initial.location);
    for p in &ha.initial.condition.conjuncts {
        let _ = writeln!(s, "            {p};");
    }
    let _ = writeln!(s, "        end");
    let _ = writeln!(s, "    end");
    let _ = writeln!(s, "endmodule");
    s
}

/// True when the token stream after `module` looks like HASLAC (used by the CLI to sniff inputs).
pub fn looks_like_haslac(text: &str) -> bool {
    Cursor::new(text).map(|c| matches!(c.peek(), Tok::Ident(k) if k == "module")).unwrap_or(false)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::model::Rel;

    pub const BUCK: &str = r#"
module buck(v,i,t)
    output v,i,t;
    parameter
        Vr = 12,
        Vs = 24,
        L = 1e-4, C = 1e-4, R = 10,
        a00c = 0, a01c = -1/L, a10c = 1/C, a11c = -1/(R*C),
        a00o = 0, a01o = -1/L, a10o = 1/C, a11o = -1/(R*C),
        b0c = 1/L, b1c = 0, b0o = 0, b1o = 0,
        T = 1e-05,
        D = 0.51667;
    mode closed
    begin
        ddt t = 1;
        ddt v = (a10c*i + a11c*v + b1c*Vs);
        ddt i = (a00c*i + a01c*v + b0c*Vs);
    end
    mode open
    begin
        ddt t = 1;
        ddt v = (a10o*i + a11o*v + b1o*Vs);
        ddt i = (a00o*i + a01o*v + b0o*Vs);
    end
    property inv closed
        mode==closed |=> t<=D * T && t>=0;
    endproperty
    property inv open
        mode==open |=> t<=(1-D) * T && t>=0;
    endproperty
    property trans closed_open
        mode==closed && mode'==open &&
        t>=D*T |=> i'==i && t'==0 && v'==v;
    endproperty
    property trans open_closed
        mode==open && mode'==closed &&
        t>=(1-D)*T |=> i'==i && t'==0 && v'==v;
    endproperty
    initial begin
        set begin
            mode == closed;
            i == 0; v == 0; t == 0;
        end
    end
endmodule
"#;

    #[test]
    fn buck_model() {
        let ha = parse_haslac(&HaslacSource::memory(BUCK)).unwrap();
        assert_eq!(ha.variables, ["v", "i", "t"]);
        assert!(ha.parameters.len() >= 8);
        assert_eq!(ha.parameters["Vr"], 12.0);
        assert_eq!(ha.parameters["T"], 1e-05);
        assert_eq!(ha.parameters["D"], 0.51667);
        let names: Vec<_> = ha.locations.iter().map(|l| l.name.as_str()).collect();
        assert_eq!(names, ["closed", "open"]);
        assert_eq!(ha.initial.location, "closed");
        assert_eq!(ha.initial.condition.to_string(), "i == 0.0 && v == 0.0 && t == 0.0");
        let closed = ha.location("closed").unwrap();
        assert_eq!(closed.flow_of("v").unwrap().to_string(), "a10c*i + a11c*v + b1c*Vs");
        assert_eq!(ha.transitions[0].guard.conjuncts[0], Porv::cmp(Expr::name("t"), Rel::Ge, Expr::mul(Expr::name("D"), Expr::name("T"))));
        assert!(ha.validate().is_empty());
        assert!(print_haslac(&ha).contains("property trans closed_open"));
    }

    #[test]
    fn minimal_module() {
        let ha = parse_haslac(&HaslacSource::memory(
            "module ramp(x) mode run begin ddt x = 1; end initial begin set begin mode == run; x == 0; end end endmodule",
        ))
        .unwrap();
        assert_eq!(ha.locations.len(), 1);
        assert!(ha.transitions.is_empty());
        assert!(ha.locations[0].invariant.is_true());
        let printed = print_haslac(&ha);
        assert_eq!(printed.matches("mode run").count(), 1);
        assert_eq!(printed.lines().filter(|l| l.trim_start().starts_with("mode ") && !l.contains("==")).count(), 1);
    }

    #[test]
    fn truncated_text() {
        let text = "module ramp(x)\nmode run begin ddt x = 1; end\ninitial begin set begin mode == run; end end\n";
        let e = parse_haslac(&HaslacSource::memory(text)).unwrap_err();
        assert!(e.message.contains("endmodule"), "{e}");
        assert_eq!(e.line, 4);
    }

    #[test]
    fn rejects_missing_ddt_and_products() {
        let e = parse_haslac(&HaslacSource::memory(
            "module m(x,y)\nmode a begin ddt x = 1; end\ninitial begin set begin mode == a; end end endmodule",
        ))
        .unwrap_err();
        assert!(e.message.contains("incomplete flow"), "{e}");
        assert_eq!(e.line, 2);
        let e = parse_haslac(&HaslacSource::memory(
            "module m(x,y)\nmode a begin ddt x = 1;\n ddt y = x*y; end\ninitial begin set begin mode == a; end end endmodule",
        ))
        .unwrap_err();
        assert!(e.message.contains("non-affine"), "{e}");
        assert_eq!(e.line, 3);
    }

    #[test]
    fn rejects_undeclared_transition_mode() {
        let e = parse_haslac(&HaslacSource::memory(
            "module m(x)\nmode a begin ddt x = 1; end\nproperty trans a_b\n mode==a && mode'==b |=> x'==0; endproperty\ninitial begin set begin mode == a; end end endmodule",
        ))
        .unwrap_err();
        assert!(e.message.contains("undeclared mode `b`"), "{e}");
        assert_eq!(e.line, 4);
    }

    #[test]
    fn parameter_order_is_irrelevant() {
        let a = "module m(x) parameter k = 2*j, j = 3; mode a begin ddt x = k; end initial begin set begin mode == a; end end endmodule";
        let b = "module m(x) parameter j = 3, k = 2*j; mode a begin ddt x = k; end initial begin set begin mode == a; end end endmodule";
        assert_eq!(parse_haslac(&HaslacSource::memory(a)).unwrap(), parse_haslac(&HaslacSource::memory(b)).unwrap());
    }

    #[test]
    fn buck_round_trip() {
        let ha = parse_haslac(&HaslacSource::memory(BUCK)).unwrap();
        let p1 = print_haslac(&ha);
        let back = parse_haslac(&HaslacSource::memory(&p1)).unwrap();
        assert_eq!(back, ha);
        assert_eq!(print_haslac(&back), p1);
    }
}
