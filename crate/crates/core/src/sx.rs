//! Import of SX XML models and their `.cfg` configuration files.
//!
//! Supported subset: base components with real `any`-dynamics variables and
//! `const` parameters, locations with `invariant` and `flow`, transitions with
//! `guard` and `assignment`, and a network component with a single `bind`
//! (one level deep) whose `map` entries rename variables or fix constants.
//! Conjunction is `&` or `&&`; assignments use `:=` or `x' == e`.
//! Without a configuration the initial location is the first declared one and
//! the initial condition is the declared box: `lower`/`upper` attributes on a
//! variable's `param` element, else the bounds the first location's invariant
//! places on it.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::lex::{Atom, Cursor};
use crate::model::{Condition, Expr, HybridAutomaton, InitialSet, Location, Porv, Rel, Transition};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SxError {
    #[error("malformed XML: {0}")]
    Xml(String),
    #[error("{context}: {message}")]
    Syntax { context: String, message: String },
    #[error("{context}: non-affine flow `{text}`")]
    NonAffine { context: String, text: String },
    #[error("unresolved bind: {0}")]
    Unresolved(String),
    #[error("nested network `{0}`: only one level of binds is supported")]
    Nested(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("configuration line {line}: {message}")]
    Config { line: usize, message: String },
    #[error("initial condition mentions unknown name `{0}`")]
    UnknownInitialName(String),
    #[error("imported model is invalid: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SxParam {
    pub name: String,
    /// `any` dynamics make a state variable; `const` a parameter; labels are skipped.
    pub constant: bool,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SxLocation {
    pub id: String,
    pub name: String,
    pub invariant: Condition,
    pub flow: Vec<(String, Expr)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SxTransition {
    pub source: String,
    pub target: String,
    pub label: Option<String>,
    pub guard: Condition,
    pub assignment: Vec<(String, Expr)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SxBind {
    pub component: String,
    pub alias: String,
    /// Key in the bound component to either a name or a number in the binding one.
    pub maps: Vec<(String, Expr)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SxComponent {
    pub id: String,
    pub params: Vec<SxParam>,
    pub locations: Vec<SxLocation>,
    pub transitions: Vec<SxTransition>,
    pub binds: Vec<SxBind>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SxDocument {
    pub components: Vec<SxComponent>,
}

impl SxDocument {
    pub fn component(&self, id: &str) -> Option<&SxComponent> {
        self.components.iter().find(|c| c.id == id)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SxConfig {
    pub system: Option<String>,
    /// Raw `initially` text; resolved against the flattened automaton.
    pub initially: Option<String>,
    pub time_horizon: Option<f64>,
}

fn ident_safe(s: &str) -> String {
    let mut out: String = s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '_' }).collect();
    if out.is_empty() || out.starts_with(|c: char| c.is_ascii_digit()) {
        out.insert(0, '_');
    }
    out
}

/// Rewrites SX spellings into the shared condition grammar.
fn normalize(text: &str) -> String {
    let mut s = text.replace(":=", "' ==");
    // loc(anything) == name  ->  mode == name
    while let Some(i) = s.find("loc(") {
        let Some(j) = s[i..].find(')') else { break };
        s.replace_range(i..i + j + 1, "mode");
    }
    s
}

fn syntax(context: &str, message: impl Into<String>) -> SxError {
    SxError::Syntax { context: context.into(), message: message.into() }
}

fn parse_atoms(text: &str, context: &str) -> Result<Vec<Atom>, SxError> {
    let text = normalize(text);
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let mut c = Cursor::new(&text).map_err(|d| syntax(context, d.to_string()))?;
    let atoms = c.atoms(true).map_err(|d| syntax(context, d.to_string()))?;
    if !c.at_eof() {
        return Err(syntax(context, c.unexpected("`&` or end of text").to_string()));
    }
    Ok(atoms.into_iter().map(|(a, _)| a).collect())
}

fn parse_condition(text: &str, context: &str) -> Result<Condition, SxError> {
    let mut out = Vec::new();
    for a in parse_atoms(text, context)? {
        match a {
            Atom::Porv(p) => out.push(p),
            Atom::True => {}
            _ => return Err(syntax(context, "primed name in a condition")),
        }
    }
    Ok(Condition::new(out))
}

fn parse_assignments(text: &str, context: &str) -> Result<Vec<(String, Expr)>, SxError> {
    let mut out = Vec::new();
    for a in parse_atoms(text, context)? {
        match a {
            Atom::Assign(v, e) => out.push((v, e)),
            Atom::True => {}
            _ => return Err(syntax(context, "expected `x' == e` or `x := e`")),
        }
    }
    Ok(out)
}

fn child_text<'a>(n: roxmltree::Node<'a, 'a>, tag: &str) -> Option<String> {
    n.children().find(|c| c.has_tag_name(tag)).map(|c| c.text().unwrap_or("").to_string())
}

fn attr_f64(n: roxmltree::Node<'_, '_>, key: &str, context: &str) -> Result<Option<f64>, SxError> {
    n.attribute(key)
        .map(|v| v.trim().parse::<f64>().map_err(|_| syntax(context, format!("attribute `{key}` is not a number"))))
        .transpose()
}

pub fn parse_sx(xml: &str) -> Result<SxDocument, SxError> {
    let doc = roxmltree::Document::parse(xml).map_err(|e| SxError::Xml(e.to_string()))?;
    let mut components = Vec::new();
    for comp in doc.root_element().children().filter(|n| n.has_tag_name("component")) {
        let id = comp.attribute("id").ok_or_else(|| SxError::Xml("component without `id`".into()))?.to_string();
        let mut c = SxComponent { id: id.clone(), params: Vec::new(), locations: Vec::new(), transitions: Vec::new(), binds: Vec::new() };
        for n in comp.children().filter(|n| n.is_element()) {
            let ctx = |what: &str| format!("component `{id}`, {what}");
            match n.tag_name().name() {
                "param" => {
                    let name = n.attribute("name").ok_or_else(|| syntax(&ctx("param"), "missing `name`"))?;
                    if n.attribute("type") == Some("label") {
                        continue;
                    }
                    let context = ctx(&format!("param `{name}`"));
                    c.params.push(SxParam {
                        name: name.to_string(),
                        constant: n.attribute("dynamics") == Some("const"),
                        lower: attr_f64(n, "lower", &context)?,
                        upper: attr_f64(n, "upper", &context)?,
                    });
                }
                "location" => {
                    let lid = n.attribute("id").ok_or_else(|| syntax(&ctx("location"), "missing `id`"))?.to_string();
                    let name = n.attribute("name").map(str::to_string).unwrap_or_else(|| format!("loc{lid}"));
                    let context = ctx(&format!("location `{name}`"));
                    if c.locations.iter().any(|l| l.id == lid) {
                        return Err(syntax(&context, format!("duplicate location id `{lid}`")));
                    }
                    let invariant = parse_condition(&child_text(n, "invariant").unwrap_or_default(), &context)?;
                    let flow_text = child_text(n, "flow").unwrap_or_default();
                    let mut flow = Vec::new();
                    for a in parse_atoms(&flow_text, &context)? {
                        match a {
                            Atom::Assign(v, e) => flow.push((v, e)),
                            Atom::True => {}
                            _ => return Err(SxError::Unsupported(format!("{context}: flow must be equations `x' == e`"))),
                        }
                    }
                    c.locations.push(SxLocation { id: lid, name, invariant, flow });
                }
                "transition" => {
                    let source = n.attribute("source").ok_or_else(|| syntax(&ctx("transition"), "missing `source`"))?.to_string();
                    let target = n.attribute("target").ok_or_else(|| syntax(&ctx("transition"), "missing `target`"))?.to_string();
                    let context = ctx(&format!("transition {source}->{target}"));
                    c.transitions.push(SxTransition {
                        source,
                        target,
                        label: child_text(n, "label").map(|s| s.trim().to_string()).filter(|s| !s.is_empty()),
                        guard: parse_condition(&child_text(n, "guard").unwrap_or_default(), &context)?,
                        assignment: parse_assignments(&child_text(n, "assignment").unwrap_or_default(), &context)?,
                    });
                }
                "bind" => {
                    let component = n.attribute("component").ok_or_else(|| syntax(&ctx("bind"), "missing `component`"))?.to_string();
                    let alias = n.attribute("as").unwrap_or(&component).to_string();
                    let context = ctx(&format!("bind `{alias}`"));
                    let mut maps = Vec::new();
                    for m in n.children().filter(|m| m.has_tag_name("map")) {
                        let key = m.attribute("key").ok_or_else(|| syntax(&context, "map without `key`"))?;
                        let text = m.text().unwrap_or("").trim();
                        let mut cur = Cursor::new(text).map_err(|d| syntax(&context, d.to_string()))?;
                        let e = cur.expr().map_err(|d| syntax(&context, d.to_string()))?;
                        if !cur.at_eof() {
                            return Err(syntax(&context, format!("map `{key}`: trailing text")));
                        }
                        maps.push((key.to_string(), e));
                    }
                    c.binds.push(SxBind { component, alias, maps });
                }
                _ => {}
            }
        }
        for t in &c.transitions {
            for end in [&t.source, &t.target] {
                if !c.locations.iter().any(|l| &l.id == end) {
                    return Err(syntax(&format!("component `{id}`"), format!("transition references unknown location id `{end}`")));
                }
            }
        }
        components.push(c);
    }
    if components.is_empty() {
        return Err(SxError::Xml("no `component` elements".into()));
    }
    let ids: BTreeSet<&str> = components.iter().map(|c| c.id.as_str()).collect();
    for c in &components {
        for b in &c.binds {
            if !ids.contains(b.component.as_str()) {
                return Err(SxError::Unresolved(format!("`{}` binds unknown component `{}`", c.id, b.component)));
            }
        }
    }
    Ok(SxDocument { components })
}

/// Reads `key = value` (or `key: value`) lines; `#` starts a comment, values may be quoted.
pub fn parse_sx_config(text: &str) -> Result<SxConfig, SxError> {
    let mut cfg = SxConfig::default();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some(i) = line.find(['=', ':']) else {
            return Err(SxError::Config { line: k + 1, message: "expected `key = value`".into() });
        };
        let key = line[..i].trim();
        let value = line[i + 1..].trim().trim_matches('"').trim().to_string();
        match key {
            "system" => cfg.system = Some(value),
            "initially" => cfg.initially = Some(value),
            "time-horizon" | "time_horizon" => {
                let v = value.parse::<f64>().map_err(|_| SxError::Config { line: k + 1, message: "time-horizon is not a number".into() })?;
                cfg.time_horizon = Some(v);
            }
            _ => {}
        }
    }
    Ok(cfg)
}

/// Default system: the component nobody binds, preferring networks; the last one declared on ties.
fn default_system(doc: &SxDocument) -> &SxComponent {
    let bound: BTreeSet<&str> = doc.components.iter().flat_map(|c| c.binds.iter().map(|b| b.component.as_str())).collect();
    doc.components
        .iter()
        .rev()
        .filter(|c| !bound.contains(c.id.as_str()))
        .max_by_key(|c| !c.binds.is_empty())
        .unwrap_or_else(|| doc.components.last().expect("non-empty"))
}

/// Flattens the selected system into one automaton.
pub fn flatten(doc: &SxDocument, cfg: Option<&SxConfig>) -> Result<HybridAutomaton, SxError> {
    let sys = match cfg.and_then(|c| c.system.as_deref()) {
        Some(id) => doc.component(id).ok_or_else(|| SxError::Unresolved(format!("system `{id}` is not a component")))?,
        None => default_system(doc),
    };
    let (base, subst, parameters, rename) = match sys.binds.len() {
        0 => (sys, BTreeMap::new(), BTreeMap::new(), BTreeMap::new()),
        1 => {
            let b = &sys.binds[0];
            let base = doc.component(&b.component).expect("checked while parsing");
            if !base.binds.is_empty() {
                return Err(SxError::Nested(base.id.clone()));
            }
            let mut subst = BTreeMap::new();
            let mut params = BTreeMap::new();
            let mut rename = BTreeMap::new();
            for (key, e) in &b.maps {
                let Some(p) = base.params.iter().find(|p| &p.name == key) else {
                    return Err(SxError::Unresolved(format!("`{}` maps `{key}`, which `{}` does not declare", b.alias, base.id)));
                };
                let value = e.eval(&|_| None).ok();
                match (p.constant, value, e) {
                    (true, Some(v), _) => {
                        params.insert(key.clone(), v);
                    }
                    (false, None, Expr::Name(n)) => {
                        rename.insert(key.clone(), n.clone());
                    }
                    (false, Some(_), _) => {
                        return Err(SxError::Unsupported(format!("variable `{key}` bound to a constant")));
                    }
                    _ => {
                        subst.insert(key.clone(), e.clone());
                    }
                }
            }
            (base, subst, params, rename)
        }
        _ => return Err(SxError::Unsupported(format!("network `{}` binds {} components; synchronized composition is not supported", sys.id, sys.binds.len()))),
    };
    let mut parameters: BTreeMap<String, f64> = parameters;
    let constants: Vec<&SxParam> = base.params.iter().filter(|p| p.constant).collect();
    for p in &constants {
        if !parameters.contains_key(&p.name) && !subst.contains_key(&p.name) {
            return Err(SxError::Unresolved(format!("constant `{}` of `{}` has no value", p.name, base.id)));
        }
    }
    // Names referring to parameters bound by expression over other parameters get substituted.
    let xf = |e: &Expr| e.substitute(&subst).rename(&rename);
    let xc = |c: &Condition| Condition::new(c.conjuncts.iter().map(|p| rename_porv(&p.substitute(&subst), &rename)).collect());
    let var_name = |v: &str| rename.get(v).cloned().unwrap_or_else(|| v.to_string());
    let variables: Vec<String> = base.params.iter().filter(|p| !p.constant).map(|p| var_name(&p.name)).collect();
    // Parameters whose expression mentions only other parameters are resolved now.
    for (k, e) in &subst {
        if let Ok(v) = e.eval(&|n| parameters.get(n).copied()) {
            parameters.insert(k.clone(), v);
        }
    }
    let is_var = |n: &str| variables.iter().any(|v| v == n);
    let loc_name = |id: &str| -> String { ident_safe(&base.locations.iter().find(|l| l.id == id).expect("checked").name) };
    let mut seen = BTreeSet::new();
    let mut locations = Vec::new();
    for l in &base.locations {
        let name = ident_safe(&l.name);
        if !seen.insert(name.clone()) {
            return Err(syntax(&format!("component `{}`", base.id), format!("duplicate location name `{name}`")));
        }
        let context = format!("component `{}`, location `{}`", base.id, l.name);
        let mut flow = Vec::new();
        for (v, e) in &l.flow {
            let e = xf(e);
            if !e.is_affine_in(&is_var) {
                return Err(SxError::NonAffine { context, text: format!("{v}' == {e}") });
            }
            flow.push((var_name(v), e));
        }
        for v in &variables {
            if !flow.iter().any(|(n, _)| n == v) {
                flow.push((v.clone(), Expr::num(0.0)));
            }
        }
        locations.push(Location { name, flow, invariant: xc(&l.invariant), urgent: false });
    }
    let transitions = base
        .transitions
        .iter()
        .map(|t| Transition {
            source: loc_name(&t.source),
            target: loc_name(&t.target),
            guard: xc(&t.guard),
            reset: t.assignment.iter().map(|(v, e)| (var_name(v), xf(e))).collect(),
        })
        .collect();
    let first = locations.first().map(|l: &Location| l.name.clone()).ok_or_else(|| SxError::Unsupported(format!("component `{}` has no locations", base.id)))?;
    let mut ha = HybridAutomaton {
        name: ident_safe(&sys.id),
        variables: variables.clone(),
        parameters,
        locations,
        transitions,
        initial: InitialSet { location: first, condition: Condition::truth() },
    };
    ha.initial = match cfg.and_then(|c| c.initially.as_deref()) {
        Some(text) => initial_from_text(&ha, text)?,
        None => default_initial(&ha, base, &var_name),
    };
    let diags = ha.validate();
    if let Some(d) = diags.first() {
        return Err(SxError::Invalid(d.to_string()));
    }
    Ok(ha)
}

fn rename_porv(p: &Porv, map: &BTreeMap<String, String>) -> Porv {
    match p {
        Porv::Compare { lhs, rel, rhs } => Porv::Compare { lhs: lhs.rename(map), rel: *rel, rhs: rhs.rename(map) },
        other => other.clone(),
    }
}

fn initial_from_text(ha: &HybridAutomaton, text: &str) -> Result<InitialSet, SxError> {
    let cond = parse_condition(text, "initially")?;
    let mut location = None;
    let mut conjuncts = Vec::new();
    for p in cond.conjuncts {
        match p {
            Porv::InLocation(l) => {
                let name = ident_safe(&l);
                if ha.location(&name).is_none() {
                    return Err(SxError::UnknownInitialName(l));
                }
                location = Some(name);
            }
            other => {
                let mut names = BTreeSet::new();
                other.collect_names(&mut names);
                if let Some(bad) = names.iter().find(|n| !ha.variables.contains(n) && !ha.parameters.contains_key(*n)) {
                    return Err(SxError::UnknownInitialName(bad.clone()));
                }
                conjuncts.push(other);
            }
        }
    }
    let location = location.unwrap_or_else(|| ha.locations[0].name.clone());
    Ok(InitialSet { location, condition: Condition::new(conjuncts) })
}

fn default_initial(ha: &HybridAutomaton, base: &SxComponent, var_name: &dyn Fn(&str) -> String) -> InitialSet {
    let first = &ha.locations[0];
    let mut conjuncts = Vec::new();
    for p in base.params.iter().filter(|p| !p.constant) {
        let v = var_name(&p.name);
        let declared = [(p.lower, Rel::Ge), (p.upper, Rel::Le)];
        for (bound, rel) in declared {
            if let Some(b) = bound {
                conjuncts.push(Porv::cmp(Expr::name(v.clone()), rel, Expr::num(b)));
            } else {
                // Bounds from the first location's invariant of the form `v rel constant`.
                for q in &first.invariant.conjuncts {
                    if let Porv::Compare { lhs: Expr::Name(n), rel: r, rhs } = q {
                        let same = *r == rel || *r == Rel::Eq || (rel == Rel::Ge && *r == Rel::Gt) || (rel == Rel::Le && *r == Rel::Lt);
                        if n == &v && same && rhs.eval(&|k| ha.parameters.get(k).copied()).is_ok() {
                            conjuncts.push(Porv::cmp(Expr::name(v.clone()), if *r == Rel::Eq { Rel::Eq } else { rel }, rhs.clone()));
                        }
                    }
                }
            }
        }
    }
    InitialSet { location: first.name.clone(), condition: Condition::new(conjuncts) }
}

/// Parse, then flatten with the optional configuration text.
pub fn import_sx(xml: &str, cfg_text: Option<&str>) -> Result<(HybridAutomaton, Option<SxConfig>), SxError> {
    let doc = parse_sx(xml)?;
    let cfg = cfg_text.map(parse_sx_config).transpose()?;
    let ha = flatten(&doc, cfg.as_ref())?;
    Ok((ha, cfg))
}
