//! Feature monitors and their product with a model automaton.
//!
//! The monitor has one watch location per stage plus an accept location. Its
//! edge out of stage `k` checks the delay clock against the window that
//! precedes stage `k`, the stage guard and (if any) the stage event, then
//! applies the captures and resets the clock. The edge into accept also writes
//! the feature register.
//!
//! In the product, an event `@+(P)` with `P = L ∧ C` (`L` location atoms,
//! `C` comparisons) rises either continuously, when `C` becomes true while the
//! model sits in a location matching `L`, or at a model jump into a location
//! matching `L` from one that does not. The first kind becomes a monitor edge
//! whose trigger is `C`; the second is fused with the model transition.
//! Comparisons never rise at a jump.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use thiserror::Error;

use crate::feature::{BoundFeature, DelayWindow};
use crate::lex::TIME_CAPTURE;
use crate::model::{location_matches, Condition, Expr, HybridAutomaton, InitialSet, Location, Porv, Rel, Transition};
use crate::trace::{Trace, TraceStep};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MonitorError {
    #[error("feature `{feature}` refers to `{name}`, which is neither a variable nor a parameter of model `{model}`")]
    UnresolvedName { feature: String, model: String, name: String },
    #[error("feature `{feature}` refers to location `{location}`, which model `{model}` does not declare")]
    UnknownLocation { feature: String, model: String, location: String },
    #[error("model `{model}` is not well formed: {detail}")]
    InvalidModel { model: String, detail: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonitorEdge {
    pub from: usize,
    pub to: usize,
    /// Clock window checked on this edge; `None` for the first stage.
    pub window: Option<DelayWindow>,
    pub guard: Condition,
    pub event: Option<Condition>,
    pub captures: Vec<(String, Expr)>,
    /// Value written to the feature register (edge into accept only).
    pub feat: Option<Expr>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonitorAutomaton {
    pub feature: BoundFeature,
    pub locations: Vec<String>,
    pub edges: Vec<MonitorEdge>,
    pub clock: String,
    pub registers: Vec<String>,
    pub feat: String,
}

impl MonitorAutomaton {
    pub fn accept(&self) -> usize {
        self.locations.len() - 1
    }
}

pub fn compile_monitor(f: &BoundFeature) -> MonitorAutomaton {
    let spec = &f.spec;
    let n = spec.stages.len();
    let mut locations: Vec<String> = (0..n).map(|k| format!("q{k}")).collect();
    locations.push("accept".into());
    let mut edges = Vec::with_capacity(n);
    for (k, st) in spec.stages.iter().enumerate() {
        let feat = if k + 1 == n {
            let map: BTreeMap<String, Expr> = st.captures.iter().cloned().collect();
            Some(spec.compute.substitute(&map))
        } else {
            None
        };
        edges.push(MonitorEdge {
            from: k,
            to: k + 1,
            window: if k == 0 { None } else { spec.stages[k - 1].delay_to_next.clone() },
            guard: st.guard.clone(),
            event: st.event().map(|e| e.predicate.clone()),
            captures: st.captures.clone(),
            feat,
        });
    }
    let mut registers = spec.locals.clone();
    registers.push("feat".into());
    MonitorAutomaton { feature: f.clone(), locations, edges, clock: "c".into(), registers, feat: "feat".into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeKind {
    Model { transition: usize },
    MonitorAdvance { stage: usize },
    JumpAdvance { transition: usize, stage: usize },
}

impl EdgeKind {
    /// Whether the edge is a discrete step of the model (counted against the hop bound).
    pub fn is_model_jump(self) -> bool {
        !matches!(self, EdgeKind::MonitorAdvance { .. })
    }
}

/// Per-transition metadata of a product automaton.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeInfo {
    pub kind: EdgeKind,
    /// For continuously triggered monitor edges: the comparisons whose joint rise fires the edge.
    /// They are also the last conjuncts of the transition guard.
    pub trigger: Option<Condition>,
    /// Lower fires first when several edges are enabled at one instant.
    pub priority: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProductModel {
    pub automaton: HybridAutomaton,
    pub edges: Vec<EdgeInfo>,
    /// `(model location index, monitor location index)` per product location.
    pub pairs: Vec<(usize, usize)>,
    pub feat_var: String,
    pub time_var: String,
    pub clock_var: String,
    /// Feature local → product variable.
    pub registers: BTreeMap<String, String>,
    pub accept_locations: Vec<String>,
    pub source_model: String,
    pub source_feature: String,
    pub model: HybridAutomaton,
    pub monitor: MonitorAutomaton,
}

impl ProductModel {
    pub fn stage_count(&self) -> usize {
        self.monitor.edges.len()
    }

    pub fn is_accept(&self, loc: usize) -> bool {
        self.pairs[loc].1 == self.monitor.accept()
    }

    pub fn model_location_of(&self, loc: usize) -> &str {
        &self.model.locations[self.pairs[loc].0].name
    }

    /// Transition guard without its trigger conjuncts.
    pub fn static_guard(&self, edge: usize) -> Condition {
        let g = &self.automaton.transitions[edge].guard;
        let m = self.edges[edge].trigger.as_ref().map_or(0, |t| t.conjuncts.len());
        Condition::new(g.conjuncts[..g.conjuncts.len() - m].to_vec())
    }
}

fn fresh(base: &str, taken: &BTreeSet<String>) -> String {
    if !taken.contains(base) {
        return base.to_string();
    }
    (1..).map(|i| format!("{base}_{i}")).find(|c| !taken.contains(c)).expect("unbounded")
}

fn split_locations(c: &Condition) -> (Vec<String>, Condition) {
    let mut locs = Vec::new();
    let mut rest = Vec::new();
    for p in &c.conjuncts {
        match p {
            Porv::InLocation(l) => locs.push(l.clone()),
            other => rest.push(other.clone()),
        }
    }
    (locs, Condition::new(rest))
}

fn matches_all(pats: &[String], loc: &str) -> bool {
    pats.iter().all(|p| location_matches(p, loc))
}

fn window_condition(w: &Option<DelayWindow>, clock: &str) -> Condition {
    let mut c = Vec::new();
    if let Some(w) = w {
        c.push(Porv::cmp(Expr::name(clock), Rel::Ge, Expr::num(w.lower)));
        if let Some(u) = w.upper {
            c.push(Porv::cmp(Expr::name(clock), Rel::Le, Expr::num(u)));
        }
    }
    Condition::new(c)
}

pub fn product(ha: &HybridAutomaton, m: &MonitorAutomaton) -> Result<ProductModel, MonitorError> {
    let feature = &m.feature.spec.name;
    if let Some(d) = ha.validate().into_iter().next() {
        return Err(MonitorError::InvalidModel { model: ha.name.clone(), detail: d.to_string() });
    }
    for n in m.feature.model_names() {
        if !ha.variables.contains(&n) && !ha.parameters.contains_key(&n) {
            return Err(MonitorError::UnresolvedName { feature: feature.clone(), model: ha.name.clone(), name: n });
        }
    }
    let mut loc_patterns = Vec::new();
    for e in &m.edges {
        loc_patterns.extend(split_locations(&e.guard).0);
        if let Some(ev) = &e.event {
            loc_patterns.extend(split_locations(ev).0);
        }
    }
    for p in loc_patterns {
        if ha.resolve_location_pattern(&p).is_none() {
            return Err(MonitorError::UnknownLocation { feature: feature.clone(), model: ha.name.clone(), location: p });
        }
    }

    let mut taken: BTreeSet<String> = ha.variables.iter().cloned().collect();
    taken.extend(ha.parameters.keys().cloned());
    let claim = |base: &str, taken: &mut BTreeSet<String>| {
        let n = fresh(base, taken);
        taken.insert(n.clone());
        n
    };
    let time_var = claim("time", &mut taken);
    let clock_var = claim(&m.clock, &mut taken);
    let mut registers = BTreeMap::new();
    for l in &m.feature.spec.locals {
        registers.insert(l.clone(), claim(l, &mut taken));
    }
    let feat_var = claim(&m.feat, &mut taken);

    let mut variables = ha.variables.clone();
    variables.push(time_var.clone());
    variables.push(clock_var.clone());
    variables.extend(m.feature.spec.locals.iter().map(|l| registers[l].clone()));
    variables.push(feat_var.clone());

    let nq = m.locations.len();
    let pair_index = |l: usize, q: usize| l * nq + q;
    let mut edges: Vec<(usize, usize, Transition, EdgeInfo)> = Vec::new();

    // Names read by captures and the feature expression, mapped into the product.
    let mut cap_map: BTreeMap<String, Expr> = BTreeMap::new();
    cap_map.insert(TIME_CAPTURE.into(), Expr::name(&time_var));
    let reg_map: BTreeMap<String, Expr> = registers.iter().map(|(k, v)| (k.clone(), Expr::name(v))).collect();

    let monitor_resets = |e: &MonitorEdge, post: Option<&BTreeMap<String, Expr>>| -> Vec<(String, Expr)> {
        let mut out = Vec::new();
        let mut new_vals = reg_map.clone();
        for (l, ce) in &e.captures {
            let mut v = ce.substitute(&cap_map);
            if let Some(p) = post {
                v = v.substitute(p);
            }
            new_vals.insert(l.clone(), v.clone());
            out.push((registers[l].clone(), v));
        }
        out.push((clock_var.clone(), Expr::num(0.0)));
        if e.feat.is_some() {
            out.push((feat_var.clone(), m.feature.spec.compute.substitute(&new_vals)));
        }
        out
    };

    for (ti, t) in ha.transitions.iter().enumerate() {
        let (src, dst) = (ha.location_index(&t.source).unwrap(), ha.location_index(&t.target).unwrap());
        let (pats, guard) = split_locations(&t.guard);
        if !matches_all(&pats, &t.source) {
            continue;
        }
        for q in 0..nq {
            edges.push((
                pair_index(src, q),
                pair_index(dst, q),
                Transition { source: String::new(), target: String::new(), guard: guard.clone(), reset: t.reset.clone() },
                EdgeInfo { kind: EdgeKind::Model { transition: ti }, trigger: None, priority: 2 },
            ));
        }
    }

    for (k, me) in m.edges.iter().enumerate() {
        let (gpats, gcmp) = split_locations(&me.guard);
        let window = window_condition(&me.window, &clock_var);
        match &me.event {
            None => {
                for (li, l) in ha.locations.iter().enumerate() {
                    if !matches_all(&gpats, &l.name) {
                        continue;
                    }
                    edges.push((
                        pair_index(li, k),
                        pair_index(li, k + 1),
                        Transition {
                            source: String::new(),
                            target: String::new(),
                            guard: gcmp.clone().and(&window),
                            reset: monitor_resets(me, None),
                        },
                        EdgeInfo { kind: EdgeKind::MonitorAdvance { stage: k }, trigger: None, priority: 0 },
                    ));
                }
            }
            Some(ev) => {
                let (epats, ecmp) = split_locations(ev);
                if !ecmp.is_true() {
                    for (li, l) in ha.locations.iter().enumerate() {
                        if !matches_all(&gpats, &l.name) || !matches_all(&epats, &l.name) {
                            continue;
                        }
                        edges.push((
                            pair_index(li, k),
                            pair_index(li, k + 1),
                            Transition {
                                source: String::new(),
                                target: String::new(),
                                guard: gcmp.clone().and(&window).and(&ecmp),
                                reset: monitor_resets(me, None),
                            },
                            EdgeInfo { kind: EdgeKind::MonitorAdvance { stage: k }, trigger: Some(ecmp.clone()), priority: 0 },
                        ));
                    }
                }
                if !epats.is_empty() {
                    for (ti, t) in ha.transitions.iter().enumerate() {
                        let (tpats, tguard) = split_locations(&t.guard);
                        if !matches_all(&tpats, &t.source)
                            || matches_all(&epats, &t.source)
                            || !matches_all(&epats, &t.target)
                            || !matches_all(&gpats, &t.target)
                        {
                            continue;
                        }
                        let post = t.post_state_map(&ha.variables);
                        let after = gcmp.clone().and(&window).and(&ecmp).substitute(&post);
                        let mut reset = t.reset.clone();
                        reset.extend(monitor_resets(me, Some(&post)));
                        let (src, dst) = (ha.location_index(&t.source).unwrap(), ha.location_index(&t.target).unwrap());
                        edges.push((
                            pair_index(src, k),
                            pair_index(dst, k + 1),
                            Transition { source: String::new(), target: String::new(), guard: tguard.and(&after), reset },
                            EdgeInfo { kind: EdgeKind::JumpAdvance { transition: ti, stage: k }, trigger: None, priority: 1 },
                        ));
                    }
                }
            }
        }
    }

    // Keep only pairs reachable from the initial pair through the edge graph.
    let init_model = ha.location_index(&ha.initial.location).unwrap();
    let total = ha.locations.len() * nq;
    let mut reach = vec![false; total];
    let mut queue = VecDeque::from([pair_index(init_model, 0)]);
    reach[pair_index(init_model, 0)] = true;
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); total];
    for (s, d, _, _) in &edges {
        adj[*s].push(*d);
    }
    while let Some(p) = queue.pop_front() {
        for &d in &adj[p] {
            if !reach[d] {
                reach[d] = true;
                queue.push_back(d);
            }
        }
    }

    let mut names_taken: BTreeSet<String> = BTreeSet::new();
    let mut new_index = vec![usize::MAX; total];
    let mut locations = Vec::new();
    let mut pairs = Vec::new();
    let mut accept_locations = Vec::new();
    for li in 0..ha.locations.len() {
        for q in 0..nq {
            let p = pair_index(li, q);
            if !reach[p] {
                continue;
            }
            let ml = &ha.locations[li];
            let qname = if q == m.accept() { "acc".to_string() } else { format!("q{q}") };
            let name = fresh(&format!("{}_{qname}", ml.name), &names_taken);
            names_taken.insert(name.clone());
            new_index[p] = locations.len();
            let mut flow = ml.flow.clone();
            flow.push((time_var.clone(), Expr::num(1.0)));
            flow.push((clock_var.clone(), Expr::num(1.0)));
            for l in &m.feature.spec.locals {
                flow.push((registers[l].clone(), Expr::num(0.0)));
            }
            flow.push((feat_var.clone(), Expr::num(0.0)));
            locations.push(Location { name: name.clone(), flow, invariant: split_locations(&ml.invariant).1, urgent: ml.urgent });
            pairs.push((li, q));
            if q == m.accept() {
                accept_locations.push(name);
            }
        }
    }

    let mut transitions = Vec::new();
    let mut infos = Vec::new();
    for (s, d, mut t, info) in edges {
        if !reach[s] {
            continue;
        }
        t.source = locations[new_index[s]].name.clone();
        t.target = locations[new_index[d]].name.clone();
        transitions.push(t);
        infos.push(info);
    }

    let mut init = ha.initial.condition.clone();
    for v in &variables[ha.variables.len()..] {
        init.conjuncts.push(Porv::cmp(Expr::name(v), Rel::Eq, Expr::num(0.0)));
    }
    let init_name = locations[new_index[pair_index(init_model, 0)]].name.clone();
    let automaton = HybridAutomaton {
        name: format!("{}_{}", ha.name, feature),
        variables,
        parameters: ha.parameters.clone(),
        locations,
        transitions,
        initial: InitialSet { location: init_name, condition: init },
    };
    let pm = ProductModel {
        automaton,
        edges: infos,
        pairs,
        feat_var,
        time_var,
        clock_var,
        registers,
        accept_locations,
        source_model: ha.name.clone(),
        source_feature: feature.clone(),
        model: ha.clone(),
        monitor: m.clone(),
    };
    debug_assert!(pm.automaton.validate().is_empty(), "{:?}", pm.automaton.validate());
    Ok(pm)
}

/// Maps a product run onto the model: modes become model locations, product-only
/// variables are dropped, and consecutive steps separated only by monitor moves are merged.
pub fn project_trace(pm: &ProductModel, tr: &Trace) -> Trace {
    let loc_of: BTreeMap<&str, usize> =
        pm.automaton.locations.iter().enumerate().map(|(i, l)| (l.name.as_str(), i)).collect();
    let mut steps: Vec<TraceStep> = Vec::new();
    for st in &tr.steps {
        let mode = loc_of
            .get(st.mode.as_str())
            .map(|&i| pm.model_location_of(i).to_string())
            .unwrap_or_else(|| st.mode.clone());
        let samples: Vec<_> = st
            .samples
            .iter()
            .map(|s| {
                let mut s = s.clone();
                s.values.retain(|k, _| pm.model.variables.contains(k));
                if let Some(w) = s.widths.as_mut() {
                    w.retain(|k, _| pm.model.variables.contains(k));
                }
                s
            })
            .collect();
        if let Some(prev) = steps.last_mut() {
            let joinable = !prev.null
                && !st.null
                && prev.mode == mode
                && match (prev.samples.last(), samples.first()) {
                    (Some(a), Some(b)) => a.t == b.t && a.values == b.values,
                    _ => false,
                };
            if joinable {
                prev.samples.extend(samples.into_iter().skip(1));
                prev.t1 = st.t1;
                continue;
            }
        }
        steps.push(TraceStep { index: steps.len(), mode, t0: st.t0, t1: st.t1, null: st.null, samples });
    }
    Trace { model: pm.model.name.clone(), source: tr.source, steps, warnings: tr.warnings.clone() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feature::{bind_feature_params, parse_feature, tests::SETTLING};
    use crate::haslac::{parse_haslac, tests::BUCK, HaslacSource};

    fn bound(text: &str, b: &[(&str, f64)]) -> BoundFeature {
        bind_feature_params(&parse_feature(text).unwrap(), &b.iter().map(|(k, v)| (k.to_string(), *v)).collect()).unwrap()
    }

    fn buck() -> HybridAutomaton {
        parse_haslac(&HaslacSource::memory(BUCK)).unwrap()
    }

    fn ramp() -> HybridAutomaton {
        parse_haslac(&HaslacSource::memory(
            "module ramp(x) mode run begin ddt x = 1; end initial begin set begin mode == run; x == 0; end end endmodule",
        ))
        .unwrap()
    }

    #[test]
    fn settling_monitor_shape() {
        let m = compile_monitor(&bound(SETTLING, &[("Vr", 12.0), ("E", 0.5)]));
        assert_eq!(m.locations.len(), 4);
        assert_eq!(m.edges.len(), 3);
        assert_eq!(m.registers, ["st", "feat"]);
        assert!(m.edges[0].window.is_none());
        assert!(m.edges[2].feat.is_some());
        assert!(m.edges[..2].iter().all(|e| e.feat.is_none()));
    }

    #[test]
    fn single_stage_and_open_window() {
        let m = compile_monitor(&bound("feature f(); begin var a; (x >= 1), a=$time |-> f = a; end", &[]));
        assert_eq!((m.locations.len(), m.edges.len()), (2, 1));
        let w = window_condition(&Some(DelayWindow { lower: 0.0, upper: None }), "c");
        assert_eq!(w.to_string(), "c >= 0.0");
    }

    #[test]
    fn buck_settling_product() {
        let pm = product(&buck(), &compile_monitor(&bound(SETTLING, &[("Vr", 12.0), ("E", 0.5)]))).unwrap();
        assert!(pm.automaton.locations.len() <= 8);
        assert!(pm.automaton.validate().is_empty());
        assert_eq!(pm.accept_locations.len(), pm.pairs.iter().filter(|p| p.1 == 3).count());
        assert!(!pm.accept_locations.is_empty());
        assert!(pm.automaton.variables.ends_with(&["time".to_string(), "c".into(), "st".into(), "feat".into()]));
        // The Open entries fuse with the closed->open jump.
        assert!(pm.edges.iter().any(|e| matches!(e.kind, EdgeKind::JumpAdvance { stage: 1, .. })));
        assert!(pm.edges.iter().all(|e| !matches!(e.kind, EdgeKind::MonitorAdvance { stage: 1 })));
        let jumps = pm.edges.iter().filter(|e| e.kind.is_model_jump()).count();
        assert!(jumps > 0);
    }

    #[test]
    fn trivially_true_feature() {
        let pm = product(&ramp(), &compile_monitor(&bound("feature z(); begin true |-> z = 1; end", &[]))).unwrap();
        assert_eq!(pm.automaton.locations.len(), 2);
        let e = &pm.automaton.transitions[0];
        assert!(e.guard.is_true());
        assert!(e.reset.iter().any(|(v, x)| v == "feat" && *x == Expr::num(1.0)));
    }

    #[test]
    fn name_clash_gets_fresh_names() {
        let mut ha = ramp();
        ha.parameters.insert("time".into(), 3.0);
        let pm = product(&ha, &compile_monitor(&bound("feature z(); begin true |-> z = 1; end", &[]))).unwrap();
        assert_eq!(pm.time_var, "time_1");
    }

    #[test]
    fn unknown_names_are_reported() {
        let e = product(&ramp(), &compile_monitor(&bound("feature z(); begin (y >= 1) |-> z = 1; end", &[]))).unwrap_err();
        assert!(matches!(e, MonitorError::UnresolvedName { ref name, .. } if name == "y"));
        let e = product(&ramp(), &compile_monitor(&bound("feature z(); begin @+(state==Off) |-> z = 1; end", &[]))).unwrap_err();
        assert!(matches!(e, MonitorError::UnknownLocation { .. }), "{e}");
    }

    #[test]
    fn projection_merges_monitor_moves() {
        use crate::trace::{tests::{sample, step}, TraceSource};
        let pm = product(&ramp(), &compile_monitor(&bound("feature z(); begin (x >= 1) |-> z = 1; end", &[]))).unwrap();
        let mut tr = Trace::new("p", TraceSource::Simulation);
        tr.steps.push(step(0, "run_q0", vec![sample(0.0, &[("x", 0.0), ("c", 0.0)]), sample(1.0, &[("x", 1.0), ("c", 1.0)])]));
        tr.steps.push(step(1, "run_acc", vec![sample(1.0, &[("x", 1.0), ("c", 0.0)]), sample(2.0, &[("x", 2.0), ("c", 1.0)])]));
        let p = project_trace(&pm, &tr);
        assert_eq!(p.steps.len(), 1);
        assert_eq!(p.steps[0].mode, "run");
        assert_eq!(p.steps[0].samples.len(), 3);
        assert!(p.steps[0].samples.iter().all(|s| s.values.keys().eq(["x"].iter())));
    }
}
