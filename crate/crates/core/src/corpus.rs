//! Seeded random small affine automata with matching features, for fuzzing and containment checks.
//!
//! Each model has a dwell timer `x0` (rate 1, reset on every jump, switching
//! locations in a cycle once it reaches the location's dwell) and one or two
//! affine state variables. Features are built from a probe run so that most
//! of them match at least once.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{Condition, Expr, HybridAutomaton, InitialSet, Location, Porv, Rel, Transition, Valuation};
use crate::sim::{simulate_automaton, SimSettings};
use crate::trace::Trace;

#[derive(Debug, Clone)]
pub struct CorpusCase {
    pub seed: u64,
    pub model: HybridAutomaton,
    pub feature: String,
    pub step: f64,
    pub horizon: f64,
    pub jumps: usize,
}

impl CorpusCase {
    pub fn settings(&self) -> SimSettings {
        SimSettings { step: self.step, horizon: self.horizon, max_jumps: self.jumps }
    }
}

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

fn num(v: f64) -> Expr {
    if v < 0.0 {
        Expr::neg(Expr::num(-v))
    } else {
        Expr::num(v)
    }
}

fn affine(terms: &[(f64, &str)], constant: f64) -> Expr {
    let mut e: Option<Expr> = None;
    for &(k, v) in terms {
        if k == 0.0 {
            continue;
        }
        let t = Expr::mul(num(k), Expr::name(v));
        e = Some(match e {
            None => t,
            Some(acc) => Expr::add(acc, t),
        });
    }
    match e {
        None => num(constant),
        Some(acc) if constant == 0.0 => acc,
        Some(acc) => Expr::add(acc, num(constant)),
    }
}

fn cmp(v: &str, rel: Rel, c: f64) -> Porv {
    Porv::cmp(Expr::name(v), rel, num(c))
}

pub fn random_automaton(rng: &mut impl Rng) -> HybridAutomaton {
    let nvars = rng.random_range(2..=3usize);
    let nlocs = rng.random_range(1..=3usize);
    let variables: Vec<String> = (0..nvars).map(|i| format!("x{i}")).collect();
    let names: Vec<&str> = variables.iter().map(String::as_str).collect();
    let mut locations = Vec::new();
    let mut transitions = Vec::new();
    let cyclic = nlocs > 1 || rng.random_bool(0.5);
    for l in 0..nlocs {
        let dwell = round2(rng.random_range(0.6..1.5));
        let mut flow = vec![("x0".to_string(), Expr::num(1.0))];
        for i in 1..nvars {
            let terms: Vec<(f64, &str)> = (1..nvars)
                .map(|j| {
                    let k = if i == j { round2(rng.random_range(-1.0..-0.2)) } else { round2(rng.random_range(-0.3..0.3)) };
                    (k, names[j])
                })
                .collect();
            flow.push((variables[i].clone(), affine(&terms, round2(rng.random_range(-1.0..1.0)))));
        }
        let invariant = if cyclic { Condition::new(vec![cmp("x0", Rel::Le, dwell)]) } else { Condition::truth() };
        locations.push(Location { name: format!("l{l}"), flow, invariant, urgent: false });
        if cyclic {
            let mut reset = vec![("x0".to_string(), Expr::num(0.0))];
            for v in &variables[1..] {
                if rng.random_bool(0.5) {
                    let r = round2(rng.random_range(0.5..1.0));
                    reset.push((v.clone(), affine(&[(r, v)], round2(rng.random_range(-0.5..0.5)))));
                }
            }
            transitions.push(Transition {
                source: format!("l{l}"),
                target: format!("l{}", (l + 1) % nlocs),
                guard: Condition::new(vec![cmp("x0", Rel::Ge, dwell)]),
                reset,
            });
        }
    }
    let mut init = vec![cmp("x0", Rel::Eq, 0.0)];
    for v in &variables[1..] {
        let lo = round2(rng.random_range(-1.0..1.0));
        if rng.random_bool(0.3) {
            init.push(cmp(v, Rel::Eq, lo));
        } else {
            let w = round2(rng.random_range(0.01..0.3));
            init.push(cmp(v, Rel::Ge, lo));
            init.push(cmp(v, Rel::Le, round2(lo + w)));
        }
    }
    HybridAutomaton {
        name: "rnd".into(),
        variables,
        parameters: Default::default(),
        locations,
        transitions,
        initial: InitialSet { location: "l0".into(), condition: Condition::new(init) },
    }
}

/// Centre of the initial condition's bounds (the timer and point variables are exact).
pub fn initial_centre(ha: &HybridAutomaton) -> Valuation {
    let mut lo = std::collections::BTreeMap::new();
    let mut hi = std::collections::BTreeMap::new();
    for p in &ha.initial.condition.conjuncts {
        if let Porv::Compare { lhs: Expr::Name(v), rel, rhs } = p {
            let c = rhs.eval(&|_| None).unwrap_or(0.0);
            match rel {
                Rel::Eq => {
                    lo.insert(v.clone(), c);
                    hi.insert(v.clone(), c);
                }
                Rel::Ge | Rel::Gt => {
                    lo.insert(v.clone(), c);
                }
                Rel::Le | Rel::Lt => {
                    hi.insert(v.clone(), c);
                }
            }
        }
    }
    let values = ha.variables.iter().map(|v| {
        let (a, b) = (lo.get(v).copied().unwrap_or(0.0), hi.get(v).copied().unwrap_or(0.0));
        (v.clone(), 0.5 * (a + b))
    });
    Valuation::new(ha.initial.location.clone(), values, 0.0)
}

/// A rising predicate `var >= c` or `var <= c` taken from a random point of a probe trace.
fn crossing(rng: &mut impl Rng, probe: &Trace, vars: &[String]) -> Option<(String, Rel, f64)> {
    let pts: Vec<_> = probe.steps.iter().flat_map(|s| s.samples.windows(2)).collect();
    if pts.is_empty() {
        return None;
    }
    for _ in 0..20 {
        let w = pts[rng.random_range(0..pts.len())];
        let v = &vars[rng.random_range(1..vars.len())];
        let (a, b) = (w[0].values[v], w[1].values[v]);
        if (b - a).abs() < 1e-9 {
            continue;
        }
        let c = round2(0.5 * (a + b));
        return Some((v.clone(), if b > a { Rel::Ge } else { Rel::Le }, c));
    }
    None
}

fn pred((v, rel, c): &(String, Rel, f64)) -> String {
    format!("{v} {} {}", rel.symbol(), crate::model::fmt_num(*c))
}

pub fn random_feature(rng: &mut impl Rng, ha: &HybridAutomaton, probe: &Trace) -> String {
    let p = crossing(rng, probe, &ha.variables);
    let nloc = ha.locations.len();
    let kind = rng.random_range(0..5);
    let v = &ha.variables[rng.random_range(1..ha.variables.len())];
    match (kind, p) {
        (0, Some(p)) => format!("feature f(); begin var tc; @+({}), tc=$time |-> f = tc; end", pred(&p)),
        (1, _) if nloc > 1 => {
            let l = rng.random_range(1..nloc);
            format!("feature f(); begin var a; @+(state==l{l}), a={v} |-> f = a; end")
        }
        (2, Some(p)) => format!("feature f(); begin var a; ({}), a={v} |-> f = a; end", pred(&p)),
        (3, Some(p)) if nloc > 1 => {
            let l = rng.random_range(0..nloc);
            format!("feature f(); begin var a, b; @+({}), a=$time ##[0:$] @+(state==l{l}), b=$time |-> f = b - a; end", pred(&p))
        }
        (4, Some(p)) => format!("feature f(); begin var tc; (x0 >= 0) ##[0.2:1.5] @+({}), tc=$time |-> f = tc + 1; end", pred(&p)),
        (_, Some(p)) => format!("feature f(); begin var tc, a; @+({}), tc=$time, a={v} |-> f = 2*tc - a; end", pred(&p)),
        (_, None) => format!("feature f(); begin var a; (x0 >= 0), a={v} |-> f = a; end"),
    }
}

pub fn random_case(seed: u64) -> CorpusCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = random_automaton(&mut rng);
    let horizon = 4.0;
    let step = 0.01;
    let jumps = 10;
    let s = SimSettings { step, horizon, max_jumps: jumps };
    let probe = simulate_automaton(&model, &initial_centre(&model), s).map(|r| r.trace).unwrap_or_else(|_| Trace::new("rnd", crate::trace::TraceSource::Simulation));
    let feature = random_feature(&mut rng, &model, &probe);
    CorpusCase { seed, model, feature, step, horizon, jumps }
}
