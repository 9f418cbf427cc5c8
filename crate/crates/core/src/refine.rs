//! Feasibility queries and bisection refinement of feature-range corners.
//!
//! The built-in oracle answers SAT from simulation: it samples initial
//! points (box vertices, the centre, then seeded random points satisfying the
//! initial condition), simulates each, and replays the feature on the
//! resulting trace. It answers UNSAT when no accept box of the flowpipe lets
//! the feature register meet the queried interval. Anything else is UNKNOWN.
//! The external oracle writes a `.drh` query and runs the configured solver;
//! the hybrid oracle asks the external solver only when the built-in one
//! cannot decide.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::drh::{emit_drh, solver_hops, variable_ranges, DrhError};
use crate::flowpipe::{feature_may_hit, flowpipe, initial_box, FeatureRange, ReachError, ReachSets};
use crate::interval::{box_is_finite, contract, IBox};
use crate::model::Valuation;
use crate::monitor::{project_trace, ProductModel};
use crate::replay::feature_values_on_trace;
use crate::sim::{simulate_system, SimSettings};
use crate::solver::{parse_solver_trace, run_solver, SolverConfig, SolverError, SolverVerdict};
use crate::system::{all_hold_within, System};
use crate::trace::{strip_null_tuples, Trace};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleKind {
    Builtin,
    External,
    Hybrid,
}

impl std::str::FromStr for OracleKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "builtin" => Ok(OracleKind::Builtin),
            "external" => Ok(OracleKind::External),
            "hybrid" => Ok(OracleKind::Hybrid),
            other => Err(format!("unknown oracle `{other}` (expected builtin, external or hybrid)")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RefineSettings {
    /// Bound on model jumps.
    pub k: usize,
    pub eps: f64,
    pub oracle: OracleKind,
    pub horizon: f64,
    pub step: f64,
    pub sample_budget: usize,
    pub seed: u64,
    pub solver: Option<SolverConfig>,
    /// Parent of the per-query solver directories.
    pub workdir: Option<PathBuf>,
}

impl RefineSettings {
    pub fn sim(&self) -> SimSettings {
        SimSettings { step: self.step, horizon: self.horizon, max_jumps: self.k }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Sat,
    Unsat,
    Unknown,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Feasibility {
    pub verdict: Verdict,
    pub witness: Option<Trace>,
    pub witness_value: Option<f64>,
}

impl Feasibility {
    fn plain(verdict: Verdict) -> Self {
        Self { verdict, witness: None, witness_value: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Low,
    High,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CornerResult {
    pub value: f64,
    pub witness: Option<Trace>,
    pub witness_value: Option<f64>,
    pub calls: usize,
    /// No witness was found anywhere in the range; `value` is the initial corner.
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinedRange {
    pub lo_star: f64,
    pub hi_star: f64,
    pub lo_witness: Option<Trace>,
    pub hi_witness: Option<Trace>,
    pub lo_value: Option<f64>,
    pub hi_value: Option<f64>,
    pub lo_calls: usize,
    pub hi_calls: usize,
    pub iterations: usize,
    pub failed: bool,
}

#[derive(Debug, Error)]
pub enum RefineError {
    #[error("precondition: {0}")]
    Precondition(String),
    #[error(transparent)]
    Reach(#[from] ReachError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Drh(#[from] DrhError),
    #[error("no solver configured; set the `solver` key in the configuration")]
    NoSolver,
}

/// Sampled run: its projected trace and the feature values it yields.
struct Sampled {
    trace: Trace,
    values: Vec<f64>,
}

/// Oracle state owned by one corner search.
pub struct Session<'a> {
    pm: &'a ProductModel,
    rs: &'a RefineSettings,
    reach: Option<&'a ReachSets>,
    own_reach: Option<ReachSets>,
    shared: Option<&'a OnceLock<Vec<Sampled>>>,
    samples: OnceLock<Vec<Sampled>>,
    queries: usize,
    tag: String,
}

impl<'a> Session<'a> {
    pub fn new(pm: &'a ProductModel, rs: &'a RefineSettings, reach: Option<&'a ReachSets>, tag: &str) -> Self {
        Self { pm, rs, reach, own_reach: None, shared: None, samples: OnceLock::new(), queries: 0, tag: tag.to_string() }
    }

    /// Uses a sample cache shared with other sessions on the same model and settings.
    fn with_samples(mut self, cache: &'a OnceLock<Vec<Sampled>>) -> Self {
        self.shared = Some(cache);
        self
    }

    fn reach(&mut self) -> Result<&ReachSets, RefineError> {
        if let Some(r) = self.reach {
            return Ok(r);
        }
        if self.own_reach.is_none() {
            self.own_reach = Some(flowpipe(self.pm, self.rs.sim())?);
        }
        Ok(self.own_reach.as_ref().expect("just set"))
    }

    fn samples(&self) -> &[Sampled] {
        let cache = self.shared.unwrap_or(&self.samples);
        cache.get_or_init(|| sample_runs(self.pm, self.rs))
    }

    fn builtin(&mut self, a: f64, b: f64, prefer: Option<Side>) -> Result<Feasibility, RefineError> {
        let mut best: Option<(f64, usize)> = None;
        for (i, s) in self.samples().iter().enumerate() {
            for &v in &s.values {
                if !(a <= v && v <= b) {
                    continue;
                }
                let better = match (best, prefer) {
                    (None, _) => true,
                    (Some((w, _)), Some(Side::Low)) => v < w,
                    (Some((w, _)), Some(Side::High)) => v > w,
                    (Some(_), None) => false,
                };
                if better {
                    best = Some((v, i));
                }
            }
        }
        if let Some((v, i)) = best {
            let trace = self.samples()[i].trace.clone();
            return Ok(Feasibility { verdict: Verdict::Sat, witness: Some(trace), witness_value: Some(v) });
        }
        let pm = self.pm;
        if !feature_may_hit(pm, self.reach()?, a, b) {
            return Ok(Feasibility::plain(Verdict::Unsat));
        }
        Ok(Feasibility::plain(Verdict::Unknown))
    }

    fn external(&mut self, a: f64, b: f64) -> Result<Feasibility, RefineError> {
        let cfg = self.rs.solver.clone().ok_or(RefineError::NoSolver)?;
        crate::solver::resolve_solver(&cfg.command)?;
        let ranges = variable_ranges(self.pm, self.reach()?)?;
        let text = emit_drh(self.pm, &ranges, self.rs.horizon, a, b)?;
        let base = self.rs.workdir.clone().unwrap_or_else(std::env::temp_dir);
        let dir = base.join(format!("query_{}_{:03}", self.tag, self.queries));
        let (verdict, json) = run_solver(&cfg, &text, solver_hops(self.pm, self.rs.k), &dir)?;
        if verdict == SolverVerdict::Unsat {
            return Ok(Feasibility::plain(Verdict::Unsat));
        }
        let Some(json) = json else {
            return Err(SolverError::Output("`sat` without a trace file".into()).into());
        };
        let names: Vec<String> = self.pm.automaton.locations.iter().map(|l| l.name.clone()).collect();
        let raw = parse_solver_trace(&json, Some(&names)).map_err(SolverError::from)?;
        let trace = project_trace(self.pm, &strip_null_tuples(&raw));
        let feat = self.pm.feat_var.as_str();
        let from_register = raw
            .steps
            .iter()
            .rev()
            .filter(|s| !s.null && self.pm.accept_locations.contains(&s.mode))
            .find_map(|s| s.samples.last())
            .and_then(|s| s.values.get(feat).or_else(|| s.values.get(&format!("v_{feat}"))).copied());
        let value = from_register.or_else(|| {
            let d = cfg.precision;
            feature_values_on_trace(&trace, &self.pm.monitor.feature, &self.pm.model.parameters)
                .ok()?
                .values
                .into_iter()
                .find(|v| a - d <= *v && *v <= b + d)
        });
        Ok(Feasibility { verdict: Verdict::Sat, witness: Some(trace), witness_value: value })
    }

    /// Answers whether a matching run with feature value in `[a, b]` exists.
    pub fn query(&mut self, a: f64, b: f64, prefer: Option<Side>) -> Result<Feasibility, RefineError> {
        if !(a <= b) {
            return Err(RefineError::Precondition(format!("empty query interval [{a}, {b}]")));
        }
        self.queries += 1;
        match self.rs.oracle {
            OracleKind::Builtin => self.builtin(a, b, prefer),
            OracleKind::External => self.external(a, b),
            OracleKind::Hybrid => {
                let r = self.builtin(a, b, prefer)?;
                if r.verdict == Verdict::Unknown {
                    self.external(a, b)
                } else {
                    Ok(r)
                }
            }
        }
    }

    pub fn queries(&self) -> usize {
        self.queries
    }
}

/// Initial points for the built-in oracle: vertices of the model-variable box, its centre, then random points.
pub fn sample_points(sys: &System, pm: &ProductModel, budget: usize, seed: u64) -> Vec<Vec<f64>> {
    let Ok(wide) = initial_box(sys) else { return Vec::new() };
    // Tight box: the reachability box carries slack that pushes vertices out of the initial set.
    let mut b = wide.clone();
    let cs: Vec<_> = sys.initial.iter().map(|c| (c.clone(), 0.0)).collect();
    if !contract(&mut b, &cs) || !box_is_finite(&b) {
        b = wide;
    }
    let nm = pm.model.variables.len();
    let free: Vec<usize> = (0..nm).filter(|&i| b[i].width() > 0.0).collect();
    let mut out: Vec<Vec<f64>> = Vec::new();
    let ok = |x: &[f64]| all_hold_within(&sys.initial, x, 1e-9);
    let clamp = |x: Vec<f64>, b: &IBox| -> Vec<f64> { x.iter().zip(b).map(|(v, i)| v.clamp(i.lo, i.hi)).collect() };
    let base: Vec<f64> = b.iter().map(|i| i.mid()).collect();
    if free.len() <= 10 {
        for mask in 0..(1usize << free.len()) {
            let mut x = base.clone();
            for (bit, &i) in free.iter().enumerate() {
                x[i] = if mask >> bit & 1 == 1 { b[i].hi } else { b[i].lo };
            }
            let x = clamp(x, &b);
            if ok(&x) {
                out.push(x);
            }
        }
    }
    if ok(&base) {
        out.push(base.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tries = 0;
    while out.len() < budget && tries < budget * 50 && !free.is_empty() {
        tries += 1;
        let mut x = base.clone();
        for &i in &free {
            x[i] = rng.random_range(b[i].lo..=b[i].hi);
        }
        if ok(&x) {
            out.push(x);
        }
    }
    out.truncate(budget);
    // Product-only variables start at exactly zero.
    for x in &mut out {
        for v in x.iter_mut().skip(nm) {
            *v = 0.0;
        }
    }
    out
}

fn sample_runs(pm: &ProductModel, rs: &RefineSettings) -> Vec<Sampled> {
    let Ok(psys) = System::from_product(pm) else { return Vec::new() };
    let Ok(msys) = System::from_automaton(&pm.model) else { return Vec::new() };
    let nm = pm.model.variables.len();
    let mut out = Vec::new();
    for x in sample_points(&psys, pm, rs.sample_budget, rs.seed) {
        let Ok(run) = simulate_system(&msys, msys.initial_location, x[..nm].to_vec(), rs.sim(), None, &pm.model.name) else {
            continue;
        };
        let Ok(fv) = feature_values_on_trace(&run.trace, &pm.monitor.feature, &pm.model.parameters) else { continue };
        out.push(Sampled { trace: run.trace, values: fv.values });
    }
    out
}

/// One corner by bisection. The low side keeps `lower ≤ corner ≤ witness`; `lower` only rises on UNSAT.
pub fn refine_corner(session: &mut Session<'_>, range: FeatureRange, side: Side, eps: f64) -> Result<CornerResult, RefineError> {
    if range.empty {
        return Err(RefineError::Precondition("empty feature range".into()));
    }
    let start = session.queries();
    let corner = match side {
        Side::Low => range.lo,
        Side::High => range.hi,
    };
    if range.width() <= 0.0 {
        return Ok(CornerResult { value: corner, witness: None, witness_value: None, calls: 0, failed: false });
    }
    let whole = session.query(range.lo, range.hi, Some(side))?;
    let (Verdict::Sat, Some(mut w)) = (whole.verdict, whole.witness_value) else {
        return Ok(CornerResult { value: corner, witness: None, witness_value: None, calls: session.queries() - start, failed: true });
    };
    let mut witness = whole.witness;
    match side {
        Side::Low => {
            let (mut lower, mut upper) = (range.lo, w.min(range.hi));
            while w - lower > eps && upper - lower > eps {
                let m = 0.5 * (lower + upper);
                let r = session.query(lower, m, Some(Side::Low))?;
                match r.verdict {
                    Verdict::Sat => {
                        let v = r.witness_value.unwrap_or(m).clamp(lower, m);
                        if v < w {
                            w = v;
                            witness = r.witness;
                        }
                        upper = w;
                    }
                    Verdict::Unsat => lower = m,
                    Verdict::Unknown => upper = m,
                }
            }
            Ok(CornerResult { value: lower, witness, witness_value: Some(w), calls: session.queries() - start, failed: false })
        }
        Side::High => {
            let (mut lower, mut upper) = (w.max(range.lo), range.hi);
            while upper - w > eps && upper - lower > eps {
                let m = 0.5 * (lower + upper);
                let r = session.query(m, upper, Some(Side::High))?;
                match r.verdict {
                    Verdict::Sat => {
                        let v = r.witness_value.unwrap_or(m).clamp(m, upper);
                        if v > w {
                            w = v;
                            witness = r.witness;
                        }
                        lower = w;
                    }
                    Verdict::Unsat => upper = m,
                    Verdict::Unknown => lower = m,
                }
            }
            Ok(CornerResult { value: upper, witness, witness_value: Some(w), calls: session.queries() - start, failed: false })
        }
    }
}

/// Both corners, searched concurrently with one session each.
pub fn refine_range(pm: &ProductModel, range: FeatureRange, rs: &RefineSettings, reach: Option<&ReachSets>) -> Result<RefinedRange, RefineError> {
    if !(rs.eps > 0.0) {
        return Err(RefineError::Precondition("eps must be positive".into()));
    }
    if range.empty {
        return Err(RefineError::Precondition("empty feature range".into()));
    }
    let owned;
    let reach = match reach {
        Some(r) => r,
        None => {
            owned = flowpipe(pm, rs.sim())?;
            &owned
        }
    };
    let cache = OnceLock::new();
    let (lo, hi) = std::thread::scope(|s| {
        let low = s.spawn(|| refine_corner(&mut Session::new(pm, rs, Some(reach), "lo").with_samples(&cache), range, Side::Low, rs.eps));
        let high = s.spawn(|| refine_corner(&mut Session::new(pm, rs, Some(reach), "hi").with_samples(&cache), range, Side::High, rs.eps));
        (low.join().expect("low corner"), high.join().expect("high corner"))
    });
    let (lo, hi) = (lo?, hi?);
    Ok(RefinedRange {
        lo_star: lo.value,
        hi_star: hi.value,
        lo_value: lo.witness_value,
        hi_value: hi.witness_value,
        lo_witness: lo.witness,
        hi_witness: hi.witness,
        lo_calls: lo.calls,
        hi_calls: hi.calls,
        iterations: lo.calls + hi.calls,
        failed: lo.failed || hi.failed,
    })
}

/// Single feasibility query with a fresh session.
pub fn feasible(pm: &ProductModel, a: f64, b: f64, rs: &RefineSettings) -> Result<Feasibility, RefineError> {
    Session::new(pm, rs, None, "q").query(a, b, None)
}

/// Hop bound from a probe run from the centre of the initial set: observed model jumps plus 2.
pub fn suggest_k(pm: &ProductModel, s: SimSettings) -> usize {
    let probe = SimSettings { max_jumps: 10_000, ..s };
    let Ok(sys) = System::from_automaton(&pm.model) else { return 2 };
    let Ok(b) = initial_box(&sys) else { return 2 };
    let x: Vec<f64> = b.iter().map(|i| i.mid()).collect();
    match simulate_system(&sys, sys.initial_location, x, probe, None, &pm.model.name) {
        Ok(run) => run.model_jumps + 2,
        Err(_) => 2,
    }
}

/// A model start state from a valuation map (used by callers holding names).
pub fn valuation_of(pm: &ProductModel, x: &[f64]) -> Valuation {
    let values: BTreeMap<String, f64> = pm.model.variables.iter().cloned().zip(x.iter().copied()).collect();
    Valuation { mode: pm.model.initial.location.clone(), values, time: 0.0 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feature::{bind_feature_params, parse_feature};
    use crate::flowpipe::{feature_range_of, initial_feature_range};
    use crate::haslac::{parse_haslac, HaslacSource};
    use crate::monitor::{compile_monitor, product};

    fn ramp_pm(init: &str) -> ProductModel {
        let ha = parse_haslac(&HaslacSource::memory(format!(
            "module ramp(x) mode run begin ddt x = 1; end initial begin set begin mode == run; {init} end end endmodule"
        )))
        .unwrap();
        let f = parse_feature("feature cross(); begin var tc; @+(x>=2), tc=$time |-> cross = tc; end").unwrap();
        product(&ha, &compile_monitor(&bind_feature_params(&f, &BTreeMap::new()).unwrap())).unwrap()
    }

    fn settings(budget: usize) -> RefineSettings {
        RefineSettings {
            k: 1,
            eps: 0.01,
            oracle: OracleKind::Builtin,
            horizon: 3.0,
            step: 1e-3,
            sample_budget: budget,
            seed: 7,
            solver: None,
            workdir: None,
        }
    }

    #[test]
    fn ramp_queries() {
        let pm = ramp_pm("x == 0;");
        let rs = settings(20);
        let r = feasible(&pm, 1.9, 2.1, &rs).unwrap();
        assert_eq!(r.verdict, Verdict::Sat);
        assert!((r.witness_value.unwrap() - 2.0).abs() <= 1e-3);
        assert!(r.witness.is_some());
        assert_eq!(feasible(&pm, 3.0, 4.0, &rs).unwrap().verdict, Verdict::Unsat);
        assert!(matches!(feasible(&pm, 2.0, 1.0, &rs), Err(RefineError::Precondition(_))));
    }

    #[test]
    fn ramp_set_refinement() {
        let pm = ramp_pm("x >= 0; x <= 0.5;");
        let rs = settings(200);
        let reach = flowpipe(&pm, rs.sim()).unwrap();
        let range = feature_range_of(&pm, &reach);
        let r = refine_range(&pm, range, &rs, Some(&reach)).unwrap();
        assert!((r.lo_star - 1.5).abs() <= 0.02 && (r.hi_star - 2.0).abs() <= 0.02, "{r:?}");
        assert!(range.lo <= r.lo_star && r.hi_star <= range.hi);
        assert!((r.lo_value.unwrap() - 1.5).abs() <= 2.0 * rs.step, "{:?}", r.lo_value);
        assert!((r.hi_value.unwrap() - 2.0).abs() <= 2.0 * rs.step);
        assert_ne!(r.lo_witness, r.hi_witness);
        let bound = ((range.width() / rs.eps).log2().ceil() as usize) + 2;
        assert!(r.lo_calls <= bound && r.hi_calls <= bound);
    }

    #[test]
    fn degenerate_and_unknown_only() {
        let pm = ramp_pm("x >= 0; x <= 0.5;");
        let rs = settings(0);
        let range = initial_feature_range(&pm, rs.sim()).unwrap();
        let r = refine_range(&pm, range, &rs, None).unwrap();
        assert!(r.failed);
        assert_eq!((r.lo_star, r.hi_star), (range.lo, range.hi));
        assert_eq!(r.iterations, 2);
        let mut s = Session::new(&pm, &rs, None, "t");
        let c = refine_corner(&mut s, FeatureRange { lo: 2.0, hi: 2.0, empty: false }, Side::Low, 0.01).unwrap();
        assert_eq!((c.value, c.calls), (2.0, 0));
    }

    #[test]
    fn eps_equal_to_width_costs_one_call() {
        let pm = ramp_pm("x >= 0; x <= 0.5;");
        let rs = settings(10);
        let range = initial_feature_range(&pm, rs.sim()).unwrap();
        let mut s = Session::new(&pm, &rs, None, "t");
        let c = refine_corner(&mut s, range, Side::Low, range.width()).unwrap();
        assert!(c.calls <= 1);
    }

    #[test]
    fn external_without_solver() {
        let pm = ramp_pm("x == 0;");
        let mut rs = settings(5);
        rs.oracle = OracleKind::External;
        rs.solver = Some(SolverConfig::new("/nonexistent/solver-binary"));
        let e = feasible(&pm, 1.0, 2.0, &rs).unwrap_err();
        assert!(matches!(e, RefineError::Solver(SolverError::NotFound(_))), "{e}");
        assert!(e.to_string().contains("`solver`"));
    }
}
