//! Single-run simulation with exact affine stepping.
//!
//! Semantics are eager: at every instant the enabled edges fire at once
//! (lowest priority value first, then declaration order), and a step of
//! continuous flow is taken only when nothing is enabled. Time advances on the
//! grid `k·step`; guard entries, trigger rises and invariant exits inside a
//! step are located by bisection on the analytic flow.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::model::{HybridAutomaton, ModelError, Rel, Valuation};
use crate::monitor::ProductModel;
use crate::system::{all_hold, all_hold_within, step_point, Lin, System};
use crate::trace::{Sample, Trace, TraceSource, TraceStep};

/// Zero-time jump chains longer than this are reported as Zeno.
pub const INSTANT_JUMP_CAP: usize = 10_000;

/// Relative slack for guards and invariants checked at an instant.
pub const POINT_RTOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimSettings {
    pub step: f64,
    pub horizon: f64,
    /// Bound on model jumps; monitor moves are not counted.
    pub max_jumps: usize,
}

impl SimSettings {
    pub fn check(&self) -> Result<(), SimError> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(SimError::Settings("step must be positive".into()));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(SimError::Settings("horizon must be positive".into()));
        }
        if self.step > self.horizon {
            return Err(SimError::Settings("step exceeds the horizon".into()));
        }
        Ok(())
    }

    /// Bisection tolerance on event times.
    pub fn tol(&self) -> f64 {
        self.step * 1e-6
    }

    pub fn grid_steps(&self) -> usize {
        (self.horizon / self.step - 1e-9).ceil().max(1.0) as usize
    }

    pub fn grid_time(&self, k: usize) -> f64 {
        (k as f64 * self.step).min(self.horizon)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid settings: {0}")]
    Settings(String),
    #[error("start state: {0}")]
    Start(String),
    #[error("deadlock in `{location}` at t={time}: invariant violated and no transition enabled")]
    Deadlock { location: String, time: f64 },
    #[error("Zeno behaviour in `{location}` at t={time}: unbounded jumps without time passing")]
    Zeno { location: String, time: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimRun {
    pub trace: Trace,
    /// Stopped by the jump bound rather than the horizon.
    pub truncated: bool,
    pub model_jumps: usize,
    pub end_location: usize,
    pub end_state: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SimPolicy {
    /// Stop as soon as a location in this set is entered.
    pub stop_on_accept: bool,
}

struct Runner<'a> {
    sys: &'a System,
    s: SimSettings,
    accept: Option<&'a BTreeSet<usize>>,
    model_name: String,
    steps: Vec<TraceStep>,
    cur: Option<TraceStep>,
}

fn sample(sys: &System, t: f64, x: &[f64]) -> Sample {
    Sample { t, values: sys.variables.iter().cloned().zip(x.iter().copied()).collect(), widths: None }
}

/// Whether an atom counts as reached at `v1` for a crossing that started at `v0`.
fn reached(c: &Lin, v0: f64, v1: f64) -> bool {
    match c.rel {
        Rel::Eq => v1 == 0.0 || (v0 != 0.0 && v0.signum() != v1.signum()),
        r => r.holds(v1, 0.0),
    }
}

impl<'a> Runner<'a> {
    fn open(&mut self, loc: usize, t: f64, x: &[f64]) {
        self.cur = Some(TraceStep {
            index: 0,
            mode: self.sys.locations[loc].name.clone(),
            t0: t,
            t1: t,
            null: false,
            samples: vec![sample(self.sys, t, x)],
        });
    }

    fn record(&mut self, t: f64, x: &[f64]) {
        let c = self.cur.as_mut().expect("open step");
        c.t1 = t;
        c.samples.push(sample(self.sys, t, x));
    }

    fn close(&mut self) {
        if let Some(mut c) = self.cur.take() {
            c.index = self.steps.len();
            self.steps.push(c);
        }
    }

    fn null(&mut self, loc: usize, t: f64) {
        let idx = self.steps.len();
        self.steps.push(TraceStep::null_step(idx, self.sys.locations[loc].name.clone(), t));
    }

    fn state_at(&self, loc: usize, x: &[f64], dt: f64) -> Vec<f64> {
        if dt == 0.0 {
            return x.to_vec();
        }
        let (phi, psi) = self.sys.propagator(loc, dt);
        step_point(&phi, &psi, x)
    }

    /// Smallest `τ ∈ (0, dt]` with `pred(x(τ))`, given `pred` fails at 0 and holds at `dt`.
    fn first_true(&self, loc: usize, x: &[f64], dt: f64, pred: &dyn Fn(&[f64]) -> bool) -> f64 {
        let (mut lo, mut hi) = (0.0, dt);
        while hi - lo > self.s.tol() {
            let mid = 0.5 * (lo + hi);
            if pred(&self.state_at(loc, x, mid)) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    }

    /// Largest `τ ∈ [0, dt)` with `pred(x(τ))`, given `pred` holds at 0 and fails at `dt`.
    fn last_true(&self, loc: usize, x: &[f64], dt: f64, pred: &dyn Fn(&[f64]) -> bool) -> f64 {
        let (mut lo, mut hi) = (0.0, dt);
        while hi - lo > self.s.tol() {
            let mid = 0.5 * (lo + hi);
            if pred(&self.state_at(loc, x, mid)) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }

    fn enabled_now(&self, loc: usize, x: &[f64]) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, e) in self.sys.edges.iter().enumerate() {
            if e.source != loc || !e.trigger.is_empty() || !all_hold_within(&e.guard, x, POINT_RTOL) {
                continue;
            }
            if best.is_none_or(|b| e.priority < self.sys.edges[b].priority) {
                best = Some(i);
            }
        }
        best
    }

    fn run(&mut self, loc0: usize, x0: Vec<f64>) -> Result<SimRun, SimError> {
        let sys = self.sys;
        let s = self.s;
        let tol = s.tol();
        let (mut loc, mut x, mut t) = (loc0, x0, 0.0f64);
        let mut grid = 0usize;
        let mut jumps = 0usize;
        let mut truncated = false;
        let grid_prop: Vec<_> = (0..sys.locations.len()).map(|l| sys.propagator(l, s.step)).collect();
        self.open(loc, t, &x);
        let mut forced: Option<usize> = None;

        'outer: loop {
            // Discrete moves at the current instant.
            let mut chain: BTreeSet<(usize, Vec<u64>)> = BTreeSet::new();
            let mut chain_len = 0usize;
            loop {
                if self.accept.is_some_and(|a| a.contains(&loc)) {
                    break 'outer;
                }
                let edge = forced.take().or_else(|| self.enabled_now(loc, &x));
                let Some(ei) = edge else {
                    if sys.locations[loc].urgent {
                        return Err(SimError::Deadlock { location: sys.locations[loc].name.clone(), time: t });
                    }
                    break;
                };
                let e = &sys.edges[ei];
                if e.model_jump && jumps == s.max_jumps {
                    truncated = true;
                    break 'outer;
                }
                jumps += usize::from(e.model_jump);
                chain_len += 1;
                if chain_len > INSTANT_JUMP_CAP || !chain.insert((loc, x.iter().map(|v| v.to_bits()).collect())) {
                    return Err(SimError::Zeno { location: sys.locations[loc].name.clone(), time: t });
                }
                x = e.apply(&x);
                loc = e.target;
                self.close();
                if sys.locations[loc].urgent {
                    self.null(loc, t);
                } else {
                    self.open(loc, t, &x);
                }
            }
            if !all_hold_within(&sys.locations[loc].invariant, &x, POINT_RTOL) {
                return Err(SimError::Deadlock { location: sys.locations[loc].name.clone(), time: t });
            }
            while grid < s.grid_steps() && s.grid_time(grid + 1) <= t + tol * 1e-3 {
                grid += 1;
            }
            if grid >= s.grid_steps() {
                break;
            }
            let t_next = s.grid_time(grid + 1);
            let dt = t_next - t;
            let x_end = if (dt - s.step).abs() <= 1e-12 * s.step {
                step_point(&grid_prop[loc].0, &grid_prop[loc].1, &x)
            } else {
                self.state_at(loc, &x, dt)
            };

            // Earliest event inside (t, t_next].
            let mut best: Option<(f64, Option<usize>)> = None;
            // Near-ties (within 2·tol) go to edges over invariant exits, then to the lower (priority, index).
            let rank = |e: Option<usize>| e.map_or((u8::MAX, usize::MAX), |i| (sys.edges[i].priority, i));
            let consider = |tau: f64, edge: Option<usize>, best: &mut Option<(f64, Option<usize>)>| {
                let better = match *best {
                    None => true,
                    Some((bt, be)) => tau < bt - 2.0 * tol || (tau <= bt + 2.0 * tol && rank(edge) < rank(be)),
                };
                if better {
                    *best = Some((tau, edge));
                }
            };
            let inv = &sys.locations[loc].invariant;
            if !all_hold(inv, &x_end) {
                let tau = self.last_true(loc, &x, dt, &|y| all_hold(inv, y));
                consider(tau, None, &mut best);
            }
            for (i, e) in sys.edges.iter().enumerate() {
                if e.source != loc {
                    continue;
                }
                let atoms: &[Lin] = if e.trigger.is_empty() { &e.guard } else { &e.trigger };
                let v0: Vec<f64> = atoms.iter().map(|c| c.value(&x)).collect();
                let now = |y: &[f64]| atoms.iter().zip(&v0).all(|(c, &a)| reached(c, a, c.value(y)));
                let start_true = atoms.iter().all(|c| c.holds(&x));
                if start_true || !now(&x_end) {
                    continue;
                }
                let tau = self.first_true(loc, &x, dt, &now);
                if !e.trigger.is_empty() {
                    let y = self.state_at(loc, &x, tau);
                    if !all_hold_within(&e.guard, &y, POINT_RTOL) {
                        continue;
                    }
                }
                consider(tau, Some(i), &mut best);
            }

            match best {
                None => {
                    x = x_end;
                    t = t_next;
                    grid += 1;
                    self.record(t, &x);
                }
                Some((tau, edge)) => {
                    x = self.state_at(loc, &x, tau);
                    t += tau;
                    self.record(t, &x);
                    match edge {
                        Some(i) => forced = Some(i),
                        None => {
                            if self.enabled_now(loc, &x).is_none() {
                                return Err(SimError::Deadlock { location: sys.locations[loc].name.clone(), time: t });
                            }
                        }
                    }
                    if tau <= 0.0 {
                        // A zero-length event step must make progress through a jump.
                        if forced.is_none() && self.enabled_now(loc, &x).is_none() {
                            return Err(SimError::Deadlock { location: sys.locations[loc].name.clone(), time: t });
                        }
                    }
                }
            }
        }
        self.close();
        let mut trace = Trace::new(self.model_name.clone(), TraceSource::Simulation);
        trace.steps = std::mem::take(&mut self.steps);
        Ok(SimRun { trace, truncated, model_jumps: jumps, end_location: loc, end_state: x })
    }
}

/// Checks `start` against the system's initial condition and returns the state vector.
fn start_vector(sys: &System, start: &Valuation, defaults: &BTreeMap<String, f64>) -> Result<Vec<f64>, SimError> {
    let mut x = Vec::with_capacity(sys.dim());
    for v in &sys.variables {
        match start.values.get(v).or_else(|| defaults.get(v)) {
            Some(val) if val.is_finite() => x.push(*val),
            Some(_) => return Err(SimError::Start(format!("`{v}` is not finite"))),
            None => return Err(SimError::Start(format!("no value for `{v}`"))),
        }
    }
    if !all_hold_within(&sys.initial, &x, POINT_RTOL) {
        return Err(SimError::Start("state does not satisfy the initial condition".into()));
    }
    Ok(x)
}

pub fn simulate_system(
    sys: &System,
    loc: usize,
    x0: Vec<f64>,
    s: SimSettings,
    accept: Option<&BTreeSet<usize>>,
    model_name: &str,
) -> Result<SimRun, SimError> {
    s.check()?;
    let mut r = Runner { sys, s, accept, model_name: model_name.to_string(), steps: Vec::new(), cur: None };
    r.run(loc, x0)
}

/// Simulates a plain automaton from `start`, which must satisfy its initial condition.
pub fn simulate_automaton(ha: &HybridAutomaton, start: &Valuation, s: SimSettings) -> Result<SimRun, SimError> {
    let sys = System::from_automaton(ha)?;
    let x = start_vector(&sys, start, &BTreeMap::new())?;
    simulate_system(&sys, sys.initial_location, x, s, None, &ha.name)
}

/// Simulates the product from a model state; product-only variables start at 0.
pub fn simulate(pm: &ProductModel, start: &Valuation, s: SimSettings) -> Result<Trace, SimError> {
    simulate_product(pm, start, s, SimPolicy::default()).map(|r| r.trace)
}

pub fn simulate_product(pm: &ProductModel, start: &Valuation, s: SimSettings, policy: SimPolicy) -> Result<SimRun, SimError> {
    let sys = System::from_product(pm)?;
    let defaults: BTreeMap<String, f64> =
        pm.automaton.variables[pm.model.variables.len()..].iter().map(|v| (v.clone(), 0.0)).collect();
    let x = start_vector(&sys, start, &defaults)?;
    let accept: BTreeSet<usize> = (0..pm.pairs.len()).filter(|&i| pm.is_accept(i)).collect();
    simulate_system(&sys, sys.initial_location, x, s, policy.stop_on_accept.then_some(&accept), &pm.automaton.name)
}
