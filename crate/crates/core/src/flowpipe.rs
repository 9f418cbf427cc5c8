//! Box flowpipe over a bounded horizon and number of model jumps.
//!
//! Each location is swept along the time grid. The set at grid time `t_k` is
//! propagated from the start of its segment with the exact flow matrices, so
//! wrapping is paid once per segment rather than once per step. The set over
//! the step `[t_k, t_{k+1}]` is a validated Picard enclosure, tightened by the
//! hull of both grid sets plus the chord error `h²/8·max|ẍ|`.
//!
//! Runs are grouped in layers by the number of model jumps taken. Monitor
//! moves stay inside a layer and only increase the stage index, so locations
//! of a layer are processed in stage order. A jump found during step `k`
//! lands in the target as an enclosure of the first `h` time units after
//! entry, which also seeds the target's set at `t_{k+1}`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::interval::{
    affine_image, box_contains, box_contains_point, box_hull, box_is_empty, box_is_finite, box_meet, box_widen,
    contract, lin_range, IBox, Interval,
};
use crate::model::{ModelError, Rel};
use crate::monitor::ProductModel;
use crate::sim::{SimError, SimSettings, POINT_RTOL};
use crate::system::{affine_propagator, Lin, System};

/// Relative outward rounding applied to every computed box.
const ROUND: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReachError {
    #[error("the initial set is unbounded in `{0}`")]
    UnboundedInitial(String),
    #[error("the initial set is empty")]
    EmptyInitial,
    #[error("enclosure diverged in `{location}` at step {step}")]
    Diverged { location: String, step: usize },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumpRecord {
    pub layer: usize,
    pub step: usize,
    pub edge: usize,
    pub source: usize,
    pub target: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReachSets {
    pub variables: Vec<String>,
    pub locations: Vec<String>,
    pub step: f64,
    pub horizon: f64,
    pub steps: usize,
    /// `boxes[location][k]` encloses every state in that location during `[t_k, t_{k+1}]`.
    pub boxes: Vec<Vec<Option<IBox>>>,
    pub jumps: Vec<JumpRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureRange {
    pub lo: f64,
    pub hi: f64,
    pub empty: bool,
}

impl FeatureRange {
    pub const EMPTY: FeatureRange = FeatureRange { lo: f64::NAN, hi: f64::NAN, empty: true };

    pub fn width(&self) -> f64 {
        if self.empty {
            0.0
        } else {
            self.hi - self.lo
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        !self.empty && self.lo <= v && v <= self.hi
    }
}

impl ReachSets {
    pub fn box_at(&self, loc: usize, k: usize) -> Option<&IBox> {
        self.boxes.get(loc)?.get(k)?.as_ref()
    }

    pub fn location_index(&self, name: &str) -> Option<usize> {
        self.locations.iter().position(|l| l == name)
    }

    pub fn visited(&self, loc: usize) -> bool {
        self.boxes[loc].iter().any(Option::is_some)
    }

    /// Whether state `x` in `loc` at time `t` lies in a box of a step covering `t`.
    pub fn contains_state(&self, loc: usize, t: f64, x: &[f64]) -> bool {
        let k = (t / self.step).floor().max(0.0) as usize;
        let slack = 1e-9 * self.step;
        (k.saturating_sub(1)..=k + 1).any(|j| {
            let (t0, t1) = (j as f64 * self.step - slack, ((j + 1) as f64 * self.step).min(self.horizon) + slack);
            t0 <= t && t <= t1 && self.box_at(loc, j).is_some_and(|b| box_contains_point(b, x, 1e-9))
        })
    }

    /// Hull of variable `var` over all boxes of the given locations.
    pub fn hull(&self, var: usize, locs: &[usize]) -> Option<Interval> {
        let mut out: Option<Interval> = None;
        for &l in locs {
            for b in self.boxes[l].iter().flatten() {
                out = Some(out.map_or(b[var], |o| o.hull(&b[var])));
            }
        }
        out
    }

    /// One row per location, step and variable: `location,step,t0,t1,variable,lo,hi`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("location,step,t0,t1,variable,lo,hi\n");
        for (l, row) in self.boxes.iter().enumerate() {
            for (k, b) in row.iter().enumerate() {
                let Some(b) = b else { continue };
                let (t0, t1) = (k as f64 * self.step, ((k + 1) as f64 * self.step).min(self.horizon));
                for (v, i) in self.variables.iter().zip(b) {
                    let _ = writeln!(out, "{},{k},{t0:?},{t1:?},{v},{:?},{:?}", self.locations[l], i.lo, i.hi);
                }
            }
        }
        out
    }
}

struct Ctx<'a> {
    sys: &'a System,
    s: SimSettings,
    time_var: Option<usize>,
    /// Stage index of each location; locations of a layer are processed in this order.
    order: Vec<usize>,
    grid_prop: Vec<(DMatrix<f64>, DVector<f64>)>,
    /// `A²` and `A·b` per location, for the chord error bound.
    second: Vec<(DMatrix<f64>, DVector<f64>)>,
}

#[derive(Default, Clone)]
struct Chain {
    /// Sets entering at grid time `t_k`.
    init: BTreeMap<usize, IBox>,
    /// Enclosures to add to step `k`.
    extra: BTreeMap<usize, IBox>,
}

fn round_out(b: &[Interval]) -> IBox {
    box_widen(b, ROUND, 1e-300)
}

fn add_to(map: &mut BTreeMap<usize, IBox>, k: usize, b: IBox) {
    map.entry(k).and_modify(|o| *o = box_hull(o, &b)).or_insert(b);
}

impl<'a> Ctx<'a> {
    fn tol(&self) -> f64 {
        self.s.tol()
    }

    /// Slack covering the simulator's event tolerance and point checks.
    fn slack(&self, c: &Lin, loc: usize, b: &[Interval]) -> f64 {
        let l = &self.sys.locations[loc];
        let d = affine_image(&l.a, &l.b, b);
        let rate = lin_range(&Lin { coef: c.coef.clone(), constant: 0.0, rel: c.rel }, &d).mag();
        let scale = 1.0 + c.constant.abs() + c.coef.iter().zip(b).map(|(a, x)| (a * x.mag()).abs()).sum::<f64>();
        let s = 4.0 * self.tol() * rate + 2.0 * POINT_RTOL * scale;
        if s.is_finite() {
            s
        } else {
            f64::INFINITY
        }
    }

    fn relaxed(&self, cs: &[Lin], loc: usize, b: &[Interval]) -> Vec<(Lin, f64)> {
        cs.iter().map(|c| (c.clone(), self.slack(c, loc, b))).collect()
    }

    fn clamp_time(&self, b: &mut [Interval], t0: f64, t1: f64) {
        if let Some(i) = self.time_var {
            let w = Interval::new(t0, t1).widen(1e-12, 1e-9 * self.s.step);
            b[i] = b[i].meet(&w);
        }
    }

    fn in_invariant(&self, loc: usize, mut b: IBox) -> Option<IBox> {
        let cs = self.relaxed(&self.sys.locations[loc].invariant, loc, &b);
        contract(&mut b, &cs).then_some(b)
    }

    /// Validated enclosure of the flow from `x` over `[0, h]`.
    fn picard(&self, loc: usize, x: &[Interval], h: f64, depth: u32) -> Option<IBox> {
        let l = &self.sys.locations[loc];
        let step = |om: &[Interval]| -> IBox {
            let d = affine_image(&l.a, &l.b, om);
            x.iter()
                .zip(&d)
                .map(|(xi, di)| Interval::new(xi.lo + (h * di.lo).min(0.0), xi.hi + (h * di.hi).max(0.0)))
                .collect()
        };
        let mut om = step(x);
        for _ in 0..40 {
            let guess: IBox = om.iter().map(|i| i.widen(0.0, 0.1 * i.width() + 1e-9 * i.mag() + 1e-300)).collect();
            let next = step(&guess);
            if !box_is_finite(&next) {
                break;
            }
            if box_contains(&guess, &next) {
                return Some(round_out(&next));
            }
            om = box_hull(&guess, &next);
        }
        if depth >= 8 {
            return None;
        }
        let half = 0.5 * h;
        let first = self.picard(loc, x, half, depth + 1)?;
        let (phi, psi) = affine_propagator(&l.a, &l.b, half);
        let mid = round_out(&affine_image(&phi, &psi, x));
        let second = self.picard(loc, &mid, half, depth + 1)?;
        Some(box_hull(&first, &second))
    }

    /// Step enclosure from the grid sets at both ends.
    fn enclose(&self, loc: usize, start: &[Interval], end: Option<&IBox>, h: f64) -> Option<IBox> {
        let mut om = self.picard(loc, start, h, 0)?;
        if let Some(end) = end {
            let (a2, ab) = &self.second[loc];
            let acc = affine_image(a2, ab, &om);
            let chord: IBox = start
                .iter()
                .zip(end)
                .zip(&acc)
                .map(|((s, e), a)| s.hull(e).widen(0.0, h * h / 8.0 * a.mag()))
                .collect();
            om = box_meet(&om, &round_out(&chord));
        }
        Some(om)
    }

    /// Region of `b` from which `edge` may fire.
    fn jump_region(&self, edge: usize, b: &[Interval]) -> Option<IBox> {
        let e = &self.sys.edges[edge];
        let mut base = b.to_vec();
        let guard = self.relaxed(&e.guard, e.source, b);
        if !contract(&mut base, &guard) {
            return None;
        }
        if e.trigger.is_empty() {
            return Some(base);
        }
        // Some trigger atom sits at its boundary when the conjunction rises.
        let trig = self.relaxed(&e.trigger, e.source, &base);
        let mut out: Option<IBox> = None;
        for i in 0..trig.len() {
            let mut alt = base.clone();
            let mut cs = trig.clone();
            cs[i].0.rel = Rel::Eq;
            if contract(&mut alt, &cs) {
                out = Some(out.map_or(alt.clone(), |o| box_hull(&o, &alt)));
            }
        }
        out
    }

    fn fire(&self, edge: usize, region: &[Interval]) -> Option<IBox> {
        let e = &self.sys.edges[edge];
        let y = round_out(&affine_image(&e.map, &e.offset, region));
        self.in_invariant(e.target, y)
    }
}

struct Sweep {
    boxes: Vec<Vec<Option<IBox>>>,
    jumps: Vec<JumpRecord>,
}

impl Sweep {
    fn record(&mut self, loc: usize, k: usize, b: &[Interval]) {
        let slot = &mut self.boxes[loc][k];
        *slot = Some(match slot.take() {
            None => b.to_vec(),
            Some(o) => box_hull(&o, b),
        });
    }
}

/// Box enclosing the initial condition.
pub fn initial_box(sys: &System) -> Result<IBox, ReachError> {
    let mut b = vec![Interval::ENTIRE; sys.dim()];
    let cs: Vec<(Lin, f64)> = sys
        .initial
        .iter()
        .map(|c| (c.clone(), 2.0 * POINT_RTOL * (1.0 + c.constant.abs())))
        .collect();
    if !contract(&mut b, &cs) {
        return Err(ReachError::EmptyInitial);
    }
    for (i, v) in b.iter().enumerate() {
        if !(v.lo.is_finite() && v.hi.is_finite()) {
            return Err(ReachError::UnboundedInitial(sys.variables[i].clone()));
        }
    }
    Ok(round_out(&b))
}

pub fn flowpipe_system(sys: &System, order: Vec<usize>, time_var: Option<usize>, s: SimSettings) -> Result<ReachSets, ReachError> {
    s.check()?;
    let n_steps = s.grid_steps();
    let nl = sys.locations.len();
    let ctx = Ctx {
        sys,
        s,
        time_var,
        grid_prop: (0..nl).map(|l| sys.propagator(l, s.step)).collect(),
        second: sys.locations.iter().map(|l| (&l.a * &l.a, &l.a * &l.b)).collect(),
        order,
    };
    let mut sweep = Sweep { boxes: vec![vec![None; n_steps]; nl], jumps: Vec::new() };
    let mut locs: Vec<usize> = (0..nl).collect();
    locs.sort_by_key(|&l| (ctx.order[l], l));

    let mut layer: Vec<Chain> = vec![Chain::default(); nl];
    let mut start = initial_box(sys)?;
    ctx.clamp_time(&mut start, 0.0, 0.0);
    if let Some(b) = ctx.in_invariant(sys.initial_location, start) {
        layer[sys.initial_location].init.insert(0, b);
    }

    for j in 0..=s.max_jumps {
        let mut next: Vec<Chain> = vec![Chain::default(); nl];
        for &loc in &locs {
            let chain = std::mem::take(&mut layer[loc]);
            if chain.init.is_empty() && chain.extra.is_empty() {
                continue;
            }
            let emit = |k: usize, region_src: &IBox, layer: &mut Vec<Chain>, next: &mut Vec<Chain>, sweep: &mut Sweep| {
                for (ei, e) in sys.edges.iter().enumerate() {
                    if e.source != loc || (e.model_jump && j == s.max_jumps) {
                        continue;
                    }
                    let Some(region) = ctx.jump_region(ei, region_src) else { continue };
                    let Some(mut y) = ctx.fire(ei, &region) else { continue };
                    let (t0, t1) = (s.grid_time(k), s.grid_time(k + 1));
                    ctx.clamp_time(&mut y, t0, t1);
                    sweep.jumps.push(JumpRecord { layer: j, step: k, edge: ei, source: loc, target: e.target });
                    let dest = if e.model_jump { &mut *next } else { &mut *layer };
                    if sys.locations[e.target].urgent {
                        add_to(&mut dest[e.target].extra, k, y);
                        continue;
                    }
                    let Some(om) = ctx.picard(e.target, &y, s.step, 0) else { continue };
                    let Some(om) = ctx.in_invariant(e.target, om) else { continue };
                    let mut here = om.clone();
                    ctx.clamp_time(&mut here, t0, t1);
                    add_to(&mut dest[e.target].extra, k, here);
                    if k + 1 < n_steps {
                        let mut seed = om;
                        ctx.clamp_time(&mut seed, t1, t1);
                        add_to(&mut dest[e.target].init, k + 1, seed);
                    }
                }
            };

            if sys.locations[loc].urgent {
                for (k, b) in chain.extra.iter().chain(chain.init.iter()) {
                    sweep.record(loc, *k, b);
                    emit(*k, b, &mut layer, &mut next, &mut sweep);
                }
                continue;
            }

            let first = *chain.init.keys().next().unwrap_or(&usize::MAX).min(chain.extra.keys().next().unwrap_or(&usize::MAX));
            let last_pending = |k: usize| chain.init.range(k..).next().is_some() || chain.extra.range(k..).next().is_some();
            // Segment: grid set = phi·x0 + psi.
            let mut seg: Option<(IBox, DMatrix<f64>, DVector<f64>)> = None;
            let mut grid: Option<IBox> = None;
            let n = sys.dim();
            for k in first..n_steps {
                if let Some(b) = chain.init.get(&k) {
                    let merged = match grid.take() {
                        None => b.clone(),
                        Some(g) => box_hull(&g, b),
                    };
                    grid = Some(merged.clone());
                    seg = Some((merged, DMatrix::identity(n, n), DVector::zeros(n)));
                }
                let (t0, t1) = (s.grid_time(k), s.grid_time(k + 1));
                let h = t1 - t0;
                let mut step_box: Option<IBox> = None;
                let mut next_grid: Option<IBox> = None;
                if let (Some(g), Some((x0, phi, psi))) = (grid.as_ref(), seg.as_mut()) {
                    let (sp, sq) = if (h - s.step).abs() <= 1e-12 * s.step {
                        ctx.grid_prop[loc].clone()
                    } else {
                        sys.propagator(loc, h)
                    };
                    let nphi = &sp * &*phi;
                    let npsi = &sp * &*psi + &sq;
                    let mut end = round_out(&affine_image(&nphi, &npsi, x0));
                    ctx.clamp_time(&mut end, t1, t1);
                    let om = ctx
                        .enclose(loc, g, Some(&end), h)
                        .ok_or_else(|| ReachError::Diverged { location: sys.locations[loc].name.clone(), step: k })?;
                    let mut om = om;
                    ctx.clamp_time(&mut om, t0, t1);
                    if !box_is_finite(&om) {
                        return Err(ReachError::Diverged { location: sys.locations[loc].name.clone(), step: k });
                    }
                    step_box = ctx.in_invariant(loc, om);
                    *phi = nphi;
                    *psi = npsi;
                    if step_box.is_some() {
                        if let Some(cut) = ctx.in_invariant(loc, end.clone()) {
                            if !box_contains(&cut, &end) {
                                seg = Some((cut.clone(), DMatrix::identity(n, n), DVector::zeros(n)));
                            }
                            next_grid = Some(cut);
                        }
                    }
                }
                if let Some(x) = chain.extra.get(&k) {
                    step_box = Some(match step_box {
                        None => x.clone(),
                        Some(b) => box_hull(&b, x),
                    });
                }
                if let Some(b) = &step_box {
                    sweep.record(loc, k, b);
                    emit(k, b, &mut layer, &mut next, &mut sweep);
                }
                grid = next_grid;
                if grid.is_none() {
                    seg = None;
                    if !last_pending(k + 1) {
                        break;
                    }
                }
            }
        }
        layer = next;
        if layer.iter().all(|c| c.init.is_empty() && c.extra.is_empty()) {
            break;
        }
    }
    for row in &mut sweep.boxes {
        for b in row.iter_mut() {
            if b.as_ref().is_some_and(|b| box_is_empty(b)) {
                *b = None;
            }
        }
    }
    Ok(ReachSets {
        variables: sys.variables.clone(),
        locations: sys.locations.iter().map(|l| l.name.clone()).collect(),
        step: s.step,
        horizon: s.horizon,
        steps: n_steps,
        boxes: sweep.boxes,
        jumps: sweep.jumps,
    })
}

pub fn flowpipe(pm: &ProductModel, s: SimSettings) -> Result<ReachSets, ReachError> {
    let sys = System::from_product(pm)?;
    let order = pm.pairs.iter().map(|p| p.1).collect();
    let time_var = sys.var_index(&pm.time_var);
    flowpipe_system(&sys, order, time_var, s)
}

/// Hull of the feature register over all accept boxes.
pub fn feature_range_of(pm: &ProductModel, rs: &ReachSets) -> FeatureRange {
    let accept: Vec<usize> = (0..pm.pairs.len()).filter(|&i| pm.is_accept(i)).collect();
    let var = rs.variables.iter().position(|v| *v == pm.feat_var).expect("feature register");
    match rs.hull(var, &accept) {
        Some(i) => FeatureRange { lo: i.lo, hi: i.hi, empty: false },
        None => FeatureRange::EMPTY,
    }
}

pub fn initial_feature_range(pm: &ProductModel, s: SimSettings) -> Result<FeatureRange, ReachError> {
    Ok(feature_range_of(pm, &flowpipe(pm, s)?))
}

/// Whether some accept box allows a feature value in `[a, b]`.
pub fn feature_may_hit(pm: &ProductModel, rs: &ReachSets, a: f64, b: f64) -> bool {
    let var = rs.variables.iter().position(|v| *v == pm.feat_var).expect("feature register");
    let target = Interval::new(a, b);
    (0..pm.pairs.len())
        .filter(|&i| pm.is_accept(i))
        .any(|l| rs.boxes[l].iter().flatten().any(|bx| bx[var].intersects(&target)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feature::{bind_feature_params, parse_feature};
    use crate::haslac::{parse_haslac, HaslacSource};
    use crate::model::{HybridAutomaton, Valuation};
    use crate::monitor::{compile_monitor, product};
    use crate::sim::{simulate_product, SimPolicy};

    fn ha(text: &str) -> HybridAutomaton {
        parse_haslac(&HaslacSource::memory(text)).unwrap()
    }

    fn pm(model: &str, feature: &str) -> ProductModel {
        let f = bind_feature_params(&parse_feature(feature).unwrap(), &BTreeMap::new()).unwrap();
        product(&ha(model), &compile_monitor(&f)).unwrap()
    }

    const CROSS: &str = "feature cross(); begin var tc; @+(x>=2), tc=$time |-> cross = tc; end";

    fn ramp(init: &str) -> String {
        format!("module ramp(x) mode run begin ddt x = 1; end initial begin set begin mode == run; {init} end end endmodule")
    }

    #[test]
    fn ramp_point_range() {
        let p = pm(&ramp("x == 0;"), CROSS);
        let s = SimSettings { step: 1e-3, horizon: 3.0, max_jumps: 2 };
        let r = initial_feature_range(&p, s).unwrap();
        assert!(r.contains(2.0), "{r:?}");
        assert!(r.width() <= 4e-3, "{r:?}");
    }

    #[test]
    fn ramp_set_range_and_translation() {
        let p = pm(&ramp("x >= 0; x <= 0.5;"), CROSS);
        let s = SimSettings { step: 0.01, horizon: 3.0, max_jumps: 2 };
        let rs = flowpipe(&p, s).unwrap();
        let x = rs.variables.iter().position(|v| v == "x").unwrap();
        let q0 = rs.location_index("run_q0").unwrap();
        let b = rs.box_at(q0, 100).unwrap();
        assert!(b[x].lo <= 1.0 && b[x].hi >= 1.5, "{:?}", b[x]);
        let r = feature_range_of(&p, &rs);
        assert!(r.lo <= 1.5 && r.hi >= 2.0, "{r:?}");
        assert!(r.width() <= 0.5 + 4.0 * 0.01, "{r:?}");
    }

    #[test]
    fn unsatisfiable_stage_is_empty() {
        let p = pm(&ramp("x == 0;"), "feature big(); begin var tc; (x >= 1e9), tc=$time |-> big = tc; end");
        let r = initial_feature_range(&p, SimSettings { step: 0.01, horizon: 3.0, max_jumps: 2 }).unwrap();
        assert!(r.empty);
        let p = pm(&ramp("x >= 0;"), CROSS);
        assert!(matches!(flowpipe(&p, SimSettings { step: 0.01, horizon: 3.0, max_jumps: 2 }), Err(ReachError::UnboundedInitial(v)) if v == "x"));
    }

    #[test]
    fn decay_crossing() {
        let p = pm(
            "module decay(v) mode run begin ddt v = 1 - v; end initial begin set begin mode == run; v == 0; end end endmodule",
            "feature half(); begin var tc; @+(v>=0.5), tc=$time |-> half = tc; end",
        );
        let r = initial_feature_range(&p, SimSettings { step: 1e-3, horizon: 2.0, max_jumps: 2 }).unwrap();
        assert!(r.contains(std::f64::consts::LN_2), "{r:?}");
        assert!(r.width() <= 4e-3, "{r:?}");
    }

    #[test]
    fn simulated_runs_stay_inside() {
        let model = "module osc(x, y)
            mode cw begin ddt x = y; ddt y = -x - 0.1*y; end
            mode ccw begin ddt x = -y + 1; ddt y = x; end
            property inv cw mode==cw |=> x <= 1.2; endproperty
            property trans cw_ccw mode==cw && mode'==ccw && x >= 1 |=> y' == 0.5*y; endproperty
            property trans ccw_cw mode==ccw && mode'==cw && y >= 1.5 |=> x' == x - 1; endproperty
            initial begin set begin mode == cw; x >= 0; x <= 0.2; y >= 1; y <= 1.1; end end endmodule";
        let p = pm(model, "feature f(); begin var a; @+(state==ccw), a=$time |-> f = a; end");
        let s = SimSettings { step: 0.01, horizon: 6.0, max_jumps: 4 };
        let rs = flowpipe(&p, s).unwrap();
        let range = feature_range_of(&p, &rs);
        for (x0, y0) in [(0.0, 1.0), (0.2, 1.1), (0.1, 1.05), (0.0, 1.1), (0.2, 1.0)] {
            let st = Valuation::new("cw", [("x".to_string(), x0), ("y".to_string(), y0)], 0.0);
            let run = simulate_product(&p, &st, s, SimPolicy::default()).unwrap();
            for step in &run.trace.steps {
                let l = rs.location_index(&step.mode).unwrap();
                for smp in &step.samples {
                    let xs: Vec<f64> = rs.variables.iter().map(|v| smp.values[v]).collect();
                    assert!(rs.contains_state(l, smp.t, &xs), "{} at {}: {:?}", step.mode, smp.t, xs);
                }
            }
            if p.is_accept(run.end_location) {
                let feat = run.end_state[rs.variables.iter().position(|v| *v == p.feat_var).unwrap()];
                assert!(range.contains(feat), "{feat} {range:?}");
            }
        }
        assert!(rs.to_csv().lines().next().unwrap() == "location,step,t0,t1,variable,lo,hi");
    }
}
