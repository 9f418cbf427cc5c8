//! Feature evaluation by replaying a model trace.
//!
//! This is deliberately independent of the monitor/product construction and
//! serves as the reference the product is checked against.
//!
//! A match starts at any occurrence of the first stage: an entry into the
//! region where a level stage holds, or an occurrence of an event. Each later
//! stage then advances at its earliest occurrence inside its delay window.
//! Between samples of one step the trace is interpolated linearly and sign
//! changes are located by bisection. Events rise only on continuous crossings
//! within a step, or on a change of location for `state==X` parts; a hit for
//! an event stage must come strictly after the previous stage's hit.

use std::collections::BTreeMap;

use crate::feature::{BoundFeature, Stage};
use crate::lex::TIME_CAPTURE;
use crate::model::{location_matches, Condition, Porv, Valuation};
use crate::trace::{Trace, TraceError};

pub const MATCH_CAP: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureValues {
    pub values: Vec<f64>,
    /// Set when more than [`MATCH_CAP`] match starts existed.
    pub truncated: bool,
}

struct Pt<'a> {
    t: f64,
    mode: &'a str,
    values: &'a BTreeMap<String, f64>,
    step: usize,
    /// Mode occupied just before this point when it opens a step after a jump.
    entered_from: Option<&'a str>,
}

#[derive(Debug, Clone)]
struct Hit {
    /// Index of the point at or immediately before the hit.
    pos: usize,
    /// Whether the hit is exactly at point `pos` (as opposed to inside the following segment).
    at_point: bool,
    t: f64,
    state: Valuation,
}

struct Replay<'a> {
    pts: Vec<Pt<'a>>,
    params: &'a BTreeMap<String, f64>,
}

impl<'a> Replay<'a> {
    fn val(&self, i: usize) -> Valuation {
        let p = &self.pts[i];
        Valuation { mode: p.mode.to_string(), values: p.values.clone(), time: p.t }
    }

    fn same_segment(&self, i: usize) -> bool {
        i + 1 < self.pts.len() && self.pts[i].step == self.pts[i + 1].step && self.pts[i + 1].t > self.pts[i].t
    }

    fn interp(&self, i: usize, t: f64) -> Valuation {
        let (a, b) = (&self.pts[i], &self.pts[i + 1]);
        let w = ((t - a.t) / (b.t - a.t)).clamp(0.0, 1.0);
        let values = a
            .values
            .iter()
            .map(|(k, x)| {
                let y = b.values.get(k).copied().unwrap_or(*x);
                (k.clone(), x + w * (y - x))
            })
            .collect();
        Valuation { mode: a.mode.to_string(), values, time: t }
    }

    fn holds(&self, c: &Condition, v: &Valuation) -> bool {
        c.eval(v, self.params).unwrap_or(false)
    }

    /// First time in `(lo, hi]` of segment `i` where `c` holds, given it fails at `lo`.
    fn rise(&self, i: usize, c: &Condition, mut lo: f64, mut hi: f64) -> f64 {
        for _ in 0..200 {
            if hi - lo <= 1e-15 * hi.abs().max(1.0) {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.holds(c, &self.interp(i, mid)) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    }

    fn hit_in_segment(&self, i: usize, t: f64) -> Hit {
        Hit { pos: i, at_point: false, t, state: self.interp(i, t) }
    }

    fn hit_at(&self, i: usize) -> Hit {
        Hit { pos: i, at_point: true, t: self.pts[i].t, state: self.val(i) }
    }

    /// Earliest point at or after `from` (by position) and in `[t_lo, t_hi]` where a level stage holds.
    fn next_level(&self, g: &Condition, from: usize, from_at_point: bool, t_lo: f64, t_hi: Option<f64>, tol: f64) -> Option<Hit> {
        let within = |t: f64| t_hi.is_none_or(|h| t <= h + tol);
        let mut i = from;
        let mut first = true;
        while i < self.pts.len() {
            let p = &self.pts[i];
            if !within(p.t.max(t_lo)) {
                return None;
            }
            let point_ok = !(first && !from_at_point);
            if point_ok && p.t >= t_lo - tol && self.holds(g, &self.val(i)) {
                return Some(self.hit_at(i));
            }
            if self.same_segment(i) {
                let next_t = self.pts[i + 1].t;
                if next_t > t_lo {
                    let left = p.t.max(t_lo);
                    let left_holds = if left > p.t { self.holds(g, &self.interp(i, left)) } else { false };
                    if left > p.t && left_holds {
                        return within(left).then(|| self.hit_in_segment(i, left));
                    }
                    if self.holds(g, &self.val(i + 1)) {
                        let t = self.rise(i, g, left, next_t);
                        if t < next_t {
                            return within(t).then(|| self.hit_in_segment(i, t));
                        }
                    }
                }
            }
            first = false;
            i += 1;
        }
        None
    }

    /// Every occurrence of an event stage, in trace order.
    fn event_occurrences(&self, st: &Stage) -> Vec<Hit> {
        let ev = &st.event().expect("event stage").predicate;
        let locs: Vec<&str> = ev
            .conjuncts
            .iter()
            .filter_map(|p| match p {
                Porv::InLocation(l) => Some(l.as_str()),
                _ => None,
            })
            .collect();
        let cmp = Condition::new(ev.conjuncts.iter().filter(|p| matches!(p, Porv::Compare { .. })).cloned().collect());
        let in_l = |mode: &str| locs.iter().all(|l| location_matches(l, mode));
        let mut out = Vec::new();
        for i in 0..self.pts.len() {
            let p = &self.pts[i];
            if !locs.is_empty() {
                if let Some(prev) = p.entered_from {
                    if !in_l(prev) && in_l(p.mode) && self.holds(&cmp, &self.val(i)) {
                        out.push(self.hit_at(i));
                    }
                }
            }
            if !cmp.is_true() && in_l(p.mode) && self.same_segment(i) {
                let (a, b) = (self.val(i), self.val(i + 1));
                if !self.holds(&cmp, &a) && self.holds(&cmp, &b) {
                    let t = self.rise(i, &cmp, p.t, self.pts[i + 1].t);
                    out.push(self.hit_in_segment(i, t));
                }
            }
        }
        out.retain(|h| self.holds(&st.guard, &h.state));
        out
    }

    fn level_entries(&self, g: &Condition) -> Vec<Hit> {
        let mut out = Vec::new();
        let mut prev_holds = false;
        for i in 0..self.pts.len() {
            let now = self.holds(g, &self.val(i));
            if now && !prev_holds {
                if i > 0 && self.pts[i - 1].step == self.pts[i].step && self.pts[i].t > self.pts[i - 1].t {
                    let t = self.rise(i - 1, g, self.pts[i - 1].t, self.pts[i].t);
                    out.push(if t < self.pts[i].t { self.hit_in_segment(i - 1, t) } else { self.hit_at(i) });
                } else {
                    out.push(self.hit_at(i));
                }
            }
            prev_holds = now;
        }
        out
    }
}

fn capture_values(st: &Stage, hit: &Hit, params: &BTreeMap<String, f64>, regs: &mut BTreeMap<String, f64>) {
    for (l, e) in &st.captures {
        let v = e.eval(&|n| {
            if n == TIME_CAPTURE {
                Some(hit.t)
            } else {
                hit.state.values.get(n).or_else(|| params.get(n)).copied()
            }
        });
        regs.insert(l.clone(), v.unwrap_or(f64::NAN));
    }
}

/// All feature values produced by matches on `tr`. Names not sampled in the trace resolve against `params`.
pub fn feature_values_on_trace(
    tr: &Trace,
    f: &BoundFeature,
    params: &BTreeMap<String, f64>,
) -> Result<FeatureValues, TraceError> {
    let mut pts = Vec::new();
    let mut last_mode: Option<&str> = None;
    let mut ordinal = 0;
    for st in &tr.steps {
        if st.null {
            last_mode = Some(&st.mode);
            continue;
        }
        for (j, s) in st.samples.iter().enumerate() {
            pts.push(Pt {
                t: s.t,
                mode: &st.mode,
                values: &s.values,
                step: ordinal,
                entered_from: if j == 0 { last_mode } else { None },
            });
        }
        if !st.samples.is_empty() {
            last_mode = Some(&st.mode);
        }
        ordinal += 1;
    }
    if let Some(p) = pts.first() {
        for n in f.model_names() {
            if !p.values.contains_key(&n) && !params.contains_key(&n) {
                return Err(TraceError::VariableMismatch(n));
            }
        }
    }
    let r = Replay { pts, params };
    let stages = &f.spec.stages;
    let span = r.pts.last().map_or(1.0, |p| p.t.abs().max(1.0));
    let tol = 1e-9 * span;

    let starts = match stages[0].event() {
        Some(_) => r.event_occurrences(&stages[0]),
        None => r.level_entries(&stages[0].guard),
    };
    let truncated = starts.len() > MATCH_CAP;
    let occurrences: Vec<Option<Vec<Hit>>> =
        stages.iter().map(|s| s.event().map(|_| r.event_occurrences(s))).collect();

    let mut values = Vec::new();
    for start in starts.into_iter().take(MATCH_CAP) {
        let mut regs: BTreeMap<String, f64> = f.spec.locals.iter().map(|l| (l.clone(), 0.0)).collect();
        capture_values(&stages[0], &start, params, &mut regs);
        let mut cur = start;
        let mut complete = true;
        for k in 1..stages.len() {
            let w = stages[k - 1].delay_to_next.as_ref().expect("window between stages");
            let (t_lo, t_hi) = (cur.t + w.lower, w.upper.map(|u| cur.t + u));
            let next = match &occurrences[k] {
                Some(occ) => occ
                    .iter()
                    .find(|h| {
                        let after = if h.at_point { h.pos > cur.pos } else { h.pos >= cur.pos && h.t > cur.t };
                        after && h.t >= t_lo - tol
                    })
                    .filter(|h| t_hi.is_none_or(|u| h.t <= u + tol))
                    .cloned(),
                None => r.next_level(&stages[k].guard, cur.pos, cur.at_point, t_lo, t_hi, tol),
            };
            match next {
                Some(h) => {
                    capture_values(&stages[k], &h, params, &mut regs);
                    cur = h;
                }
                None => {
                    complete = false;
                    break;
                }
            }
        }
        if complete {
            let v = f.spec.compute.eval(&|n| regs.get(n).or_else(|| f.bindings.get(n)).copied());
            if let Ok(v) = v {
                values.push(v);
            }
        }
    }
    Ok(FeatureValues { values, truncated })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feature::{bind_feature_params, parse_feature};
    use crate::trace::tests::{sample, step};
    use crate::trace::TraceSource;

    fn bound(text: &str, b: &[(&str, f64)]) -> BoundFeature {
        let f = parse_feature(text).unwrap();
        bind_feature_params(&f, &b.iter().map(|(k, v)| (k.to_string(), *v)).collect()).unwrap()
    }

    fn ramp_trace(x0: f64, h: f64, horizon: f64) -> Trace {
        let n = (horizon / h).round() as usize;
        let mut tr = Trace::new("ramp", TraceSource::Simulation);
        tr.steps.push(step(0, "run", (0..=n).map(|k| sample(k as f64 * h, &[("x", x0 + k as f64 * h)])).collect()));
        tr
    }

    const THRESHOLD: &str = "feature cross(); begin var tc; @+(x>=2), tc=$time |-> cross = tc; end";

    #[test]
    fn ramp_crossing() {
        let f = bound(THRESHOLD, &[]);
        let v = feature_values_on_trace(&ramp_trace(0.0, 0.01, 3.0), &f, &BTreeMap::new()).unwrap();
        assert_eq!(v.values.len(), 1);
        assert!((v.values[0] - 2.0).abs() < 1e-9, "{:?}", v.values);
        let v = feature_values_on_trace(&ramp_trace(0.3, 0.01, 3.0), &f, &BTreeMap::new()).unwrap();
        assert!((v.values[0] - 1.7).abs() < 1e-9);
    }

    #[test]
    fn never_matching() {
        let f = bound("feature big(); begin var tc; (x >= 1e9), tc=$time |-> big = tc; end", &[]);
        assert!(feature_values_on_trace(&ramp_trace(0.0, 0.01, 3.0), &f, &BTreeMap::new()).unwrap().values.is_empty());
        let f = bound("feature m(); begin var tc; (y >= 1), tc=$time |-> m = tc; end", &[]);
        assert!(matches!(
            feature_values_on_trace(&ramp_trace(0.0, 0.01, 3.0), &f, &BTreeMap::new()),
            Err(TraceError::VariableMismatch(n)) if n == "y"
        ));
    }

    #[test]
    fn event_at_start_is_not_a_rise() {
        let f = bound(THRESHOLD, &[]);
        let v = feature_values_on_trace(&ramp_trace(2.5, 0.01, 1.0), &f, &BTreeMap::new()).unwrap();
        assert!(v.values.is_empty());
    }

    #[test]
    fn settling_time_synthetic() {
        // v starts high, drops below 12.5 once at t=1 (while closed), then the mode enters
        // Open at t=2 and again at t=4 with v low both times.
        let f = bound(crate::feature::tests::SETTLING, &[("Vr", 12.0), ("E", 0.5)]);
        let mut tr = Trace::new("buck", TraceSource::Simulation);
        tr.steps.push(step(0, "closed", vec![sample(0.0, &[("v", 14.0)]), sample(1.0, &[("v", 12.0)]), sample(2.0, &[("v", 11.0)])]));
        tr.steps.push(step(1, "open", vec![sample(2.0, &[("v", 11.0)]), sample(3.0, &[("v", 11.5)])]));
        tr.steps.push(step(2, "closed", vec![sample(3.0, &[("v", 11.5)]), sample(4.0, &[("v", 12.0)])]));
        tr.steps.push(step(3, "open", vec![sample(4.0, &[("v", 12.0)]), sample(5.0, &[("v", 12.1)])]));
        let v = feature_values_on_trace(&tr, &f, &BTreeMap::new()).unwrap();
        assert_eq!(v.values, vec![2.0]);
        assert!(!v.truncated);
    }

    #[test]
    fn windows_are_respected() {
        let f = bound("feature w(); begin var a; (x >= 1) ##[0.5:0.6] (x >= 0), a=$time |-> w = a; end", &[]);
        let v = feature_values_on_trace(&ramp_trace(0.0, 0.01, 3.0), &f, &BTreeMap::new()).unwrap();
        assert_eq!(v.values.len(), 1);
        assert!((v.values[0] - 1.5).abs() < 1e-9, "{:?}", v.values);
    }
}
