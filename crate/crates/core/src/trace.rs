//! Timed traces: data model, NULL-step removal, JSON and CSV.
//!
//! JSON layout:
//!
//! ```json
//! {"model": "buck", "source": "simulation", "warnings": [],
//!  "steps": [{"index": 0, "mode": "closed", "t0": 0.0, "t1": 5.1667e-06, "null": false,
//!             "samples": [{"t": 0.0, "values": {"v": 0.0}, "widths": {"v": 0.0}}]}]}
//! ```
//!
//! `widths` is optional (solver enclosures) and `warnings` may be omitted.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceSource {
    Simulation,
    Solver,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sample {
    pub t: f64,
    pub values: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub widths: Option<BTreeMap<String, f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceStep {
    pub index: usize,
    pub mode: String,
    pub t0: f64,
    pub t1: f64,
    pub null: bool,
    pub samples: Vec<Sample>,
}

impl TraceStep {
    pub fn null_step(index: usize, mode: impl Into<String>, t: f64) -> Self {
        Self { index, mode: mode.into(), t0: t, t1: t, null: true, samples: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trace {
    pub model: String,
    pub source: TraceSource,
    pub steps: Vec<TraceStep>,
    pub warnings: Vec<String>,
}

impl Trace {
    pub fn new(model: impl Into<String>, source: TraceSource) -> Self {
        Self { model: model.into(), source, steps: Vec::new(), warnings: Vec::new() }
    }

    /// Last sample of the last non-null step.
    pub fn final_sample(&self) -> Option<&Sample> {
        self.steps.iter().rev().filter(|s| !s.null).find_map(|s| s.samples.last())
    }

    pub fn sample_count(&self) -> usize {
        self.steps.iter().map(|s| s.samples.len()).sum()
    }
}

/// Drops NULL steps and renumbers the rest from 0.
pub fn strip_null_tuples(tr: &Trace) -> Trace {
    let mut out = Trace { steps: Vec::new(), ..tr.clone() };
    for s in tr.steps.iter().filter(|s| !s.null) {
        let mut s = s.clone();
        s.index = out.steps.len();
        out.steps.push(s);
    }
    if out.steps.is_empty() && !tr.steps.is_empty() {
        let w = "all steps were NULL; the trace is empty".to_string();
        if !out.warnings.contains(&w) {
            out.warnings.push(w);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TraceError {
    #[error("malformed JSON: {0}")]
    Json(String),
    #[error("schema violation at `{path}`: {message}")]
    Schema { path: String, message: String },
    #[error("trace does not provide `{0}` needed by the feature")]
    VariableMismatch(String),
}

pub fn write_trace_json(tr: &Trace) -> String {
    serde_json::to_string_pretty(tr).expect("traces contain only finite numbers")
}

fn schema(path: &str, message: impl Into<String>) -> TraceError {
    TraceError::Schema { path: path.to_string(), message: message.into() }
}

fn field<'a>(obj: &'a serde_json::Map<String, Value>, path: &str, key: &str) -> Result<&'a Value, TraceError> {
    obj.get(key).ok_or_else(|| schema(&join(path, key), "missing field"))
}

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

fn as_obj<'a>(v: &'a Value, path: &str) -> Result<&'a serde_json::Map<String, Value>, TraceError> {
    v.as_object().ok_or_else(|| schema(path, "expected an object"))
}

fn as_f64(v: &Value, path: &str) -> Result<f64, TraceError> {
    v.as_f64().ok_or_else(|| schema(path, "expected a number"))
}

fn as_str<'a>(v: &'a Value, path: &str) -> Result<&'a str, TraceError> {
    v.as_str().ok_or_else(|| schema(path, "expected a string"))
}

fn number_map(v: &Value, path: &str) -> Result<BTreeMap<String, f64>, TraceError> {
    as_obj(v, path)?
        .iter()
        .map(|(k, x)| Ok((k.clone(), as_f64(x, &join(path, k))?)))
        .collect()
}

pub fn read_trace_json(text: &str) -> Result<Trace, TraceError> {
    let root: Value = serde_json::from_str(text).map_err(|e| TraceError::Json(e.to_string()))?;
    let obj = as_obj(&root, "$")?;
    let model = as_str(field(obj, "", "model")?, "model")?.to_string();
    let source = match as_str(field(obj, "", "source")?, "source")? {
        "simulation" => TraceSource::Simulation,
        "solver" => TraceSource::Solver,
        other => return Err(schema("source", format!("unknown source `{other}`"))),
    };
    let warnings = match obj.get("warnings") {
        None => Vec::new(),
        Some(w) => w
            .as_array()
            .ok_or_else(|| schema("warnings", "expected an array"))?
            .iter()
            .enumerate()
            .map(|(i, x)| as_str(x, &format!("warnings[{i}]")).map(str::to_string))
            .collect::<Result<_, _>>()?,
    };
    let steps_v = field(obj, "", "steps")?.as_array().ok_or_else(|| schema("steps", "expected an array"))?;
    let mut steps = Vec::with_capacity(steps_v.len());
    for (i, sv) in steps_v.iter().enumerate() {
        let p = format!("steps[{i}]");
        let so = as_obj(sv, &p)?;
        let index = field(so, &p, "index")?
            .as_u64()
            .ok_or_else(|| schema(&join(&p, "index"), "expected a non-negative integer"))? as usize;
        let mode = as_str(field(so, &p, "mode")?, &join(&p, "mode"))?.to_string();
        let t0 = as_f64(field(so, &p, "t0")?, &join(&p, "t0"))?;
        let t1 = as_f64(field(so, &p, "t1")?, &join(&p, "t1"))?;
        let null = field(so, &p, "null")?.as_bool().ok_or_else(|| schema(&join(&p, "null"), "expected a boolean"))?;
        let sp = join(&p, "samples");
        let samples_v = field(so, &p, "samples")?.as_array().ok_or_else(|| schema(&sp, "expected an array"))?;
        let mut samples = Vec::with_capacity(samples_v.len());
        for (j, xv) in samples_v.iter().enumerate() {
            let q = format!("{sp}[{j}]");
            let xo = as_obj(xv, &q)?;
            let t = as_f64(field(xo, &q, "t")?, &join(&q, "t"))?;
            let values = number_map(field(xo, &q, "values")?, &join(&q, "values"))?;
            let widths = match xo.get("widths") {
                None | Some(Value::Null) => None,
                Some(w) => Some(number_map(w, &join(&q, "widths"))?),
            };
            samples.push(Sample { t, values, widths });
        }
        if t0 > t1 {
            return Err(schema(&p, "t0 exceeds t1"));
        }
        if null && !samples.is_empty() {
            return Err(schema(&sp, "a null step carries no samples"));
        }
        steps.push(TraceStep { index, mode, t0, t1, null, samples });
    }
    Ok(Trace { model, source, steps, warnings })
}

/// `time,mode,<vars>` with one row per sample; of several samples at one instant the last is kept.
pub fn export_csv(tr: &Trace) -> String {
    let mut vars: Vec<String> = Vec::new();
    for s in tr.steps.iter().flat_map(|s| s.samples.iter()) {
        for k in s.values.keys() {
            if !vars.contains(k) {
                vars.push(k.clone());
            }
        }
    }
    let mut rows: Vec<(f64, &str, &Sample)> = Vec::new();
    for st in &tr.steps {
        for s in &st.samples {
            match rows.last_mut() {
                Some(last) if s.t <= last.0 => {
                    if s.t == last.0 {
                        *last = (s.t, &st.mode, s);
                    }
                }
                _ => rows.push((s.t, &st.mode, s)),
            }
        }
    }
    let mut out = String::from("time,mode");
    for v in &vars {
        out.push(',');
        out.push_str(v);
    }
    out.push('\n');
    for (t, mode, s) in rows {
        let _ = write!(out, "{t:?},{mode}");
        for v in &vars {
            match s.values.get(v) {
                Some(x) => {
                    let _ = write!(out, ",{x:?}");
                }
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub fn sample(t: f64, kv: &[(&str, f64)]) -> Sample {
        Sample { t, values: kv.iter().map(|(k, v)| (k.to_string(), *v)).collect(), widths: None }
    }

    pub fn step(index: usize, mode: &str, samples: Vec<Sample>) -> TraceStep {
        let t0 = samples.first().map_or(0.0, |s| s.t);
        let t1 = samples.last().map_or(0.0, |s| s.t);
        TraceStep { index, mode: mode.into(), t0, t1, null: false, samples }
    }

    fn two_step() -> Trace {
        let mut tr = Trace::new("buck", TraceSource::Simulation);
        tr.steps.push(step(0, "closed", vec![sample(0.0, &[("v", 0.0), ("i", 0.0), ("t", 0.0)]), sample(1e-6, &[("v", 0.1), ("i", 0.2), ("t", 1e-6)])]));
        tr.steps.push(step(1, "open", vec![sample(1e-6, &[("v", 0.1), ("i", 0.2), ("t", 0.0)])]));
        tr
    }

    #[test]
    fn strip_examples() {
        let mut tr = two_step();
        tr.steps.insert(1, TraceStep::null_step(1, "u", 1e-6));
        tr.steps[2].index = 2;
        let s = strip_null_tuples(&tr);
        assert_eq!(s.steps.len(), 2);
        assert_eq!(s.steps[1].index, 1);
        assert_eq!(s.steps[1].mode, "open");
        assert_eq!(strip_null_tuples(&two_step()), two_step());
        let mut all_null = Trace::new("m", TraceSource::Solver);
        all_null.steps.push(TraceStep::null_step(0, "u", 0.0));
        let s = strip_null_tuples(&all_null);
        assert!(s.steps.is_empty());
        assert_eq!(s.warnings.len(), 1);
    }

    #[test]
    fn json_round_trip_and_errors() {
        let tr = two_step();
        assert_eq!(read_trace_json(&write_trace_json(&tr)).unwrap(), tr);
        let mut v: Value = serde_json::from_str(&write_trace_json(&tr)).unwrap();
        v["steps"][1].as_object_mut().unwrap().remove("mode");
        let e = read_trace_json(&v.to_string()).unwrap_err();
        assert!(e.to_string().contains("steps[1].mode"), "{e}");
        assert!(matches!(read_trace_json("{"), Err(TraceError::Json(_))));
    }

    #[test]
    fn csv_rows() {
        let mut tr = Trace::new("m", TraceSource::Simulation);
        tr.steps.push(step(0, "a", vec![sample(0.0, &[("x", 0.0)]), sample(0.5, &[("x", 0.5)])]));
        let csv = export_csv(&tr);
        assert_eq!(csv.lines().count(), 3);
        assert_eq!(csv.lines().next().unwrap(), "time,mode,x");
        assert_eq!(export_csv(&Trace::new("m", TraceSource::Simulation)), "time,mode\n");
        let csv = export_csv(&two_step());
        assert_eq!(csv.lines().next().unwrap(), "time,mode,i,t,v");
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.lines().nth(2).unwrap().starts_with("1e-6,open"));
    }
}
