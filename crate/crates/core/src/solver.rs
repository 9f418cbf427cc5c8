//! External solver client and its JSON trace format.
//!
//! The solver is run as `<solver> -k K query.drh --precision δ --visualize`
//! inside a directory owned by the query. Its standard output is scanned for
//! the configured `unsat`/`sat` tokens; on `sat` the first `*.json` file in
//! the directory is read as a trace:
//!
//! ```json
//! {"traces": [[{"key": "x", "mode": "1", "step": "0",
//!               "values": [{"time": [0.0, 0.5], "enclosure": [0.0, 0.5]}]},
//!              null,
//!              {"key": "x", "mode": "2", "step": "2", "values": [...]}]]}
//! ```
//!
//! Records are grouped by `step`; a `null` at position `p` of an inner array
//! marks step `p` as a NULL tuple. Keys of the form `x_3_0` name variable `x`.
//! Times may be local to the step; step `k` is shifted to start where step
//! `k-1` ended. Samples sit at the interval boundaries. An interior boundary
//! takes the midpoint of the overlap of the two neighbouring enclosures; the
//! outer ends take the far end of their enclosure. Widths are recorded.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use serde_json::Value;
use thiserror::Error;

use crate::trace::{Sample, Trace, TraceError, TraceSource, TraceStep};

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub command: String,
    pub precision: f64,
    pub timeout: Duration,
    pub sat_token: String,
    pub unsat_token: String,
}

impl SolverConfig {
    pub fn new(command: impl Into<String>) -> Self {
        Self {
            command: command.into(),
            precision: 1e-3,
            timeout: Duration::from_secs(600),
            sat_token: "sat".into(),
            unsat_token: "unsat".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverVerdict {
    Sat,
    Unsat,
}

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("solver `{0}` not found; set the `solver` key in the configuration to an executable")]
    NotFound(String),
    #[error("solver timed out after {0:?}")]
    Timeout(Duration),
    #[error("malformed solver output: {0}")]
    Output(String),
    #[error("solver trace: {0}")]
    Trace(#[from] TraceError),
    #[error("solver I/O: {0}")]
    Io(#[from] std::io::Error),
}

/// Locates the solver executable: a path as given, or a bare name searched on `PATH`.
pub fn resolve_solver(command: &str) -> Result<PathBuf, SolverError> {
    let p = Path::new(command);
    if command.contains(std::path::MAIN_SEPARATOR) || command.contains('/') {
        return if p.is_file() { Ok(p.to_path_buf()) } else { Err(SolverError::NotFound(command.into())) };
    }
    if command.is_empty() {
        return Err(SolverError::NotFound(command.into()));
    }
    let path = std::env::var_os("PATH").unwrap_or_default();
    std::env::split_paths(&path)
        .map(|d| d.join(command))
        .find(|c| c.is_file())
        .ok_or_else(|| SolverError::NotFound(command.into()))
}

fn scan_verdict(out: &str, cfg: &SolverConfig) -> Option<SolverVerdict> {
    let words: Vec<String> = out
        .split(|c: char| !c.is_ascii_alphanumeric() && c != '_')
        .map(|w| w.to_ascii_lowercase())
        .collect();
    if words.iter().any(|w| *w == cfg.unsat_token.to_ascii_lowercase()) {
        Some(SolverVerdict::Unsat)
    } else if words.iter().any(|w| *w == cfg.sat_token.to_ascii_lowercase()) {
        Some(SolverVerdict::Sat)
    } else {
        None
    }
}

/// Writes `drh` into `dir`, runs the solver there and returns its verdict and, on `sat`, the raw trace JSON.
pub fn run_solver(cfg: &SolverConfig, drh: &str, hops: usize, dir: &Path) -> Result<(SolverVerdict, Option<String>), SolverError> {
    let exe = resolve_solver(&cfg.command)?;
    std::fs::create_dir_all(dir)?;
    let file = dir.join("query.drh");
    std::fs::write(&file, drh)?;
    let mut child = Command::new(exe)
        .current_dir(dir)
        .arg("-k")
        .arg(hops.to_string())
        .arg("query.drh")
        .arg("--precision")
        .arg(format!("{}", cfg.precision))
        .arg("--visualize")
        .stdout(Stdio::from(std::fs::File::create(dir.join("solver.out"))?))
        .stderr(Stdio::from(std::fs::File::create(dir.join("solver.err"))?))
        .spawn()?;
    let start = Instant::now();
    loop {
        if child.try_wait()?.is_some() {
            break;
        }
        if start.elapsed() > cfg.timeout {
            let _ = child.kill();
            let _ = child.wait();
            return Err(SolverError::Timeout(cfg.timeout));
        }
        std::thread::sleep(Duration::from_millis(5));
    }
    let status = child.wait()?;
    let text = String::from_utf8_lossy(&std::fs::read(dir.join("solver.out"))?).into_owned();
    let verdict = scan_verdict(&text, cfg).ok_or_else(|| {
        SolverError::Output(format!("no `{}`/`{}` in output (exit {})", cfg.sat_token, cfg.unsat_token, status))
    })?;
    if verdict == SolverVerdict::Unsat {
        return Ok((verdict, None));
    }
    let mut jsons: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    jsons.sort();
    let trace = match jsons.first() {
        Some(p) => Some(std::fs::read_to_string(p)?),
        None => None,
    };
    Ok((verdict, trace))
}

/// Value at the boundary between intervals `j` and `j + 1`: the overlap of their enclosures.
fn boundary(values: &[((f64, f64), (f64, f64))], j: usize) -> Option<(f64, f64)> {
    let (a, b) = (values.get(j)?, values.get(j + 1)?);
    let (lo, hi) = (a.1 .0.max(b.1 .0), a.1 .1.min(b.1 .1));
    Some(if lo <= hi { (0.5 * (lo + hi), hi - lo) } else { (0.25 * (a.1 .0 + a.1 .1 + b.1 .0 + b.1 .1), a.1 .1.max(b.1 .1) - a.1 .0.min(b.1 .0)) })
}

/// Point estimate at `t` from per-interval enclosures. Interior boundaries use the overlap of the
/// neighbouring enclosures; the outer ends take the opposite end of their enclosure from the
/// adjacent boundary, which is exact for monotone segments.
fn estimate(values: &[((f64, f64), (f64, f64))], t: f64) -> Option<(f64, f64)> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    let mid = |j: usize| {
        let (lo, hi) = values[j].1;
        (0.5 * (lo + hi), hi - lo)
    };
    let mirror = |j: usize, other: (f64, f64)| {
        let (lo, hi) = values[j].1;
        ((lo + hi - other.0).clamp(lo, hi), hi - lo)
    };
    if t <= values[0].0 .0 {
        return Some(boundary(values, 0).map_or(mid(0), |b| mirror(0, b)));
    }
    if t >= values[n - 1].0 .1 {
        return Some(if n >= 2 { mirror(n - 1, boundary(values, n - 2).expect("two intervals")) } else { mid(0) });
    }
    for j in 0..n {
        let ((a, b), _) = values[j];
        if t == b && j + 1 < n && values[j + 1].0 .0 == t {
            return boundary(values, j);
        }
        if a <= t && t < b {
            if t == a && j > 0 && values[j - 1].0 .1 == t {
                return boundary(values, j - 1);
            }
            return Some(mid(j));
        }
    }
    Some(mid(n - 1))
}

fn schema(path: String, message: &str) -> TraceError {
    TraceError::Schema { path, message: message.into() }
}

fn pair(v: &Value, path: &str) -> Result<(f64, f64), TraceError> {
    let a = v.as_array().filter(|a| a.len() == 2).ok_or_else(|| schema(path.into(), "expected [lo, hi]"))?;
    let lo = a[0].as_f64().ok_or_else(|| schema(format!("{path}[0]"), "expected a number"))?;
    let hi = a[1].as_f64().ok_or_else(|| schema(format!("{path}[1]"), "expected a number"))?;
    Ok((lo, hi))
}

fn text_or_number(v: &Value, path: &str) -> Result<String, TraceError> {
    match v {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        _ => Err(schema(path.into(), "expected a string or number")),
    }
}

fn base_name(key: &str) -> String {
    let parts: Vec<&str> = key.rsplitn(3, '_').collect();
    if parts.len() == 3 && parts[0].chars().all(|c| c.is_ascii_digit()) && parts[1].chars().all(|c| c.is_ascii_digit()) && !parts[0].is_empty() && !parts[1].is_empty() {
        parts[2].to_string()
    } else {
        key.to_string()
    }
}

struct Rec {
    var: String,
    mode: String,
    values: Vec<((f64, f64), (f64, f64))>,
}

/// Parses a solver trace; numeric modes `1..=n` are mapped to `modes[m-1]` when given.
pub fn parse_solver_trace(text: &str, modes: Option<&[String]>) -> Result<Trace, TraceError> {
    let root: Value = serde_json::from_str(text).map_err(|e| TraceError::Json(e.to_string()))?;
    let traces = root
        .get("traces")
        .ok_or_else(|| schema("traces".into(), "missing field"))?
        .as_array()
        .ok_or_else(|| schema("traces".into(), "expected an array"))?;
    let mut by_step: BTreeMap<usize, Vec<Rec>> = BTreeMap::new();
    let mut nulls: BTreeMap<usize, ()> = BTreeMap::new();
    for (i, inner) in traces.iter().enumerate() {
        let inner = inner.as_array().ok_or_else(|| schema(format!("traces[{i}]"), "expected an array"))?;
        for (j, r) in inner.iter().enumerate() {
            let p = format!("traces[{i}][{j}]");
            if r.is_null() {
                nulls.insert(j, ());
                continue;
            }
            let o = r.as_object().ok_or_else(|| schema(p.clone(), "expected an object or null"))?;
            let get = |k: &str| o.get(k).ok_or_else(|| schema(format!("{p}.{k}"), "missing field"));
            let key = get("key")?.as_str().ok_or_else(|| schema(format!("{p}.key"), "expected a string"))?;
            let mode = text_or_number(get("mode")?, &format!("{p}.mode"))?;
            let step: usize = text_or_number(get("step")?, &format!("{p}.step"))?
                .parse()
                .map_err(|_| schema(format!("{p}.step"), "expected a step number"))?;
            let vals = get("values")?.as_array().ok_or_else(|| schema(format!("{p}.values"), "expected an array"))?;
            let mut values = Vec::new();
            for (k, v) in vals.iter().enumerate() {
                let q = format!("{p}.values[{k}]");
                let t = pair(v.get("time").ok_or_else(|| schema(format!("{q}.time"), "missing field"))?, &format!("{q}.time"))?;
                let e = pair(
                    v.get("enclosure").ok_or_else(|| schema(format!("{q}.enclosure"), "missing field"))?,
                    &format!("{q}.enclosure"),
                )?;
                values.push((t, e));
            }
            values.sort_by(|a, b| a.0 .0.total_cmp(&b.0 .0));
            by_step.entry(step).or_default().push(Rec { var: base_name(key), mode, values });
        }
    }
    let last = by_step.keys().chain(nulls.keys()).max().copied();
    let mut tr = Trace::new("solver", TraceSource::Solver);
    let Some(last) = last else { return Ok(tr) };
    let mut offset = 0.0;
    for k in 0..=last {
        let idx = tr.steps.len();
        let Some(recs) = by_step.get(&k) else {
            if nulls.contains_key(&k) {
                tr.steps.push(TraceStep::null_step(idx, "NULL", offset));
            }
            continue;
        };
        let mode_raw = &recs[0].mode;
        let mode = match (modes, mode_raw.parse::<usize>()) {
            (Some(ms), Ok(m)) if m >= 1 && m <= ms.len() => ms[m - 1].clone(),
            _ => mode_raw.clone(),
        };
        let t_first = recs.iter().filter_map(|r| r.values.first()).map(|v| v.0 .0).fold(f64::INFINITY, f64::min);
        let mut points: Vec<f64> = recs.iter().flat_map(|r| r.values.iter().map(|v| v.0 .0)).collect();
        if let Some(end) = recs.iter().filter_map(|r| r.values.last()).map(|v| v.0 .1).reduce(f64::max) {
            points.push(end);
        }
        points.sort_by(f64::total_cmp);
        points.dedup();
        let mut samples = Vec::new();
        for &t in &points {
            let mut values = BTreeMap::new();
            let mut widths = BTreeMap::new();
            for r in recs {
                if let Some((v, w)) = estimate(&r.values, t) {
                    values.insert(r.var.clone(), v);
                    widths.insert(r.var.clone(), w);
                }
            }
            samples.push(Sample { t: offset + (t - t_first), values, widths: Some(widths) });
        }
        let t0 = offset;
        let t1 = samples.last().map_or(offset, |s| s.t);
        offset = t1;
        tr.steps.push(TraceStep { index: idx, mode, t0, t1, null: false, samples });
    }
    Ok(tr)
}

#[cfg(test)]
mod tests {
    use super::*;

    const THREE: &str = r#"{"traces": [[
        {"key": "x_0_0", "mode": "1", "step": "0", "values": [{"time": [0.0, 0.5], "enclosure": [0.0, 0.5]}, {"time": [0.5, 1.0], "enclosure": [0.5, 1.0]}]},
        null,
        {"key": "x_2_0", "mode": 2, "step": 2, "values": [{"time": [0.0, 1.0], "enclosure": [1.0, 1.2]}]}
    ]]}"#;

    #[test]
    fn three_steps_with_null() {
        let names = vec!["a".to_string(), "b".to_string()];
        let tr = parse_solver_trace(THREE, Some(&names)).unwrap();
        assert_eq!(tr.steps.len(), 3);
        assert!(tr.steps[1].null);
        assert_eq!(tr.steps[0].mode, "a");
        assert_eq!(tr.steps[2].mode, "b");
        assert_eq!(tr.steps[0].samples.len(), 3);
        assert_eq!(tr.steps[0].samples[1].values["x"], 0.5);
        assert_eq!(tr.steps[0].samples[1].widths.as_ref().unwrap()["x"], 0.0);
        assert_eq!(tr.steps[0].samples[0].values["x"], 0.0);
        assert_eq!(tr.steps[0].samples[2].values["x"], 1.0);
        assert_eq!(tr.steps[2].t0, 1.0);
        assert_eq!(tr.steps[2].t1, 2.0);
        assert!((tr.steps[2].samples[0].values["x"] - 1.1).abs() < 1e-12);
    }

    #[test]
    fn empty_and_malformed() {
        assert!(parse_solver_trace(r#"{"traces": []}"#, None).unwrap().steps.is_empty());
        assert!(parse_solver_trace(r#"{"traces": [[]]}"#, None).unwrap().steps.is_empty());
        assert!(matches!(parse_solver_trace("{", None), Err(TraceError::Json(_))));
        let e = parse_solver_trace(r#"{"traces": [[{"key": "x", "step": 0, "values": []}]]}"#, None).unwrap_err();
        assert!(e.to_string().contains("traces[0][0].mode"), "{e}");
    }

    #[test]
    fn key_suffixes() {
        assert_eq!(base_name("x_0_0"), "x");
        assert_eq!(base_name("v_time_3_0"), "v_time");
        assert_eq!(base_name("st"), "st");
        assert_eq!(base_name("a_1"), "a_1");
    }

    #[test]
    fn missing_solver() {
        assert!(matches!(resolve_solver("definitely-not-a-solver-xyz"), Err(SolverError::NotFound(_))));
        assert!(matches!(resolve_solver("/nonexistent/dReach"), Err(SolverError::NotFound(_))));
        let e = SolverError::NotFound("dReach".into()).to_string();
        assert!(e.contains("`solver` key"));
    }

    #[test]
    fn verdict_tokens() {
        let cfg = SolverConfig::new("x");
        assert_eq!(scan_verdict("result: unsat\n", &cfg), Some(SolverVerdict::Unsat));
        assert_eq!(scan_verdict("SAT with delta = 0.001", &cfg), Some(SolverVerdict::Sat));
        assert_eq!(scan_verdict("error", &cfg), None);
    }
}
