//! End-to-end evaluation and refinement, with errors tagged by the stage that raised them.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::feature::{bind_feature_params, parse_feature, FeatureError};
use crate::flowpipe::{feature_range_of, flowpipe, FeatureRange, ReachError, ReachSets};
use crate::haslac::{parse_haslac, HaslacSource};
use crate::lex::ParseDiagnostic;
use crate::model::HybridAutomaton;
use crate::monitor::{compile_monitor, product, MonitorError, ProductModel};
use crate::refine::{refine_range, suggest_k, RefineError, RefineSettings, RefinedRange};
use crate::sim::SimSettings;
use crate::solver::SolverError;
use crate::sx::{import_sx, SxError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("model parser: {origin}:{diag}")]
    Model { origin: String, diag: ParseDiagnostic },
    #[error("SX import: {origin}: {err}")]
    Sx { origin: String, err: SxError },
    #[error("feature parser: {origin}:{err}")]
    Feature { origin: String, err: FeatureError },
    #[error("monitor construction: {0}")]
    Monitor(#[from] MonitorError),
    #[error("reachability: {0}")]
    Reach(#[from] ReachError),
    #[error("refinement: {0}")]
    Refine(RefineError),
    #[error("cannot read `{path}`: {err}")]
    Io { path: String, err: std::io::Error },
}

impl From<RefineError> for PipelineError {
    fn from(e: RefineError) -> Self {
        match e {
            RefineError::Reach(r) => PipelineError::Reach(r),
            other => PipelineError::Refine(other),
        }
    }
}

/// Exit-code class: 1 input, 2 analysis, 3 external tool.
impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Model { .. } | PipelineError::Sx { .. } | PipelineError::Feature { .. } | PipelineError::Monitor(_) | PipelineError::Io { .. } => 1,
            PipelineError::Reach(ReachError::UnboundedInitial(_)) => 1,
            PipelineError::Reach(_) => 2,
            PipelineError::Refine(RefineError::Solver(_) | RefineError::NoSolver) => 3,
            PipelineError::Refine(_) => 2,
        }
    }

    pub fn is_solver(&self) -> bool {
        matches!(self, PipelineError::Refine(RefineError::Solver(SolverError::NotFound(_)) | RefineError::NoSolver))
    }
}

fn read(path: &Path) -> Result<String, PipelineError> {
    std::fs::read_to_string(path).map_err(|err| PipelineError::Io { path: path.display().to_string(), err })
}

/// HASLAC text, or an SX file (`.xml`) with an optional sibling `.cfg`.
pub fn load_model(path: &Path) -> Result<HybridAutomaton, PipelineError> {
    let text = read(path)?;
    let origin = path.display().to_string();
    if path.extension().is_some_and(|e| e == "xml") || text.trim_start().starts_with('<') {
        let cfg_path = path.with_extension("cfg");
        let cfg = if cfg_path.exists() { Some(read(&cfg_path)?) } else { None };
        return import_sx(&text, cfg.as_deref()).map(|(ha, _)| ha).map_err(|err| PipelineError::Sx { origin, err });
    }
    parse_haslac(&HaslacSource { text, origin: origin.clone() }).map_err(|diag| PipelineError::Model { origin, diag })
}

pub fn build_product(ha: &HybridAutomaton, feature_text: &str, origin: &str, bindings: &BTreeMap<String, f64>) -> Result<ProductModel, PipelineError> {
    let spec = parse_feature(feature_text).map_err(|d| PipelineError::Feature { origin: origin.into(), err: d.into() })?;
    let bound = bind_feature_params(&spec, bindings).map_err(|err| PipelineError::Feature { origin: origin.into(), err })?;
    Ok(product(ha, &compile_monitor(&bound))?)
}

pub fn load_product(model: &Path, feature: &Path, bindings: &BTreeMap<String, f64>) -> Result<ProductModel, PipelineError> {
    let ha = load_model(model)?;
    build_product(&ha, &read(feature)?, &feature.display().to_string(), bindings)
}

/// Evaluation settings; `jumps = None` picks the bound from a probe run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSettings {
    pub step: f64,
    pub horizon: f64,
    pub jumps: Option<usize>,
}

impl EvalSettings {
    pub fn resolve(&self, pm: &ProductModel) -> SimSettings {
        let base = SimSettings { step: self.step, horizon: self.horizon, max_jumps: 0 };
        let k = self.jumps.unwrap_or_else(|| suggest_k(pm, base));
        SimSettings { max_jumps: k, ..base }
    }
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub range: FeatureRange,
    pub settings: SimSettings,
    pub reach: ReachSets,
    pub elapsed: Duration,
}

pub fn evaluate(pm: &ProductModel, s: EvalSettings) -> Result<Evaluation, PipelineError> {
    let start = Instant::now();
    let settings = s.resolve(pm);
    let reach = flowpipe(pm, settings)?;
    let range = feature_range_of(pm, &reach);
    Ok(Evaluation { range, settings, reach, elapsed: start.elapsed() })
}

#[derive(Debug, Clone)]
pub struct Refinement {
    pub evaluation: Evaluation,
    pub refined: Option<RefinedRange>,
    pub elapsed: Duration,
}

/// Evaluation followed by corner refinement; an empty initial range skips refinement.
/// `rs.k`, `rs.step` and `rs.horizon` are overwritten from the evaluation settings.
pub fn evaluate_and_refine(pm: &ProductModel, s: EvalSettings, mut rs: RefineSettings) -> Result<Refinement, PipelineError> {
    let start = Instant::now();
    let evaluation = evaluate(pm, s)?;
    rs.k = evaluation.settings.max_jumps;
    rs.step = evaluation.settings.step;
    rs.horizon = evaluation.settings.horizon;
    let refined = if evaluation.range.empty {
        None
    } else {
        Some(refine_range(pm, evaluation.range, &rs, Some(&evaluation.reach))?)
    };
    Ok(Refinement { evaluation, refined, elapsed: start.elapsed() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn errors_name_their_stage() {
        let ha = parse_haslac(&HaslacSource::memory("module m(x) mode a begin ddt x = 1; end initial begin set begin mode == a; x == 0; end end endmodule")).unwrap();
        let f = "feature f(E); begin var tc; @+(x>=E), tc=$time |-> f = tc; end";
        let e = build_product(&ha, f, "f.fia", &BTreeMap::new()).unwrap_err();
        assert_eq!(e.exit_code(), 1);
        let msg = e.to_string();
        assert!(msg.starts_with("feature parser") && msg.contains("`E`") && msg.contains("`f`"), "{msg}");
        let e = build_product(&ha, "feature g(); begin @+(y>=1) |-> g = 1; end", "g.fia", &BTreeMap::new()).unwrap_err();
        assert!(e.to_string().starts_with("monitor construction"), "{e}");
        let e = load_model(Path::new("/nonexistent/model.ha")).unwrap_err();
        assert_eq!(e.exit_code(), 1);
    }

    #[test]
    fn evaluate_picks_a_jump_bound() {
        let ha = parse_haslac(&HaslacSource::memory("module m(x) mode a begin ddt x = 1; end initial begin set begin mode == a; x == 0; end end endmodule")).unwrap();
        let pm = build_product(&ha, "feature f(); begin var tc; @+(x>=2), tc=$time |-> f = tc; end", "f", &BTreeMap::new()).unwrap();
        let ev = evaluate(&pm, EvalSettings { step: 1e-3, horizon: 3.0, jumps: None }).unwrap();
        assert_eq!(ev.settings.max_jumps, 2);
        assert!(ev.range.contains(2.0) && ev.range.width() <= 4e-3);
    }
}
