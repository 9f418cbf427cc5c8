//! `key=value` configuration file.
//!
//! Keys: `workspace`, `models`, `solver`, `precision`, `timeout` (seconds),
//! and the defaults `step`, `horizon`, `jumps`, `eps`, `oracle`,
//! `sample_budget`, `seed`. Relative paths resolve against the file's directory.

use std::path::{Path, PathBuf};
use std::time::Duration;

use featrange_core::refine::OracleKind;
use featrange_core::solver::SolverConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct Defaults {
    pub step: f64,
    pub horizon: f64,
    pub jumps: Option<usize>,
    pub eps: f64,
    pub oracle: OracleKind,
    pub sample_budget: usize,
    pub seed: u64,
}

impl Default for Defaults {
    fn default() -> Self {
        Self { step: 1e-3, horizon: 10.0, jumps: None, eps: 0.01, oracle: OracleKind::Builtin, sample_budget: 200, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToolConfig {
    pub workspace_dir: PathBuf,
    pub model_dir: Option<PathBuf>,
    pub solver: Option<PathBuf>,
    pub precision: f64,
    pub timeout: Duration,
    pub defaults: Defaults,
}

impl ToolConfig {
    pub fn with_base(base: &Path) -> Self {
        Self {
            workspace_dir: base.join("featrange-work"),
            model_dir: None,
            solver: None,
            precision: 1e-3,
            timeout: Duration::from_secs(600),
            defaults: Defaults::default(),
        }
    }

    pub fn solver_config(&self) -> Option<SolverConfig> {
        self.solver.as_ref().map(|p| SolverConfig {
            precision: self.precision,
            timeout: self.timeout,
            ..SolverConfig::new(p.display().to_string())
        })
    }

    /// Oracle implied by the file when the command line does not pick one.
    pub fn default_oracle(&self) -> OracleKind {
        if self.solver.is_some() && self.defaults.oracle == OracleKind::Builtin {
            OracleKind::Hybrid
        } else {
            self.defaults.oracle
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read configuration `{path}`: {err}")]
    Read { path: String, err: std::io::Error },
    #[error("{path}:{line}: {message}")]
    Line { path: String, line: usize, message: String },
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
}

fn num<T: std::str::FromStr>(v: &str) -> Result<T, String> {
    v.parse::<T>().map_err(|_| format!("`{v}` is not a valid number"))
}

pub fn parse_config(text: &str, base: &Path, path: &str) -> Result<ToolConfig, ConfigError> {
    let mut c = ToolConfig::with_base(base);
    let resolve = |v: &str| {
        let p = PathBuf::from(v);
        if p.is_absolute() { p } else { base.join(p) }
    };
    for (k, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| ConfigError::Line { path: path.into(), line: k + 1, message };
        let Some((key, value)) = line.split_once('=') else {
            return Err(err("expected `key=value`".into()));
        };
        let (key, value) = (key.trim(), value.trim());
        match key {
            "workspace" => c.workspace_dir = resolve(value),
            "models" => c.model_dir = Some(resolve(value)),
            // A bare command name is looked up on PATH when used.
            "solver" => c.solver = Some(if value.contains('/') { resolve(value) } else { PathBuf::from(value) }),
            "precision" => {
                c.precision = num(value).map_err(err)?;
                if !(c.precision > 0.0) {
                    return Err(err("precision must be positive".into()));
                }
            }
            "timeout" => {
                let s: f64 = num(value).map_err(err)?;
                if !(s > 0.0) {
                    return Err(err("timeout must be positive".into()));
                }
                c.timeout = Duration::from_secs_f64(s);
            }
            "step" => c.defaults.step = num(value).map_err(err)?,
            "horizon" => c.defaults.horizon = num(value).map_err(err)?,
            "jumps" => c.defaults.jumps = Some(num(value).map_err(err)?),
            "eps" => c.defaults.eps = num(value).map_err(err)?,
            "oracle" => c.defaults.oracle = value.parse().map_err(err)?,
            "sample_budget" => c.defaults.sample_budget = num(value).map_err(err)?,
            "seed" => c.defaults.seed = num(value).map_err(err)?,
            other => return Err(err(format!("unknown key `{other}`"))),
        }
    }
    if let Some(m) = &c.model_dir {
        if !m.is_dir() {
            return Err(ConfigError::Invalid { path: path.into(), message: format!("models directory `{}` does not exist", m.display()) });
        }
    }
    Ok(c)
}

pub fn load_config(path: &Path) -> Result<ToolConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|err| ConfigError::Read { path: path.display().to_string(), err })?;
    let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    parse_config(&text, base, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = parse_config("", Path::new("/cfg"), "x.cfg").unwrap();
        assert_eq!(c, ToolConfig::with_base(Path::new("/cfg")));
        assert_eq!(c.default_oracle(), OracleKind::Builtin);
    }

    #[test]
    fn keys_and_paths() {
        let c = parse_config("# tools\nsolver=/usr/local/bin/dreach\nworkspace = runs\nprecision=0.01\nstep=1e-4\noracle=external\n", Path::new("/cfg"), "x.cfg").unwrap();
        assert_eq!(c.solver, Some(PathBuf::from("/usr/local/bin/dreach")));
        assert_eq!(c.workspace_dir, PathBuf::from("/cfg/runs"));
        assert_eq!(c.solver_config().unwrap().precision, 0.01);
        assert_eq!(c.defaults.step, 1e-4);
        assert_eq!(c.default_oracle(), OracleKind::External);
        let h = parse_config("solver=dreach", Path::new("/cfg"), "x.cfg").unwrap();
        assert_eq!(h.default_oracle(), OracleKind::Hybrid);
    }

    #[test]
    fn rejections_carry_line_numbers() {
        let e = parse_config("step=1\nprecision=-1\n", Path::new("/"), "x.cfg").unwrap_err();
        assert_eq!(e.to_string(), "x.cfg:2: precision must be positive");
        let e = parse_config("just words", Path::new("/"), "x.cfg").unwrap_err();
        assert!(e.to_string().starts_with("x.cfg:1:"));
        assert!(parse_config("models=/definitely/not/here", Path::new("/"), "x.cfg").is_err());
    }
}
