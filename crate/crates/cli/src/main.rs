mod config;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use featrange_core::haslac::print_haslac;
use featrange_core::pipeline::{evaluate, evaluate_and_refine, load_product, EvalSettings, PipelineError};
use featrange_core::refine::{OracleKind, RefineSettings};
use featrange_core::solver::{parse_solver_trace, resolve_solver};
use featrange_core::sx::import_sx;
use featrange_core::trace::{export_csv, read_trace_json, strip_null_tuples, write_trace_json};

use config::{load_config, ToolConfig};

const CONFIG_ENV: &str = "FEATRANGE_CONFIG";

#[derive(Parser)]
#[command(name = "featrange", version, about = "Feature-range evaluation and refinement for hybrid automata")]
struct Cli {
    /// Configuration file (overrides $FEATRANGE_CONFIG).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Workspace directory (overrides the `workspace` key).
    #[arg(long, global = true)]
    workspace: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Initial feature range from reachability.
    Evaluate(Common),
    /// Initial range, then bisection of both corners.
    Refine {
        #[command(flatten)]
        common: Common,
        /// Corner tolerance.
        #[arg(long)]
        eps: Option<f64>,
        /// `builtin`, `external` or `hybrid`.
        #[arg(long)]
        oracle: Option<OracleKind>,
        /// Simulations drawn by the built-in oracle.
        #[arg(long)]
        sample_budget: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Convert an SX model (plus optional .cfg) to HASLAC.
    Import {
        model: PathBuf,
        /// Initial-condition file; defaults to MODEL with a .cfg extension.
        #[arg(long)]
        cfg: Option<PathBuf>,
        /// Destination; defaults to a new run directory.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Trace file utilities.
    #[command(subcommand)]
    Trace(TraceCmd),
}

#[derive(Args)]
struct Common {
    /// HASLAC model, or SX (.xml) with a sibling .cfg.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    feature: PathBuf,
    /// Feature formal binding, `NAME=VALUE`; repeatable.
    #[arg(long = "bind", value_parser = parse_binding)]
    bind: Vec<(String, f64)>,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    step: Option<f64>,
    /// Model jump bound; guessed from a probe run when absent.
    #[arg(long = "jumps")]
    jumps: Option<usize>,
}

#[derive(Subcommand)]
enum TraceCmd {
    /// Drop NULL steps and renumber.
    Strip(TraceIo),
    /// Flatten a trace to CSV.
    Csv(TraceIo),
}

#[derive(Args)]
struct TraceIo {
    input: PathBuf,
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Input is a raw solver trace rather than the trace schema.
    #[arg(long)]
    solver_format: bool,
}

fn parse_binding(s: &str) -> Result<(String, f64), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected NAME=VALUE, got `{s}`"))?;
    let v = v.trim().parse::<f64>().map_err(|_| format!("`{v}` is not a number"))?;
    Ok((k.trim().to_string(), v))
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Failure::new(e.exit_code() as u8, e.to_string())
    }
}

fn io_fail(path: &Path, e: std::io::Error) -> Failure {
    Failure::new(1, format!("`{}`: {e}", path.display()))
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| io_fail(path, e))
}

fn load_tool_config(cli: &Cli) -> Result<ToolConfig, Failure> {
    let path = cli.config.clone().or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from));
    let mut cfg = match path {
        Some(p) => load_config(&p).map_err(|e| Failure::new(1, e.to_string()))?,
        None => ToolConfig::with_base(Path::new(".")),
    };
    if let Some(w) = &cli.workspace {
        cfg.workspace_dir = w.clone();
    }
    Ok(cfg)
}

/// Fresh run-stamped directory under the workspace.
fn run_dir(cfg: &ToolConfig) -> Result<PathBuf, Failure> {
    let ws = &cfg.workspace_dir;
    std::fs::create_dir_all(ws).map_err(|e| io_fail(ws, e))?;
    let ms = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0);
    for n in 0.. {
        let dir = ws.join(format!("run-{ms}-{}-{n}", std::process::id()));
        match std::fs::create_dir(&dir) {
            Ok(()) => {
                eprintln!("run directory: {}", dir.display());
                return Ok(dir);
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(io_fail(&dir, e)),
        }
    }
    unreachable!()
}

fn resolve_model(cfg: &ToolConfig, p: &Path) -> PathBuf {
    match &cfg.model_dir {
        Some(dir) if p.is_relative() && !p.exists() => dir.join(p),
        _ => p.to_path_buf(),
    }
}

fn eval_settings(cfg: &ToolConfig, c: &Common) -> Result<EvalSettings, Failure> {
    let s = EvalSettings {
        step: c.step.unwrap_or(cfg.defaults.step),
        horizon: c.horizon.unwrap_or(cfg.defaults.horizon),
        jumps: c.jumps.or(cfg.defaults.jumps),
    };
    if !(s.step > 0.0 && s.horizon > 0.0 && s.step <= s.horizon) {
        return Err(Failure::new(1, "need 0 < step <= horizon"));
    }
    Ok(s)
}

fn range_json(lo: f64, hi: f64, empty: bool) -> Value {
    if empty {
        json!({ "empty": true })
    } else {
        json!({ "empty": false, "lo": lo, "hi": hi })
    }
}

/// Text report, then a `--- json ---` line, then the JSON block.
fn emit_report(dir: &Path, text: &str, data: &Value) -> Result<(), Failure> {
    let json = serde_json::to_string_pretty(data).expect("serializable");
    let full = format!("{text}--- json ---\n{json}\n");
    print!("{full}");
    write_file(&dir.join("report.txt"), &full)?;
    write_file(&dir.join("report.json"), &format!("{json}\n"))
}

fn header(c: &Common, model: &Path, bindings: &BTreeMap<String, f64>) -> (String, Value) {
    let mut t = String::new();
    let _ = writeln!(t, "model: {}", model.display());
    let _ = writeln!(t, "feature: {}", c.feature.display());
    for (k, v) in bindings {
        let _ = writeln!(t, "bind: {k} = {v}");
    }
    (t, json!({ "model": model.display().to_string(), "feature": c.feature.display().to_string(), "bindings": bindings }))
}

fn cmd_evaluate(cfg: &ToolConfig, c: &Common) -> Result<u8, Failure> {
    let model = resolve_model(cfg, &c.model);
    let bindings: BTreeMap<String, f64> = c.bind.iter().cloned().collect();
    let s = eval_settings(cfg, c)?;
    let pm = load_product(&model, &c.feature, &bindings)?;
    let ev = evaluate(&pm, s)?;
    let dir = run_dir(cfg)?;
    write_file(&dir.join("reach.csv"), &ev.reach.to_csv())?;
    let (mut text, mut data) = header(c, &model, &bindings);
    let st = ev.settings;
    let _ = writeln!(text, "settings: step={} horizon={} jumps={}", st.step, st.horizon, st.max_jumps);
    if ev.range.empty {
        let _ = writeln!(text, "range: empty range (no matching run within the bounds)");
    } else {
        let _ = writeln!(text, "range: [{}, {}]", ev.range.lo, ev.range.hi);
    }
    let _ = writeln!(text, "reach sets: reach.csv");
    let _ = writeln!(text, "time: {:.3} s", ev.elapsed.as_secs_f64());
    data["command"] = json!("evaluate");
    data["settings"] = json!({ "step": st.step, "horizon": st.horizon, "jumps": st.max_jumps });
    data["range"] = range_json(ev.range.lo, ev.range.hi, ev.range.empty);
    data["reach_csv"] = json!("reach.csv");
    data["elapsed_s"] = json!(ev.elapsed.as_secs_f64());
    emit_report(&dir, &text, &data)?;
    Ok(0)
}

#[allow(clippy::too_many_arguments)]
fn cmd_refine(cfg: &ToolConfig, c: &Common, eps: Option<f64>, oracle: Option<OracleKind>, budget: Option<usize>, seed: Option<u64>) -> Result<u8, Failure> {
    let model = resolve_model(cfg, &c.model);
    let bindings: BTreeMap<String, f64> = c.bind.iter().cloned().collect();
    let s = eval_settings(cfg, c)?;
    let oracle = oracle.unwrap_or_else(|| cfg.default_oracle());
    let eps = eps.unwrap_or(cfg.defaults.eps);
    if !(eps > 0.0) {
        return Err(Failure::new(1, "eps must be positive"));
    }
    let solver = cfg.solver_config();
    if oracle != OracleKind::Builtin {
        let Some(sc) = &solver else {
            return Err(Failure::new(3, "the external oracle needs a solver; set the `solver` key in the configuration"));
        };
        resolve_solver(&sc.command).map_err(|e| Failure::new(3, e.to_string()))?;
    }
    let pm = load_product(&model, &c.feature, &bindings)?;
    let dir = run_dir(cfg)?;
    let rs = RefineSettings {
        k: 0,
        eps,
        oracle,
        horizon: s.horizon,
        step: s.step,
        sample_budget: budget.unwrap_or(cfg.defaults.sample_budget),
        seed: seed.unwrap_or(cfg.defaults.seed),
        solver,
        workdir: Some(dir.clone()),
    };
    let r = evaluate_and_refine(&pm, s, rs.clone())?;
    let ev = &r.evaluation;
    let st = ev.settings;
    let (mut text, mut data) = header(c, &model, &bindings);
    let oracle_name = match oracle {
        OracleKind::Builtin => "builtin",
        OracleKind::External => "external",
        OracleKind::Hybrid => "hybrid",
    };
    let _ = writeln!(text, "settings: step={} horizon={} jumps={} eps={} oracle={oracle_name} sample_budget={} seed={}", st.step, st.horizon, st.max_jumps, eps, rs.sample_budget, rs.seed);
    data["command"] = json!("refine");
    data["settings"] = json!({
        "step": st.step, "horizon": st.horizon, "jumps": st.max_jumps, "eps": eps,
        "oracle": oracle_name, "sample_budget": rs.sample_budget, "seed": rs.seed,
    });
    data["initial"] = range_json(ev.range.lo, ev.range.hi, ev.range.empty);
    let mut code = 0;
    match &r.refined {
        None => {
            let _ = writeln!(text, "initial range: empty range (nothing to refine)");
            data["refined"] = range_json(0.0, 0.0, true);
            data["failed"] = json!(false);
        }
        Some(rr) => {
            let _ = writeln!(text, "initial range: [{}, {}]", ev.range.lo, ev.range.hi);
            if rr.failed {
                let _ = writeln!(text, "refined range: [{}, {}] (REFINEMENT FAILED: no witness found; initial range kept)", rr.lo_star, rr.hi_star);
                code = 2;
            } else {
                let _ = writeln!(text, "refined range: [{}, {}]", rr.lo_star, rr.hi_star);
            }
            data["refined"] = range_json(rr.lo_star, rr.hi_star, false);
            data["failed"] = json!(rr.failed);
            let mut witnesses = serde_json::Map::new();
            for (side, tr, value, calls) in [("lo", &rr.lo_witness, rr.lo_value, rr.lo_calls), ("hi", &rr.hi_witness, rr.hi_value, rr.hi_calls)] {
                let mut w = json!({ "oracle_calls": calls, "value": value });
                if let Some(tr) = tr {
                    let (j, cs) = (format!("{side}_witness.json"), format!("{side}_witness.csv"));
                    write_file(&dir.join(&j), &write_trace_json(tr))?;
                    write_file(&dir.join(&cs), &export_csv(tr))?;
                    let _ = writeln!(text, "{side} witness: {j}, {cs} (value {})", value.map(|v| v.to_string()).unwrap_or_else(|| "unknown".into()));
                    w["json"] = json!(j);
                    w["csv"] = json!(cs);
                } else {
                    let _ = writeln!(text, "{side} witness: none");
                }
                let _ = writeln!(text, "{side} oracle calls: {calls}");
                witnesses.insert(side.into(), w);
            }
            data["witnesses"] = Value::Object(witnesses);
        }
    }
    let _ = writeln!(text, "time: {:.3} s", r.elapsed.as_secs_f64());
    data["elapsed_s"] = json!(r.elapsed.as_secs_f64());
    emit_report(&dir, &text, &data)?;
    Ok(code)
}

fn cmd_import(cfg: &ToolConfig, model: &Path, cfg_file: Option<&Path>, output: Option<&Path>) -> Result<u8, Failure> {
    let model = resolve_model(cfg, model);
    let xml = std::fs::read_to_string(&model).map_err(|e| io_fail(&model, e))?;
    let cfg_path = cfg_file.map(Path::to_path_buf).or_else(|| Some(model.with_extension("cfg")).filter(|p| p.exists()));
    let cfg_text = match &cfg_path {
        Some(p) => Some(std::fs::read_to_string(p).map_err(|e| io_fail(p, e))?),
        None => None,
    };
    let (ha, _) = import_sx(&xml, cfg_text.as_deref()).map_err(|e| Failure::new(1, format!("SX import: {}: {e}", model.display())))?;
    let dest = match output {
        Some(p) => p.to_path_buf(),
        None => run_dir(cfg)?.join(format!("{}.ha", ha.name)),
    };
    write_file(&dest, &print_haslac(&ha))?;
    println!("{}", dest.display());
    Ok(0)
}

fn cmd_trace(t: &TraceCmd) -> Result<u8, Failure> {
    let (io, csv) = match t {
        TraceCmd::Strip(io) => (io, false),
        TraceCmd::Csv(io) => (io, true),
    };
    let text = std::fs::read_to_string(&io.input).map_err(|e| io_fail(&io.input, e))?;
    let tr = if io.solver_format { parse_solver_trace(&text, None) } else { read_trace_json(&text) }
        .map_err(|e| Failure::new(1, format!("{}: {e}", io.input.display())))?;
    let tr = strip_null_tuples(&tr);
    let out = if csv { export_csv(&tr) } else { write_trace_json(&tr) };
    match &io.output {
        Some(p) => write_file(p, &out)?,
        None => print!("{out}"),
    }
    Ok(0)
}

fn run(cli: &Cli) -> Result<u8, Failure> {
    if let Cmd::Trace(t) = &cli.cmd {
        return cmd_trace(t);
    }
    let cfg = load_tool_config(cli)?;
    match &cli.cmd {
        Cmd::Evaluate(c) => cmd_evaluate(&cfg, c),
        Cmd::Refine { common, eps, oracle, sample_budget, seed } => cmd_refine(&cfg, common, *eps, *oracle, *sample_budget, *seed),
        Cmd::Import { model, cfg: c, output } => cmd_import(&cfg, model, c.as_deref(), output.as_deref()),
        Cmd::Trace(_) => unreachable!(),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            let ok = matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion);
            return ExitCode::from(if ok { 0 } else { 1 });
        }
    };
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
