use std::collections::BTreeMap;
use std::path::PathBuf;

use featrange_core::feature::{bind_feature_params, parse_feature};
use featrange_core::haslac::{parse_haslac, HaslacSource};
use featrange_core::monitor::{compile_monitor, product, project_trace, ProductModel};
use featrange_core::refine::{feasible, OracleKind, RefineSettings, Verdict};
use featrange_core::replay::feature_values_on_trace;
use featrange_core::solver::{parse_solver_trace, SolverConfig};
use featrange_core::trace::{read_trace_json, strip_null_tuples, write_trace_json};

fn sample_trace() -> String {
    std::fs::read_to_string(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/ramp_solver_trace.json")).unwrap()
}

fn ramp() -> ProductModel {
    let ha = parse_haslac(&HaslacSource::memory("module ramp(x) mode run begin ddt x = 1; end initial begin set begin mode == run; x == 0; end end endmodule")).unwrap();
    let f = parse_feature("feature cross(); begin var tc; @+(x>=2), tc=$time |-> cross = tc; end").unwrap();
    product(&ha, &compile_monitor(&bind_feature_params(&f, &BTreeMap::new()).unwrap())).unwrap()
}

#[test]
fn sample_trace_replays_to_the_crossing() {
    let pm = ramp();
    let names: Vec<String> = pm.automaton.locations.iter().map(|l| l.name.clone()).collect();
    let raw = parse_solver_trace(&sample_trace(), Some(&names)).unwrap();
    assert_eq!(raw.steps.len(), 3);
    assert!(raw.steps[1].null);
    let stripped = strip_null_tuples(&raw);
    assert_eq!(stripped.steps.len(), 2);
    assert_eq!(stripped.steps[1].index, 1);
    assert_eq!(stripped.steps[1].mode, names[1]);
    assert!(stripped.steps[1].samples[0].values.contains_key("solver_internal"));
    let tr = project_trace(&pm, &stripped);
    let v = feature_values_on_trace(&tr, &pm.monitor.feature, &pm.model.parameters).unwrap();
    assert_eq!(v.values.len(), 1);
    assert!((v.values[0] - 2.0).abs() < 1e-9, "{:?}", v.values);
    assert_eq!(read_trace_json(&write_trace_json(&raw)).unwrap(), raw);
}

#[cfg(unix)]
fn fake_solver(dir: &std::path::Path, body: &str) -> String {
    use std::os::unix::fs::PermissionsExt;
    let p = dir.join("fake-solver");
    std::fs::write(&p, format!("#!/bin/sh\n{body}\n")).unwrap();
    std::fs::set_permissions(&p, std::fs::Permissions::from_mode(0o755)).unwrap();
    p.display().to_string()
}

#[cfg(unix)]
#[test]
fn external_oracle_with_a_scripted_solver() {
    let tmp = tempfile::tempdir().unwrap();
    let json = tmp.path().join("canned.json");
    std::fs::write(&json, sample_trace()).unwrap();
    let sat = fake_solver(tmp.path(), &format!("test -f query.drh || exit 9\ncp '{}' query_0.json\necho 'delta-sat with delta = 0.001'", json.display()));
    let pm = ramp();
    let mut rs = RefineSettings {
        k: 1,
        eps: 0.01,
        oracle: OracleKind::External,
        horizon: 3.0,
        step: 1e-3,
        sample_budget: 0,
        seed: 0,
        solver: Some(SolverConfig::new(sat)),
        workdir: Some(tmp.path().join("work")),
    };
    let r = feasible(&pm, 1.9, 2.1, &rs).unwrap();
    assert_eq!(r.verdict, Verdict::Sat);
    assert!((r.witness_value.unwrap() - 2.0).abs() < 1e-9);
    let w = r.witness.unwrap();
    assert!(w.steps.iter().all(|s| !s.null));
    let drh = std::fs::read_to_string(tmp.path().join("work/query_q_001/query.drh")).unwrap();
    assert!(drh.contains("goal:"));

    rs.solver = Some(SolverConfig::new(fake_solver(tmp.path(), "echo unsat")));
    assert_eq!(feasible(&pm, 5.0, 6.0, &rs).unwrap().verdict, Verdict::Unsat);

    // Hybrid asks the solver only when the built-in oracle cannot decide.
    rs.oracle = OracleKind::Hybrid;
    rs.sample_budget = 4;
    rs.solver = Some(SolverConfig::new(fake_solver(tmp.path(), "exit 1")));
    assert_eq!(feasible(&pm, 1.9, 2.1, &rs).unwrap().verdict, Verdict::Sat);
    assert_eq!(feasible(&pm, 5.0, 6.0, &rs).unwrap().verdict, Verdict::Unsat);
}
