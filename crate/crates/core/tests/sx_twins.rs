use std::path::PathBuf;

use featrange_core::haslac::{parse_haslac, print_haslac, HaslacSource};
use featrange_core::model::{HybridAutomaton, Valuation};
use featrange_core::sim::{simulate_automaton, SimSettings};
use featrange_core::sx::import_sx;
use featrange_core::trace::Trace;

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn read(name: &str) -> String {
    std::fs::read_to_string(data(name)).unwrap()
}

fn import(stem: &str) -> HybridAutomaton {
    let cfg = std::fs::read_to_string(data(&format!("{stem}.cfg"))).ok();
    import_sx(&read(&format!("{stem}.xml")), cfg.as_deref()).unwrap().0
}

fn twin(stem: &str) -> HybridAutomaton {
    parse_haslac(&HaslacSource::memory(read(&format!("{stem}.ha")))).unwrap()
}

fn max_gap(a: &Trace, b: &Trace) -> f64 {
    assert_eq!(a.steps.len(), b.steps.len());
    let mut gap: f64 = 0.0;
    for (sa, sb) in a.steps.iter().zip(&b.steps) {
        assert_eq!(sa.mode, sb.mode);
        assert_eq!(sa.samples.len(), sb.samples.len());
        for (x, y) in sa.samples.iter().zip(&sb.samples) {
            gap = gap.max((x.t - y.t).abs());
            for (k, v) in &x.values {
                gap = gap.max((v - y.values[k]).abs());
            }
        }
    }
    gap
}

fn check(stem: &str, starts: &[Vec<(&str, f64)>], horizon: f64) {
    let (a, b) = (import(stem), twin(stem));
    assert_eq!(a.variables, b.variables, "{stem}");
    assert_eq!(a.initial, b.initial, "{stem}");
    let s = SimSettings { step: 1e-3, horizon, max_jumps: 50 };
    for x0 in starts {
        let v = Valuation::new(a.initial.location.clone(), x0.iter().map(|(k, v)| (k.to_string(), *v)), 0.0);
        let ta = simulate_automaton(&a, &v, s).unwrap().trace;
        let tb = simulate_automaton(&b, &v, s).unwrap().trace;
        assert!(ta.steps.len() > 1, "{stem}: no jumps exercised");
        let g = max_gap(&ta, &tb);
        assert!(g <= 1e-6, "{stem}: trajectories differ by {g}");
    }
}

#[test]
fn thermostat_matches_twin() {
    check("thermostat", &[vec![("x", 20.0)]], 40.0);
}

#[test]
fn tank_network_matches_twin() {
    check("tank", &[vec![("level", 2.0)]], 60.0);
    assert!(print_haslac(&import("tank")).contains("Vr = 12"));
}

#[test]
fn bouncer_default_initial_matches_twin() {
    check("bouncer", &[vec![("x", 0.9), ("v", 0.0), ("t", 0.0)], vec![("x", 1.1), ("v", 0.0), ("t", 0.0)]], 8.0);
}

#[test]
fn imports_print_and_reparse() {
    for stem in ["thermostat", "tank", "bouncer"] {
        let ha = import(stem);
        let text = print_haslac(&ha);
        let again = parse_haslac(&HaslacSource::memory(text.clone())).unwrap();
        assert_eq!(again, ha, "{stem}");
        assert_eq!(print_haslac(&again), text);
        assert_eq!(import(stem), ha);
    }
}
