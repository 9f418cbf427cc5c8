use proptest::prelude::*;

use featrange_core::corpus::{initial_centre, random_case};
use featrange_core::feature::{parse_feature, print_feature};
use featrange_core::haslac::{parse_haslac, print_haslac, HaslacSource};
use featrange_core::sim::simulate_automaton;
use featrange_core::trace::{read_trace_json, strip_null_tuples, write_trace_json, Sample, Trace, TraceSource, TraceStep};

fn arb_trace() -> impl Strategy<Value = Trace> {
    let sample = (0.0f64..10.0, -1e6f64..1e6, proptest::option::of(0.0f64..1.0)).prop_map(|(t, x, w)| Sample {
        t,
        values: [("x".to_string(), x), ("y".to_string(), x * 0.5)].into(),
        widths: w.map(|w| [("x".to_string(), w)].into()),
    });
    let step = (any::<bool>(), "[a-z]{1,4}", proptest::collection::vec(sample, 1..4)).prop_map(|(null, mode, mut samples)| {
        samples.sort_by(|a, b| a.t.total_cmp(&b.t));
        if null {
            TraceStep::null_step(0, mode, 0.0)
        } else {
            let (t0, t1) = (samples[0].t, samples[samples.len() - 1].t);
            TraceStep { index: 0, mode, t0, t1, null: false, samples }
        }
    });
    (proptest::collection::vec(step, 0..6), any::<bool>()).prop_map(|(mut steps, solver)| {
        for (i, s) in steps.iter_mut().enumerate() {
            s.index = i;
        }
        Trace { model: "m".into(), source: if solver { TraceSource::Solver } else { TraceSource::Simulation }, steps, warnings: Vec::new() }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn haslac_print_parse_fixpoint(seed in any::<u64>()) {
        let case = random_case(seed);
        let text = print_haslac(&case.model);
        let again = parse_haslac(&HaslacSource::memory(text.clone())).unwrap();
        prop_assert_eq!(&again, &case.model);
        prop_assert_eq!(print_haslac(&again), text);
    }

    #[test]
    fn feature_print_parse_fixpoint(seed in any::<u64>()) {
        let case = random_case(seed);
        let f = parse_feature(&case.feature).unwrap();
        let text = print_feature(&f);
        prop_assert_eq!(parse_feature(&text).unwrap(), f);
    }

    #[test]
    fn trace_json_identity(tr in arb_trace()) {
        let json = write_trace_json(&tr);
        let back = read_trace_json(&json).unwrap();
        prop_assert_eq!(&back, &tr);
        prop_assert_eq!(write_trace_json(&back), json);
    }

    #[test]
    fn strip_is_idempotent_and_order_preserving(tr in arb_trace()) {
        let once = strip_null_tuples(&tr);
        prop_assert_eq!(strip_null_tuples(&once), once.clone());
        prop_assert!(once.steps.iter().enumerate().all(|(i, s)| s.index == i && !s.null));
        let kept: Vec<&str> = tr.steps.iter().filter(|s| !s.null).map(|s| s.mode.as_str()).collect();
        prop_assert_eq!(once.steps.iter().map(|s| s.mode.as_str()).collect::<Vec<_>>(), kept);
    }
}

#[test]
fn simulated_traces_round_trip() {
    for seed in 0..10 {
        let case = random_case(seed);
        let tr = simulate_automaton(&case.model, &initial_centre(&case.model), case.settings()).unwrap().trace;
        let json = write_trace_json(&tr);
        assert_eq!(read_trace_json(&json).unwrap(), tr);
    }
}
