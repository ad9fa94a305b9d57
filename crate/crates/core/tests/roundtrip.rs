use txrl_core::data::{default_feature_names, parse_transition_log, write_csv, write_jsonl, LogFormat};
use txrl_core::*;

fn cohort(n: usize) -> Dataset {
    let cfg = SimConfig {
        n_patients: n,
        seed: 11,
        ..Default::default()
    };
    let gt = build_ground_truth(&cfg).unwrap();
    simulate_cohort(&gt, &cfg).unwrap().dataset
}

#[test]
fn csv_and_jsonl_round_trip_exactly() {
    let ds = cohort(120);
    let mut csv = Vec::new();
    write_csv(&ds, &mut csv).unwrap();
    let mut jsonl = Vec::new();
    write_jsonl(&ds, &mut jsonl).unwrap();

    let from_csv = parse_transition_log(csv.as_slice(), LogFormat::Csv).unwrap();
    let from_jsonl = parse_transition_log(jsonl.as_slice(), LogFormat::Jsonl).unwrap();
    // Interchange files carry positional feature names only.
    let names = default_feature_names(ds.feature_dim());
    for parsed in [&from_csv, &from_jsonl] {
        assert_eq!(parsed.feature_names, names);
        assert_eq!(parsed.episodes, ds.episodes);
    }
}

#[test]
fn model_bundle_survives_serialization() {
    let ds = cohort(300);
    let mut cfg = PipelineConfig::simulated(2);
    cfg.state.k_states = Some(10);
    let fit = fit_pipeline(&ds, &cfg).unwrap();

    let text = serde_json::to_string(&fit.bundle).unwrap();
    let back: ModelBundle = serde_json::from_str(&text).unwrap();
    assert_eq!(serde_json::to_string(&back).unwrap(), text);

    let tagged = back.tag(&ds).unwrap();
    assert_eq!(tagged.len(), fit.tagged.len());
    for (a, b) in tagged.iter().zip(&fit.tagged) {
        assert_eq!(a.steps, b.steps);
    }
}

