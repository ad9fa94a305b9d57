//! Shared fixtures for the benchmarks in `benches/`.

use txrl_core::pipeline::FitOutput;
use txrl_core::{build_ground_truth, fit_pipeline, simulate_cohort, Dataset, PipelineConfig, SimConfig};

/// A simulated cohort of `n` patients from the default scenario.
pub fn cohort(n: usize) -> Dataset {
    let cfg = SimConfig {
        n_patients: n,
        ..Default::default()
    };
    let gt = build_ground_truth(&cfg).expect("default scenario is valid");
    simulate_cohort(&gt, &cfg).expect("simulation succeeds").dataset
}

/// `cohort(n)` fitted with the simulated-data preset.
pub fn fitted(n: usize) -> (Dataset, FitOutput) {
    let ds = cohort(n);
    let fit = fit_pipeline(&ds, &PipelineConfig::simulated(0)).expect("pipeline fits");
    (ds, fit)
}
