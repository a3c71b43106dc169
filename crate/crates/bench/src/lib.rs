//! Fixtures shared by the benchmarks.

use lgf_core::data::{make_windows, normalize, synth_generate, SynthConfig, WindowedSample};
use lgf_core::{ModelParameters, TrainConfig};

/// Normalized synthetic windows with `variables` nodes and length `w`.
pub fn windows(variables: usize, w: usize, count: usize) -> Vec<WindowedSample> {
    let data = synth_generate(&SynthConfig {
        classes: 2,
        variables,
        runs_per_class: 1,
        run_length: 2 * w + count,
        window_length: w,
        ..SynthConfig::default()
    })
    .expect("synthetic data");
    let (data, _) = normalize(&data, None).expect("normalize");
    let mut out = make_windows(&data, w, 1).expect("windows");
    out.truncate(count);
    out
}

pub fn model(config: &TrainConfig, variables: usize) -> ModelParameters {
    ModelParameters::init(config, variables, 2).expect("model")
}

/// Desk-scale settings used by the synthetic end-to-end run.
pub fn desk() -> TrainConfig {
    TrainConfig {
        window_length: 20,
        stride: 2,
        supernodes: 3,
        ..TrainConfig::desk(1)
    }
}
