//! Fixtures shared by the benchmarks.

use streamrtr::synth::{gen_stream, SynthSpec};
use streamrtr::{DenseTensor, ObservationMask, OnlineRecovery, RunConfig};

/// `n x n x k` minibatches with rank-3 structure and 5% corrupted fibers.
pub fn minibatches(n: usize, k: usize, count: usize, observation_ratio: f64) -> Vec<(DenseTensor, ObservationMask)> {
    let spec = SynthSpec {
        minibatch_shape: vec![n, n, k],
        core_dims: vec![3, 3, k.min(3)],
        num_minibatches: count,
        observation_ratio,
        seed: 7,
        ..Default::default()
    };
    gen_stream(&spec)
        .expect("valid spec")
        .map(|mb| (mb.observed, mb.truth.mask))
        .collect()
}

pub fn config(fixed_iterations: Option<usize>) -> RunConfig {
    let mut cfg = RunConfig {
        rank: 3,
        alpha: 0.5,
        seed: 3,
        ..Default::default()
    };
    if let Some(iters) = fixed_iterations {
        cfg.epsilon = 1e-300;
        cfg.max_inner_iters = iters;
    }
    cfg
}

/// An engine already warmed up on `warm` minibatches.
pub fn warmed_engine(batches: &[(DenseTensor, ObservationMask)], cfg: &RunConfig, warm: usize) -> OnlineRecovery {
    let mut engine = OnlineRecovery::new(batches[0].0.shape(), cfg).expect("valid config");
    for (b, m) in batches.iter().take(warm) {
        engine.step(b, m).expect("step");
    }
    engine
}
