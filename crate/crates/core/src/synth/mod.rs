//! Synthetic benchmark streams, evaluation metrics, sweeps, and brute-force
//! oracles for checking the engine.

pub mod audit;
mod generate;
mod metrics;
mod oracle;
mod sweep;

pub use generate::{gen_orthobasis, gen_stream, GroundTruth, MaskMode, SynthMinibatch, SynthSpec, SyntheticStream};
pub use metrics::{
    f1_outliers, relative_error, Detection, DetectionAccumulator, ErrorAccumulator, EvalReport, DEFAULT_BURN_IN,
};
pub use oracle::{
    nuclear_norm, oracle_descent, oracle_svd, svd_split, Block, BlockProblem, BlockValue, DescentBudget, Svd,
};
pub use sweep::{derive_seed, run_sweep, run_trial, Stat, SweepKind, SweepOptions, SweepRow, SweepTable};
