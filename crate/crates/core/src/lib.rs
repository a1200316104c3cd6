//! Online robust tensor recovery over streams of dense minibatches.
//!
//! Each minibatch is explained as a low-rank part (one dictionary per mode),
//! a fiber-sparse outlier part, and, under partial observation, a
//! compensation term on the unobserved entries.

pub mod engine;
pub mod error;
pub mod synth;
pub mod tensor;

pub use engine::{
    process_stream, Accumulation, DictionaryState, MinibatchOutput, OnlineRecovery, RunConfig,
};
pub use error::{Error, Result};
pub use tensor::{DenseTensor, Matrix, ObservationMask};
