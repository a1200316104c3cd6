//! The online solver: per-minibatch alternating minimisation against fixed
//! dictionaries, followed by an accumulator update and one block-coordinate
//! sweep over each dictionary.

mod checkpoint;
mod config;
mod solve;
pub(crate) mod state;
mod stream;
mod updates;

pub use checkpoint::{MAGIC as CHECKPOINT_MAGIC, VERSION as CHECKPOINT_VERSION};
pub use config::{lambda2_from, Accumulation, RunConfig};
pub use solve::{solve_minibatch, solve_with, InnerParams, MinibatchSolution};
pub use state::{dictionary_surrogate, init_state, DictionaryState};
pub use stream::{process_stream, MinibatchOutput, OnlineRecovery};
pub use updates::{
    flag_outlier_fibers, minibatch_objective, reconstruct_lowrank, update_e, update_o, update_r,
};
