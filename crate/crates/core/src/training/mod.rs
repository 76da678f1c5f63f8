//! Readout fitting, backpropagation through time, Adam and the restart loop.

pub mod adam;
pub mod bptt;
pub mod readout;
pub mod trainer;

pub use adam::{adam_update, AdamHyper, AdamState};
pub use bptt::{bptt_gradients, flatten_params, forward, forward_with_cache, unflatten_params, ForwardCache, GradientBundle};
pub use readout::{fit_readout, LeastSquaresAccumulator, ReadoutFit};
pub use trainer::{
    initial_model, restart_seed, select_best, train_once, train_restarts, ReadoutMode, RestartsOutcome, SnapshotSelection,
    TrainConfig, TrainOutcome,
};
