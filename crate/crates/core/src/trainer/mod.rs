//! Pairwise training: hinge loss, backpropagation through the kernels,
//! Adam updates, and early stopping.

mod adam;
mod backward;
pub mod gradcheck;
mod pairs;
mod train;

pub use adam::{AdamConfig, AdamState};
pub use backward::{backward, hinge_loss, Gradients};
pub use pairs::{make_pairs, PreferencePair, QueryLabels};
pub use train::{
    mean_pair_loss, pair_gradients, pair_loss, split_by_query, train, EpochRecord, TrainConfig,
    TrainReport,
};
