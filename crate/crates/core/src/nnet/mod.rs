//! Dense ReLU networks with hand-written backpropagation.
//!
//! Batched passes keep activations as `units × batch` column-major blocks so
//! each layer is one matrix product.

mod gradcheck;
mod mlp;
mod train;

pub(crate) use gradcheck::relu_pattern;
pub use gradcheck::{gradient_check, GradCheckReport};
pub use mlp::{
    backward, backward_sum, cross_entropy, encode, forward, forward_batch, log_likelihood, mlp_init, param_count,
    predict_proba, DropoutMasks, ForwardCache, MLPParams,
};
pub use train::{accuracy, predict_labels, train, Adam, Optimizer, TrainConfig, TrainOutcome};
