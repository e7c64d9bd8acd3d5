//! Small dense tensors, reverse-mode differentiation and optimizers.
//!
//! Everything is `f64`. The learned parts of the pipeline (set encoder,
//! scorer, classifier) record their forward pass on a [`Tape`] and pull
//! gradients back with [`Tape::backward`]; [`finite_difference_check`]
//! verifies those gradients independently.

pub mod checkpoint;
pub mod gradcheck;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use gradcheck::finite_difference_check;
pub use optim::{Adam, AdamConfig, Sgd};
pub use params::{add_grads, collect_grads, glorot_uniform, scale_grads, ParamSet};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{add_bias, cross_entropy, matmul, mse, relu, softmax, softmax_cross_entropy, DenseTensor};
