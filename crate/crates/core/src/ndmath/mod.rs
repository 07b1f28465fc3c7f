//! Dense numerical core: matrices, activations, the two-head perceptron and a
//! finite-difference gradient oracle.

mod activation;
mod checkpoint;
mod gradcheck;
mod matrix;
mod mlp;

pub use activation::{sigmoid, softmax, Activation};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC,
};
pub use gradcheck::{
    finite_difference_grad, max_gradient_mismatch, relative_error, DEFAULT_FD_EPS,
};
pub use matrix::Matrix;
pub use mlp::{model_backward, model_forward, ForwardCache, GradientSet, Prediction, TwoHeadMlp};
