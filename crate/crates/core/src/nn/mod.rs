//! Small dense networks with hand-written reverse mode, optimizers and
//! finite-difference checking.

pub mod gradcheck;
pub mod loss;
pub mod mlp;
pub mod optim;
pub mod train;

pub use loss::{grad, softmax, softmax_cross_entropy, LossGrad, PROB_FLOOR};
pub use mlp::{spectral_norm, Activation, Mlp, MlpSpec, Tape};
pub use optim::OptimizerState;
pub use train::{accuracy, argmax_rows, fit_classifier, fit_regressor, predict_proba, shuffled_batches, FitConfig};
