//! Dense feed-forward networks: batched forward/backward, Adam, Gaussian latent helpers and
//! weight files.

mod adam;
mod gaussian;
mod gradcheck;
mod linalg;
mod network;
mod weights;

pub use adam::{AdamConfig, AdamState};
pub use gaussian::{
    clamp_log_sigma, kl_diag_gaussian, kl_diag_gaussian_grad, reparam_backward, reparam_sample,
    LOG_SIGMA_MAX, LOG_SIGMA_MIN,
};
pub use gradcheck::{check_network, gradient_suite, GradCheck, FD_FLOOR, FD_STEP};
pub use linalg::Matrix;
pub use network::{
    Dense, ForwardTrace, Gradients, HiddenActivation, LayerGrads, Network, Normalization,
    OutputActivation, DEFAULT_LEAKY_SLOPE,
};
pub use weights::{
    load_weights, load_weights_expecting, save_weights, WeightFile, WEIGHTS_MAGIC, WEIGHTS_VERSION,
};
