//! Deterministic numerical substrate: dense tensors, MLPs with hand-written
//! reverse-mode gradients, Adam, and diagonal-Gaussian densities.

pub mod adam;
pub mod gaussian;
pub mod mlp;
pub mod rng;
pub mod tensor;

pub use adam::{adam_step, OptState};
pub use gaussian::{
    clamp_log_var, gaussian_kl, gaussian_log_likelihood, reparameterize, GaussianHead, LOG_VAR_MAX,
    LOG_VAR_MIN,
};
pub use mlp::{
    mlp_backward, mlp_backward_trace, mlp_forward, mlp_forward_trace, Activation, MlpGrads,
    MlpParams, MlpTrace,
};
pub use rng::RngStream;
pub use tensor::Tensor2;
