//! Small fully connected VAE with hand-written reverse-mode gradients.

mod capture;
mod model;
mod objective;
mod train;

pub use capture::{
    capture_activations, capture_with_noise, eval_noise, ActivationCapture, DECODER_LAYERS, ENCODER_LAYERS, LAYER_NAMES,
};
pub use model::{Activation, Architecture, Dense, ForwardPass, ParamLayer, VaeModel};
pub use objective::{
    dip_covariance, dip_penalty, elbo_terms, gaussian_kl, gradients, loss, total_correlation, Batch, ElboTerms,
    Gradients, LossBreakdown, LossOptions, ObjectiveKind, ObjectiveSpec, PixelReduction,
};
pub use train::{train, Checkpoint, FreezeMask, TrainConfig, TrainOutcome, DIVERGENCE_LIMIT};
