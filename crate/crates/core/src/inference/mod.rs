//! Stochastic variational training of the embedding model.
//!
//! The objective is maximized, never negated: every estimate, gradient
//! and history entry is an ELBO value.

mod adam;
mod checkpoint;
mod config;
mod elbo;
mod model;
mod train;

pub use adam::{adam_step, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use checkpoint::{
    checkpoint_from_bytes, checkpoint_to_bytes, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use config::{McSettings, PriorMode, TrainConfig};
pub use elbo::{
    draw_noise, elbo_estimate, elbo_gradient, elbo_gradient_with_scale, elbo_terms,
    event_from_moments, event_term, integral_from_moments, integral_term, ElboTerms,
    InteractionNoise,
};
pub use model::{Embeddings, ModelState};
pub use train::{initialize, train, train_with_progress, Checkpoint, TrainHistory, TrainOutcome};

pub(crate) use elbo::evaluate;
