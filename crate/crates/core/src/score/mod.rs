//! Score network: the sinusoidal MLP, boundary-vanishing parameterisation,
//! implicit score matching loss with analytic gradients, and Adam training.

pub mod loss;
pub mod mlp;
pub mod model;
pub mod train;

pub use loss::{ism_loss, ism_loss_gradient, ism_loss_gradient_hutchinson};
pub use mlp::{MlpGrad, MlpParams};
pub use model::{feature_dim, ScoreModel, DEFAULT_DELTA};
pub use train::{learning_rate, train, AdamState, TrainConfig, TrainRecord};
