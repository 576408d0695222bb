//! Joint training of the variational EEGNet objective and model evaluation.

mod gradcheck;
mod losses;
mod optim;
mod trainer;

pub use gradcheck::{end_to_end_grad_check, LossFn};
pub use losses::{compute_losses, kl_divergence, kl_graph, loss_graph, LossBreakdown, LossVars};
pub use optim::{adam_step, adamw_step, AdamHyper, AdamWState, Slot};
pub use trainer::{
    batch_losses, evaluate, reconstruct_all, train, train_trials, EpochLosses, EvalOptions, History,
    Reconstructions, TrainConfig, TrialSet,
};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("optimizer error on `{tensor}`: {detail}")]
    Optimizer { tensor: String, detail: String },
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Metrics(#[from] crate::metrics::MetricsError),
    #[error(transparent)]
    Signal(#[from] crate::signal::SignalError),
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
}

pub type Result<T, E = TrainError> = std::result::Result<T, E>;
