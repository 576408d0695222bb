//! Classification agreement, reconstruction error tables, and band-limited fidelity.

mod classification;
mod export;
mod fidelity;
mod table;

pub use classification::{classification_metrics, confusion_matrix, Agreement};
pub use export::{export_reconstruction, format_sig, write_reconstruction_csv};
pub use fidelity::{band_fidelity, bandpower, BandFidelity, Fidelity};
pub use table::{mean_std, reconstruction_mse_table, MseRow, MseTable};

use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("data error: {0}")]
    Data(String),
    #[error("degenerate distribution: {0}")]
    DegenerateDistribution(String),
    #[error("degenerate signal: {0}")]
    DegenerateSignal(String),
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error(transparent)]
    Signal(#[from] crate::signal::SignalError),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = MetricsError> = std::result::Result<T, E>;

/// Evaluation summary of one model on one dataset split.
///
/// `mse_std` uses the population convention (divides by n).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub n_trials: usize,
    pub accuracy: f64,
    pub kappa: Option<f64>,
    pub mse_avg: f64,
    pub mse_std: f64,
    pub per_trial_mse: Vec<f64>,
    pub band_fidelity: Vec<BandFidelity>,
    pub predictions: Vec<u8>,
    /// Effective run configuration, when the caller supplies one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

impl MetricsReport {
    /// Canonical JSON: fixed key order, one trailing newline.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn band(&self, name: &str) -> Option<&BandFidelity> {
        self.band_fidelity.iter().find(|b| b.band == name)
    }
}
