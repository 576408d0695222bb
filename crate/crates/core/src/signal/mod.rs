//! Recording preprocessing, epoch datasets, and the synthetic motor-imagery generator.

pub mod channels;
pub mod container;
mod epochs;
pub mod fir;
pub mod resample;
pub mod synth;

pub use channels::{ChannelRef, CHANNELS, N_CHANNELS};
pub use container::{dataset_read, dataset_write, read_dataset_from, write_dataset_to};
pub use epochs::{extract_epochs, minmax_normalize, EpochedDataset, Event, RawRecording};
pub use fir::{filter_signal, fir_filter, FilterSpec};
pub use resample::{resample_rational, resample_signal};
pub use synth::{synth_generate, SynthConfig};

/// Sampling rate of every epoch dataset, in Hz.
pub const EPOCH_FS: f64 = 128.0;
/// Samples per epoch: 4 s at 128 Hz.
pub const EPOCH_SAMPLES: usize = 512;

#[derive(Debug, thiserror::Error)]
pub enum SignalError {
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("epochs out of bounds for events {events:?} (recording has {len} samples)")]
    EpochOutOfBounds { events: Vec<usize>, len: usize },
    #[error("degenerate range: dataset is constant ({0})")]
    DegenerateRange(f32),
    #[error("format error in field `{field}`: {detail}")]
    Format { field: &'static str, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = SignalError> = std::result::Result<T, E>;
