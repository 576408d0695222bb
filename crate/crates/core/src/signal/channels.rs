//! Fixed 22-electrode montage (10-20 system subset used for motor imagery).

use serde::{Deserialize, Serialize};

pub const N_CHANNELS: usize = 22;

/// Channel order of every dataset and model in this crate.
pub const CHANNELS: [&str; N_CHANNELS] = [
    "Fz", "FC3", "FC1", "FCz", "FC2", "FC4", "C5", "C3", "C1", "Cz", "C2", "C4", "C6", "CP3",
    "CP1", "CPz", "CP2", "CP4", "P1", "Pz", "P2", "POz",
];

pub const FC3: usize = 1;
pub const FC4: usize = 5;
pub const C3: usize = 7;
pub const CZ: usize = 9;
pub const C4: usize = 11;

/// Approximate scalp grid positions (x: left→right, y: posterior→anterior).
pub(crate) const POSITIONS: [(f64, f64); N_CHANNELS] = [
    (0.0, 2.0),
    (-2.0, 1.0),
    (-1.0, 1.0),
    (0.0, 1.0),
    (1.0, 1.0),
    (2.0, 1.0),
    (-3.0, 0.0),
    (-2.0, 0.0),
    (-1.0, 0.0),
    (0.0, 0.0),
    (1.0, 0.0),
    (2.0, 0.0),
    (3.0, 0.0),
    (-2.0, -1.0),
    (-1.0, -1.0),
    (0.0, -1.0),
    (1.0, -1.0),
    (2.0, -1.0),
    (-1.0, -2.0),
    (0.0, -2.0),
    (1.0, -2.0),
    (0.0, -3.0),
];

/// A physical electrode or the FC3/FC4 average pseudo-channel.
///
/// Serialized as its channel name (`"C3"`, `"FCavg"`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ChannelRef {
    Electrode(usize),
    FcAverage,
}

impl From<ChannelRef> for String {
    fn from(c: ChannelRef) -> Self {
        c.name().to_string()
    }
}

impl TryFrom<String> for ChannelRef {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        Self::parse(&s).ok_or_else(|| format!("unknown channel {s:?}"))
    }
}

impl ChannelRef {
    pub fn parse(name: &str) -> Option<Self> {
        if name.eq_ignore_ascii_case("FCavg") {
            return Some(Self::FcAverage);
        }
        CHANNELS
            .iter()
            .position(|c| c.eq_ignore_ascii_case(name))
            .map(Self::Electrode)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Electrode(i) => CHANNELS[*i],
            Self::FcAverage => "FCavg",
        }
    }

    /// Electrode rows this reference reads from.
    pub fn electrodes(&self) -> Vec<usize> {
        match self {
            Self::Electrode(i) => vec![*i],
            Self::FcAverage => vec![FC3, FC4],
        }
    }

    /// Extracts the (possibly averaged) trace from one `22 × n` trial.
    pub fn trace(&self, trial: &[f32], samples: usize) -> Vec<f32> {
        let rows = self.electrodes();
        let inv = 1.0 / rows.len() as f32;
        (0..samples)
            .map(|t| rows.iter().map(|&r| trial[r * samples + t]).sum::<f32>() * inv)
            .collect()
    }
}
