use super::{Result, SignalError, EPOCH_FS, EPOCH_SAMPLES, N_CHANNELS};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Event {
    pub sample: usize,
    pub label: u8,
}

/// Continuous multichannel recording in microvolts, channel order as [`super::CHANNELS`].
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecording {
    pub channels: Vec<Vec<f32>>,
    pub fs: f64,
    pub events: Vec<Event>,
}

impl RawRecording {
    pub fn new(channels: Vec<Vec<f32>>, fs: f64, events: Vec<Event>) -> Result<Self> {
        let r = Self {
            channels,
            fs,
            events,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.len() != N_CHANNELS {
            return Err(SignalError::Data(format!(
                "expected {N_CHANNELS} channels, got {}",
                self.channels.len()
            )));
        }
        let n = self.len();
        if self.channels.iter().any(|c| c.len() != n) {
            return Err(SignalError::Data("channels differ in length".into()));
        }
        if !(self.fs > 0.0) {
            return Err(SignalError::Data(format!("fs must be > 0, got {}", self.fs)));
        }
        if let Some(e) = self.events.iter().find(|e| e.sample >= n) {
            return Err(SignalError::Data(format!(
                "event at sample {} beyond recording length {n}",
                e.sample
            )));
        }
        Ok(())
    }
}

/// Trials of `22 × 512` samples at 128 Hz, stored trial-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochedDataset {
    pub data: Vec<f32>,
    pub labels: Vec<u8>,
    pub fs: f32,
    /// Original `(min, max)` when min-max normalized.
    pub norm: Option<(f32, f32)>,
    pub subject_id: Option<u8>,
}

impl EpochedDataset {
    pub const TRIAL_LEN: usize = N_CHANNELS * EPOCH_SAMPLES;

    pub fn new(data: Vec<f32>, labels: Vec<u8>) -> Result<Self> {
        let d = Self {
            data,
            labels,
            fs: EPOCH_FS as f32,
            norm: None,
            subject_id: None,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.len() != self.labels.len() * Self::TRIAL_LEN {
            return Err(SignalError::Data(format!(
                "{} labels need {} values, got {}",
                self.labels.len(),
                self.labels.len() * Self::TRIAL_LEN,
                self.data.len()
            )));
        }
        if let Some(l) = self.labels.iter().find(|&&l| l > 3) {
            return Err(SignalError::Data(format!("label {l} outside 0..=3")));
        }
        if self.norm.is_some() && self.data.iter().any(|v| !(-1.0..=1.0).contains(v)) {
            return Err(SignalError::Data("normalized dataset has values outside [-1, 1]".into()));
        }
        Ok(())
    }

    pub fn n_trials(&self) -> usize {
        self.labels.len()
    }

    pub fn is_normalized(&self) -> bool {
        self.norm.is_some()
    }

    pub fn trial(&self, i: usize) -> &[f32] {
        &self.data[i * Self::TRIAL_LEN..(i + 1) * Self::TRIAL_LEN]
    }

    /// Keeps the listed trials in the given order.
    pub fn subset(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * Self::TRIAL_LEN);
        for &i in idx {
            data.extend_from_slice(self.trial(i));
        }
        Self {
            data,
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            ..self.clone()
        }
    }

    /// Maps a normalized value back to microvolts; identity when not normalized.
    pub fn denormalize(&self, v: f32) -> f32 {
        match self.norm {
            Some((lo, hi)) => ((v as f64 + 1.0) / 2.0 * (hi as f64 - lo as f64) + lo as f64) as f32,
            None => v,
        }
    }
}

/// Cuts one 4 s window per event, starting `offset_s` after the event.
pub fn extract_epochs(x: &RawRecording, offset_s: f64) -> Result<EpochedDataset> {
    x.validate()?;
    if x.fs != EPOCH_FS {
        return Err(SignalError::Parameter(format!(
            "epochs need fs = {EPOCH_FS} Hz, got {}",
            x.fs
        )));
    }
    let offset = (offset_s * EPOCH_FS).round();
    let n = x.len();
    let mut bad = Vec::new();
    let mut starts = Vec::with_capacity(x.events.len());
    for e in &x.events {
        let s = e.sample as f64 + offset;
        if s < 0.0 || s as usize + EPOCH_SAMPLES > n {
            bad.push(e.sample);
        } else {
            starts.push(s as usize);
        }
    }
    if !bad.is_empty() {
        return Err(SignalError::EpochOutOfBounds { events: bad, len: n });
    }
    let mut data = Vec::with_capacity(starts.len() * EpochedDataset::TRIAL_LEN);
    for &s in &starts {
        for ch in &x.channels {
            data.extend_from_slice(&ch[s..s + EPOCH_SAMPLES]);
        }
    }
    EpochedDataset::new(data, x.events.iter().map(|e| e.label).collect())
}

/// Global min-max scaling to `[-1, 1]`, remembering the original range.
///
/// An already normalized dataset is returned unchanged.
pub fn minmax_normalize(d: &EpochedDataset) -> Result<EpochedDataset> {
    if d.data.is_empty() {
        return Err(SignalError::Data("cannot normalize an empty dataset".into()));
    }
    if d.norm.is_some() {
        return Ok(d.clone());
    }
    let (lo, hi) = d
        .data
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !(hi > lo) {
        return Err(SignalError::DegenerateRange(lo));
    }
    let (l, span) = (lo as f64, hi as f64 - lo as f64);
    let data = d
        .data
        .iter()
        .map(|&v| {
            if v == lo {
                -1.0
            } else if v == hi {
                1.0
            } else {
                ((2.0 * (v as f64 - l) / span - 1.0) as f32).clamp(-1.0, 1.0)
            }
        })
        .collect();
    Ok(EpochedDataset {
        data,
        norm: Some((lo, hi)),
        ..d.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp_recording(n: usize) -> RawRecording {
        let channels = (0..N_CHANNELS)
            .map(|c| (0..n).map(|t| (c * 10000 + t) as f32).collect())
            .collect();
        RawRecording::new(channels, 128.0, vec![]).unwrap()
    }

    fn dataset_with(values: &[f32]) -> EpochedDataset {
        let mut data = vec![values[0]; EpochedDataset::TRIAL_LEN];
        data[..values.len()].copy_from_slice(values);
        EpochedDataset::new(data, vec![0]).unwrap()
    }

    #[test]
    fn prefix_and_suffix_slices() {
        let mut r = ramp_recording(1000);
        r.events = vec![Event { sample: 0, label: 1 }, Event { sample: 488, label: 2 }];
        let d = extract_epochs(&r, 0.0).unwrap();
        assert_eq!(d.labels, vec![1, 2]);
        assert_eq!(&d.trial(0)[..512], &r.channels[0][..512]);
        assert_eq!(&d.trial(0)[7 * 512..8 * 512], &r.channels[7][..512]);
        assert_eq!(&d.trial(1)[21 * 512..], &r.channels[21][488..]);
    }

    #[test]
    fn out_of_bounds_event_is_reported() {
        let mut r = ramp_recording(1000);
        r.events = vec![Event { sample: 3, label: 0 }, Event { sample: 489, label: 0 }];
        match extract_epochs(&r, 0.0) {
            Err(SignalError::EpochOutOfBounds { events, .. }) => assert_eq!(events, vec![489]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn offset_shifts_window() {
        let mut r = ramp_recording(1000);
        r.events = vec![Event { sample: 10, label: 0 }];
        let d = extract_epochs(&r, 0.5).unwrap();
        assert_eq!(d.trial(0)[0], 74.0);
        assert!(extract_epochs(&r, 4.0).is_err());
    }

    #[test]
    fn wrong_rate_rejected() {
        let mut r = ramp_recording(1000);
        r.fs = 250.0;
        assert!(extract_epochs(&r, 0.0).is_err());
    }

    #[test]
    fn symmetric_and_two_point_ranges() {
        let d = minmax_normalize(&dataset_with(&[-2.0, 0.0, 2.0])).unwrap();
        assert_eq!(&d.data[..3], &[-1.0, 0.0, 1.0]);
        assert_eq!(d.norm, Some((-2.0, 2.0)));
        let d = minmax_normalize(&dataset_with(&[0.0, 10.0])).unwrap();
        assert_eq!(&d.data[..2], &[-1.0, 1.0]);
        assert_eq!(d.denormalize(1.0), 10.0);
        assert_eq!(d.denormalize(-1.0), 0.0);
    }

    #[test]
    fn constant_dataset_is_degenerate() {
        assert!(matches!(
            minmax_normalize(&dataset_with(&[3.0])),
            Err(SignalError::DegenerateRange(_))
        ));
    }

    #[test]
    fn normalizing_twice_matches_once() {
        let vals: Vec<f32> = (0..200).map(|i| ((i * 37) % 101) as f32 - 50.3).collect();
        let once = minmax_normalize(&dataset_with(&vals)).unwrap();
        let twice = minmax_normalize(&once).unwrap();
        assert_eq!(once, twice);
        // also as raw data that already spans [-1, 1]
        let plain = EpochedDataset::new(once.data.clone(), vec![0]).unwrap();
        let again = minmax_normalize(&plain).unwrap();
        for (a, b) in again.data.iter().zip(&once.data) {
            assert!((a - b).abs() <= 1e-7, "{a} {b}");
        }
    }
}
