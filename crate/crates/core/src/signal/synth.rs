//! Synthetic four-class motor-imagery epochs.
//!
//! Each trial carries, on its class's target channel, a movement-related
//! cortical potential template plus a sinusoid in the class's oscillation
//! band. Spatially correlated pink noise is added to every channel.

use super::channels::{ChannelRef, C3, C4, CZ, POSITIONS};
use super::{EpochedDataset, Result, SignalError, EPOCH_FS, EPOCH_SAMPLES, N_CHANNELS};
use crate::tensor::rng::{split, SeedRng};
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub trials_per_class: usize,
    /// RMS of the background noise on every channel, µV.
    pub noise_scale: f64,
    pub mrcp_amplitude: f64,
    pub oscillation_amplitude: f64,
    /// `(low, high)` Hz per class.
    pub oscillation_bands: [(f64, f64); 4],
    pub target_channels: [ChannelRef; 4],
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            trials_per_class: 50,
            noise_scale: 5.0,
            mrcp_amplitude: 10.0,
            oscillation_amplitude: 6.0,
            oscillation_bands: [(6.0, 9.0), (9.0, 12.0), (12.0, 16.0), (16.0, 20.0)],
            target_channels: [
                ChannelRef::Electrode(C4),
                ChannelRef::Electrode(C3),
                ChannelRef::Electrode(CZ),
                ChannelRef::FcAverage,
            ],
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SignalError::Parameter(m));
        if self.trials_per_class < 1 {
            return bad("trials_per_class must be >= 1".into());
        }
        for (name, v) in [
            ("noise_scale", self.noise_scale),
            ("mrcp_amplitude", self.mrcp_amplitude),
            ("oscillation_amplitude", self.oscillation_amplitude),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        for (c, &(lo, hi)) in self.oscillation_bands.iter().enumerate() {
            if !(lo < hi && lo > 0.0 && hi < EPOCH_FS / 2.0) {
                return bad(format!("class {c} band ({lo}, {hi}) is not a valid band"));
            }
        }
        for t in &self.target_channels {
            if let ChannelRef::Electrode(i) = t {
                if *i >= N_CHANNELS {
                    return bad(format!("target electrode {i} out of range"));
                }
            }
        }
        Ok(())
    }
}

/// Gaussian of unit height with full width at half maximum `fwhm`.
fn bump(t: f64, center: f64, fwhm: f64) -> f64 {
    let sigma = fwhm / (8.0 * 2f64.ln()).sqrt();
    (-(t - center).powi(2) / (2.0 * sigma * sigma)).exp()
}

/// Movement-related potential: positive peak at 0.2 s, negative trough at 0.8 s.
pub fn mrcp_template(amplitude: f64) -> Vec<f64> {
    (0..EPOCH_SAMPLES)
        .map(|i| {
            let t = i as f64 / EPOCH_FS;
            amplitude * (bump(t, 0.2, 0.15) - bump(t, 0.8, 0.3))
        })
        .collect()
}

/// Row-normalized Gaussian kernel over electrode distances.
fn mixing_matrix() -> Vec<[f64; N_CHANNELS]> {
    POSITIONS
        .iter()
        .map(|&(xi, yi)| {
            let mut row = [0.0; N_CHANNELS];
            for (j, &(xj, yj)) in POSITIONS.iter().enumerate() {
                row[j] = (-((xi - xj).powi(2) + (yi - yj).powi(2)) / 2.0).exp();
            }
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            row.iter_mut().for_each(|v| *v /= norm);
            row
        })
        .collect()
}

/// Unit-RMS noise with a 1/f power spectrum and zero mean.
fn pink(rng: &mut SeedRng, fft: &dyn rustfft::Fft<f64>) -> Vec<f64> {
    let n = EPOCH_SAMPLES;
    let mut spec = vec![Complex::new(0.0, 0.0); n];
    for k in 1..=n / 2 {
        let a = 1.0 / (k as f64).sqrt();
        let c = Complex::new(rng.normal() * a, rng.normal() * a);
        spec[k] = c;
        spec[n - k] = c.conj();
    }
    spec[n / 2].im = 0.0;
    fft.process(&mut spec);
    let rms = (spec.iter().map(|c| c.re * c.re).sum::<f64>() / n as f64).sqrt();
    spec.iter().map(|c| c.re / rms).collect()
}

fn trial(cfg: &SynthConfig, label: usize, seed: u64, mix: &[[f64; N_CHANNELS]], mrcp: &[f64], fft: &dyn rustfft::Fft<f64>) -> Vec<f32> {
    let mut rng = SeedRng::new(seed);
    let mut x = vec![0.0f64; N_CHANNELS * EPOCH_SAMPLES];
    if cfg.noise_scale > 0.0 {
        let sources: Vec<Vec<f64>> = (0..N_CHANNELS).map(|_| pink(&mut rng, fft)).collect();
        for (c, row) in mix.iter().enumerate() {
            let out = &mut x[c * EPOCH_SAMPLES..(c + 1) * EPOCH_SAMPLES];
            for (w, s) in row.iter().zip(&sources) {
                out.iter_mut().zip(s).for_each(|(o, v)| *o += w * v);
            }
            let rms = (out.iter().map(|v| v * v).sum::<f64>() / EPOCH_SAMPLES as f64).sqrt();
            out.iter_mut().for_each(|v| *v *= cfg.noise_scale / rms);
        }
    }
    let (lo, hi) = cfg.oscillation_bands[label];
    let f = rng.uniform_in(lo, hi);
    let phase = rng.uniform_in(0.0, 2.0 * PI);
    for ch in cfg.target_channels[label].electrodes() {
        let out = &mut x[ch * EPOCH_SAMPLES..(ch + 1) * EPOCH_SAMPLES];
        for (i, o) in out.iter_mut().enumerate() {
            let t = i as f64 / EPOCH_FS;
            *o += mrcp[i] + cfg.oscillation_amplitude * (2.0 * PI * f * t + phase).sin();
        }
    }
    x.into_iter().map(|v| v as f32).collect()
}

/// Generates `4 · trials_per_class` trials with labels cycling 0, 1, 2, 3.
///
/// Trial `i` draws from its own stream `split(seed, i)`.
pub fn synth_generate(cfg: &SynthConfig) -> Result<EpochedDataset> {
    cfg.validate()?;
    let n = 4 * cfg.trials_per_class;
    let mix = mixing_matrix();
    let mrcp = mrcp_template(cfg.mrcp_amplitude);
    let fft = FftPlanner::new().plan_fft_inverse(EPOCH_SAMPLES);
    let mut data = Vec::with_capacity(n * EpochedDataset::TRIAL_LEN);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % 4;
        data.extend(trial(cfg, label, split(cfg.seed, i as u64), &mix, &mrcp, fft.as_ref()));
        labels.push(label as u8);
    }
    EpochedDataset::new(data, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{filter_signal, FilterSpec};

    #[test]
    fn balanced_labels() {
        let d = synth_generate(&SynthConfig {
            trials_per_class: 5,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(d.n_trials(), 20);
        for c in 0..4u8 {
            assert_eq!(d.labels.iter().filter(|&&l| l == c).count(), 5);
        }
    }

    #[test]
    fn template_decays() {
        let m = mrcp_template(10.0);
        let late = m[(2.0 * EPOCH_FS) as usize..].iter().fold(0f64, |a, v| a.max(v.abs()));
        assert!(late < 0.5, "{late}");
    }

    #[test]
    fn noiseless_mrcp_shape_on_c3() {
        let cfg = SynthConfig {
            trials_per_class: 1,
            noise_scale: 0.0,
            ..Default::default()
        };
        let d = synth_generate(&cfg).unwrap();
        let c3 = ChannelRef::Electrode(C3).trace(d.trial(1), EPOCH_SAMPLES);
        let y = filter_signal(&c3, EPOCH_FS, FilterSpec::bandpass(0.5, 4.0)).unwrap();
        let first = &y[..(1.5 * EPOCH_FS) as usize];
        let argmax = (0..first.len()).max_by(|&a, &b| first[a].total_cmp(&first[b])).unwrap();
        let argmin = (0..first.len()).min_by(|&a, &b| first[a].total_cmp(&first[b])).unwrap();
        let (tmax, tmin) = (argmax as f64 / EPOCH_FS, argmin as f64 / EPOCH_FS);
        assert!(tmax < tmin);
        assert!((tmax - 0.2).abs() < 0.1, "{tmax}");
        assert!((tmin - 0.8).abs() < 0.1, "{tmin}");
    }

    #[test]
    fn noise_rms_matches_scale() {
        let cfg = SynthConfig {
            trials_per_class: 1,
            mrcp_amplitude: 0.0,
            oscillation_amplitude: 0.0,
            noise_scale: 3.0,
            ..Default::default()
        };
        let d = synth_generate(&cfg).unwrap();
        for ch in d.trial(0).chunks(EPOCH_SAMPLES) {
            let rms = (ch.iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / ch.len() as f64).sqrt();
            assert!((rms - 3.0).abs() < 1e-4, "{rms}");
        }
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = SynthConfig {
            trials_per_class: 0,
            ..Default::default()
        };
        assert!(synth_generate(&cfg).is_err());
        let mut cfg = SynthConfig::default();
        cfg.oscillation_bands[2] = (12.0, 12.0);
        assert!(cfg.validate().is_err());
        let cfg = SynthConfig {
            noise_scale: -1.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
