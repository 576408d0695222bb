//! Zero-phase windowed-sinc FIR filtering.

use super::{RawRecording, Result, SignalError};
use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FilterSpec {
    Bandpass { lo: f64, hi: f64 },
    Notch { f0: f64, bw: f64 },
}

impl FilterSpec {
    pub fn bandpass(lo: f64, hi: f64) -> Self {
        Self::Bandpass { lo, hi }
    }

    pub fn notch(f0: f64, bw: f64) -> Self {
        Self::Notch { f0, bw }
    }

    fn validate(&self, fs: f64) -> Result<()> {
        let nyq = fs / 2.0;
        let ok = match *self {
            Self::Bandpass { lo, hi } => 0.0 < lo && lo < hi && hi < nyq,
            Self::Notch { f0, bw } => bw > 0.0 && f0 - bw / 2.0 > 0.0 && f0 + bw / 2.0 < nyq,
        };
        if !(fs > 0.0) || !ok {
            return Err(SignalError::Parameter(format!(
                "{self:?} is not inside (0, {nyq}) Hz at fs = {fs}"
            )));
        }
        Ok(())
    }
}

/// Odd tap count giving a Hamming transition band of at most 1 Hz.
pub fn tap_count(fs: f64) -> usize {
    let n = (3.3 * fs).ceil() as usize;
    n | 1
}

fn lowpass(fc: f64, fs: f64, n: usize) -> Vec<f64> {
    let m = (n - 1) as f64 / 2.0;
    let wc = 2.0 * fc / fs;
    let mut h: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 - m;
            let sinc = if t == 0.0 { wc } else { (PI * wc * t).sin() / (PI * t) };
            let w = 0.54 - 0.46 * (2.0 * PI * i as f64 / (n - 1) as f64).cos();
            sinc * w
        })
        .collect();
    let dc: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= dc);
    h
}

/// Linear-phase taps for `spec` at sampling rate `fs`.
pub fn design(spec: FilterSpec, fs: f64) -> Result<Vec<f64>> {
    spec.validate(fs)?;
    let n = tap_count(fs);
    let band = |lo: f64, hi: f64| -> Vec<f64> {
        lowpass(hi, fs, n)
            .iter()
            .zip(lowpass(lo, fs, n))
            .map(|(a, b)| a - b)
            .collect()
    };
    Ok(match spec {
        FilterSpec::Bandpass { lo, hi } => band(lo, hi),
        FilterSpec::Notch { f0, bw } => {
            let mut h: Vec<f64> = band(f0 - bw / 2.0, f0 + bw / 2.0).iter().map(|v| -v).collect();
            h[n / 2] += 1.0;
            h
        }
    })
}

fn causal(h: &[f64], x: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let kmax = h.len().min(i + 1);
            (0..kmax).map(|k| h[k] * x[i - k]).sum()
        })
        .collect()
}

/// Forward-backward application of `taps` with odd reflection padding at both ends.
pub fn filtfilt(taps: &[f64], x: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let pad = (taps.len() - 1).min(n - 1);
    let mut padded = Vec::with_capacity(n + 2 * pad);
    padded.extend((1..=pad).rev().map(|k| 2.0 * x[0] - x[k]));
    padded.extend_from_slice(x);
    padded.extend((1..=pad).map(|k| 2.0 * x[n - 1] - x[n - 1 - k]));
    let mut y = causal(taps, &padded);
    y.reverse();
    let mut y = causal(taps, &y);
    y.reverse();
    y[pad..pad + n].to_vec()
}

/// Filters one channel sampled at `fs`.
pub fn filter_signal(x: &[f32], fs: f64, spec: FilterSpec) -> Result<Vec<f32>> {
    let taps = design(spec, fs)?;
    let xs: Vec<f64> = x.iter().map(|&v| v as f64).collect();
    Ok(filtfilt(&taps, &xs).into_iter().map(|v| v as f32).collect())
}

pub fn fir_filter(x: &RawRecording, spec: FilterSpec) -> Result<RawRecording> {
    x.validate()?;
    let taps = design(spec, x.fs)?;
    let channels = x
        .channels
        .iter()
        .map(|ch| {
            let xs: Vec<f64> = ch.iter().map(|&v| v as f64).collect();
            filtfilt(&taps, &xs).into_iter().map(|v| v as f32).collect()
        })
        .collect();
    Ok(RawRecording {
        channels,
        ..x.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(f: f64, fs: f64, n: usize) -> Vec<f32> {
        (0..n)
            .map(|i| (2.0 * PI * f * i as f64 / fs).sin() as f32)
            .collect()
    }

    fn rms(x: &[f32]) -> f64 {
        (x.iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / x.len() as f64).sqrt()
    }

    #[test]
    fn tap_count_meets_transition_width() {
        let n = tap_count(250.0);
        assert_eq!(n % 2, 1);
        assert!(3.3 * 250.0 / n as f64 <= 1.0);
    }

    #[test]
    fn bandpass_passes_ten_hz() {
        let y = filter_signal(&sine(10.0, 250.0, 5000), 250.0, FilterSpec::bandpass(0.5, 100.0)).unwrap();
        let peak = y[1000..4000].iter().fold(0f32, |m, v| m.max(v.abs()));
        assert!((peak - 1.0).abs() < 0.02, "{peak}");
    }

    #[test]
    fn notch_removes_mains() {
        let x = sine(50.0, 250.0, 5000);
        let y = filter_signal(&x, 250.0, FilterSpec::notch(50.0, 2.0)).unwrap();
        // steady state: one filter length of edge ringing excluded on each side
        let e = tap_count(250.0);
        let ratio = rms(&y[e..5000 - e]) / rms(&x[e..5000 - e]);
        assert!(ratio < 0.05, "{ratio}");
    }

    #[test]
    fn bandpass_removes_dc() {
        let x = vec![5.0f32; 3000];
        let y = filter_signal(&x, 250.0, FilterSpec::bandpass(0.5, 100.0)).unwrap();
        let m = y.iter().map(|v| v.abs() as f64).sum::<f64>() / y.len() as f64;
        assert!(m < 0.25, "{m}");
    }

    #[test]
    fn zero_phase() {
        let x = sine(3.0, 128.0, 2048);
        let y = filter_signal(&x, 128.0, FilterSpec::bandpass(1.0, 8.0)).unwrap();
        // a delayed output would leave a quadrature residual
        let r: f64 = x[512..1536]
            .iter()
            .zip(&y[512..1536])
            .map(|(a, b)| (a - b).abs() as f64)
            .fold(0.0, f64::max);
        assert!(r < 0.02, "{r}");
    }

    #[test]
    fn rejects_bands_outside_nyquist() {
        assert!(design(FilterSpec::bandpass(0.5, 130.0), 250.0).is_err());
        assert!(design(FilterSpec::bandpass(4.0, 2.0), 250.0).is_err());
        assert!(design(FilterSpec::notch(126.0, 2.0), 250.0).is_err());
        assert!(design(FilterSpec::bandpass(0.0, 10.0), 250.0).is_err());
    }
}
