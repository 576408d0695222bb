use super::{MetricsError, Result};
use crate::signal::{filter_signal, FilterSpec};
use rustfft::{num_complex::Complex, FftPlanner};
use serde::Serialize;
use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Fidelity {
    pub pearson_r: f64,
    pub energy_ratio: f64,
}

/// Trial-averaged fidelity for one named band.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BandFidelity {
    pub band: String,
    pub lo: f64,
    pub hi: f64,
    pub pearson_r: f64,
    pub energy_ratio: f64,
    /// Trials that contributed (degenerate band-limited signals are skipped).
    pub n_trials: usize,
}

/// Hann-windowed periodogram power summed over bins in `[lo, hi]` Hz.
pub fn bandpower(x: &[f32], fs: f64, lo: f64, hi: f64) -> f64 {
    let n = x.len();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let mut buf: Vec<Complex<f64>> = x
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let w = 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos();
            Complex::new(v as f64 * w, 0.0)
        })
        .collect();
    fft.process(&mut buf);
    (0..=n / 2)
        .filter(|&k| {
            let f = k as f64 * fs / n as f64;
            f >= lo && f <= hi
        })
        .map(|k| buf[k].norm_sqr())
        .sum()
}

/// Correlation and energy ratio of the band-limited pair (128 Hz signals).
pub fn band_fidelity(x: &[f32], x_hat: &[f32], band: (f64, f64)) -> Result<Fidelity> {
    let fs = crate::signal::EPOCH_FS;
    let (lo, hi) = band;
    if !(lo > 0.0 && lo < hi && hi < fs / 2.0) {
        return Err(MetricsError::Parameter(format!("band ({lo}, {hi}) outside (0, 64) Hz")));
    }
    if x.len() != x_hat.len() || x.is_empty() {
        return Err(MetricsError::Data(format!(
            "signal lengths {} and {} differ or are empty",
            x.len(),
            x_hat.len()
        )));
    }
    let spec = FilterSpec::bandpass(lo, hi);
    let xb = filter_signal(x, fs, spec)?;
    let yb = filter_signal(x_hat, fs, spec)?;
    let n = xb.len() as f64;
    let mx = xb.iter().map(|&v| v as f64).sum::<f64>() / n;
    let my = yb.iter().map(|&v| v as f64).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in xb.iter().zip(&yb) {
        let (da, db) = (a as f64 - mx, b as f64 - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(MetricsError::DegenerateSignal(format!(
            "zero variance in the {lo}-{hi} Hz band"
        )));
    }
    let px = bandpower(&xb, fs, lo, hi);
    if px == 0.0 {
        return Err(MetricsError::DegenerateSignal(format!("no {lo}-{hi} Hz power in the original")));
    }
    Ok(Fidelity {
        pearson_r: sxy / (sxx * syy).sqrt(),
        energy_ratio: bandpower(&yb, fs, lo, hi) / px,
    })
}
