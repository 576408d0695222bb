//! Rational-ratio polyphase resampling.

use super::{RawRecording, Result, SignalError};
use std::f64::consts::PI;

/// Half-width of the anti-aliasing filter in units of the slower rate's period.
const HALF_ZEROS: usize = 16;

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn check(p: i64, q: i64) -> Result<(usize, usize)> {
    if p <= 0 || q <= 0 {
        return Err(SignalError::Parameter(format!(
            "resampling factors must be positive, got p={p}, q={q}"
        )));
    }
    if gcd(p as u64, q as u64) != 1 {
        return Err(SignalError::Parameter(format!(
            "p={p} and q={q} must be coprime"
        )));
    }
    Ok((p as usize, q as usize))
}

/// Low-pass prototype at the upsampled rate with cutoff π/max(p,q) and DC gain p.
fn prototype(p: usize, q: usize) -> Vec<f64> {
    let r = p.max(q);
    let n = 2 * HALF_ZEROS * r + 1;
    let m = (n - 1) as f64 / 2.0;
    let wc = 1.0 / r as f64;
    let mut h: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 - m;
            let sinc = if t == 0.0 { wc } else { (PI * wc * t).sin() / (PI * t) };
            sinc * (0.54 - 0.46 * (2.0 * PI * i as f64 / (n - 1) as f64).cos())
        })
        .collect();
    let s: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v *= p as f64 / s);
    h
}

/// Resamples one channel by `p/q`; output length is `ceil(len·p/q)`.
pub fn resample_signal(x: &[f32], p: i64, q: i64) -> Result<Vec<f32>> {
    let (p, q) = check(p, q)?;
    if p == 1 && q == 1 {
        return Ok(x.to_vec());
    }
    let h = prototype(p, q);
    let half = (h.len() - 1) / 2;
    let out_len = (x.len() * p).div_ceil(q);
    let y = (0..out_len)
        .map(|m| {
            // upsampled-domain position of output m, shifted so the filter is centered
            let c = m * q + half;
            let k_hi = (c / p).min(x.len().saturating_sub(1));
            let k_lo = c.saturating_sub(h.len() - 1).div_ceil(p);
            let mut acc = 0.0f64;
            let mut k = k_lo;
            while k <= k_hi {
                acc += x[k] as f64 * h[c - k * p];
                k += 1;
            }
            acc as f32
        })
        .collect();
    Ok(y)
}

pub fn resample_rational(x: &RawRecording, p: i64, q: i64) -> Result<RawRecording> {
    x.validate()?;
    let (pu, qu) = check(p, q)?;
    let channels = x
        .channels
        .iter()
        .map(|c| resample_signal(c, p, q))
        .collect::<Result<Vec<_>>>()?;
    let len = channels.first().map_or(0, Vec::len);
    let events = x
        .events
        .iter()
        .map(|e| super::Event {
            sample: ((e.sample * pu) / qu).min(len.saturating_sub(1)),
            label: e.label,
        })
        .collect();
    Ok(RawRecording {
        channels,
        fs: x.fs * pu as f64 / qu as f64,
        events,
    })
}
