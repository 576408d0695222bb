use super::{MetricsError, Result};
use crate::model::{infer, trial_noise, ModelParams};
use crate::signal::{ChannelRef, EpochedDataset, EPOCH_FS, EPOCH_SAMPLES, N_CHANNELS};
use crate::tensor::Tensor;
use std::io::Write;
use std::path::Path;

/// `%g`-style formatting with `digits` significant digits.
pub fn format_sig(v: f64, digits: usize) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let p = digits.max(1) as i32;
    let sci = format!("{:.*e}", (p - 1) as usize, v);
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("exponent digits");
    let trim = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if exp < -4 || exp >= p {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim(mantissa), exp.abs())
    } else {
        trim(&format!("{:.*}", (p - 1 - exp) as usize, v))
    }
}

/// Writes `time_s,channel,original,reconstructed` rows for each channel in turn.
pub fn write_reconstruction_csv<W: Write>(
    mut w: W,
    original: &[f32],
    reconstructed: &[f32],
    channels: &[ChannelRef],
    denorm: impl Fn(f32) -> f32,
) -> Result<()> {
    writeln!(w, "time_s,channel,original,reconstructed")?;
    for ch in channels {
        let x = ch.trace(original, EPOCH_SAMPLES);
        let y = ch.trace(reconstructed, EPOCH_SAMPLES);
        for t in 0..EPOCH_SAMPLES {
            writeln!(
                w,
                "{},{},{},{}",
                format_sig(t as f64 / EPOCH_FS, 6),
                ch.name(),
                format_sig(denorm(x[t]) as f64, 6),
                format_sig(denorm(y[t]) as f64, 6)
            )?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reconstructs one trial in inference mode and exports the named channels.
///
/// Values are mapped back to microvolts when the dataset is normalized. The
/// decoder input is drawn with the same per-trial noise as evaluation.
pub fn export_reconstruction(
    model: &mut ModelParams,
    data: &EpochedDataset,
    trial: usize,
    channels: &[&str],
    path: impl AsRef<Path>,
    eval_seed: u64,
) -> Result<()> {
    if trial >= data.n_trials() {
        return Err(MetricsError::Parameter(format!(
            "trial {trial} out of range ({} trials)",
            data.n_trials()
        )));
    }
    let refs = channels
        .iter()
        .map(|name| {
            ChannelRef::parse(name)
                .ok_or_else(|| MetricsError::Parameter(format!("unknown channel {name:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let x = Tensor::new(&[1, 1, N_CHANNELS, EPOCH_SAMPLES], data.trial(trial).to_vec())
        .map_err(crate::model::ModelError::from)?;
    let eps = trial_noise(model.config.latent_dim, &[trial], eval_seed)?;
    let (_, x_hat, _) = infer(model, &x, &eps)?;
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_reconstruction_csv(file, data.trial(trial), x_hat.data(), &refs, |v| data.denormalize(v))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn significant_digits() {
        assert_eq!(format_sig(0.0, 6), "0");
        assert_eq!(format_sig(0.0078125, 6), "0.0078125");
        assert_eq!(format_sig(3.9921875, 6), "3.99219");
        assert_eq!(format_sig(-12.5, 6), "-12.5");
        assert_eq!(format_sig(123456789.0, 6), "1.23457e+08");
        assert_eq!(format_sig(1.5e-7, 6), "1.5e-07");
        assert_eq!(format_sig(100.0, 6), "100");
    }

    #[test]
    fn csv_layout() {
        let mut x = vec![0.0f32; N_CHANNELS * EPOCH_SAMPLES];
        x[EPOCH_SAMPLES] = 1.0;
        x[5 * EPOCH_SAMPLES] = 3.0;
        let mut out = Vec::new();
        write_reconstruction_csv(&mut out, &x, &x, &[ChannelRef::FcAverage], |v| v).unwrap();
        let s = String::from_utf8(out).unwrap();
        let lines: Vec<_> = s.lines().collect();
        assert_eq!(lines.len(), 513);
        assert_eq!(lines[0], "time_s,channel,original,reconstructed");
        assert_eq!(lines[1], "0,FCavg,2,2");
        assert!(lines[512].starts_with("3.99219,FCavg,"));
        assert!(s.ends_with('\n') && !s.contains('\r'));
    }
}
