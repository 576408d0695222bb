//! Continuous 250 Hz recording -> notch + band-pass -> 128 Hz -> 4 s epochs -> [-1, 1].

use std::f64::consts::PI;
use veegnet::signal::{
    extract_epochs, fir_filter, minmax_normalize, resample_rational, Event, FilterSpec, RawRecording, N_CHANNELS,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fs = 250.0;
    let n = 250 * 30;
    // 10 Hz rhythm plus 50 Hz mains and a DC offset on every channel
    let channels: Vec<Vec<f32>> = (0..N_CHANNELS)
        .map(|c| {
            (0..n)
                .map(|i| {
                    let t = i as f64 / fs;
                    (5.0 * (2.0 * PI * 10.0 * t + c as f64).sin() + 8.0 * (2.0 * PI * 50.0 * t).sin() + 20.0) as f32
                })
                .collect()
        })
        .collect();
    let events = (0..5).map(|k| Event { sample: 1000 + k * 1200, label: (k % 4) as u8 }).collect();
    let raw = RawRecording::new(channels, fs, events)?;

    let clean = fir_filter(&fir_filter(&raw, FilterSpec::notch(50.0, 2.0))?, FilterSpec::bandpass(0.5, 40.0))?;
    let down = resample_rational(&clean, 64, 125)?;
    println!("{} samples at {} Hz -> {} samples at {} Hz", raw.len(), raw.fs, down.len(), down.fs);

    let epochs = extract_epochs(&down, 0.0)?;
    let norm = minmax_normalize(&epochs)?;
    println!("{} epochs of 22 x 512, normalized range {:?}", norm.n_trials(), norm.norm);
    Ok(())
}
