//! Band fidelity of a reconstruction, a subject-wise MSE table, and a CSV export.

use veegnet::metrics::{band_fidelity, export_reconstruction, reconstruction_mse_table};
use veegnet::model::{model_init, ModelConfig};
use veegnet::signal::{minmax_normalize, synth_generate, SynthConfig};
use veegnet::training::{evaluate, EvalOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let x: Vec<f32> = (0..512).map(|i| (i as f32 * 0.1).sin() + (i as f32 * 0.5).sin()).collect();
    let slow_only: Vec<f32> = (0..512).map(|i| (i as f32 * 0.1).sin()).collect();
    for band in [(0.5, 4.0), (5.0, 20.0)] {
        let f = band_fidelity(&x, &slow_only, band)?;
        println!("band {band:?}: r {:.3}, energy ratio {:.3}", f.pearson_r, f.energy_ratio);
    }

    let data = minmax_normalize(&synth_generate(&SynthConfig { trials_per_class: 2, ..Default::default() })?)?;
    let mut model = model_init(&ModelConfig::v2(), 4)?;
    let report = evaluate(&mut model, &data, &EvalOptions::default())?;
    let halves = vec![
        ("S1".to_string(), report.per_trial_mse[..4].to_vec()),
        ("S2".to_string(), report.per_trial_mse[4..].to_vec()),
    ];
    print!("{}", reconstruction_mse_table(&halves)?.to_text());

    let path = std::env::temp_dir().join("veegnet-reconstruction.csv");
    export_reconstruction(&mut model, &data, 1, &["C3", "FCavg"], &path, 0)?;
    println!("wrote {}", path.display());
    Ok(())
}
