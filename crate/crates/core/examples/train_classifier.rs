//! Trains vEEGNet1 for a few epochs on synthetic data and reports test accuracy.
//!
//! `cargo run --release --example train_classifier -- 40` for a longer run.

use veegnet::model::{model_init, ModelConfig};
use veegnet::signal::{synth_generate, SynthConfig};
use veegnet::training::{evaluate, train, EvalOptions, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let epochs = std::env::args().nth(1).map_or(Ok(3), |s| s.parse())?;
    let train_set = synth_generate(&SynthConfig { trials_per_class: 12, seed: 1, ..Default::default() })?;
    let test_set = synth_generate(&SynthConfig { trials_per_class: 6, seed: 2, ..Default::default() })?;

    let mut model = model_init(&ModelConfig::v1(), 0)?;
    let cfg = TrainConfig { epochs, seed: 3, ..Default::default() };
    train(&mut model, &train_set, &cfg, |e| {
        println!("epoch {:>3}: l_r {:.3} l_kl {:.3} l_clf {:.3}", e.epoch, e.l_r, e.l_kl, e.l_clf)
    })?;
    let report = evaluate(&mut model, &test_set, &EvalOptions::default())?;
    println!("test accuracy {:.3}, kappa {:?}", report.accuracy, report.kappa);
    Ok(())
}
