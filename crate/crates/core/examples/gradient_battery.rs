//! Finite-difference checks of every layer primitive and of the full loss on a tiny model.

use veegnet::model::{model_init, ModelConfig, Variant};
use veegnet::tensor::battery::layer_battery;
use veegnet::training::end_to_end_grad_check;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for e in layer_battery(1, 1e-3)? {
        println!("{:<5} {:<36} {:.2e}", if e.report.passed() { "ok" } else { "FAIL" }, e.name, e.report.worst_rel_error());
    }
    let model = model_init(&ModelConfig::tiny(Variant::V2), 3)?;
    let r = end_to_end_grad_check(&model, 4, 0.01, 32, 1e-2, 5)?;
    println!("l_total wrt {} parameters: worst relative error {:.2e}", r.inputs.iter().map(|i| i.checked).sum::<usize>(), r.worst_rel_error());
    Ok(())
}
