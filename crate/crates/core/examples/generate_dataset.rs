//! Generates a small synthetic motor-imagery dataset, writes it, and reads it back.

use veegnet::signal::{dataset_read, dataset_write, minmax_normalize, synth_generate, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = SynthConfig {
        trials_per_class: 5,
        seed: 7,
        ..Default::default()
    };
    let data = synth_generate(&cfg)?;
    println!("{} trials, labels {:?}", data.n_trials(), data.labels);

    let norm = minmax_normalize(&data)?;
    let (lo, hi) = norm.norm.expect("normalized");
    println!("global range before normalization: [{lo:.3}, {hi:.3}] uV");

    let dir = std::env::temp_dir().join("veegnet-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("synthetic.veeg");
    dataset_write(&norm, &path)?;
    let back = dataset_read(&path)?;
    assert_eq!(back, norm);
    println!("round trip through {} is exact", path.display());
    Ok(())
}
