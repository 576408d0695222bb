//! Trainable parameter counts per part for both variants.

use veegnet::model::{count_parameters, Layout, ModelConfig, Variant};

fn main() {
    for v in [Variant::V1, Variant::V2] {
        let cfg = ModelConfig::for_variant(v);
        let c = count_parameters(&cfg);
        println!(
            "{v}: encoder {} decoder {} classifier {} total {}",
            c.encoder, c.decoder, c.classifier, c.total
        );
        for p in Layout::new(&cfg).params.iter().filter(|p| p.name.starts_with("clf")) {
            println!("  {:<20} {:?}", p.name, p.shape);
        }
    }
}
