//! Builds every ablation variant and runs one forward pass on a 64×64 frame.
//!
//! ```text
//! cargo run --release --example variants
//! ```

use gglnet::data::{synth_generate, SynthConfig};
use gglnet::model::{all_variants, describe, GglNet, ModelConfig, ModelInput};

fn main() -> gglnet::error::Result<()> {
    let sample = synth_generate(&SynthConfig { n_images: 1, ..Default::default() })?.remove(0);
    let input = ModelInput::<f32>::from_images(&[sample.image])?;
    println!("{:<28} {:>10}  {:<14}  description", "scheme", "params", "output");
    for v in all_variants() {
        let (net, store) = GglNet::init::<f32>(ModelConfig::new(v.config), 0)?;
        let p = net.predict(&store, &input)?;
        println!(
            "{:<28} {:>10}  {:<14}  {}",
            v.scheme,
            store.num_parameters(),
            format!("{:?}", p.shape()),
            describe(&v.config)
        );
    }
    Ok(())
}
