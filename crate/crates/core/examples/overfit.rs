//! Overfits the default network on one synthetic 64×64 image.
//!
//! ```text
//! cargo run --release --example overfit -- [steps] [lr]
//! ```

use std::time::Instant;

use gglnet::data::{synth_generate, SynthConfig};
use gglnet::model::{GglNet, ModelConfig};
use gglnet::optim::{Adam, AdamConfig};
use gglnet::train::{train_step, PreparedSet};

fn main() -> gglnet::error::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps: usize = args.next().map_or(200, |s| s.parse().expect("steps"));
    let lr: f64 = args.next().map_or(1e-3, |s| s.parse().expect("lr"));

    let samples = synth_generate(&SynthConfig { n_images: 1, seed: 7, ..Default::default() })?;
    let set = PreparedSet::new(&samples)?;
    let (net, mut store) = GglNet::init::<f32>(ModelConfig::default(), 0)?;
    println!("{} trainable parameters", store.num_parameters());

    let mut adam = Adam::new(AdamConfig { lr, ..Default::default() });
    let (input, target) = set.batch::<f32>(&[0])?;
    let start = Instant::now();
    for step in 1..=steps {
        let loss = train_step(&net, &mut store, &mut adam, &input, &target)?;
        if step % 20 == 0 || step == 1 {
            println!("step {step:4}  loss {loss:.4}  {:.1}s", start.elapsed().as_secs_f64());
        }
    }
    Ok(())
}
