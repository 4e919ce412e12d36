//! Trains the default network on 200 synthetic 64×64 images (160 train,
//! 40 test) and prints per-epoch test metrics.
//!
//! ```text
//! cargo run --release --example toy_train -- [epochs] [lr]
//! ```

use std::time::Instant;

use gglnet::data::{synth_generate, SynthConfig};
use gglnet::model::{GglNet, ModelConfig};
use gglnet::train::{PreparedSet, TrainConfig, Trainer};

fn main() -> gglnet::error::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs: usize = args.next().map_or(50, |s| s.parse().expect("epochs"));
    let lr: f64 = args.next().map_or(1e-4, |s| s.parse().expect("lr"));

    let samples = synth_generate(&SynthConfig::default())?;
    let (train, test) = samples.split_at(160);
    let (train, test) = (PreparedSet::new(train)?, PreparedSet::new(test)?);

    let (net, store) = GglNet::init::<f32>(ModelConfig::default(), 0)?;
    let config = TrainConfig { epochs, lr, ..Default::default() };
    let mut trainer = Trainer::new(net, store, config);
    let start = Instant::now();
    let report = trainer.fit(&train, &test, |log, best, _| {
        let m = &log.metrics;
        println!(
            "epoch {:3}  loss {:.4}  IoU {:.4}  nIoU {:.4}  Pd {:.4}  Fa {:.2e}{}  {:.0}s",
            log.epoch,
            log.loss,
            m.iou,
            m.niou,
            m.pd,
            m.fa,
            if best { " *" } else { "" },
            start.elapsed().as_secs_f64()
        );
        Ok(())
    })?;
    println!("best nIoU at epoch {}", report.best_epoch);
    Ok(())
}
