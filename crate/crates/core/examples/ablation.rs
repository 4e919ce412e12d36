//! Runs the full 13-variant ablation on a tiny synthetic set and prints the
//! resulting table. Budget is deliberately small; use the CLI for real runs.
//!
//! ```text
//! cargo run --release --example ablation -- [out_dir] [epochs]
//! ```

use std::path::PathBuf;

use gglnet::cli::cmd_ablate;
use gglnet::config::RunConfig;
use gglnet::data::SynthConfig;

fn main() -> gglnet::error::Result<()> {
    let mut args = std::env::args().skip(1);
    let mut cfg = RunConfig::default();
    cfg.out = PathBuf::from(args.next().unwrap_or_else(|| "runs/ablation".into()));
    cfg.epochs = args.next().map_or(2, |s| s.parse().expect("epochs"));
    cfg.synth = SynthConfig { n_images: 16, size: (32, 32), ..Default::default() };
    cfg.channels = vec![8, 16, 16, 32, 32];

    for row in cmd_ablate(&cfg)? {
        println!(
            "{:<28} {:>8} params  IoU {:.4}  nIoU {:.4}",
            row.variant.scheme, row.parameters, row.metrics.iou, row.metrics.niou
        );
    }
    println!("tables in {}", cfg.out.display());
    Ok(())
}
