//! Writes a small synthetic dataset (images, masks, split files) to disk
//! and loads it back.
//!
//! ```text
//! cargo run --release --example synth -- [out_dir] [n_images]
//! ```

use std::path::PathBuf;

use gglnet::data::{load_dataset, split_dataset, synth_generate, write_dataset, DatasetSpec, SplitRatio, SynthConfig};

fn main() -> gglnet::error::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "runs/synth".into()));
    let n: usize = args.next().map_or(20, |s| s.parse().expect("n_images"));

    let cfg = SynthConfig { n_images: n, ..Default::default() };
    let samples = synth_generate(&cfg)?;
    let ids: Vec<_> = samples.iter().map(|s| s.id.clone()).collect();
    let (train, test) = split_dataset(&ids, SplitRatio::R7_3, 0)?;
    write_dataset(&out, &samples, &train, &test)?;
    println!("{} images: {} train, {} test", samples.len(), train.len(), test.len());

    let loaded = load_dataset(&DatasetSpec::from_split_file(&out, "test.txt", cfg.size)?)?;
    for s in loaded.iter().take(5) {
        println!("{}  {} target pixels", s.id, s.mask.count_positive());
    }
    Ok(())
}
