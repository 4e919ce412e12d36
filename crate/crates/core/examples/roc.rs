//! Threshold sweep on synthetic score maps: writes the 3D ROC table and its
//! three projections as CSV and PNG.
//!
//! ```text
//! cargo run --release --example roc -- [out_dir] [step]
//! ```

use std::fs::File;
use std::path::PathBuf;

use gglnet::data::{synth_generate, SynthConfig};
use gglnet::metrics::{roc_sweep, Projection};
use gglnet::model::ScoreMap;
use gglnet::plot::save_projection;

fn main() -> gglnet::error::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "runs/roc".into()));
    let step: f64 = args.next().map_or(0.01, |s| s.parse().expect("step"));
    std::fs::create_dir_all(&out).expect("create output dir");

    // a noisy detector: targets score high, clutter follows image intensity
    let samples = synth_generate(&SynthConfig { n_images: 10, ..Default::default() })?;
    let scores: Vec<_> = samples
        .iter()
        .map(|s| {
            let px = ndarray::Zip::from(s.image.pixels())
                .and(s.mask.pixels())
                .map_collect(|&v, &m| (0.5 * v + 0.45 * f32::from(m)).clamp(0.0, 1.0));
            ScoreMap::new(px)
        })
        .collect::<gglnet::error::Result<_>>()?;
    let masks: Vec<_> = samples.into_iter().map(|s| s.mask).collect();

    let curve = roc_sweep(&scores, &masks, step)?;
    curve.write_csv(File::create(out.join("roc.csv")).expect("create roc.csv")).expect("write roc.csv");
    for proj in [Projection::TprFpr, Projection::TprTau, Projection::FprTau] {
        let f = File::create(out.join(format!("roc_{}.csv", proj.name()))).expect("create csv");
        curve.write_projection_csv(f, proj).expect("write csv");
        save_projection(&curve, proj, &out.join(format!("roc_{}.png", proj.name())))?;
    }
    for p in curve.points.iter().step_by(curve.points.len() / 10) {
        println!("tau {:.2}  tpr {:.4}  fpr {:.5}", p.tau, p.tpr, p.fpr);
    }
    println!("monotone: {}; wrote {}", curve.is_monotone(), out.display());
    Ok(())
}
