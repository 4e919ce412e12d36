//! Gradient magnitude and the max-pooled pyramid for one synthetic frame.
//!
//! ```text
//! cargo run --release --example gradient -- [out_dir]
//! ```

use std::path::PathBuf;

use gglnet::data::{save_gray_png, synth_generate, SynthConfig};
use gglnet::preprocess::{build_pyramid, gradient_magnitude, GrayImage, PYRAMID_LEVELS};

fn main() -> gglnet::error::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "runs/gradient".into()));
    std::fs::create_dir_all(&out).expect("create output dir");

    let sample = synth_generate(&SynthConfig { n_images: 1, ..Default::default() })?.remove(0);
    let grad = gradient_magnitude(&sample.image)?;
    save_gray_png(sample.image.pixels(), &out.join("image.png"))?;
    save_gray_png(grad.pixels(), &out.join("gradient.png"))?;

    let pyramid = build_pyramid(grad.pixels().view(), PYRAMID_LEVELS)?;
    for (k, level) in pyramid.levels().iter().enumerate() {
        let max = level.iter().cloned().fold(0.0f32, f32::max);
        println!("level {} {:?} max {max:.3}", k + 1, level.dim());
        save_gray_png(level, &out.join(format!("pyramid{}.png", k + 1)))?;
    }

    let flat = GrayImage::new(ndarray::Array2::from_elem((16, 16), 0.5))?;
    let g = gradient_magnitude(&flat)?;
    println!("constant frame -> max gradient {}", g.pixels().iter().cloned().fold(0.0f32, f32::max));
    println!("wrote {}", out.display());
    Ok(())
}
