//! IoU, nIoU, Pd and Fa on hand-made masks.
//!
//! ```text
//! cargo run --release --example metrics
//! ```

use gglnet::metrics::{connected_components, evaluate, DEFAULT_MATCH_DIST};
use gglnet::model::MaskImage;
use ndarray::Array2;

fn blob(h: usize, w: usize, centres: &[(usize, usize)]) -> MaskImage {
    let px = Array2::from_shape_fn((h, w), |(y, x)| {
        u8::from(centres.iter().any(|&(cy, cx)| y.abs_diff(cy) <= 1 && x.abs_diff(cx) <= 1))
    });
    MaskImage::new(px).unwrap()
}

fn main() -> gglnet::error::Result<()> {
    let gt = vec![blob(32, 32, &[(8, 8), (20, 24)]), blob(32, 32, &[(16, 16)])];
    // first image: one target found one pixel off, one missed, one false alarm
    let pred = vec![blob(32, 32, &[(9, 8), (2, 28)]), blob(32, 32, &[(16, 16)])];

    for (k, m) in gt.iter().enumerate() {
        let c = connected_components(m);
        let centroids: Vec<_> = c.iter().map(|c| c.centroid).collect();
        println!("image {k}: {} targets at {centroids:?}", c.len());
    }
    let report = evaluate(&pred, &gt, DEFAULT_MATCH_DIST)?;
    println!("{report}");
    println!("{}\n{}", gglnet::metrics::MetricsReport::CSV_HEADER, report.csv_row("example"));
    Ok(())
}
