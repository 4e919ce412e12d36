//! Pixel-level (IoU, nIoU), target-level (Pd, Fa) and threshold-sweep
//! evaluation.
//!
//! All counts are integers, so results are exact and independent of image
//! order apart from the final divisions.

use std::collections::VecDeque;
use std::io::Write;

use crate::error::{Error, Result};
use crate::model::{MaskImage, ScoreMap};

/// Default threshold turning score maps into masks.
pub const DEFAULT_THRESHOLD: f32 = 0.5;
/// Default centroid distance (pixels) for a detection to count.
pub const DEFAULT_MATCH_DIST: f64 = 3.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PixelCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl PixelCounts {
    pub fn union(&self) -> u64 {
        self.tp + self.fp + self.fn_
    }

    fn add(&mut self, o: PixelCounts) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.tn += o.tn;
    }
}

pub fn pixel_counts(pred: &MaskImage, gt: &MaskImage) -> Result<PixelCounts> {
    if pred.dim() != gt.dim() {
        return Err(Error::Shape(format!(
            "prediction {:?} vs ground truth {:?}",
            pred.dim(),
            gt.dim()
        )));
    }
    let mut c = PixelCounts::default();
    for (&p, &g) in pred.pixels().iter().zip(gt.pixels()) {
        match (p, g) {
            (1, 1) => c.tp += 1,
            (1, _) => c.fp += 1,
            (_, 1) => c.fn_ += 1,
            _ => c.tn += 1,
        }
    }
    Ok(c)
}

fn per_image_counts(preds: &[MaskImage], gts: &[MaskImage]) -> Result<Vec<PixelCounts>> {
    if preds.len() != gts.len() {
        return Err(Error::InvalidInput(format!(
            "{} predictions for {} ground truths",
            preds.len(),
            gts.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::InvalidInput("empty dataset".into()));
    }
    preds.iter().zip(gts).map(|(p, g)| pixel_counts(p, g)).collect()
}

fn ratio(c: &PixelCounts) -> f64 {
    match c.union() {
        0 => 1.0,
        u => c.tp as f64 / u as f64,
    }
}

/// Dataset-accumulated `ΣTP / Σ(TP+FP+FN)`. A dataset with no positive
/// pixels anywhere scores 1.
pub fn iou(preds: &[MaskImage], gts: &[MaskImage]) -> Result<f64> {
    let mut total = PixelCounts::default();
    for c in per_image_counts(preds, gts)? {
        total.add(c);
    }
    Ok(ratio(&total))
}

/// Mean of per-image IoU; an image with empty prediction and empty ground
/// truth contributes 1.
pub fn niou(preds: &[MaskImage], gts: &[MaskImage]) -> Result<f64> {
    let counts = per_image_counts(preds, gts)?;
    let empty = counts.iter().filter(|c| c.union() == 0).count();
    if empty > 0 {
        log::debug!("{empty} image(s) with empty prediction and ground truth count as 1.0");
    }
    Ok(counts.iter().map(ratio).sum::<f64>() / counts.len() as f64)
}

/// An 8-connected group of positive pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct Component {
    pub pixels: Vec<(usize, usize)>,
    /// `(row, col)` mean of the member pixels.
    pub centroid: (f64, f64),
}

impl Component {
    pub fn size(&self) -> usize {
        self.pixels.len()
    }
}

/// Components in raster order of their first pixel.
pub fn connected_components(mask: &MaskImage) -> Vec<Component> {
    let px = mask.pixels();
    let (h, w) = px.dim();
    let mut seen = vec![false; h * w];
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    for y0 in 0..h {
        for x0 in 0..w {
            if px[[y0, x0]] != 1 || seen[y0 * w + x0] {
                continue;
            }
            seen[y0 * w + x0] = true;
            queue.push_back((y0, x0));
            let mut pixels = Vec::new();
            while let Some((y, x)) = queue.pop_front() {
                pixels.push((y, x));
                for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                    for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                        if px[[ny, nx]] == 1 && !seen[ny * w + nx] {
                            seen[ny * w + nx] = true;
                            queue.push_back((ny, nx));
                        }
                    }
                }
            }
            let n = pixels.len() as f64;
            let (sy, sx) = pixels
                .iter()
                .fold((0usize, 0usize), |(a, b), &(y, x)| (a + y, b + x));
            out.push(Component {
                centroid: (sy as f64 / n, sx as f64 / n),
                pixels,
            });
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PdFa {
    pub pd: f64,
    pub fa: f64,
    pub n_targets: usize,
    pub detected: usize,
    pub false_pixels: u64,
    pub total_pixels: u64,
}

/// Greedy nearest-first matching of prediction components to targets in
/// one image. Returns `(detected targets, pixels in unmatched predictions)`.
pub fn match_targets(pred: &[Component], gt: &[Component], match_dist: f64) -> (usize, u64) {
    let mut pairs = Vec::new();
    for (i, g) in gt.iter().enumerate() {
        for (j, p) in pred.iter().enumerate() {
            let d = (g.centroid.0 - p.centroid.0).hypot(g.centroid.1 - p.centroid.1);
            if d <= match_dist {
                pairs.push((d, i, j));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut gt_used = vec![false; gt.len()];
    let mut pred_used = vec![false; pred.len()];
    let mut detected = 0;
    for (_, i, j) in pairs {
        if !gt_used[i] && !pred_used[j] {
            gt_used[i] = true;
            pred_used[j] = true;
            detected += 1;
        }
    }
    let false_pixels = pred
        .iter()
        .zip(&pred_used)
        .filter(|(_, &used)| !used)
        .map(|(c, _)| c.size() as u64)
        .sum();
    (detected, false_pixels)
}

/// Target-level detection probability and per-pixel false-alarm rate.
pub fn pd_fa(preds: &[MaskImage], gts: &[MaskImage], match_dist: f64) -> Result<PdFa> {
    per_image_counts(preds, gts)?;
    let (mut n_targets, mut detected, mut false_pixels, mut total_pixels) = (0, 0, 0u64, 0u64);
    for (p, g) in preds.iter().zip(gts) {
        let gc = connected_components(g);
        let pc = connected_components(p);
        let (d, f) = match_targets(&pc, &gc, match_dist);
        n_targets += gc.len();
        detected += d;
        false_pixels += f;
        total_pixels += (g.dim().0 * g.dim().1) as u64;
    }
    if n_targets == 0 {
        return Err(Error::Undefined("Pd is undefined without ground-truth targets".into()));
    }
    Ok(PdFa {
        pd: detected as f64 / n_targets as f64,
        fa: false_pixels as f64 / total_pixels as f64,
        n_targets,
        detected,
        false_pixels,
        total_pixels,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub iou: f64,
    pub niou: f64,
    pub pd: f64,
    pub fa: f64,
    pub n_images: usize,
    pub n_targets: usize,
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str = "variant,iou,niou,pd,fa";

    pub fn csv_row(&self, variant: &str) -> String {
        format!(
            "{},{:.6},{:.6},{:.6},{:.9}",
            csv_field(variant),
            self.iou,
            self.niou,
            self.pd,
            self.fa
        )
    }
}

impl std::fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "images   {}", self.n_images)?;
        writeln!(f, "targets  {}", self.n_targets)?;
        writeln!(f, "IoU      {:.4}", self.iou)?;
        writeln!(f, "nIoU     {:.4}", self.niou)?;
        writeln!(f, "Pd       {:.4}", self.pd)?;
        write!(f, "Fa       {:.3e}", self.fa)
    }
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn evaluate(preds: &[MaskImage], gts: &[MaskImage], match_dist: f64) -> Result<MetricsReport> {
    let t = pd_fa(preds, gts, match_dist)?;
    Ok(MetricsReport {
        iou: iou(preds, gts)?,
        niou: niou(preds, gts)?,
        pd: t.pd,
        fa: t.fa,
        n_images: preds.len(),
        n_targets: t.n_targets,
    })
}

pub fn evaluate_scores(scores: &[ScoreMap], gts: &[MaskImage], threshold: f32, match_dist: f64) -> Result<MetricsReport> {
    let preds: Vec<_> = scores.iter().map(|s| s.binarize(threshold)).collect();
    evaluate(&preds, gts, match_dist)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RocPoint {
    pub tau: f64,
    pub tp: u64,
    pub fp: u64,
    pub tpr: f64,
    pub fpr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RocCurve {
    pub step: f64,
    pub positives: u64,
    pub negatives: u64,
    pub points: Vec<RocPoint>,
}

/// The three 2-D views of the `(τ, TPR, FPR)` curve.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Projection {
    TprFpr,
    TprTau,
    FprTau,
}

impl Projection {
    pub const ALL: [Projection; 3] = [Projection::TprFpr, Projection::TprTau, Projection::FprTau];

    pub fn name(self) -> &'static str {
        match self {
            Projection::TprFpr => "tpr_fpr",
            Projection::TprTau => "tpr_tau",
            Projection::FprTau => "fpr_tau",
        }
    }

    /// Column names `(x, y)`.
    pub fn axes(self) -> (&'static str, &'static str) {
        match self {
            Projection::TprFpr => ("fpr", "tpr"),
            Projection::TprTau => ("tau", "tpr"),
            Projection::FprTau => ("tau", "fpr"),
        }
    }

    pub fn xy(self, p: &RocPoint) -> (f64, f64) {
        match self {
            Projection::TprFpr => (p.fpr, p.tpr),
            Projection::TprTau => (p.tau, p.tpr),
            Projection::FprTau => (p.tau, p.fpr),
        }
    }
}

impl RocCurve {
    pub fn is_monotone(&self) -> bool {
        self.points.windows(2).all(|w| {
            w[0].tau < w[1].tau && w[1].tpr <= w[0].tpr && w[1].fpr <= w[0].fpr
        })
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "# step={}", self.step)?;
        writeln!(w, "tau,tpr,fpr")?;
        for p in &self.points {
            writeln!(w, "{},{},{}", p.tau, p.tpr, p.fpr)?;
        }
        Ok(())
    }

    pub fn write_projection_csv<W: Write>(&self, mut w: W, proj: Projection) -> std::io::Result<()> {
        let (xn, yn) = proj.axes();
        writeln!(w, "# step={}", self.step)?;
        writeln!(w, "{xn},{yn}")?;
        for p in &self.points {
            let (x, y) = proj.xy(p);
            writeln!(w, "{x},{y}")?;
        }
        Ok(())
    }
}

/// Threshold grid `k / K` for `k = 0..=K`, `K = round(1 / step)`.
pub fn roc_thresholds(step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::Config(format!("ROC step must be in (0, 1], got {step}")));
    }
    let k = (1.0 / step).round();
    if ((k * step) - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("ROC step {step} does not divide 1")));
    }
    let k = k as usize;
    Ok((0..=k).map(|i| i as f64 / k as f64).collect())
}

/// Pixel-level TPR/FPR at every threshold, binarizing at `score > τ`.
///
/// Each pixel is placed in a histogram bin by the number of thresholds
/// below its score; suffix sums then give exact counts for every τ in
/// `O(pixels · log K + K)`.
pub fn roc_sweep(scores: &[ScoreMap], gts: &[MaskImage], step: f64) -> Result<RocCurve> {
    if scores.len() != gts.len() || scores.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{} score maps for {} ground truths",
            scores.len(),
            gts.len()
        )));
    }
    let taus = roc_thresholds(step)?;
    let mut pos_hist = vec![0u64; taus.len() + 1];
    let mut neg_hist = vec![0u64; taus.len() + 1];
    for (s, g) in scores.iter().zip(gts) {
        if s.dim() != g.dim() {
            return Err(Error::Shape(format!("scores {:?} vs mask {:?}", s.dim(), g.dim())));
        }
        for (&v, &m) in s.scores().iter().zip(g.pixels()) {
            let v = v as f64;
            let above = taus.partition_point(|&t| t < v);
            if m == 1 {
                pos_hist[above] += 1;
            } else {
                neg_hist[above] += 1;
            }
        }
    }
    let positives: u64 = pos_hist.iter().sum();
    let negatives: u64 = neg_hist.iter().sum();
    if positives == 0 {
        return Err(Error::Undefined("TPR is undefined without positive pixels".into()));
    }
    // a pixel in bin j is positive for thresholds 0..j
    let mut points = vec![];
    let (mut tp, mut fp) = (positives - pos_hist[0], negatives - neg_hist[0]);
    for (k, &tau) in taus.iter().enumerate() {
        points.push(RocPoint {
            tau,
            tp,
            fp,
            tpr: tp as f64 / positives as f64,
            fpr: if negatives == 0 { 0.0 } else { fp as f64 / negatives as f64 },
        });
        tp -= pos_hist[k + 1];
        fp -= neg_hist[k + 1];
    }
    Ok(RocCurve {
        step,
        positives,
        negatives,
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    fn mask(a: Array2<u8>) -> MaskImage {
        MaskImage::new(a).unwrap()
    }

    #[test]
    fn iou_partial_overlap() {
        let gt = mask(array![[1, 1], [1, 1], [0, 0]]);
        let pred = mask(array![[1, 1], [0, 0], [1, 0]]);
        assert_eq!(iou(&[pred], &[gt]).unwrap(), 0.4);
    }

    #[test]
    fn iou_identity_and_disjoint() {
        let a = mask(array![[1, 0], [0, 0]]);
        let b = mask(array![[0, 0], [0, 1]]);
        assert_eq!(iou(&[a.clone()], &[a.clone()]).unwrap(), 1.0);
        assert_eq!(iou(&[a.clone()], &[b.clone()]).unwrap(), 0.0);
        assert_eq!(niou(&[a.clone(), a.clone()], &[a, b]).unwrap(), 0.5);
    }

    #[test]
    fn empty_dataset_is_an_error() {
        assert!(iou(&[], &[]).is_err());
        assert!(niou(&[], &[]).is_err());
    }

    #[test]
    fn empty_pair_counts_as_one() {
        let z = MaskImage::zeros(3, 3);
        assert_eq!(niou(&[z.clone()], &[z]).unwrap(), 1.0);
    }

    #[test]
    fn components_use_eight_connectivity() {
        let m = mask(array![[1, 0, 0], [0, 1, 0], [0, 0, 0], [1, 1, 0]]);
        let c = connected_components(&m);
        assert_eq!(c.len(), 2);
        assert_eq!(c[0].centroid, (0.5, 0.5));
        assert_eq!(c[1].size(), 2);
    }

    #[test]
    fn pd_fa_spurious_blob() {
        let mut gt = Array2::zeros((256, 256));
        gt[[20, 20]] = 1;
        gt[[200, 200]] = 1;
        let mut pred = Array2::zeros((256, 256));
        pred[[21, 20]] = 1;
        for x in 100..103 {
            pred[[100, x]] = 1;
        }
        let r = pd_fa(&[mask(pred)], &[mask(gt)], DEFAULT_MATCH_DIST).unwrap();
        assert_eq!(r.pd, 0.5);
        assert_eq!(r.fa, 3.0 / 65536.0);
    }

    #[test]
    fn pd_undefined_without_targets() {
        let z = MaskImage::zeros(4, 4);
        assert!(matches!(pd_fa(&[z.clone()], &[z], 3.0), Err(Error::Undefined(_))));
    }

    #[test]
    fn one_prediction_matches_one_target() {
        let gt = mask(array![[1, 0, 1]]);
        let pred = mask(array![[0, 1, 0]]);
        let r = pd_fa(&[pred], &[gt], 3.0).unwrap();
        assert_eq!((r.detected, r.false_pixels), (1, 0));
    }

    #[test]
    fn quarter_step_has_five_thresholds() {
        assert_eq!(roc_thresholds(0.25).unwrap(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert!(roc_thresholds(0.3).is_err());
        assert!(roc_thresholds(0.0).is_err());
    }

    #[test]
    fn separable_scores() {
        let gt = mask(array![[1, 0], [0, 0]]);
        let s = ScoreMap::new(array![[1.0, 0.0], [0.0, 0.0]]).unwrap();
        let c = roc_sweep(&[s], &[gt], 0.25).unwrap();
        assert!(c.is_monotone());
        assert_eq!((c.points[0].tpr, c.points[0].fpr), (1.0, 0.0));
        for p in &c.points[1..4] {
            assert_eq!((p.tpr, p.fpr), (1.0, 0.0));
        }
        assert_eq!(c.points[4].tpr, 0.0);
    }

    #[test]
    fn tau_zero_takes_every_nonzero_pixel() {
        let gt = mask(array![[1, 0], [0, 1]]);
        let s = ScoreMap::new(array![[0.3, 0.1], [0.9, 0.2]]).unwrap();
        let c = roc_sweep(&[s], &[gt], 0.5).unwrap();
        assert_eq!((c.points[0].tpr, c.points[0].fpr), (1.0, 1.0));
        assert_eq!((c.points[1].tp, c.points[1].fp), (0, 1));
    }

    #[test]
    fn roc_needs_positives() {
        let s = ScoreMap::new(Array2::from_elem((2, 2), 0.5)).unwrap();
        assert!(roc_sweep(&[s], &[MaskImage::zeros(2, 2)], 0.1).is_err());
    }

    #[test]
    fn csv_header_comment() {
        let gt = mask(array![[1, 0]]);
        let s = ScoreMap::new(array![[0.8, 0.2]]).unwrap();
        let c = roc_sweep(&[s], &[gt], 0.5).unwrap();
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("# step=0.5\ntau,tpr,fpr\n0,1,1\n"));
    }
}
