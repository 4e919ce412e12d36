//! Dataset ingestion, splits and a synthetic small-target generator.
//!
//! On disk a dataset is
//!
//! ```text
//! root/images/<id>.png   8-bit grayscale
//! root/masks/<id>.png    8-bit, nonzero = target
//! root/train.txt         one id per line
//! root/test.txt
//! ```
//!
//! Synthetic datasets are written in the same layout, so training code never
//! needs to know where its data came from.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::{GrayImage as Luma8, Luma};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::MaskImage;
use crate::preprocess::GrayImage;

/// One image with its ground-truth mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: GrayImage,
    pub mask: MaskImage,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetSpec {
    pub root: PathBuf,
    pub images_dir: String,
    pub masks_dir: String,
    pub ids: Vec<String>,
    /// `(height, width)` every sample is resized to.
    pub target_size: (usize, usize),
}

impl DatasetSpec {
    pub fn new(root: impl Into<PathBuf>, ids: Vec<String>, target_size: (usize, usize)) -> Self {
        Self {
            root: root.into(),
            images_dir: "images".into(),
            masks_dir: "masks".into(),
            ids,
            target_size,
        }
    }

    /// Reads ids from a split file (e.g. `train.txt`) under `root`.
    pub fn from_split_file(root: impl Into<PathBuf>, split: &str, target_size: (usize, usize)) -> Result<Self> {
        let root = root.into();
        let ids = read_split(&root.join(split))?;
        Ok(Self::new(root, ids, target_size))
    }

    /// NUAA-SIRST convention: 512×512.
    pub fn nuaa(root: impl Into<PathBuf>, split: &str) -> Result<Self> {
        Self::from_split_file(root, split, (512, 512))
    }

    /// NUDT-SIRST convention: 256×256.
    pub fn nudt(root: impl Into<PathBuf>, split: &str) -> Result<Self> {
        Self::from_split_file(root, split, (256, 256))
    }

    pub fn image_path(&self, id: &str) -> PathBuf {
        self.root.join(&self.images_dir).join(format!("{id}.png"))
    }

    pub fn mask_path(&self, id: &str) -> PathBuf {
        self.root.join(&self.masks_dir).join(format!("{id}.png"))
    }
}

pub fn read_split(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect())
}

fn read_luma(path: &Path) -> Result<Array2<f32>> {
    let img = image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_luma8();
    let (w, h) = img.dimensions();
    if w == 0 || h == 0 {
        return Err(Error::InvalidInput(format!("{}: empty image", path.display())));
    }
    Ok(Array2::from_shape_fn((h as usize, w as usize), |(y, x)| {
        img.get_pixel(x as u32, y as u32)[0] as f32 / 255.0
    }))
}

/// Bilinear resize with half-pixel centres and clamped edges.
pub fn resize_bilinear(a: &Array2<f32>, (h, w): (usize, usize)) -> Array2<f32> {
    let (ih, iw) = a.dim();
    if (ih, iw) == (h, w) {
        return a.clone();
    }
    let taps = |out: usize, inp: usize| -> Vec<(usize, usize, f32)> {
        (0..out)
            .map(|o| {
                let src = ((o as f64 + 0.5) * inp as f64 / out as f64 - 0.5).max(0.0);
                let i0 = (src.floor() as usize).min(inp - 1);
                let i1 = (i0 + 1).min(inp - 1);
                (i0, i1, (src - i0 as f64) as f32)
            })
            .collect()
    };
    let (ty, tx) = (taps(h, ih), taps(w, iw));
    Array2::from_shape_fn((h, w), |(y, x)| {
        let (y0, y1, fy) = ty[y];
        let (x0, x1, fx) = tx[x];
        let top = a[[y0, x0]] * (1.0 - fx) + a[[y0, x1]] * fx;
        let bot = a[[y1, x0]] * (1.0 - fx) + a[[y1, x1]] * fx;
        (top * (1.0 - fy) + bot * fy).clamp(0.0, 1.0)
    })
}

pub fn resize_nearest(a: &Array2<f32>, (h, w): (usize, usize)) -> Array2<f32> {
    let (ih, iw) = a.dim();
    Array2::from_shape_fn((h, w), |(y, x)| {
        let sy = ((y * ih) / h).min(ih - 1);
        let sx = ((x * iw) / w).min(iw - 1);
        a[[sy, sx]]
    })
}

pub fn load_sample(spec: &DatasetSpec, id: &str) -> Result<Sample> {
    let (ip, mp) = (spec.image_path(id), spec.mask_path(id));
    let img = read_luma(&ip)?;
    let mask = read_luma(&mp)?;
    if img.dim() != mask.dim() {
        return Err(Error::InvalidInput(format!(
            "{}: image is {:?} but mask {} is {:?}",
            ip.display(),
            img.dim(),
            mp.display(),
            mask.dim()
        )));
    }
    let img = resize_bilinear(&img, spec.target_size);
    let mask = resize_nearest(&mask, spec.target_size).mapv(|v| u8::from(v > 0.5));
    Ok(Sample {
        id: id.to_string(),
        image: GrayImage::new(img)?,
        mask: MaskImage::new(mask)?,
    })
}

/// Loads every id listed in `spec`, sorted by id.
pub fn load_dataset(spec: &DatasetSpec) -> Result<Vec<Sample>> {
    if spec.ids.is_empty() {
        return Err(Error::InvalidInput(format!("{}: empty split", spec.root.display())));
    }
    let (h, w) = spec.target_size;
    if h == 0 || w == 0 {
        return Err(Error::Config("target size must be non-zero".into()));
    }
    let mut ids = spec.ids.clone();
    ids.sort();
    ids.iter().map(|id| load_sample(spec, id)).collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SplitRatio {
    #[default]
    R1_1,
    R7_3,
}

impl SplitRatio {
    /// Training-set size for `n` ids.
    pub fn train_len(self, n: usize) -> usize {
        match self {
            SplitRatio::R1_1 => n.div_ceil(2),
            SplitRatio::R7_3 => (7 * n).div_ceil(10),
        }
    }
}

impl fmt::Display for SplitRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitRatio::R1_1 => "1:1",
            SplitRatio::R7_3 => "7:3",
        })
    }
}

impl FromStr for SplitRatio {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "1:1" | "r1_1" | "R1_1" => Ok(SplitRatio::R1_1),
            "7:3" | "r7_3" | "R7_3" => Ok(SplitRatio::R7_3),
            _ => Err(Error::Config(format!("unknown split ratio {s:?}; use 1:1 or 7:3"))),
        }
    }
}

/// Seeded shuffle, then the first `train_len` ids train.
pub fn split_dataset(ids: &[String], ratio: SplitRatio, seed: u64) -> Result<(Vec<String>, Vec<String>)> {
    if ids.len() < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 ids to split, got {}", ids.len())));
    }
    let mut shuffled = ids.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = shuffled.split_off(ratio.train_len(ids.len()));
    Ok((shuffled, test))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub n_images: usize,
    pub size: (usize, usize),
    /// Inclusive range.
    pub targets_per_image: (usize, usize),
    pub target_sigma: (f64, f64),
    pub amplitude: (f64, f64),
    /// Standard deviation (pixels) of the blur applied to the clutter noise.
    pub clutter_smoothness: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_images: 200,
            size: (64, 64),
            targets_per_image: (1, 3),
            target_sigma: (1.0, 2.5),
            amplitude: (0.35, 0.6),
            clutter_smoothness: 3.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.size;
        if h == 0 || w == 0 || h % 16 != 0 || w % 16 != 0 {
            return Err(Error::Config(format!("synthetic size {h}x{w} must be a non-zero multiple of 16")));
        }
        let ok = self.targets_per_image.0 <= self.targets_per_image.1
            && 0.0 < self.target_sigma.0
            && self.target_sigma.0 <= self.target_sigma.1
            && 0.0 <= self.amplitude.0
            && self.amplitude.0 <= self.amplitude.1
            && self.amplitude.1 <= 1.0
            && self.clutter_smoothness >= 0.0;
        if !ok {
            return Err(Error::Config(format!("invalid synthetic ranges: {self:?}")));
        }
        Ok(())
    }
}

fn sample_range<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..hi)
    }
}

fn gaussian_blur(a: &Array2<f64>, sigma: f64) -> Array2<f64> {
    if sigma == 0.0 {
        return a.clone();
    }
    let r = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f64 = kernel.iter().sum();
    let (h, w) = a.dim();
    let pass = |src: &Array2<f64>, vertical: bool| {
        Array2::from_shape_fn((h, w), |(y, x)| {
            kernel
                .iter()
                .enumerate()
                .map(|(i, k)| {
                    let d = i as isize - r;
                    let v = if vertical {
                        src[[(y as isize + d).clamp(0, h as isize - 1) as usize, x]]
                    } else {
                        src[[y, (x as isize + d).clamp(0, w as isize - 1) as usize]]
                    };
                    k * v
                })
                .sum::<f64>()
                / norm
        })
    };
    pass(&pass(a, false), true)
}

/// Clutter background in `[0, 0.4]` plus Gaussian targets. The mask marks
/// pixels where a blob alone exceeds half its peak.
pub fn synth_generate(cfg: &SynthConfig) -> Result<Vec<Sample>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (h, w) = cfg.size;
    (0..cfg.n_images)
        .map(|i| {
            let noise = Array2::from_shape_fn((h, w), |_| rng.gen::<f64>());
            let mut bg = gaussian_blur(&noise, cfg.clutter_smoothness);
            let lo = bg.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = bg.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            bg.mapv_inplace(|v| if hi > lo { 0.4 * (v - lo) / (hi - lo) } else { 0.2 });

            let n_targets = rng.gen_range(cfg.targets_per_image.0..=cfg.targets_per_image.1);
            let margin = 3.0 * cfg.target_sigma.1;
            let mut centres: Vec<(f64, f64)> = Vec::new();
            let mut img = bg;
            let mut mask = Array2::<u8>::zeros((h, w));
            for _ in 0..n_targets {
                let sigma = sample_range(&mut rng, cfg.target_sigma);
                let amp = sample_range(&mut rng, cfg.amplitude);
                // keep blobs apart so every target is its own component
                let mut centre = None;
                for _ in 0..100 {
                    let c = (
                        rng.gen_range(2.0..(h as f64 - 2.0)),
                        rng.gen_range(2.0..(w as f64 - 2.0)),
                    );
                    if centres.iter().all(|p| (p.0 - c.0).hypot(p.1 - c.1) > 2.0 * margin) {
                        centre = Some(c);
                        break;
                    }
                }
                let Some((cy, cx)) = centre else { continue };
                centres.push((cy, cx));
                let r2_half = 2.0 * sigma * sigma * std::f64::consts::LN_2;
                for ((y, x), v) in img.indexed_iter_mut() {
                    let r2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                    *v += amp * (-r2 / (2.0 * sigma * sigma)).exp();
                    if amp > 0.0 && r2 <= r2_half {
                        mask[[y, x]] = 1;
                    }
                }
            }
            Ok(Sample {
                id: format!("{i:05}"),
                image: GrayImage::new(img.mapv(|v| v.clamp(0.0, 1.0) as f32))?,
                mask: MaskImage::new(mask)?,
            })
        })
        .collect()
}

fn to_luma8(a: &Array2<f32>) -> Luma8 {
    let (h, w) = a.dim();
    Luma8::from_fn(w as u32, h as u32, |x, y| {
        Luma([(a[[y as usize, x as usize]].clamp(0.0, 1.0) * 255.0).round() as u8])
    })
}

pub fn save_gray_png(a: &Array2<f32>, path: &Path) -> Result<()> {
    to_luma8(a).save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

pub fn save_mask_png(m: &MaskImage, path: &Path) -> Result<()> {
    save_gray_png(&m.pixels().mapv(f32::from), path)
}

/// Writes samples plus `train.txt` / `test.txt` under `root`.
pub fn write_dataset(root: &Path, samples: &[Sample], train: &[String], test: &[String]) -> Result<()> {
    for sub in ["images", "masks"] {
        let dir = root.join(sub);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    for s in samples {
        save_gray_png(s.image.pixels(), &root.join("images").join(format!("{}.png", s.id)))?;
        save_mask_png(&s.mask, &root.join("masks").join(format!("{}.png", s.id)))?;
    }
    for (name, ids) in [("train.txt", train), ("test.txt", test)] {
        let path = root.join(name);
        let mut text = ids.join("\n");
        text.push('\n');
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::connected_components;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| i.to_string()).collect()
    }

    #[test]
    fn split_sizes() {
        let (tr, te) = split_dataset(&ids(10), SplitRatio::R1_1, 0).unwrap();
        assert_eq!((tr.len(), te.len()), (5, 5));
        let (tr, te) = split_dataset(&ids(10), SplitRatio::R7_3, 0).unwrap();
        assert_eq!((tr.len(), te.len()), (7, 3));
        assert_eq!(SplitRatio::R7_3.train_len(11), 8);
        assert_eq!(SplitRatio::R1_1.train_len(11), 6);
    }

    #[test]
    fn split_is_a_seeded_partition() {
        let all = ids(37);
        let (tr, te) = split_dataset(&all, SplitRatio::R7_3, 5).unwrap();
        assert_eq!(split_dataset(&all, SplitRatio::R7_3, 5).unwrap(), (tr.clone(), te.clone()));
        let mut joined: Vec<_> = tr.iter().chain(&te).cloned().collect();
        joined.sort();
        let mut sorted = all.clone();
        sorted.sort();
        assert_eq!(joined, sorted);
        assert!(split_dataset(&ids(1), SplitRatio::R1_1, 0).is_err());
    }

    #[test]
    fn no_targets_means_empty_masks() {
        let cfg = SynthConfig {
            n_images: 3,
            targets_per_image: (0, 0),
            ..Default::default()
        };
        for s in synth_generate(&cfg).unwrap() {
            assert_eq!(s.mask.count_positive(), 0);
            assert!(s.image.pixels().iter().all(|&v| (0.0..=0.4 + 1e-6).contains(&v)));
        }
    }

    #[test]
    fn synth_is_deterministic() {
        let cfg = SynthConfig {
            n_images: 4,
            ..Default::default()
        };
        assert_eq!(synth_generate(&cfg).unwrap(), synth_generate(&cfg).unwrap());
    }

    #[test]
    fn one_component_per_target() {
        let cfg = SynthConfig {
            n_images: 20,
            targets_per_image: (2, 2),
            ..Default::default()
        };
        for s in synth_generate(&cfg).unwrap() {
            assert_eq!(connected_components(&s.mask).len(), 2);
        }
    }

    #[test]
    fn unit_sigma_half_max_area() {
        let cfg = SynthConfig {
            n_images: 50,
            targets_per_image: (1, 1),
            target_sigma: (1.0, 1.0),
            ..Default::default()
        };
        for s in synth_generate(&cfg).unwrap() {
            let n = s.mask.count_positive();
            assert!((1..=9).contains(&n), "{n}");
        }
    }

    #[test]
    fn invalid_size_rejected() {
        let cfg = SynthConfig {
            size: (60, 64),
            ..Default::default()
        };
        assert!(synth_generate(&cfg).is_err());
    }

    #[test]
    fn nearest_resize_keeps_binary_values() {
        let a = Array2::from_shape_fn((5, 7), |(y, x)| ((y + x) % 2) as f32);
        let r = resize_nearest(&a, (16, 16));
        assert!(r.iter().all(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn bilinear_resize_identity_and_constant() {
        let a = Array2::from_elem((10, 12), 0.25f32);
        assert_eq!(resize_bilinear(&a, (32, 48)), Array2::from_elem((32, 48), 0.25));
        let b = Array2::from_shape_fn((4, 4), |(y, x)| (y * 4 + x) as f32 / 16.0);
        assert_eq!(resize_bilinear(&b, (4, 4)), b);
    }

    #[test]
    fn round_trip_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let samples = synth_generate(&SynthConfig {
            n_images: 4,
            size: (32, 32),
            ..Default::default()
        })
        .unwrap();
        let all: Vec<_> = samples.iter().map(|s| s.id.clone()).collect();
        let (tr, te) = split_dataset(&all, SplitRatio::R1_1, 1).unwrap();
        write_dataset(dir.path(), &samples, &tr, &te).unwrap();
        let spec = DatasetSpec::from_split_file(dir.path(), "train.txt", (32, 32)).unwrap();
        let a = load_dataset(&spec).unwrap();
        let b = load_dataset(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 2);
        let orig = samples.iter().find(|s| s.id == a[0].id).unwrap();
        assert_eq!(a[0].mask, orig.mask);
        let err = orig.image.pixels().iter().zip(a[0].image.pixels()).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max);
        assert!(err <= 0.5 / 255.0 + 1e-6);
    }

    #[test]
    fn missing_file_is_descriptive() {
        let dir = tempfile::tempdir().unwrap();
        let spec = DatasetSpec::new(dir.path(), vec!["x".into()], (16, 16));
        let err = load_dataset(&spec).unwrap_err().to_string();
        assert!(err.contains("x.png"), "{err}");
    }
}
