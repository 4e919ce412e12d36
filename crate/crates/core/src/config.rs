//! Flat `key = value` run configuration.
//!
//! ```text
//! # comments and blank lines are ignored
//! variant    = original+gradient
//! epochs     = 50
//! data       = runs/synth        # dataset dir; omit to synthesize
//! image_size = 64
//! ```
//!
//! Unknown keys are errors, so typos never silently fall back to defaults.

use std::fs;
use std::path::{Path, PathBuf};

use crate::data::{SplitRatio, SynthConfig};
use crate::error::{Error, Result};
use crate::lcl::LclConfig;
use crate::metrics::{DEFAULT_MATCH_DIST, DEFAULT_THRESHOLD};
use crate::model::{all_variants, variant_by_name, ModelConfig, Variant};
use crate::train::TrainConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub variant: Variant,
    pub lcl: LclConfig,
    pub channels: Vec<usize>,
    /// Dataset directory; `None` means generate from `synth`.
    pub data: Option<PathBuf>,
    pub image_size: (usize, usize),
    pub split: SplitRatio,
    pub synth: SynthConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub threshold: f32,
    pub match_dist: f64,
    pub step: f64,
    pub out: PathBuf,
    /// Variants run by `ablate`.
    pub variants: Vec<Variant>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            variant: variant_by_name("original+gradient").unwrap(),
            lcl: LclConfig::default(),
            channels: crate::backbone::DEFAULT_CHANNELS.to_vec(),
            data: None,
            image_size: (256, 256),
            split: SplitRatio::R1_1,
            synth: SynthConfig::default(),
            epochs: 500,
            batch_size: 4,
            lr: 1e-4,
            seed: 0,
            threshold: DEFAULT_THRESHOLD,
            match_dist: DEFAULT_MATCH_DIST,
            step: 1e-4,
            out: PathBuf::from("runs/default"),
            variants: all_variants(),
        }
    }
}

fn bad(key: &str, value: &str, what: &str) -> Error {
    Error::Config(format!("{key} = {value:?}: expected {what}"))
}

fn num<T: std::str::FromStr>(key: &str, value: &str, what: &str) -> Result<T> {
    value.parse().map_err(|_| bad(key, value, what))
}

fn pair<T: std::str::FromStr + Copy>(key: &str, value: &str, sep: char, what: &str) -> Result<(T, T)> {
    match value.split_once(sep) {
        Some((a, b)) => Ok((num(key, a.trim(), what)?, num(key, b.trim(), what)?)),
        None => {
            let v = num(key, value, what)?;
            Ok((v, v))
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {raw:?}", lineno + 1)))?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let s = &mut self.synth;
        match key {
            "variant" => self.variant = variant_by_name(value)?,
            "lcl" => self.lcl.enabled = num(key, value, "true or false")?,
            "lcl_kernel" => self.lcl.kernel = num(key, value, "an odd integer")?,
            "channels" => {
                self.channels = value
                    .split(',')
                    .map(|c| num(key, c.trim(), "five comma-separated integers"))
                    .collect::<Result<_>>()?
            }
            "data" => self.data = Some(PathBuf::from(value)),
            "image_size" => self.image_size = pair(key, value, 'x', "HxW or a single size")?,
            "split" => self.split = value.parse()?,
            "epochs" => self.epochs = num(key, value, "an integer")?,
            "batch_size" => self.batch_size = num(key, value, "an integer")?,
            "lr" => self.lr = num(key, value, "a number")?,
            "seed" => self.seed = num(key, value, "an integer")?,
            "threshold" => self.threshold = num(key, value, "a number")?,
            "match_dist" => self.match_dist = num(key, value, "a number")?,
            "step" => self.step = num(key, value, "a number")?,
            "out" => self.out = PathBuf::from(value),
            "variants" => {
                self.variants = value
                    .split(',')
                    .map(|v| variant_by_name(v.trim()))
                    .collect::<Result<_>>()?
            }
            "synth_images" => s.n_images = num(key, value, "an integer")?,
            "synth_size" => s.size = pair(key, value, 'x', "HxW or a single size")?,
            "synth_targets" => s.targets_per_image = pair(key, value, '-', "MIN-MAX")?,
            "synth_sigma" => s.target_sigma = pair(key, value, '-', "MIN-MAX")?,
            "synth_amplitude" => s.amplitude = pair(key, value, '-', "MIN-MAX")?,
            "synth_smoothness" => s.clutter_smoothness = num(key, value, "a number")?,
            "synth_seed" => s.seed = num(key, value, "an integer")?,
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be finite and non-negative, got {}", self.lr)));
        }
        let (h, w) = self.image_size;
        if h == 0 || w == 0 || h % 16 != 0 || w % 16 != 0 {
            return Err(Error::Config(format!("image_size {h}x{w} must be a non-zero multiple of 16")));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config(format!("threshold must be in [0, 1], got {}", self.threshold)));
        }
        crate::metrics::roc_thresholds(self.step)?;
        self.lcl.validate()?;
        self.synth.validate()
    }

    pub fn model_config(&self, variant: &Variant) -> ModelConfig {
        let mut v = variant.config;
        v.lcl = self.lcl;
        ModelConfig::new(v).with_channels(&self.channels)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            seed: self.seed,
            threshold: self.threshold,
            match_dist: self.match_dist,
        }
    }

    /// The resolved configuration in the same format it was read from.
    pub fn to_text(&self) -> String {
        let s = &self.synth;
        let list = |xs: &[usize]| xs.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(",");
        let mut lines = vec![
            format!("variant = {}", self.variant.name),
            format!("lcl = {}", self.lcl.enabled),
            format!("lcl_kernel = {}", self.lcl.kernel),
            format!("channels = {}", list(&self.channels)),
        ];
        if let Some(d) = &self.data {
            lines.push(format!("data = {}", d.display()));
        }
        lines.extend([
            format!("image_size = {}x{}", self.image_size.0, self.image_size.1),
            format!("split = {}", self.split),
            format!("epochs = {}", self.epochs),
            format!("batch_size = {}", self.batch_size),
            format!("lr = {}", self.lr),
            format!("seed = {}", self.seed),
            format!("threshold = {}", self.threshold),
            format!("match_dist = {}", self.match_dist),
            format!("step = {}", self.step),
            format!("out = {}", self.out.display()),
            format!(
                "variants = {}",
                self.variants.iter().map(|v| v.name).collect::<Vec<_>>().join(",")
            ),
            format!("synth_images = {}", s.n_images),
            format!("synth_size = {}x{}", s.size.0, s.size.1),
            format!("synth_targets = {}-{}", s.targets_per_image.0, s.targets_per_image.1),
            format!("synth_sigma = {}-{}", s.target_sigma.0, s.target_sigma.1),
            format!("synth_amplitude = {}-{}", s.amplitude.0, s.amplitude.1),
            format!("synth_smoothness = {}", s.clutter_smoothness),
            format!("synth_seed = {}", s.seed),
        ]);
        lines.join("\n") + "\n"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_training_protocol() {
        let c = RunConfig::default();
        assert_eq!((c.epochs, c.batch_size, c.lr), (500, 4, 1e-4));
        assert_eq!(c.variants.len(), 13);
    }

    #[test]
    fn parses_comments_and_ranges() {
        let c = RunConfig::parse(
            "# run\nvariant = CAM\nepochs=3   # short\nimage_size = 32x64\nsynth_targets = 0-2\nvariants = add, tgfm\n",
        )
        .unwrap();
        assert_eq!(c.variant.name, "cam");
        assert_eq!(c.epochs, 3);
        assert_eq!(c.image_size, (32, 64));
        assert_eq!(c.synth.targets_per_image, (0, 2));
        assert_eq!(c.variants.len(), 2);
    }

    #[test]
    fn unknown_key_and_bad_value() {
        assert!(RunConfig::parse("epoch = 3").is_err());
        assert!(RunConfig::parse("epochs = three").is_err());
        assert!(RunConfig::parse("no equals sign").is_err());
        assert!(RunConfig::parse("variant = bogus").is_err());
    }

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::parse("variant = m_g_add\ndata = /tmp/x\nlr = 0.001").unwrap();
        c.synth.target_sigma = (1.5, 2.0);
        assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
    }
}
