//! The assembled network, its variant matrix and the softIoU loss.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Tape, Var};
use crate::backbone::{stage_configs, Backbone, DEFAULT_CHANNELS, SE_RATIO};
use crate::error::{Error, Result};
use crate::gsm::{Gsm, GsmMode};
use crate::lcl::{Lcl, LclConfig};
use crate::nn::{Ctx, Module, ParamBuilder, ParamStore};
use crate::ops;
use crate::preprocess::{build_pyramid, gradient_magnitude, GrayImage, Pyramid, PYRAMID_LEVELS};
use crate::tensor::{Float, Tensor};
use crate::tgfm::{Decoder, FusionMode, TgfmConfig, DEFAULT_REDUCTION};

/// Added to the softIoU denominator.
pub const SOFT_IOU_EPS: f64 = 1e-6;

/// Which image a branch consumes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BranchInput {
    Original,
    Gradient,
}

impl BranchInput {
    fn label(self) -> &'static str {
        match self {
            BranchInput::Original => "Original",
            BranchInput::Gradient => "Gradient",
        }
    }
}

impl fmt::Display for BranchInput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BranchInput::Original => "original",
            BranchInput::Gradient => "gradient",
        })
    }
}

impl FromStr for BranchInput {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "original" => Ok(BranchInput::Original),
            "gradient" => Ok(BranchInput::Gradient),
            _ => Err(Error::Config(format!("unknown branch input {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VariantConfig {
    pub main_input: BranchInput,
    /// `None` drops the supplementary branch (and the GSM with it).
    pub supp_input: Option<BranchInput>,
    pub gsm_mode: GsmMode,
    pub fusion_mode: FusionMode,
    pub lcl: LclConfig,
}

impl Default for VariantConfig {
    /// The full network: original image in the main branch, gradient
    /// pyramid in the supplementary branch, residual GSM, two-way fusion.
    fn default() -> Self {
        Self {
            main_input: BranchInput::Original,
            supp_input: Some(BranchInput::Gradient),
            gsm_mode: GsmMode::MGRes,
            fusion_mode: FusionMode::Tgfm,
            lcl: LclConfig::default(),
        }
    }
}

impl VariantConfig {
    pub fn is_default(&self) -> bool {
        *self == Self::default()
    }
}

/// A named entry of the ablation matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Variant {
    /// Command-line name, e.g. `original+gradient`.
    pub name: &'static str,
    /// Row label used in ablation reports.
    pub scheme: &'static str,
    /// Ablation group (1: branch inputs, 2: GSM, 3: fusion).
    pub group: u8,
    pub config: VariantConfig,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.scheme)
    }
}

/// All 6 + 3 + 4 ablation variants in group order.
pub fn all_variants() -> Vec<Variant> {
    use BranchInput::{Gradient as G, Original as O};
    let base = VariantConfig::default();
    let branches = |main, supp| VariantConfig {
        main_input: main,
        supp_input: supp,
        ..base
    };
    let gsm = |mode| VariantConfig {
        gsm_mode: mode,
        ..base
    };
    let fusion = |mode| VariantConfig {
        fusion_mode: mode,
        ..base
    };
    vec![
        Variant { name: "original", scheme: "Original", group: 1, config: branches(O, None) },
        Variant { name: "gradient", scheme: "Gradient", group: 1, config: branches(G, None) },
        Variant { name: "original+original", scheme: "Original+Original", group: 1, config: branches(O, Some(O)) },
        Variant { name: "gradient+gradient", scheme: "Gradient+Gradient", group: 1, config: branches(G, Some(G)) },
        Variant { name: "gradient+original", scheme: "Gradient+Original", group: 1, config: branches(G, Some(O)) },
        Variant { name: "original+gradient", scheme: "Original+Gradient (GGL-Net)", group: 1, config: base },
        Variant { name: "m_g_add", scheme: "M_G_Add", group: 2, config: gsm(GsmMode::MGAdd) },
        Variant { name: "m_g_m_res", scheme: "M-G-M_Res", group: 2, config: gsm(GsmMode::MGMRes) },
        Variant { name: "m_g_res", scheme: "M_G_Res (GGL-Net)", group: 2, config: base },
        Variant { name: "add", scheme: "ADD", group: 3, config: fusion(FusionMode::Add) },
        Variant { name: "cam", scheme: "CAM", group: 3, config: fusion(FusionMode::Cam) },
        Variant { name: "sam", scheme: "SAM", group: 3, config: fusion(FusionMode::Sam) },
        Variant { name: "tgfm", scheme: "TGFM", group: 3, config: base },
    ]
}

/// Looks up an ablation variant by its command-line name.
pub fn variant_by_name(name: &str) -> Result<Variant> {
    let key = name.trim().to_ascii_lowercase();
    all_variants()
        .into_iter()
        .find(|v| v.name == key)
        .ok_or_else(|| {
            let valid: Vec<_> = all_variants().iter().map(|v| v.name).collect();
            Error::Config(format!(
                "unknown variant {name:?}; valid names: {}",
                valid.join(", ")
            ))
        })
}

/// Scheme label for an arbitrary variant config ("Original+Gradient", ...).
pub fn describe(config: &VariantConfig) -> String {
    let mut s = config.main_input.label().to_string();
    if let Some(supp) = config.supp_input {
        s.push('+');
        s.push_str(supp.label());
        s.push_str(&format!(" [{}]", config.gsm_mode));
    }
    s.push_str(&format!(" [{}]", config.fusion_mode));
    s
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub variant: VariantConfig,
    /// Output channels of the five encoder stages.
    pub channels: Vec<usize>,
    pub se_ratio: usize,
    pub reduction: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::new(VariantConfig::default())
    }
}

impl ModelConfig {
    pub fn new(variant: VariantConfig) -> Self {
        Self {
            variant,
            channels: DEFAULT_CHANNELS.to_vec(),
            se_ratio: SE_RATIO,
            reduction: DEFAULT_REDUCTION,
        }
    }

    pub fn with_channels(mut self, channels: &[usize]) -> Self {
        self.channels = channels.to_vec();
        self
    }
}

/// Binary ground truth, values in `{0, 1}`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskImage {
    pixels: Array2<u8>,
}

impl MaskImage {
    pub fn new(pixels: Array2<u8>) -> Result<Self> {
        if let Some(v) = pixels.iter().find(|&&v| v > 1) {
            return Err(Error::InvalidInput(format!("mask value {v} is not binary")));
        }
        Ok(Self { pixels })
    }

    /// Pixels strictly above `threshold` become 1.
    pub fn from_scores(scores: ArrayView2<'_, f32>, threshold: f32) -> Self {
        Self {
            pixels: scores.mapv(|v| u8::from(v > threshold)),
        }
    }

    pub fn zeros(h: usize, w: usize) -> Self {
        Self {
            pixels: Array2::zeros((h, w)),
        }
    }

    pub fn pixels(&self) -> &Array2<u8> {
        &self.pixels
    }

    pub fn dim(&self) -> (usize, usize) {
        self.pixels.dim()
    }

    pub fn count_positive(&self) -> usize {
        self.pixels.iter().filter(|&&v| v == 1).count()
    }
}

/// Per-pixel target probabilities for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMap {
    scores: Array2<f32>,
}

impl ScoreMap {
    pub fn new(scores: Array2<f32>) -> Result<Self> {
        if let Some(v) = scores.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidInput(format!("score {v} outside [0, 1]")));
        }
        Ok(Self { scores })
    }

    pub fn scores(&self) -> &Array2<f32> {
        &self.scores
    }

    pub fn dim(&self) -> (usize, usize) {
        self.scores.dim()
    }

    pub fn binarize(&self, threshold: f32) -> MaskImage {
        MaskImage::from_scores(self.scores.view(), threshold)
    }

    /// Splits a `[N,1,H,W]` tensor into per-image maps.
    pub fn from_batch<T: Float>(t: &Tensor<T>) -> Result<Vec<Self>> {
        let [n, c, h, w] = t.shape();
        if c != 1 {
            return Err(Error::Shape(format!("score batch must have 1 channel, got {c}")));
        }
        (0..n)
            .map(|i| {
                let data = t.sample(i).iter().map(|v| v.to_f32().unwrap_or(f32::NAN)).collect();
                Self::new(Array2::from_shape_vec((h, w), data).expect("sample size"))
            })
            .collect()
    }
}

/// Both pyramids an image can contribute: the original frame and its
/// gradient magnitude.
#[derive(Clone, Debug)]
pub struct PreparedImage {
    pub original: Pyramid,
    pub gradient: Pyramid,
}

impl PreparedImage {
    pub fn new(img: &GrayImage) -> Result<Self> {
        let grad = gradient_magnitude(img)?;
        Ok(Self {
            original: build_pyramid(img.pixels().view(), PYRAMID_LEVELS)?,
            gradient: build_pyramid(grad.pixels().view(), PYRAMID_LEVELS)?,
        })
    }

    pub fn dim(&self) -> (usize, usize) {
        self.original.level(0).dim()
    }

    fn pyramid(&self, which: BranchInput) -> &Pyramid {
        match which {
            BranchInput::Original => &self.original,
            BranchInput::Gradient => &self.gradient,
        }
    }
}

/// A batch of network inputs: `[N,1,H/2^k,W/2^k]` tensors for every
/// pyramid level of both sources.
#[derive(Clone, Debug)]
pub struct ModelInput<T> {
    original: Vec<Tensor<T>>,
    gradient: Vec<Tensor<T>>,
}

impl<T: Float> ModelInput<T> {
    pub fn from_prepared(items: &[&PreparedImage]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::InvalidInput("empty batch".into()))?;
        if items.iter().any(|p| p.dim() != first.dim()) {
            return Err(Error::Shape("batch images differ in size".into()));
        }
        let stack = |which: BranchInput| -> Vec<Tensor<T>> {
            (0..PYRAMID_LEVELS)
                .map(|k| {
                    let (h, w) = first.pyramid(which).level(k).dim();
                    let mut data = Vec::with_capacity(items.len() * h * w);
                    for p in items {
                        data.extend(p.pyramid(which).level(k).iter().map(|&v| T::from_f32(v).unwrap()));
                    }
                    Tensor::from_vec([items.len(), 1, h, w], data).expect("level size")
                })
                .collect()
        };
        Ok(Self {
            original: stack(BranchInput::Original),
            gradient: stack(BranchInput::Gradient),
        })
    }

    pub fn from_images(images: &[GrayImage]) -> Result<Self> {
        let prepared = images.iter().map(PreparedImage::new).collect::<Result<Vec<_>>>()?;
        Self::from_prepared(&prepared.iter().collect::<Vec<_>>())
    }

    pub fn levels(&self, which: BranchInput) -> &[Tensor<T>] {
        match which {
            BranchInput::Original => &self.original,
            BranchInput::Gradient => &self.gradient,
        }
    }

    pub fn batch_size(&self) -> usize {
        self.original[0].n()
    }

    pub fn spatial(&self) -> (usize, usize) {
        (self.original[0].h(), self.original[0].w())
    }
}

/// Stacks masks into a `[N,1,H,W]` target tensor.
pub fn mask_batch<T: Float>(masks: &[&MaskImage]) -> Result<Tensor<T>> {
    let first = masks
        .first()
        .ok_or_else(|| Error::InvalidInput("empty mask batch".into()))?;
    let (h, w) = first.dim();
    let mut data = Vec::with_capacity(masks.len() * h * w);
    for m in masks {
        if m.dim() != (h, w) {
            return Err(Error::Shape("batch masks differ in size".into()));
        }
        data.extend(m.pixels().iter().map(|&v| if v == 1 { T::one() } else { T::zero() }));
    }
    Tensor::from_vec([masks.len(), 1, h, w], data)
}

/// The full network: encoder, optional gradient branch with GSM, local
/// contrast per scale and the fusion decoder.
#[derive(Clone, Debug)]
pub struct GglNet {
    config: ModelConfig,
    backbone: Backbone,
    gsm: Option<Gsm>,
    lcl: Vec<Lcl>,
    decoder: Decoder,
}

impl GglNet {
    pub fn new<T: Float>(b: &mut ParamBuilder<'_, T>, config: ModelConfig) -> Result<Self> {
        if config.channels.len() != PYRAMID_LEVELS {
            return Err(Error::Config(format!(
                "channel plan needs {PYRAMID_LEVELS} entries, got {}",
                config.channels.len()
            )));
        }
        let mut stages = stage_configs(1, &config.channels);
        for s in &mut stages {
            s.se_ratio = config.se_ratio;
        }
        let backbone = Backbone::new(&mut b.pp("main"), &stages)?;
        let gsm = config
            .variant
            .supp_input
            .map(|_| Gsm::new(&mut b.pp("gsm"), &config.channels, config.variant.gsm_mode))
            .transpose()?;
        let lcl = config
            .channels
            .iter()
            .enumerate()
            .map(|(k, &c)| Lcl::new(&mut b.pp("lcl").pp(format!("level{}", k + 1)), c, config.variant.lcl))
            .collect::<Result<_>>()?;
        let decoder = Decoder::new(
            b,
            &config.channels,
            TgfmConfig {
                reduction: config.reduction,
                mode: config.variant.fusion_mode,
            },
        )?;
        Ok(Self {
            config,
            backbone,
            gsm,
            lcl,
            decoder,
        })
    }

    /// Builds the network with a fresh, seeded parameter store.
    pub fn init<T: Float>(config: ModelConfig, seed: u64) -> Result<(Self, ParamStore<T>)> {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Self::new(&mut ParamBuilder::new(&mut store, &mut rng), config)?;
        Ok((net, store))
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn backbone(&self) -> &Backbone {
        &self.backbone
    }

    pub fn gsm(&self) -> Option<&Gsm> {
        self.gsm.as_ref()
    }

    pub fn decoder(&self) -> &Decoder {
        &self.decoder
    }

    /// Per-scale features after GSM and local contrast, `F1..F5`.
    pub fn features<'t, T: Float>(&self, ctx: &Ctx<'t, T>, input: &ModelInput<T>) -> Result<Vec<Var<'t, T>>> {
        let (h, w) = input.spatial();
        if h % 16 != 0 || w % 16 != 0 {
            return Err(Error::Shape(format!("input {h}x{w} is not divisible by 16")));
        }
        let variant = &self.config.variant;
        let tape = ctx.tape();
        let x = tape.constant(input.levels(variant.main_input)[0].clone());
        let supp = match (&self.gsm, variant.supp_input) {
            (Some(gsm), Some(src)) => {
                let pyramid: Vec<_> = input
                    .levels(src)
                    .iter()
                    .map(|t| tape.constant(t.clone()))
                    .collect();
                Some((gsm, gsm.supplementary_features(ctx, &pyramid)?))
            }
            _ => None,
        };
        let feats = self.backbone.encode_with(ctx, &x, |k, f| match &supp {
            Some((gsm, g)) => gsm.fuse(ctx, k, &f, &g[k]),
            None => Ok(f),
        })?;
        feats
            .iter()
            .zip(&self.lcl)
            .map(|(f, l)| l.forward(ctx, f))
            .collect()
    }

    /// Score map `[N,1,H,W]` with values in `(0, 1)`.
    pub fn forward<'t, T: Float>(&self, ctx: &Ctx<'t, T>, input: &ModelInput<T>) -> Result<Var<'t, T>> {
        let feats = self.features(ctx, input)?;
        self.decoder.decode(ctx, &feats)
    }

    /// Inference with running normalization statistics and no tape.
    pub fn predict<T: Float>(&self, store: &ParamStore<T>, input: &ModelInput<T>) -> Result<Tensor<T>> {
        let tape = Tape::inference();
        let ctx = Ctx::new(&tape, store, false);
        Ok(self.forward(&ctx, input)?.to_tensor())
    }
}

/// `1 − softIoU`, averaged over the batch.
pub fn soft_iou_loss<'t, T: Float>(p: &Var<'t, T>, y: &Tensor<T>) -> Result<Var<'t, T>> {
    ops::soft_iou_loss(p, y, SOFT_IOU_EPS)
}
