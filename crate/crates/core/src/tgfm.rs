//! Two-way guidance fusion and the top-down decoder.
//!
//! For a low-level map `X` and an (adapted) high-level map `Y`:
//!
//! ```text
//! Z    = C(Y) ⊗ X + S(X) ⊗ Y
//! C(Y) = σ(MLP(AvgPool(Y)) + MLP(MaxPool(Y)))        per channel
//! S(X) = σ(conv7×7([mean_c(X); max_c(X)]))            per pixel
//! ```
//!
//! High-level features steer which channels of the low-level map matter;
//! low-level features steer where in the high-level map to look.

use std::fmt;
use std::str::FromStr;

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::nn::{Conv2d, Ctx, Module, ParamBuilder};
use crate::ops;
use crate::tensor::Float;

/// Reduction ratio of the channel-attention MLP.
pub const DEFAULT_REDUCTION: usize = 8;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum FusionMode {
    /// `C(Y)⊗X + S(X)⊗Y`
    #[default]
    Tgfm,
    /// `X + Y`
    Add,
    /// `C(Y)⊗X + Y`
    Cam,
    /// `X + S(X)⊗Y`
    Sam,
}

impl FusionMode {
    pub const ALL: [FusionMode; 4] = [FusionMode::Add, FusionMode::Cam, FusionMode::Sam, FusionMode::Tgfm];

    pub fn name(self) -> &'static str {
        match self {
            FusionMode::Tgfm => "tgfm",
            FusionMode::Add => "add",
            FusionMode::Cam => "cam",
            FusionMode::Sam => "sam",
        }
    }

    fn uses_channel_gate(self) -> bool {
        matches!(self, FusionMode::Tgfm | FusionMode::Cam)
    }

    fn uses_spatial_gate(self) -> bool {
        matches!(self, FusionMode::Tgfm | FusionMode::Sam)
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FusionMode::ALL
            .into_iter()
            .find(|m| m.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown fusion mode {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TgfmConfig {
    pub reduction: usize,
    pub mode: FusionMode,
}

impl Default for TgfmConfig {
    fn default() -> Self {
        Self {
            reduction: DEFAULT_REDUCTION,
            mode: FusionMode::Tgfm,
        }
    }
}

/// `C(Y)`: shared MLP over global average and max pools.
#[derive(Clone, Debug)]
pub struct ChannelAttention {
    pub fc1: Conv2d,
    pub fc2: Conv2d,
}

impl ChannelAttention {
    pub fn new<T: Float>(b: &mut ParamBuilder<'_, T>, channels: usize, reduction: usize) -> Result<Self> {
        if reduction == 0 || channels % reduction != 0 {
            return Err(Error::Config(format!(
                "channel attention: {channels} channels not divisible by r={reduction}"
            )));
        }
        let hidden = channels / reduction;
        Ok(Self {
            fc1: Conv2d::new(&mut b.pp("fc1"), channels, hidden, 1, true)?,
            fc2: Conv2d::new(&mut b.pp("fc2"), hidden, channels, 1, true)?,
        })
    }

    fn mlp<'t, T: Float>(&self, ctx: &Ctx<'t, T>, v: &Var<'t, T>) -> Result<Var<'t, T>> {
        let h = self.fc1.forward(ctx, v)?.relu();
        self.fc2.forward(ctx, &h)
    }

    /// Channel weights `[N,C,1,1]`.
    pub fn gate<'t, T: Float>(&self, ctx: &Ctx<'t, T>, y: &Var<'t, T>) -> Result<Var<'t, T>> {
        let avg = self.mlp(ctx, &ops::global_avg_pool(y))?;
        let max = self.mlp(ctx, &ops::global_max_pool(y))?;
        Ok(avg.add(&max)?.sigmoid())
    }
}

/// `S(X)`: 7×7 convolution over channel-wise mean and max.
#[derive(Clone, Debug)]
pub struct SpatialAttention {
    pub conv: Conv2d,
}

impl SpatialAttention {
    pub const KERNEL: usize = 7;

    pub fn new<T: Float>(b: &mut ParamBuilder<'_, T>) -> Result<Self> {
        Ok(Self {
            conv: Conv2d::new(&mut b.pp("conv"), 2, 1, Self::KERNEL, true)?,
        })
    }

    /// Spatial weights `[N,1,H,W]`.
    pub fn gate<'t, T: Float>(&self, ctx: &Ctx<'t, T>, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        let mean = ops::channel_mean(x);
        let max = ops::channel_max(x);
        let pooled = ops::concat_channels(&[&mean, &max])?;
        Ok(self.conv.forward(ctx, &pooled)?.sigmoid())
    }
}

/// One fusion site: adapter for the high-level input plus the gates the
/// mode needs.
#[derive(Clone, Debug)]
pub struct Tgfm {
    pub mode: FusionMode,
    pub adapter: Conv2d,
    pub channel: Option<ChannelAttention>,
    pub spatial: Option<SpatialAttention>,
}

impl Tgfm {
    pub fn new<T: Float>(
        b: &mut ParamBuilder<'_, T>,
        low_channels: usize,
        high_channels: usize,
        config: TgfmConfig,
    ) -> Result<Self> {
        let adapter = Conv2d::new(&mut b.pp("adapter"), high_channels, low_channels, 1, true)?;
        let channel = config
            .mode
            .uses_channel_gate()
            .then(|| ChannelAttention::new(&mut b.pp("ca"), low_channels, config.reduction))
            .transpose()?;
        let spatial = config
            .mode
            .uses_spatial_gate()
            .then(|| SpatialAttention::new(&mut b.pp("sa")))
            .transpose()?;
        Ok(Self {
            mode: config.mode,
            adapter,
            channel,
            spatial,
        })
    }

    /// Brings a high-level map to the low level's shape: 1×1 channel
    /// projection, then 2× bilinear upsampling. The two commute (bilinear
    /// weights sum to one), so projecting first is just cheaper.
    pub fn adapt<'t, T: Float>(&self, ctx: &Ctx<'t, T>, high: &Var<'t, T>) -> Result<Var<'t, T>> {
        let projected = self.adapter.forward(ctx, high)?;
        Ok(ops::upsample_bilinear2(&projected))
    }

    /// Fuses conformable `x` (low level) and `y` (adapted high level).
    pub fn fuse<'t, T: Float>(&self, ctx: &Ctx<'t, T>, x: &Var<'t, T>, y: &Var<'t, T>) -> Result<Var<'t, T>> {
        if x.shape() != y.shape() {
            return Err(Error::Shape(format!(
                "fusion inputs {:?} vs {:?}",
                x.shape(),
                y.shape()
            )));
        }
        let lhs = match &self.channel {
            Some(ca) => x.mul_broadcast(&ca.gate(ctx, y)?)?,
            None => x.clone(),
        };
        let rhs = match &self.spatial {
            Some(sa) => y.mul_broadcast(&sa.gate(ctx, x)?)?,
            None => y.clone(),
        };
        lhs.add(&rhs)
    }

    pub fn forward<'t, T: Float>(
        &self,
        ctx: &Ctx<'t, T>,
        low: &Var<'t, T>,
        high: &Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        let y = self.adapt(ctx, high)?;
        self.fuse(ctx, low, &y)
    }
}

/// Top-down decoder: `D5 = F5`, `Dk = fuse(Fk, adapt(Dk+1))`, then a 1×1
/// head with sigmoid on `D1`.
#[derive(Clone, Debug)]
pub struct Decoder {
    /// Fusion sites for levels 1–4 (index 0 is level 1).
    pub sites: Vec<Tgfm>,
    pub head: Conv2d,
}

impl Decoder {
    /// `b` is the root builder; parameters go to `tgfm.levelK.*` and
    /// `head.*`.
    pub fn new<T: Float>(b: &mut ParamBuilder<'_, T>, channels: &[usize], config: TgfmConfig) -> Result<Self> {
        if channels.len() < 2 {
            return Err(Error::Config("decoder needs at least two levels".into()));
        }
        let sites = (0..channels.len() - 1)
            .map(|k| {
                Tgfm::new(
                    &mut b.pp("tgfm").pp(format!("level{}", k + 1)),
                    channels[k],
                    channels[k + 1],
                    config,
                )
            })
            .collect::<Result<_>>()?;
        // starts at p = 0.5 everywhere so the sigmoid is not saturated
        let head = Conv2d::zeros(&mut b.pp("head"), channels[0], 1, 1, true)?;
        Ok(Self { sites, head })
    }

    /// Head logits `[N,1,H,W]` at full resolution.
    pub fn logits<'t, T: Float>(&self, ctx: &Ctx<'t, T>, features: &[Var<'t, T>]) -> Result<Var<'t, T>> {
        if features.len() != self.sites.len() + 1 {
            return Err(Error::Shape(format!(
                "decoder expects {} feature maps, got {}",
                self.sites.len() + 1,
                features.len()
            )));
        }
        let mut d = features.last().unwrap().clone();
        for (k, site) in self.sites.iter().enumerate().rev() {
            d = site.forward(ctx, &features[k], &d)?;
        }
        self.head.forward(ctx, &d)
    }

    /// Score map in `(0, 1)`.
    pub fn decode<'t, T: Float>(&self, ctx: &Ctx<'t, T>, features: &[Var<'t, T>]) -> Result<Var<'t, T>> {
        Ok(self.logits(ctx, features)?.sigmoid())
    }
}
