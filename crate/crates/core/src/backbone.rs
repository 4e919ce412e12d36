//! Main-branch encoder: five stages of residual SE blocks with 2×2 max
//! pooling between stages.

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::nn::{Conv2d, ConvBnRelu, Ctx, Module, ParamBuilder};
use crate::ops;
use crate::tensor::Float;

/// Output channels of stages 1–5.
pub const DEFAULT_CHANNELS: [usize; 5] = [16, 32, 64, 128, 256];

/// Channel compression ratio inside every SE gate.
pub const SE_RATIO: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StageConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub se_ratio: usize,
}

impl StageConfig {
    pub fn new(in_channels: usize, out_channels: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            se_ratio: SE_RATIO,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 || self.se_ratio == 0 {
            return Err(Error::Config(format!("degenerate stage config {self:?}")));
        }
        if self.out_channels % self.se_ratio != 0 {
            return Err(Error::Config(format!(
                "{} channels not divisible by SE ratio {}",
                self.out_channels, self.se_ratio
            )));
        }
        Ok(())
    }
}

/// Stage configs for a single-channel input and the given channel plan.
pub fn stage_configs(in_channels: usize, plan: &[usize]) -> Vec<StageConfig> {
    let mut prev = in_channels;
    plan.iter()
        .map(|&c| {
            let cfg = StageConfig::new(prev, c);
            prev = c;
            cfg
        })
        .collect()
}

/// Squeeze-and-excitation: global average pool, bottleneck MLP, sigmoid,
/// per-channel rescale.
#[derive(Clone, Debug)]
pub struct SqueezeExcite {
    pub fc1: Conv2d,
    pub fc2: Conv2d,
}

impl SqueezeExcite {
    pub fn new<T: Float>(b: &mut ParamBuilder<'_, T>, channels: usize, ratio: usize) -> Result<Self> {
        if ratio == 0 || channels % ratio != 0 {
            return Err(Error::Config(format!(
                "SE: {channels} channels not divisible by ratio {ratio}"
            )));
        }
        let hidden = channels / ratio;
        Ok(Self {
            fc1: Conv2d::new(&mut b.pp("fc1"), channels, hidden, 1, true)?,
            fc2: Conv2d::new(&mut b.pp("fc2"), hidden, channels, 1, true)?,
        })
    }

    /// Channel weights `[N,C,1,1]`, each in `(0, 1)`.
    pub fn gate<'t, T: Float>(&self, ctx: &Ctx<'t, T>, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        let pooled = ops::global_avg_pool(x);
        let hidden = self.fc1.forward(ctx, &pooled)?.relu();
        Ok(self.fc2.forward(ctx, &hidden)?.sigmoid())
    }
}

impl Module for SqueezeExcite {
    fn forward<'t, T: Float>(&self, ctx: &Ctx<'t, T>, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        let g = self.gate(ctx, x)?;
        x.mul_broadcast(&g)
    }
}

/// Two conv-norm-ReLU layers, optional SE on the body, then a residual add
/// (1×1 projection on the skip when channel counts differ).
#[derive(Clone, Debug)]
pub struct ConvBlock {
    pub layer1: ConvBnRelu,
    pub layer2: ConvBnRelu,
    pub se: Option<SqueezeExcite>,
    pub proj: Option<Conv2d>,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl ConvBlock {
    pub fn new<T: Float>(
        b: &mut ParamBuilder<'_, T>,
        in_channels: usize,
        out_channels: usize,
        se_ratio: Option<usize>,
    ) -> Result<Self> {
        let layer1 = ConvBnRelu::new(b, "conv1", "bn1", in_channels, out_channels)?;
        let layer2 = ConvBnRelu::new(b, "conv2", "bn2", out_channels, out_channels)?;
        let se = se_ratio
            .map(|r| SqueezeExcite::new(&mut b.pp("se"), out_channels, r))
            .transpose()?;
        let proj = (in_channels != out_channels)
            .then(|| Conv2d::new(&mut b.pp("proj"), in_channels, out_channels, 1, false))
            .transpose()?;
        Ok(Self {
            layer1,
            layer2,
            se,
            proj,
            in_channels,
            out_channels,
        })
    }
}

impl Module for ConvBlock {
    fn forward<'t, T: Float>(&self, ctx: &Ctx<'t, T>, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        if x.shape()[1] != self.in_channels {
            return Err(Error::Shape(format!(
                "block expects {} channels, got {:?}",
                self.in_channels,
                x.shape()
            )));
        }
        let mut body = self.layer2.forward(ctx, &self.layer1.forward(ctx, x)?)?;
        if let Some(se) = &self.se {
            body = se.forward(ctx, &body)?;
        }
        let skip = match &self.proj {
            Some(p) => p.forward(ctx, x)?,
            None => x.clone(),
        };
        body.add(&skip)
    }
}

/// Three SE residual blocks (six convolutions); the first block changes
/// the channel count.
#[derive(Clone, Debug)]
pub struct Stage {
    pub blocks: Vec<ConvBlock>,
    pub config: StageConfig,
}

impl Stage {
    pub const BLOCKS: usize = 3;

    pub fn new<T: Float>(b: &mut ParamBuilder<'_, T>, config: StageConfig) -> Result<Self> {
        config.validate()?;
        let blocks = (0..Self::BLOCKS)
            .map(|j| {
                let cin = if j == 0 { config.in_channels } else { config.out_channels };
                ConvBlock::new(
                    &mut b.pp(format!("block{}", j + 1)),
                    cin,
                    config.out_channels,
                    Some(config.se_ratio),
                )
            })
            .collect::<Result<_>>()?;
        Ok(Self { blocks, config })
    }
}

impl Module for Stage {
    fn forward<'t, T: Float>(&self, ctx: &Ctx<'t, T>, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        let mut h = x.clone();
        for block in &self.blocks {
            h = block.forward(ctx, &h)?;
        }
        Ok(h)
    }
}

/// The five-stage encoder. Parameters live under `stage1` … `stage5` of
/// the builder's prefix.
#[derive(Clone, Debug)]
pub struct Backbone {
    pub stages: Vec<Stage>,
}

impl Backbone {
    pub fn new<T: Float>(b: &mut ParamBuilder<'_, T>, configs: &[StageConfig]) -> Result<Self> {
        if configs.len() != 5 {
            return Err(Error::Config(format!(
                "encoder needs 5 stage configs, got {}",
                configs.len()
            )));
        }
        for pair in configs.windows(2) {
            if pair[0].out_channels != pair[1].in_channels {
                return Err(Error::Config(format!(
                    "stage chain broken: {:?} -> {:?}",
                    pair[0], pair[1]
                )));
            }
        }
        let stages = configs
            .iter()
            .enumerate()
            .map(|(k, &cfg)| Stage::new(&mut b.pp(format!("stage{}", k + 1)), cfg))
            .collect::<Result<_>>()?;
        Ok(Self { stages })
    }

    pub fn channels(&self) -> Vec<usize> {
        self.stages.iter().map(|s| s.config.out_channels).collect()
    }

    /// Feature maps `F1..F5` at scales 1, 1/2, …, 1/16.
    pub fn encode<'t, T: Float>(&self, ctx: &Ctx<'t, T>, x: &Var<'t, T>) -> Result<Vec<Var<'t, T>>> {
        self.encode_with(ctx, x, |_, f| Ok(f))
    }

    /// Like [`encode`](Self::encode), but `hook(level, F_level)` may replace
    /// each stage output before it is stored and pooled into the next stage.
    pub fn encode_with<'t, T: Float>(
        &self,
        ctx: &Ctx<'t, T>,
        x: &Var<'t, T>,
        mut hook: impl FnMut(usize, Var<'t, T>) -> Result<Var<'t, T>>,
    ) -> Result<Vec<Var<'t, T>>> {
        let [_, c, h, w] = x.shape();
        if c != self.stages[0].config.in_channels {
            return Err(Error::Shape(format!(
                "encoder expects {} input channels, got {c}",
                self.stages[0].config.in_channels
            )));
        }
        let factor = 1 << (self.stages.len() - 1);
        if h % factor != 0 || w % factor != 0 {
            return Err(Error::Shape(format!(
                "input {h}x{w} not divisible by {factor}"
            )));
        }
        let mut feats = Vec::with_capacity(self.stages.len());
        let mut input = x.clone();
        for (k, stage) in self.stages.iter().enumerate() {
            if k > 0 {
                input = ops::max_pool2(feats.last().unwrap())?;
            }
            let f = stage.forward(ctx, &input)?;
            feats.push(hook(k, f)?);
        }
        Ok(feats)
    }
}
