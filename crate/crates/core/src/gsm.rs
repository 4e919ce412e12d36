//! Gradient supplementary module: lifts the pooled gradient images into
//! feature space (`G_Block`) and merges them into the main branch at every
//! scale (`Res`, or plain addition for the ablation variant).

use std::fmt;
use std::str::FromStr;

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::nn::{Conv2d, ConvBnRelu, Ctx, Module, ParamBuilder};
use crate::ops;
use crate::tensor::Float;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum GsmMode {
    /// Independent `G_Block` per scale over the pooled gradient image,
    /// merged with a residual block.
    #[default]
    MGRes,
    /// As `MGRes` but merged by element-wise addition.
    MGAdd,
    /// One `G_Block` at full resolution whose features are max-pooled down
    /// the pyramid, then merged with a residual block.
    MGMRes,
}

impl GsmMode {
    pub const ALL: [GsmMode; 3] = [GsmMode::MGAdd, GsmMode::MGMRes, GsmMode::MGRes];

    pub fn name(self) -> &'static str {
        match self {
            GsmMode::MGRes => "m_g_res",
            GsmMode::MGAdd => "m_g_add",
            GsmMode::MGMRes => "m_g_m_res",
        }
    }
}

impl fmt::Display for GsmMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GsmMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        GsmMode::ALL
            .into_iter()
            .find(|m| m.name() == s.to_ascii_lowercase().replace('-', "_"))
            .ok_or_else(|| Error::Config(format!("unknown GSM mode {s:?}")))
    }
}

/// Two conv-norm-ReLU layers lifting a single-channel gradient image.
#[derive(Clone, Debug)]
pub struct GBlock {
    pub layer1: ConvBnRelu,
    pub layer2: ConvBnRelu,
}

impl GBlock {
    pub fn new<T: Float>(b: &mut ParamBuilder<'_, T>, out_channels: usize) -> Result<Self> {
        Ok(Self {
            layer1: ConvBnRelu::new(b, "conv1", "bn1", 1, out_channels)?,
            layer2: ConvBnRelu::new(b, "conv2", "bn2", out_channels, out_channels)?,
        })
    }
}

impl Module for GBlock {
    fn forward<'t, T: Float>(&self, ctx: &Ctx<'t, T>, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        if x.shape()[1] != 1 {
            return Err(Error::Shape(format!(
                "G_Block takes a single-channel gradient image, got {:?}",
                x.shape()
            )));
        }
        self.layer2.forward(ctx, &self.layer1.forward(ctx, x)?)
    }
}

/// `s = main + grad; s + body(s)` with a two-layer conv-norm-ReLU body.
#[derive(Clone, Debug)]
pub struct ResFuse {
    pub layer1: ConvBnRelu,
    pub layer2: ConvBnRelu,
}

impl ResFuse {
    pub fn new<T: Float>(b: &mut ParamBuilder<'_, T>, channels: usize) -> Result<Self> {
        Ok(Self {
            layer1: ConvBnRelu::new(b, "conv1", "bn1", channels, channels)?,
            layer2: ConvBnRelu::new(b, "conv2", "bn2", channels, channels)?,
        })
    }

    pub fn forward<'t, T: Float>(
        &self,
        ctx: &Ctx<'t, T>,
        main: &Var<'t, T>,
        grad: &Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        let s = main.add(grad)?;
        let body = self.layer2.forward(ctx, &self.layer1.forward(ctx, &s)?)?;
        s.add(&body)
    }
}

#[derive(Clone, Debug)]
struct GsmLevel {
    gblock: Option<GBlock>,
    /// Channel alignment of pooled shared features (`MGMRes`, levels ≥ 2).
    align: Option<Conv2d>,
    res: Option<ResFuse>,
}

/// The connection between the gradient pyramid and the main branch.
/// Parameters live under `level1` … `level5` of the builder's prefix.
#[derive(Clone, Debug)]
pub struct Gsm {
    mode: GsmMode,
    levels: Vec<GsmLevel>,
}

impl Gsm {
    pub fn new<T: Float>(b: &mut ParamBuilder<'_, T>, channels: &[usize], mode: GsmMode) -> Result<Self> {
        let levels = channels
            .iter()
            .enumerate()
            .map(|(k, &c)| {
                let mut lb = b.pp(format!("level{}", k + 1));
                let gblock = match mode {
                    GsmMode::MGMRes if k > 0 => None,
                    GsmMode::MGMRes => Some(GBlock::new(&mut lb.pp("gblock"), c)?),
                    _ => Some(GBlock::new(&mut lb.pp("gblock"), c)?),
                };
                let align = (mode == GsmMode::MGMRes && k > 0)
                    .then(|| Conv2d::new(&mut lb.pp("align"), channels[0], c, 1, false))
                    .transpose()?;
                let res = (mode != GsmMode::MGAdd)
                    .then(|| ResFuse::new(&mut lb.pp("res"), c))
                    .transpose()?;
                Ok(GsmLevel { gblock, align, res })
            })
            .collect::<Result<_>>()?;
        Ok(Self { mode, levels })
    }

    pub fn mode(&self) -> GsmMode {
        self.mode
    }

    /// Gradient features for every scale, from the pooled gradient images
    /// (`pyramid[k]` is `[N,1,H/2^k,W/2^k]`).
    pub fn supplementary_features<'t, T: Float>(
        &self,
        ctx: &Ctx<'t, T>,
        pyramid: &[Var<'t, T>],
    ) -> Result<Vec<Var<'t, T>>> {
        if pyramid.len() != self.levels.len() {
            return Err(Error::Shape(format!(
                "GSM has {} levels, pyramid has {}",
                self.levels.len(),
                pyramid.len()
            )));
        }
        match self.mode {
            GsmMode::MGRes | GsmMode::MGAdd => self
                .levels
                .iter()
                .zip(pyramid)
                .map(|(lvl, p)| lvl.gblock.as_ref().unwrap().forward(ctx, p))
                .collect(),
            GsmMode::MGMRes => {
                let base = self.levels[0].gblock.as_ref().unwrap().forward(ctx, &pyramid[0])?;
                let mut out = Vec::with_capacity(self.levels.len());
                let mut pooled = base.clone();
                out.push(base);
                for lvl in &self.levels[1..] {
                    pooled = ops::max_pool2(&pooled)?;
                    out.push(lvl.align.as_ref().unwrap().forward(ctx, &pooled)?);
                }
                Ok(out)
            }
        }
    }

    /// Merges gradient features into the main-branch map at `level`.
    pub fn fuse<'t, T: Float>(
        &self,
        ctx: &Ctx<'t, T>,
        level: usize,
        main: &Var<'t, T>,
        grad: &Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        if main.shape() != grad.shape() {
            return Err(Error::Shape(format!(
                "GSM level {}: main {:?} vs gradient features {:?}",
                level + 1,
                main.shape(),
                grad.shape()
            )));
        }
        match &self.levels[level].res {
            Some(res) => res.forward(ctx, main, grad),
            None => main.add(grad),
        }
    }

    /// Full per-level application for the modes that take the raw pooled
    /// gradient at that level (`MGRes`, `MGAdd`).
    pub fn apply_level<'t, T: Float>(
        &self,
        ctx: &Ctx<'t, T>,
        level: usize,
        main: &Var<'t, T>,
        pyramid_level: &Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        let Some(gblock) = &self.levels[level].gblock else {
            return Err(Error::Config(format!(
                "{} level {} has no G_Block; use supplementary_features",
                self.mode,
                level + 1
            )));
        };
        let [n, _, h, w] = main.shape();
        if pyramid_level.shape() != [n, 1, h, w] {
            return Err(Error::Shape(format!(
                "pyramid level {:?} does not match main {:?}",
                pyramid_level.shape(),
                main.shape()
            )));
        }
        let g = gblock.forward(ctx, pyramid_level)?;
        self.fuse(ctx, level, main, &g)
    }
}
