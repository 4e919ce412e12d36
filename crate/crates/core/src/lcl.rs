//! Local contrast learning applied to every scale between extraction and
//! fusion.
//!
//! The transform is pluggable: anything mapping a feature map to a feature
//! map of the same shape fits. The default emphasizes centre-versus-
//! surround differences:
//!
//! ```text
//! contrast = relu(x − mean_k×k(x))      (replicate padding)
//! out      = x + conv1×1(contrast)
//! ```

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::nn::{Conv2d, Ctx, Module, ParamBuilder};
use crate::ops;
use crate::tensor::Float;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LclConfig {
    pub enabled: bool,
    pub kernel: usize,
}

impl Default for LclConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            kernel: 3,
        }
    }
}

impl LclConfig {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel < 3 || self.kernel % 2 == 0 {
            return Err(Error::Config(format!(
                "local contrast kernel must be odd and >= 3, got {}",
                self.kernel
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Lcl {
    config: LclConfig,
    proj: Option<Conv2d>,
}

impl Lcl {
    pub fn new<T: Float>(b: &mut ParamBuilder<'_, T>, channels: usize, config: LclConfig) -> Result<Self> {
        config.validate()?;
        let proj = config
            .enabled
            .then(|| Conv2d::new(&mut b.pp("proj"), channels, channels, 1, true))
            .transpose()?;
        Ok(Self { config, proj })
    }

    pub fn config(&self) -> LclConfig {
        self.config
    }

    /// The rectified centre-minus-surround term.
    pub fn contrast<'t, T: Float>(&self, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        let surround = ops::avg_pool_replicate(x, self.config.kernel)?;
        Ok(x.sub(&surround)?.relu())
    }
}

impl Module for Lcl {
    fn forward<'t, T: Float>(&self, ctx: &Ctx<'t, T>, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        let Some(proj) = &self.proj else {
            return Ok(x.clone());
        };
        let c = self.contrast(x)?;
        x.add(&proj.forward(ctx, &c)?)
    }
}
