//! Parameter storage and the basic layers every network block is made of.
//!
//! Layers own no tensors. They hold [`ParamId`] handles into a
//! [`ParamStore`], which keeps values under hierarchical names such as
//! `main.stage3.block2.conv1.weight`. Those names are what checkpoints
//! store, so they are a compatibility contract.
//!
//! Because layers are element-type agnostic, the same architecture can be
//! instantiated with an `f32` store for training and an `f64` store for
//! gradient checks.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use rand_chacha::ChaCha8Rng;

use crate::autograd::{Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::ops;
use crate::tensor::{Float, Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Updated by the optimizer.
    Trainable,
    /// Saved with the model but not optimized (normalization statistics).
    Buffer,
}

#[derive(Clone, Debug)]
pub struct ParamEntry<T> {
    pub name: String,
    pub kind: ParamKind,
    value: Arc<Tensor<T>>,
}

impl<T: Float> ParamEntry<T> {
    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    entries: Vec<ParamEntry<T>>,
    by_name: HashMap<String, usize>,
}

impl<T: Float> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: String, value: Tensor<T>, kind: ParamKind) -> Result<ParamId> {
        if self.by_name.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        self.by_name.insert(name.clone(), self.entries.len());
        self.entries.push(ParamEntry {
            name,
            kind,
            value: Arc::new(value),
        });
        Ok(ParamId(self.entries.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub(crate) fn shared(&self, id: ParamId) -> Arc<Tensor<T>> {
        Arc::clone(&self.entries[id.0].value)
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        Arc::make_mut(&mut self.entries[id.0].value)
    }

    /// Replaces a value; the shape must not change.
    pub fn set(&mut self, id: ParamId, value: Tensor<T>) -> Result<()> {
        let entry = &mut self.entries[id.0];
        if entry.value.shape() != value.shape() {
            return Err(Error::Shape(format!(
                "{}: expected {:?}, got {:?}",
                entry.name,
                entry.value.shape(),
                value.shape()
            )));
        }
        entry.value = Arc::new(value);
        Ok(())
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn kind(&self, id: ParamId) -> ParamKind {
        self.entries[id.0].kind
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn trainable_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.ids()
            .filter(|&id| self.entries[id.0].kind == ParamKind::Trainable)
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    /// Number of trainable scalars.
    pub fn num_parameters(&self) -> usize {
        self.trainable_ids().map(|id| self.get(id).len()).sum()
    }

    /// Trainable scalars whose name starts with `prefix`.
    pub fn num_parameters_under(&self, prefix: &str) -> usize {
        self.trainable_ids()
            .filter(|&id| self.name(id).starts_with(prefix))
            .map(|id| self.get(id).len())
            .sum()
    }

    /// Sets every trainable parameter to `value`.
    pub fn fill_trainable(&mut self, value: T) {
        let ids: Vec<_> = self.trainable_ids().collect();
        for id in ids {
            let shape = self.get(id).shape();
            self.entries[id.0].value = Arc::new(Tensor::full(shape, value));
        }
    }

    /// Same names and values in another element type.
    pub fn cast<U: Float>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    kind: e.kind,
                    value: Arc::new(e.value.cast()),
                })
                .collect(),
            by_name: self.by_name.clone(),
        }
    }

    pub fn apply_updates(&mut self, updates: Vec<(ParamId, Tensor<T>)>) {
        for (id, v) in updates {
            self.entries[id.0].value = Arc::new(v);
        }
    }
}

/// Creates parameters under a name prefix, drawing initial values from a
/// seeded generator.
pub struct ParamBuilder<'a, T> {
    store: &'a mut ParamStore<T>,
    rng: &'a mut ChaCha8Rng,
    prefix: String,
}

impl<'a, T: Float> ParamBuilder<'a, T> {
    pub fn new(store: &'a mut ParamStore<T>, rng: &'a mut ChaCha8Rng) -> Self {
        Self {
            store,
            rng,
            prefix: String::new(),
        }
    }

    /// Sub-builder for a nested component.
    pub fn pp(&mut self, name: impl AsRef<str>) -> ParamBuilder<'_, T> {
        let prefix = self.path(name.as_ref());
        ParamBuilder {
            store: &mut *self.store,
            rng: &mut *self.rng,
            prefix,
        }
    }

    fn path(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    /// He-normal initialization: `N(0, 2 / fan_in)`.
    pub fn kaiming(&mut self, name: &str, shape: Shape, fan_in: usize) -> Result<ParamId> {
        let std = (2.0 / fan_in.max(1) as f64).sqrt();
        let value = Tensor::randn(shape, std, &mut *self.rng);
        self.store.insert(self.path(name), value, ParamKind::Trainable)
    }

    pub fn constant(&mut self, name: &str, shape: Shape, value: f64) -> Result<ParamId> {
        let value = Tensor::full(shape, T::from_f64_lossy(value));
        self.store.insert(self.path(name), value, ParamKind::Trainable)
    }

    pub fn buffer(&mut self, name: &str, value: Tensor<T>) -> Result<ParamId> {
        self.store.insert(self.path(name), value, ParamKind::Buffer)
    }
}

/// State shared by one forward pass: the tape, the parameter values and
/// whether normalization layers run in training mode.
pub struct Ctx<'t, T> {
    tape: &'t Tape<T>,
    store: &'t ParamStore<T>,
    train: bool,
    params: RefCell<HashMap<ParamId, Var<'t, T>>>,
    updates: RefCell<Vec<(ParamId, Tensor<T>)>>,
}

impl<'t, T: Float> Ctx<'t, T> {
    pub fn new(tape: &'t Tape<T>, store: &'t ParamStore<T>, train: bool) -> Self {
        Self {
            tape,
            store,
            train,
            params: RefCell::new(HashMap::new()),
            updates: RefCell::new(Vec::new()),
        }
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn store(&self) -> &'t ParamStore<T> {
        self.store
    }

    pub fn is_train(&self) -> bool {
        self.train
    }

    /// The parameter as a tape variable. Repeated calls in one pass return
    /// the same node so gradients of shared weights accumulate.
    pub fn param(&self, id: ParamId) -> Var<'t, T> {
        if let Some(v) = self.params.borrow().get(&id) {
            return v.clone();
        }
        let value = self.store.shared(id);
        let var = match self.store.kind(id) {
            ParamKind::Trainable => self.tape.leaf_shared(value),
            ParamKind::Buffer => self.tape.constant((*value).clone()),
        };
        self.params.borrow_mut().insert(id, var.clone());
        var
    }

    pub(crate) fn push_update(&self, id: ParamId, value: Tensor<T>) {
        self.updates.borrow_mut().push((id, value));
    }

    /// Buffer updates (running statistics) produced during the pass.
    pub fn take_updates(&self) -> Vec<(ParamId, Tensor<T>)> {
        std::mem::take(&mut *self.updates.borrow_mut())
    }

    /// Gradients of every parameter touched in this pass.
    pub fn param_grads(&self, grads: &Gradients<T>) -> Vec<(ParamId, Tensor<T>)> {
        let mut out: Vec<_> = self
            .params
            .borrow()
            .iter()
            .filter_map(|(&id, var)| {
                let node = var.node_id()?;
                Some((id, grads.by_node(node)?.clone()))
            })
            .collect();
        out.sort_by_key(|(id, _)| *id);
        out
    }
}

/// A single-input layer.
pub trait Module {
    fn forward<'t, T: Float>(&self, ctx: &Ctx<'t, T>, x: &Var<'t, T>) -> Result<Var<'t, T>>;
}

/// Stride-1 convolution with "same" zero padding for odd kernels.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
}

impl Conv2d {
    pub fn new<T: Float>(
        b: &mut ParamBuilder<'_, T>,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        bias: bool,
    ) -> Result<Self> {
        if kernel % 2 == 0 {
            return Err(Error::Config(format!("conv kernel {kernel} must be odd")));
        }
        let fan_in = in_channels * kernel * kernel;
        let weight = b.kaiming("weight", [out_channels, in_channels, kernel, kernel], fan_in)?;
        let bias = if bias {
            Some(b.constant("bias", [1, out_channels, 1, 1], 0.0)?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
        })
    }

    /// Same layout with every weight and bias zero.
    pub fn zeros<T: Float>(
        b: &mut ParamBuilder<'_, T>,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        bias: bool,
    ) -> Result<Self> {
        if kernel % 2 == 0 {
            return Err(Error::Config(format!("conv kernel {kernel} must be odd")));
        }
        let weight = b.constant("weight", [out_channels, in_channels, kernel, kernel], 0.0)?;
        let bias = bias
            .then(|| b.constant("bias", [1, out_channels, 1, 1], 0.0))
            .transpose()?;
        Ok(Self {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
        })
    }
}

impl Module for Conv2d {
    fn forward<'t, T: Float>(&self, ctx: &Ctx<'t, T>, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        let w = ctx.param(self.weight);
        let b = self.bias.map(|id| ctx.param(id));
        ops::conv2d(x, &w, b.as_ref(), self.kernel / 2)
    }
}

/// Per-channel batch normalization with running statistics.
#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNorm2d {
    pub fn new<T: Float>(b: &mut ParamBuilder<'_, T>, channels: usize) -> Result<Self> {
        let shape = [1, channels, 1, 1];
        Ok(Self {
            gamma: b.constant("weight", shape, 1.0)?,
            beta: b.constant("bias", shape, 0.0)?,
            running_mean: b.buffer("running_mean", Tensor::zeros(shape))?,
            running_var: b.buffer("running_var", Tensor::ones(shape))?,
            eps: 1e-5,
            momentum: 0.1,
        })
    }
}

impl Module for BatchNorm2d {
    fn forward<'t, T: Float>(&self, ctx: &Ctx<'t, T>, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        let gamma = ctx.param(self.gamma);
        let beta = ctx.param(self.beta);
        let store = ctx.store();
        if !ctx.is_train() {
            return ops::batch_norm_eval(
                x,
                &gamma,
                &beta,
                store.get(self.running_mean).data(),
                store.get(self.running_var).data(),
                self.eps,
            );
        }
        let (y, stats) = ops::batch_norm_train(x, &gamma, &beta, self.eps)?;
        let m = T::from_f64_lossy(self.momentum);
        let keep = T::one() - m;
        let unbias = if stats.count > 1 {
            T::from_usize(stats.count).unwrap() / T::from_usize(stats.count - 1).unwrap()
        } else {
            T::one()
        };
        let rm = store
            .get(self.running_mean)
            .data()
            .iter()
            .zip(&stats.mean)
            .map(|(&r, &b)| keep * r + m * b)
            .collect();
        let rv = store
            .get(self.running_var)
            .data()
            .iter()
            .zip(&stats.var)
            .map(|(&r, &b)| keep * r + m * b * unbias)
            .collect();
        let shape = gamma.shape();
        ctx.push_update(self.running_mean, Tensor::from_vec(shape, rm)?);
        ctx.push_update(self.running_var, Tensor::from_vec(shape, rv)?);
        Ok(y)
    }
}

/// `conv3×3 → batch norm → ReLU`.
#[derive(Clone, Debug)]
pub struct ConvBnRelu {
    pub conv: Conv2d,
    pub bn: BatchNorm2d,
}

impl ConvBnRelu {
    /// Parameters land under `<conv_name>.*` and `<bn_name>.*`.
    pub fn new<T: Float>(
        b: &mut ParamBuilder<'_, T>,
        conv_name: &str,
        bn_name: &str,
        in_channels: usize,
        out_channels: usize,
    ) -> Result<Self> {
        Ok(Self {
            conv: Conv2d::new(&mut b.pp(conv_name), in_channels, out_channels, 3, true)?,
            bn: BatchNorm2d::new(&mut b.pp(bn_name), out_channels)?,
        })
    }
}

impl Module for ConvBnRelu {
    fn forward<'t, T: Float>(&self, ctx: &Ctx<'t, T>, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        let y = self.conv.forward(ctx, x)?;
        Ok(self.bn.forward(ctx, &y)?.relu())
    }
}
