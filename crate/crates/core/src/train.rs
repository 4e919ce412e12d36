//! Training and evaluation loops.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::Tape;
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::metrics::{evaluate_scores, MetricsReport, DEFAULT_MATCH_DIST, DEFAULT_THRESHOLD};
use crate::model::{mask_batch, soft_iou_loss, GglNet, MaskImage, ModelInput, PreparedImage, ScoreMap};
use crate::nn::{Ctx, ParamStore};
use crate::optim::{Adam, AdamConfig};
use crate::tensor::{Float, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub threshold: f32,
    pub match_dist: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            batch_size: 4,
            lr: 1e-4,
            seed: 0,
            threshold: DEFAULT_THRESHOLD,
            match_dist: DEFAULT_MATCH_DIST,
        }
    }
}

/// Samples with their pyramids computed once up front.
#[derive(Clone, Debug)]
pub struct PreparedSet {
    pub ids: Vec<String>,
    pub inputs: Vec<PreparedImage>,
    pub masks: Vec<MaskImage>,
}

impl PreparedSet {
    pub fn new(samples: &[Sample]) -> Result<Self> {
        Ok(Self {
            ids: samples.iter().map(|s| s.id.clone()).collect(),
            inputs: samples
                .iter()
                .map(|s| PreparedImage::new(&s.image))
                .collect::<Result<_>>()?,
            masks: samples.iter().map(|s| s.mask.clone()).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn batch<T: Float>(&self, idx: &[usize]) -> Result<(ModelInput<T>, Tensor<T>)> {
        let inputs: Vec<_> = idx.iter().map(|&i| &self.inputs[i]).collect();
        let masks: Vec<_> = idx.iter().map(|&i| &self.masks[i]).collect();
        Ok((ModelInput::from_prepared(&inputs)?, mask_batch(&masks)?))
    }
}

/// One optimizer step on a batch; returns the loss before the update.
pub fn train_step<T: Float>(
    net: &GglNet,
    store: &mut ParamStore<T>,
    adam: &mut Adam<T>,
    input: &ModelInput<T>,
    target: &Tensor<T>,
) -> Result<f64> {
    let (loss, grads, updates) = {
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, store, true);
        let p = net.forward(&ctx, input)?;
        let loss = soft_iou_loss(&p, target)?;
        let value = loss.value().data()[0].to_f64().unwrap_or(f64::NAN);
        if !value.is_finite() {
            return Err(Error::NonFinite(format!(
                "loss {value} at optimizer step {} (score range [{:?}, {:?}])",
                adam.steps() + 1,
                p.value().min_value(),
                p.value().max_value()
            )));
        }
        let g = tape.backward(&loss);
        (value, ctx.param_grads(&g), ctx.take_updates())
    };
    if let Some((id, _)) = grads.iter().find(|(_, g)| !g.all_finite()) {
        return Err(Error::NonFinite(format!(
            "gradient of {} at optimizer step {}",
            store.name(*id),
            adam.steps() + 1
        )));
    }
    adam.step(store, grads);
    store.apply_updates(updates);
    Ok(loss)
}

/// Score maps for every image, in eval mode, `batch_size` at a time.
pub fn predict_scores<T: Float>(
    net: &GglNet,
    store: &ParamStore<T>,
    set: &PreparedSet,
    batch_size: usize,
) -> Result<Vec<ScoreMap>> {
    let idx: Vec<usize> = (0..set.len()).collect();
    let mut out = Vec::with_capacity(set.len());
    for chunk in idx.chunks(batch_size.max(1)) {
        let (input, _) = set.batch::<T>(chunk)?;
        out.extend(ScoreMap::from_batch(&net.predict(store, &input)?)?);
    }
    Ok(out)
}

pub fn evaluate_model<T: Float>(
    net: &GglNet,
    store: &ParamStore<T>,
    set: &PreparedSet,
    config: &TrainConfig,
) -> Result<MetricsReport> {
    let scores = predict_scores(net, store, set, config.batch_size)?;
    evaluate_scores(&scores, &set.masks, config.threshold, config.match_dist)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub metrics: MetricsReport,
}

impl EpochLog {
    pub const CSV_HEADER: &'static str = "epoch,loss,iou,niou,pd,fa";

    pub fn csv_row(&self) -> String {
        let m = &self.metrics;
        format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.9}",
            self.epoch, self.loss, m.iou, m.niou, m.pd, m.fa
        )
    }
}

/// Owns the parameters and optimizer state across epochs.
pub struct Trainer<T> {
    pub net: GglNet,
    pub store: ParamStore<T>,
    pub adam: Adam<T>,
    pub config: TrainConfig,
    shuffle: ChaCha8Rng,
    epoch: usize,
}

impl<T: Float> Trainer<T> {
    pub fn new(net: GglNet, store: ParamStore<T>, config: TrainConfig) -> Self {
        let mut shuffle = ChaCha8Rng::seed_from_u64(config.seed);
        shuffle.set_stream(1);
        Self {
            net,
            store,
            adam: Adam::new(AdamConfig {
                lr: config.lr,
                ..AdamConfig::default()
            }),
            config,
            shuffle,
            epoch: 0,
        }
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// One shuffled pass; returns the mean batch loss.
    pub fn run_epoch(&mut self, train: &PreparedSet) -> Result<f64> {
        if train.is_empty() {
            return Err(Error::InvalidInput("empty training set".into()));
        }
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut self.shuffle);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(self.config.batch_size.max(1)) {
            let (input, target) = train.batch::<T>(chunk)?;
            total += train_step(&self.net, &mut self.store, &mut self.adam, &input, &target)?;
            batches += 1;
        }
        self.epoch += 1;
        Ok(total / batches as f64)
    }

    /// Runs all configured epochs, evaluating on `test` after each one.
    /// `on_epoch` sees the log row and whether it is the best nIoU so far.
    pub fn fit(
        &mut self,
        train: &PreparedSet,
        test: &PreparedSet,
        mut on_epoch: impl FnMut(&EpochLog, bool, &ParamStore<T>) -> Result<()>,
    ) -> Result<FitReport<T>> {
        let mut history = Vec::with_capacity(self.config.epochs);
        let mut best: Option<(usize, f64, ParamStore<T>)> = None;
        for _ in 0..self.config.epochs {
            let loss = self.run_epoch(train)?;
            let metrics = evaluate_model(&self.net, &self.store, test, &self.config)?;
            let log = EpochLog {
                epoch: self.epoch,
                loss,
                metrics,
            };
            let is_best = best.as_ref().map_or(true, |b| log.metrics.niou > b.1);
            if is_best {
                best = Some((log.epoch, log.metrics.niou, self.store.clone()));
            }
            log::info!("{}", log.csv_row());
            on_epoch(&log, is_best, &self.store)?;
            history.push(log);
        }
        let (best_epoch, _, best_store) = best.ok_or_else(|| Error::Config("epochs must be at least 1".into()))?;
        Ok(FitReport {
            history,
            best_epoch,
            best_store,
        })
    }
}

pub struct FitReport<T> {
    pub history: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_store: ParamStore<T>,
}
