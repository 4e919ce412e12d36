//! The command implementations behind the `gglnet` binary. Each command
//! writes only under the configured output directory.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::checkpoint;
use crate::config::RunConfig;
use crate::data::{
    load_dataset, save_gray_png, split_dataset, synth_generate, write_dataset, DatasetSpec, Sample,
};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_scores, roc_sweep, MetricsReport, Projection, RocCurve};
use crate::model::{GglNet, MaskImage, ScoreMap, Variant};
use crate::plot;
use crate::preprocess::{gradient_magnitude, GrayImage};
use crate::train::{predict_scores, EpochLog, PreparedSet, Trainer};

pub const CHECKPOINT_FILE: &str = "checkpoint.safetensors";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const ABLATION_FILE: &str = "ablation.csv";
pub const ABLATION_DETAIL_FILE: &str = "ablation_detail.csv";
pub const ROC_FILE: &str = "roc.csv";

/// Command-line values that override the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub config: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Also reseeds the synthetic generator.
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub step: Option<f64>,
    pub threshold: Option<f32>,
}

impl Overrides {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        if let Some(d) = &self.data {
            cfg.data = Some(d.clone());
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
            cfg.synth.seed = s;
        }
        if let Some(e) = self.epochs {
            cfg.epochs = e;
        }
        if let Some(s) = self.step {
            cfg.step = s;
        }
        if let Some(t) = self.threshold {
            cfg.threshold = t;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// `--checkpoint`, or the one `train` writes into the output dir.
    pub fn checkpoint_path(&self, cfg: &RunConfig) -> PathBuf {
        self.checkpoint
            .clone()
            .unwrap_or_else(|| cfg.out.join(CHECKPOINT_FILE))
    }
}

/// Process exit status for an error: 1 for usage/config problems, 2 for
/// everything that went wrong at run time.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 1,
        _ => 2,
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn create_file(path: &Path) -> Result<BufWriter<fs::File>> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Train and test samples: from the dataset dir when one is configured,
/// otherwise generated and split.
pub fn load_splits(cfg: &RunConfig) -> Result<(Vec<Sample>, Vec<Sample>)> {
    match &cfg.data {
        Some(root) => {
            let train = load_dataset(&DatasetSpec::from_split_file(root, "train.txt", cfg.image_size)?)?;
            let test = load_dataset(&DatasetSpec::from_split_file(root, "test.txt", cfg.image_size)?)?;
            Ok((train, test))
        }
        None => {
            let samples = synth_generate(&cfg.synth)?;
            let ids: Vec<_> = samples.iter().map(|s| s.id.clone()).collect();
            let (train_ids, _) = split_dataset(&ids, cfg.split, cfg.seed)?;
            let (train, test) = samples.into_iter().partition(|s| train_ids.contains(&s.id));
            Ok((train, test))
        }
    }
}

/// Writes a synthetic dataset (images, masks, split files) to `cfg.out`.
pub fn cmd_synth(cfg: &RunConfig) -> Result<usize> {
    let samples = synth_generate(&cfg.synth)?;
    let ids: Vec<_> = samples.iter().map(|s| s.id.clone()).collect();
    let (train, test) = split_dataset(&ids, cfg.split, cfg.seed)?;
    write_dataset(&cfg.out, &samples, &train, &test)?;
    Ok(samples.len())
}

pub struct TrainSummary {
    pub history: Vec<EpochLog>,
    pub best_epoch: usize,
    pub checkpoint: PathBuf,
    pub parameters: usize,
}

fn train_variant(cfg: &RunConfig, variant: &Variant, train: &PreparedSet, test: &PreparedSet, out: &Path) -> Result<TrainSummary> {
    create_dir(out)?;
    let model_cfg = cfg.model_config(variant);
    let (net, store) = GglNet::init::<f32>(model_cfg.clone(), cfg.seed)?;
    let parameters = store.num_parameters();
    let ckpt = out.join(CHECKPOINT_FILE);
    let mut log = create_file(&out.join(TRAIN_LOG_FILE))?;
    writeln!(log, "{}", EpochLog::CSV_HEADER).map_err(|e| Error::io(out, e))?;
    let mut trainer = Trainer::new(net, store, cfg.train_config());
    let report = trainer.fit(train, test, |row, best, store| {
        writeln!(log, "{}", row.csv_row()).map_err(|e| Error::io(out, e))?;
        log.flush().map_err(|e| Error::io(out, e))?;
        if best {
            checkpoint::save(store, &model_cfg, &ckpt)?;
        }
        Ok(())
    })?;
    Ok(TrainSummary {
        history: report.history,
        best_epoch: report.best_epoch,
        checkpoint: ckpt,
        parameters,
    })
}

/// Trains the configured variant; writes the best-nIoU checkpoint, the
/// per-epoch log and the resolved config.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainSummary> {
    create_dir(&cfg.out)?;
    write_text(&cfg.out.join("config.txt"), &cfg.to_text())?;
    let (train, test) = load_splits(cfg)?;
    let (train, test) = (PreparedSet::new(&train)?, PreparedSet::new(&test)?);
    train_variant(cfg, &cfg.variant, &train, &test, &cfg.out)
}

/// Metrics for given score maps, also written as a one-row CSV. This is
/// the tail of `eval`, exposed so scores can be supplied directly.
pub fn eval_scores(cfg: &RunConfig, label: &str, scores: &[ScoreMap], masks: &[MaskImage]) -> Result<MetricsReport> {
    let report = evaluate_scores(scores, masks, cfg.threshold, cfg.match_dist)?;
    create_dir(&cfg.out)?;
    let text = format!("{}\n{}\n", MetricsReport::CSV_HEADER, report.csv_row(label));
    write_text(&cfg.out.join(METRICS_FILE), &text)?;
    Ok(report)
}

fn test_scores(cfg: &RunConfig, checkpoint: &Path) -> Result<(Vec<ScoreMap>, Vec<MaskImage>, String)> {
    let (net, store) = checkpoint::load_model::<f32>(checkpoint, None)?;
    let (_, test) = load_splits(cfg)?;
    let test = PreparedSet::new(&test)?;
    let scores = predict_scores(&net, &store, &test, cfg.batch_size)?;
    let label = crate::model::describe(&net.config().variant);
    Ok((scores, test.masks, label))
}

pub fn cmd_eval(cfg: &RunConfig, checkpoint: &Path) -> Result<MetricsReport> {
    let (scores, masks, label) = test_scores(cfg, checkpoint)?;
    eval_scores(cfg, &label, &scores, &masks)
}

/// ROC files for given score maps: the full `(τ, TPR, FPR)` curve, its
/// three projections as CSV, and a PNG per projection.
pub fn roc_outputs(cfg: &RunConfig, scores: &[ScoreMap], masks: &[MaskImage]) -> Result<RocCurve> {
    let curve = roc_sweep(scores, masks, cfg.step)?;
    create_dir(&cfg.out)?;
    let path = cfg.out.join(ROC_FILE);
    curve.write_csv(create_file(&path)?).map_err(|e| Error::io(&path, e))?;
    for proj in Projection::ALL {
        let csv = cfg.out.join(format!("roc_{}.csv", proj.name()));
        curve
            .write_projection_csv(create_file(&csv)?, proj)
            .map_err(|e| Error::io(&csv, e))?;
        plot::save_projection(&curve, proj, &cfg.out.join(format!("roc_{}.png", proj.name())))?;
    }
    Ok(curve)
}

pub fn cmd_roc(cfg: &RunConfig, checkpoint: &Path) -> Result<RocCurve> {
    let (scores, masks, _) = test_scores(cfg, checkpoint)?;
    roc_outputs(cfg, &scores, &masks)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: Variant,
    pub parameters: usize,
    pub best_epoch: usize,
    pub metrics: MetricsReport,
}

/// Trains and evaluates every configured variant with the same seed, data
/// and budget. Per-variant artifacts go to `out/<variant>/`.
pub fn cmd_ablate(cfg: &RunConfig) -> Result<Vec<AblationRow>> {
    if cfg.variants.is_empty() {
        return Err(Error::Config("no variants to ablate".into()));
    }
    create_dir(&cfg.out)?;
    write_text(&cfg.out.join("config.txt"), &cfg.to_text())?;
    let (train, test) = load_splits(cfg)?;
    let (train, test) = (PreparedSet::new(&train)?, PreparedSet::new(&test)?);
    let mut rows = Vec::with_capacity(cfg.variants.len());
    for variant in &cfg.variants {
        log::info!("ablation: {}", variant.scheme);
        let dir = cfg.out.join(variant.name.replace('+', "_"));
        let s = train_variant(cfg, variant, &train, &test, &dir)?;
        let best = s
            .history
            .iter()
            .find(|l| l.epoch == s.best_epoch)
            .expect("best epoch is in history");
        rows.push(AblationRow {
            variant: *variant,
            parameters: s.parameters,
            best_epoch: s.best_epoch,
            metrics: best.metrics.clone(),
        });
    }
    let mut table = String::from("scheme,iou,niou\n");
    let mut detail = String::from("variant,scheme,group,parameters,best_epoch,iou,niou,pd,fa\n");
    for r in &rows {
        let m = &r.metrics;
        let scheme = crate::metrics::csv_field(r.variant.scheme);
        table += &format!("{scheme},{:.6},{:.6}\n", m.iou, m.niou);
        detail += &format!(
            "{},{scheme},{},{},{},{:.6},{:.6},{:.6},{:.9}\n",
            r.variant.name, r.variant.group, r.parameters, r.best_epoch, m.iou, m.niou, m.pd, m.fa
        );
    }
    write_text(&cfg.out.join(ABLATION_FILE), &table)?;
    write_text(&cfg.out.join(ABLATION_DETAIL_FILE), &detail)?;
    Ok(rows)
}

fn gradient_png(src: &Path, dst: &Path) -> Result<()> {
    let img = image::open(src)
        .map_err(|source| Error::Image {
            path: src.to_path_buf(),
            source,
        })?
        .to_luma8();
    let (w, h) = img.dimensions();
    let px = ndarray::Array2::from_shape_fn((h as usize, w as usize), |(y, x)| {
        img.get_pixel(x as u32, y as u32)[0] as f32 / 255.0
    });
    let g = gradient_magnitude(&GrayImage::new(px)?)?;
    save_gray_png(g.pixels(), dst)
}

/// Gradient-magnitude PNGs for one image or every PNG in a directory
/// (its `images/` subdirectory when present). Returns the number written.
pub fn cmd_preprocess(input: &Path, out: &Path) -> Result<usize> {
    if input.is_file() {
        create_dir(out)?;
        let name = input.file_name().unwrap_or_default();
        gradient_png(input, &out.join(name))?;
        return Ok(1);
    }
    let dir = if input.join("images").is_dir() {
        input.join("images")
    } else {
        input.to_path_buf()
    };
    let mut files: Vec<_> = fs::read_dir(&dir)
        .map_err(|e| Error::io(&dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    if files.is_empty() {
        return Err(Error::InvalidInput(format!("no PNG images in {}", dir.display())));
    }
    files.sort();
    create_dir(out)?;
    for f in &files {
        gradient_png(f, &out.join(f.file_name().unwrap()))?;
    }
    Ok(files.len())
}
