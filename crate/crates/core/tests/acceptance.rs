//! Acceptance suite: one PASS/FAIL/SKIP line per criterion.
//!
//! ```text
//! cargo test --release --test acceptance            # all criteria
//! cargo test --release --test acceptance -- 2 4 9   # a subset
//! ```
//!
//! Criterion 11 runs only when `GGLNET_NUAA_ROOT` points at a dataset
//! directory with `images/`, `masks/`, `train.txt` and `test.txt`.

mod common;

use std::collections::HashSet;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use gglnet::autograd::Tape;
use gglnet::cli;
use gglnet::config::RunConfig;
use gglnet::data::{synth_generate, SynthConfig};
use gglnet::gsm::{Gsm, GsmMode};
use gglnet::metrics::{iou, niou, pd_fa, roc_sweep, DEFAULT_MATCH_DIST};
use gglnet::model::{all_variants, GglNet, ModelConfig, ModelInput, ScoreMap, SOFT_IOU_EPS};
use gglnet::nn::{Ctx, ParamBuilder, ParamStore};
use gglnet::ops;
use gglnet::optim::{Adam, AdamConfig};
use gglnet::preprocess::GrayImage;
use gglnet::tensor::Tensor;
use gglnet::tgfm::{ChannelAttention, FusionMode, SpatialAttention, Tgfm, TgfmConfig};
use gglnet::train::{train_step, PreparedSet, TrainConfig, Trainer};
use ndarray::Array2;
use rand::Rng;

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

use Outcome::*;

fn pass_if(ok: bool, detail: String) -> Outcome {
    if ok {
        Pass(detail)
    } else {
        Fail(detail)
    }
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let mut worst = (0.0, String::new());
    let mut failed = Vec::new();
    for (name, case) in common::gradient_cases() {
        let r = case();
        if r.max_rel >= 1e-4 || r.tensors == 0 {
            failed.push(format!("{name}:{}={:.2e}", r.worst, r.max_rel));
        }
        if r.max_rel >= worst.0 {
            worst = (r.max_rel, format!("{name}:{}", r.worst));
        }
    }
    let t = start.elapsed();
    let detail = format!("worst rel err {:.2e} ({}), {}", worst.0, worst.1, secs(t));
    if !failed.is_empty() {
        return Fail(format!("{detail}; over tolerance: {}", failed.join(", ")));
    }
    pass_if(t < Duration::from_secs(120), detail)
}

fn attention_algebra() -> Outcome {
    let (c, h, w) = (16, 6, 5);
    let mut store = ParamStore::<f64>::new();
    let mut r = common::rng(50);
    let mut b = ParamBuilder::new(&mut store, &mut r);
    let ca = ChannelAttention::new(&mut b.pp("ca"), c, 8).unwrap();
    let sa = SpatialAttention::new(&mut b.pp("sa")).unwrap();
    let tg = Tgfm::new(&mut b.pp("tgfm"), c, c, TgfmConfig { reduction: 8, mode: FusionMode::Tgfm }).unwrap();
    let add = Tgfm::new(&mut b.pp("add"), c, c, TgfmConfig { reduction: 8, mode: FusionMode::Add }).unwrap();
    store.fill_trainable(0.0);

    let tape = Tape::inference();
    let ctx = Ctx::new(&tape, &store, false);
    let x = tape.constant(common::randn([2, c, h, w], 51));
    let y = tape.constant(common::randn([2, c, h, w], 52));
    let cg = ca.gate(&ctx, &y).unwrap().to_tensor();
    let sg = sa.gate(&ctx, &x).unwrap().to_tensor();
    let z = tg.fuse(&ctx, &x, &y).unwrap().to_tensor();
    let z_add = add.fuse(&ctx, &x, &y).unwrap().to_tensor();

    let gates_half = cg.data().iter().chain(sg.data()).all(|&v| v == 0.5);
    let expect = x.value().zip_map(y.value(), |a, b| 0.5 * a + 0.5 * b);
    let tgfm_exact = z.data() == expect.data();
    let add_half = z.data() == z_add.scale(0.5).data();
    pass_if(
        gates_half && tgfm_exact && add_half,
        format!(
            "gates {} values all 0.5: {gates_half}; TGFM == 0.5X+0.5Y: {tgfm_exact}; TGFM == ADD/2: {add_half}",
            cg.len() + sg.len()
        ),
    )
}

fn soft_iou(p: &[f64], y: &[f64], shape: [usize; 4], eps: f64) -> f64 {
    let tape = Tape::inference();
    let p = tape.constant(Tensor::from_vec(shape, p.to_vec()).unwrap());
    let y = Tensor::from_vec(shape, y.to_vec()).unwrap();
    ops::soft_iou_loss(&p, &y, eps).unwrap().value().data()[0]
}

fn soft_iou_oracle() -> Outcome {
    let s = [1, 1, 2, 2];
    let y1 = [0.0, 1.0, 1.0, 0.0];
    let perfect = soft_iou(&y1, &y1, s, 0.0);
    let disjoint = soft_iou(&[0.0; 4], &y1, s, 0.0);
    let hand = soft_iou(&[0.5; 4], &[1.0, 0.0, 0.0, 0.0], s, 0.0);
    // 0.5 / (1 + 3 * 0.5)
    let examples_ok = perfect == 0.0 && disjoint == 1.0 && hand == 1.0 - 0.5 / 2.5;

    let mut r = common::rng(60);
    let h = 1e-6;
    let mut bad = 0;
    for _ in 0..1000 {
        let shape = [1, 1, r.gen_range(1..=6), r.gen_range(1..=6)];
        let n = shape[2] * shape[3];
        let p: Vec<f64> = (0..n).map(|_| r.gen_range(0.01..0.99)).collect();
        let mut y: Vec<f64> = (0..n).map(|_| f64::from(r.gen_bool(0.4) as u8)).collect();
        y[r.gen_range(0..n)] = 1.0;
        let l = soft_iou(&p, &y, shape, SOFT_IOU_EPS);
        let i = r.gen_range(0..n);
        let (mut hi, mut lo) = (p.clone(), p.clone());
        hi[i] += h;
        lo[i] -= h;
        let d = (soft_iou(&hi, &y, shape, SOFT_IOU_EPS) - soft_iou(&lo, &y, shape, SOFT_IOU_EPS)) / (2.0 * h);
        let sign_ok = if y[i] == 1.0 { d < 0.0 } else { d > 0.0 };
        if !(0.0..=1.0).contains(&l) || !sign_ok {
            bad += 1;
        }
    }
    pass_if(
        examples_ok && bad == 0,
        format!(
            "examples (0, 1, 0.8) -> ({perfect}, {disjoint}, {hand}); {bad}/1000 random pairs out of range or wrong sign"
        ),
    )
}

/// 4×4 scores over 11 distinct multiples of 1/16 against counts at every
/// distinct score value.
fn exhaustive_roc_case(r: &mut rand_chacha::ChaCha8Rng) -> Option<String> {
    let mut levels: Vec<u32> = (0..=16).collect();
    while levels.len() > 11 {
        levels.remove(r.gen_range(0..levels.len()));
    }
    let mut values: Vec<u32> = levels.clone();
    while values.len() < 16 {
        values.push(levels[r.gen_range(0..levels.len())]);
    }
    for i in (1..values.len()).rev() {
        values.swap(i, r.gen_range(0..=i));
    }
    let scores = ScoreMap::new(Array2::from_shape_fn((4, 4), |(y, x)| values[y * 4 + x] as f32 / 16.0)).unwrap();
    let mut gt = common::random_mask(r, 4, 4, 0.4);
    if gt.count_positive() == 0 {
        let mut px = gt.pixels().clone();
        px[[0, 0]] = 1;
        gt = gglnet::model::MaskImage::new(px).unwrap();
    }
    let curve = match roc_sweep(&[scores.clone()], &[gt.clone()], 1.0 / 16.0) {
        Ok(c) => c,
        Err(e) => return Some(e.to_string()),
    };
    let pos = gt.count_positive() as f64;
    let neg = 16.0 - pos;
    let distinct: HashSet<u32> = values.iter().copied().collect();
    for v in distinct {
        let tau = v as f64 / 16.0;
        let (mut tp, mut fp) = (0.0, 0.0);
        for (&s, &m) in scores.scores().iter().zip(gt.pixels()) {
            if f64::from(s) > tau {
                if m == 1 {
                    tp += 1.0;
                } else {
                    fp += 1.0;
                }
            }
        }
        let Some(p) = curve.points.iter().find(|p| p.tau == tau) else {
            return Some(format!("tau {tau} missing from the sweep"));
        };
        let fpr = if neg == 0.0 { 0.0 } else { fp / neg };
        if p.tpr != tp / pos || p.fpr != fpr {
            return Some(format!("tau {tau}: ({}, {}) vs ({}, {fpr})", p.tpr, p.fpr, tp / pos));
        }
    }
    None
}

fn metric_oracles() -> Outcome {
    let mut r = common::rng(70);
    let mut mismatches = Vec::new();
    let mut non_monotone = 0;
    for k in 0..1000 {
        let c = common::random_case(&mut r, 16);
        let got_iou = iou(&c.preds, &c.gts).unwrap();
        let got_niou = niou(&c.preds, &c.gts).unwrap();
        let got = pd_fa(&c.preds, &c.gts, DEFAULT_MATCH_DIST).unwrap();
        let (pd, fa) = common::oracle_pd_fa(&c.preds, &c.gts, DEFAULT_MATCH_DIST);
        if got_iou != common::oracle_iou(&c.preds, &c.gts)
            || got_niou != common::oracle_niou(&c.preds, &c.gts)
            || got.pd != pd
            || got.fa != fa
        {
            mismatches.push(format!("case {k} metrics"));
        }
        let step = [0.5, 0.1, 0.05, 0.01][k % 4];
        let curve = roc_sweep(&c.scores, &c.gts, step).unwrap();
        let want = common::oracle_roc(&c.scores, &c.gts, step);
        let same = curve.points.len() == want.len()
            && curve
                .points
                .iter()
                .zip(&want)
                .all(|(p, w)| (p.tau, p.tpr, p.fpr) == *w);
        if !same {
            mismatches.push(format!("case {k} roc"));
        }
        non_monotone += usize::from(!curve.is_monotone());
    }
    let mut exhaustive = 0;
    for _ in 0..200 {
        if let Some(m) = exhaustive_roc_case(&mut r) {
            mismatches.push(format!("4x4 exhaustive: {m}"));
        }
        exhaustive += 1;
    }
    pass_if(
        mismatches.is_empty() && non_monotone == 0,
        format!(
            "1000 random cases + {exhaustive} exhaustive 4x4 ROC cases; {} mismatches{}; {non_monotone} non-monotone sweeps",
            mismatches.len(),
            mismatches.first().map(|m| format!(" (first: {m})")).unwrap_or_default()
        ),
    )
}

/// Trainable scalars of a conv-norm-ReLU layer with a 3×3 kernel and bias.
fn cbr(ci: usize, co: usize) -> usize {
    9 * ci * co + co + 2 * co
}

fn expected_gsm_params(mode: GsmMode, ch: &[usize]) -> usize {
    let gblock = |c| cbr(1, c) + cbr(c, c);
    let res: usize = ch.iter().map(|&c| 2 * cbr(c, c)).sum();
    match mode {
        GsmMode::MGRes => ch.iter().map(|&c| gblock(c)).sum::<usize>() + res,
        GsmMode::MGAdd => ch.iter().map(|&c| gblock(c)).sum(),
        GsmMode::MGMRes => gblock(ch[0]) + ch[1..].iter().map(|&c| ch[0] * c).sum::<usize>() + res,
    }
}

fn gsm_identities() -> Outcome {
    let ch = gglnet::backbone::DEFAULT_CHANNELS;
    let mut lines = Vec::new();
    let mut ok = true;
    let mut counts = Vec::new();
    for (i, mode) in GsmMode::ALL.into_iter().enumerate() {
        let mut store = ParamStore::<f64>::new();
        let mut r = common::rng(80);
        let gsm = Gsm::new(&mut ParamBuilder::new(&mut store, &mut r), &ch, mode).unwrap();
        let count = store.num_parameters();
        let expect = expected_gsm_params(mode, &ch);
        store.fill_trainable(0.0);
        let tape = Tape::inference();
        let mut identity = true;
        for train in [false, true] {
            let ctx = Ctx::new(&tape, &store, train);
            let (h, w) = (16, 16);
            let pyramid: Vec<_> = (0..5)
                .map(|k| tape.constant(common::randn([2, 1, h >> k, w >> k], 81 + k as u64)))
                .collect();
            let feats = gsm.supplementary_features(&ctx, &pyramid).unwrap();
            for (k, &c) in ch.iter().enumerate() {
                let main = common::randn([2, c, h >> k, w >> k], 90 + (i * 5 + k) as u64);
                let out = gsm.fuse(&ctx, k, &tape.constant(main.clone()), &feats[k]).unwrap();
                identity &= out.value().data() == main.data();
            }
        }
        ok &= identity && count == expect;
        counts.push((mode, count));
        lines.push(format!("{mode}: identity {identity}, {count} params (expected {expect})"));
    }
    let res = counts.iter().find(|c| c.0 == GsmMode::MGRes).unwrap().1;
    let mres = counts.iter().find(|c| c.0 == GsmMode::MGMRes).unwrap().1;
    ok &= res != mres;
    pass_if(ok, lines.join("; "))
}

const OVERFIT_LR: f64 = 1e-3;

fn overfit_smoke() -> Outcome {
    let start = Instant::now();
    let samples = synth_generate(&SynthConfig { n_images: 1, seed: 7, ..Default::default() }).unwrap();
    let set = PreparedSet::new(&samples).unwrap();
    let (net, mut store) = GglNet::init::<f32>(ModelConfig::default(), 0).unwrap();
    let mut adam = Adam::new(AdamConfig { lr: OVERFIT_LR, ..Default::default() });
    let (input, target) = set.batch::<f32>(&[0]).unwrap();
    let mut loss = f64::NAN;
    for _ in 0..200 {
        loss = train_step(&net, &mut store, &mut adam, &input, &target).unwrap();
    }
    let t = start.elapsed();
    pass_if(
        loss < 0.1 && t < Duration::from_secs(300),
        format!("loss after 200 steps {loss:.4} (lr {OVERFIT_LR}), {}", secs(t)),
    )
}

fn toy_learning() -> Outcome {
    let start = Instant::now();
    let samples = synth_generate(&SynthConfig::default()).unwrap();
    let (train, test) = samples.split_at(160);
    let (train, test) = (PreparedSet::new(train).unwrap(), PreparedSet::new(test).unwrap());
    let (net, store) = GglNet::init::<f32>(ModelConfig::default(), 0).unwrap();
    let mut trainer = Trainer::new(net, store, TrainConfig { epochs: 50, ..Default::default() });
    let report = trainer.fit(&train, &test, |_, _, _| Ok(())).unwrap();
    let t = start.elapsed();
    let last = &report.history.last().unwrap().metrics;
    let best = &report.history[report.best_epoch - 1].metrics;
    pass_if(
        last.iou >= 0.5 && last.pd >= 0.8 && t < Duration::from_secs(1800),
        format!(
            "epoch 50: IoU {:.4} nIoU {:.4} Pd {:.4} Fa {:.2e}; best nIoU {:.4} at epoch {}; {}",
            last.iou,
            last.niou,
            last.pd,
            last.fa,
            best.niou,
            report.best_epoch,
            secs(t)
        ),
    )
}

const SCHEMES: [&str; 13] = [
    "Original",
    "Gradient",
    "Original+Original",
    "Gradient+Gradient",
    "Gradient+Original",
    "Original+Gradient (GGL-Net)",
    "M_G_Add",
    "M-G-M_Res",
    "M_G_Res (GGL-Net)",
    "ADD",
    "CAM",
    "SAM",
    "TGFM",
];

fn tiny_run(out: &Path) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.out = out.to_path_buf();
    cfg.synth = SynthConfig { n_images: 8, size: (32, 32), ..Default::default() };
    cfg.image_size = (32, 32);
    cfg.epochs = 1;
    cfg.seed = 3;
    cfg
}

fn ablation_protocol() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_run(dir.path());
    let rows = cli::cmd_ablate(&cfg).unwrap();
    let text = fs::read_to_string(dir.path().join(cli::ABLATION_FILE)).unwrap();
    let detail = fs::read_to_string(dir.path().join(cli::ABLATION_DETAIL_FILE)).unwrap();
    let lines: Vec<_> = text.lines().collect();
    let header_ok = lines[0] == "scheme,iou,niou";
    let mut schemes_ok = lines.len() == 14;
    for (line, want) in lines[1..].iter().zip(SCHEMES) {
        let cells: Vec<_> = line.rsplitn(3, ',').collect();
        let numeric = cells[..2].iter().all(|v| v.parse::<f64>().is_ok_and(|x| (0.0..=1.0).contains(&x)));
        schemes_ok &= cells.len() == 3 && cells[2] == want && numeric;
    }
    let detail_ok = detail.lines().count() == 14
        && detail.starts_with("variant,scheme,group,parameters,best_epoch,iou,niou,pd,fa\n");
    let params = |name: &str| rows.iter().find(|r| r.variant.name == name).map(|r| r.parameters);
    let differ = params("m_g_res") != params("m_g_m_res") && params("m_g_res") != params("m_g_add");
    pass_if(
        header_ok && schemes_ok && detail_ok && differ && rows.len() == 13,
        format!(
            "{} variants run; header {header_ok}, scheme rows {schemes_ok}, detail {detail_ok}, GSM param counts differ {differ}",
            rows.len()
        ),
    )
}

fn shape_contracts() -> Outcome {
    let start = Instant::now();
    let mut failures = Vec::new();
    let mut checked = 0;
    for variant in all_variants() {
        let (net, store) = GglNet::init::<f32>(ModelConfig::new(variant.config), 1).unwrap();
        let ch = net.backbone().channels();
        for (n, size) in [(2, 64), (1, 256), (1, 512)] {
            let images: Vec<_> = (0..n)
                .map(|i| {
                    GrayImage::new(Array2::from_shape_fn((size, size), |(y, x)| {
                        (((y * 31 + x * 17 + i * 7) % 97) as f32) / 97.0
                    }))
                    .unwrap()
                })
                .collect();
            let input = ModelInput::<f32>::from_images(&images).unwrap();
            let tape = Tape::inference();
            let ctx = Ctx::new(&tape, &store, false);
            let feats = net.features(&ctx, &input).unwrap();
            let ladder_ok = feats.len() == 5
                && feats
                    .iter()
                    .enumerate()
                    .all(|(k, f)| f.shape() == [n, ch[k], size >> k, size >> k]);
            let out = net.decoder().decode(&ctx, &feats).unwrap();
            let out_ok = out.shape() == [n, 1, size, size];
            checked += 1;
            if !(ladder_ok && out_ok) {
                failures.push(format!("{} at {size}", variant.name));
            }
        }
    }
    let rejects = {
        let (net, store) = GglNet::init::<f32>(ModelConfig::default(), 1).unwrap();
        let img = GrayImage::new(Array2::zeros((40, 40))).unwrap();
        ModelInput::<f32>::from_images(&[img]).map_or(true, |input| net.predict(&store, &input).is_err())
    };
    pass_if(
        failures.is_empty() && rejects,
        format!(
            "{checked} variant/size pairs, {} failures; 40x40 rejected {rejects}; {}",
            failures.len(),
            secs(start.elapsed())
        ),
    )
}

fn pipeline_outputs(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut synth = tiny_run(&root.join("data"));
    synth.synth.n_images = 12;
    cli::cmd_synth(&synth).unwrap();

    let mut cfg = tiny_run(&root.join("run"));
    cfg.data = Some(root.join("data"));
    cfg.epochs = 2;
    cfg.step = 0.01;
    let summary = cli::cmd_train(&cfg).unwrap();
    cli::cmd_eval(&cfg, &summary.checkpoint).unwrap();
    cli::cmd_roc(&cfg, &summary.checkpoint).unwrap();

    let mut files = Vec::new();
    for sub in ["data", "data/images", "data/masks", "run"] {
        let mut names: Vec<_> = fs::read_dir(root.join(sub))
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| p.is_file() && p.file_name().unwrap() != "config.txt")
            .collect();
        names.sort();
        for p in names {
            let rel = p.strip_prefix(root).unwrap().display().to_string();
            files.push((rel, fs::read(&p).unwrap()));
        }
    }
    files
}

fn determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let fa = pipeline_outputs(a.path());
    let fb = pipeline_outputs(b.path());
    let names: Vec<_> = fa.iter().map(|f| f.0.as_str()).collect();
    let differing: Vec<_> = fa
        .iter()
        .zip(&fb)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.clone())
        .collect();
    let csvs = names.iter().filter(|n| n.ends_with(".csv")).count();
    let has_all = [cli::TRAIN_LOG_FILE, cli::METRICS_FILE, cli::ROC_FILE, cli::CHECKPOINT_FILE]
        .iter()
        .all(|f| names.iter().any(|n| n.ends_with(f)));
    pass_if(
        fa.len() == fb.len() && differing.is_empty() && has_all,
        format!(
            "{} files ({csvs} CSV, checkpoint, PNGs) compared byte for byte; differing: {:?}",
            fa.len(),
            differing
        ),
    )
}

const REFERENCE_IOU: f64 = 0.814;
const REFERENCE_NIOU: f64 = 0.786;

fn nuaa_protocol() -> Outcome {
    let Some(root) = std::env::var_os("GGLNET_NUAA_ROOT") else {
        return Skip("set GGLNET_NUAA_ROOT to a dataset directory to run the full protocol".into());
    };
    let mut cfg = RunConfig::default();
    cfg.data = Some(root.into());
    cfg.image_size = (512, 512);
    if let Some(e) = std::env::var("GGLNET_NUAA_EPOCHS").ok().and_then(|e| e.parse().ok()) {
        cfg.epochs = e;
    }
    cfg.out = std::env::var_os("GGLNET_NUAA_OUT").map_or_else(|| "runs/nuaa".into(), Into::into);
    let start = Instant::now();
    let s = match cli::cmd_train(&cfg) {
        Ok(s) => s,
        Err(e) => return Fail(format!("training failed: {e}")),
    };
    let m = &s.history[s.best_epoch - 1].metrics;
    Pass(format!(
        "{} epochs, best at {}: IoU {:.4} nIoU {:.4} Pd {:.4} Fa {:.2e} (reference {REFERENCE_IOU}/{REFERENCE_NIOU}, not gated); {}",
        cfg.epochs,
        s.best_epoch,
        m.iou,
        m.niou,
        m.pd,
        m.fa,
        secs(start.elapsed())
    ))
}

fn main() -> ExitCode {
    let criteria: [(usize, &str, fn() -> Outcome); 11] = [
        (1, "gradient correctness", gradient_correctness),
        (2, "attention algebra", attention_algebra),
        (3, "softIoU oracle", soft_iou_oracle),
        (4, "metric oracle equivalence", metric_oracles),
        (5, "GSM identities", gsm_identities),
        (6, "overfit smoke test", overfit_smoke),
        (7, "toy-scale learning", toy_learning),
        (8, "ablation protocol", ablation_protocol),
        (9, "shape contracts", shape_contracts),
        (10, "determinism", determinism),
        (11, "full dataset protocol", nuaa_protocol),
    ];
    let selected: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (n, name, run) in criteria {
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let outcome = panic::catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Fail(format!("panicked: {msg}"))
        });
        let (tag, detail) = match outcome {
            Pass(d) => ("PASS", d),
            Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Skip(d) => ("SKIP", d),
        };
        println!("criterion {n:2} {name} ... {tag} ({detail})");
    }
    if failed > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
