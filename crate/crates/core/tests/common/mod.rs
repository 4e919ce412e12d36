//! Independent oracles shared by the integration tests and the acceptance
//! suite: central finite differences for gradients, and brute-force
//! reimplementations of every metric.
#![allow(dead_code)]

use gglnet::autograd::{Tape, Var};
use gglnet::backbone::{ConvBlock, SqueezeExcite};
use gglnet::error::Result;
use gglnet::gsm::{GBlock, ResFuse};
use gglnet::lcl::{Lcl, LclConfig};
use gglnet::model::{GglNet, MaskImage, ModelConfig, ModelInput, ScoreMap};
use gglnet::nn::{Ctx, Module, ParamBuilder, ParamStore};
use gglnet::tensor::{Shape, Tensor};
use gglnet::tgfm::{ChannelAttention, Decoder, FusionMode, SpatialAttention, TgfmConfig};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(shape: Shape, seed: u64) -> Tensor<f64> {
    Tensor::randn(shape, 1.0, &mut rng(seed))
}

/// Replaces every trainable value with N(0, std²) so that no gradient is
/// trivially zero (heads start at zero, BN scales at one).
pub fn randomize(store: &mut ParamStore<f64>, seed: u64, std: f64) {
    let mut r = rng(seed);
    let ids: Vec<_> = store.trainable_ids().collect();
    for id in ids {
        let shape = store.get(id).shape();
        store.set(id, Tensor::randn(shape, std, &mut r)).unwrap();
    }
}

#[derive(Clone, Debug)]
pub struct GradReport {
    /// Worst per-tensor relative error `‖a − n‖ / max(‖a‖, ‖n‖)`.
    pub max_rel: f64,
    pub worst: String,
    pub tensors: usize,
    pub coords: usize,
}

const H: f64 = 1e-6;
const MAX_COORDS: usize = 24;

fn coords(len: usize, seed: u64) -> Vec<usize> {
    if len <= MAX_COORDS {
        return (0..len).collect();
    }
    let mut r = rng(seed);
    (0..MAX_COORDS).map(|_| r.gen_range(0..len)).collect()
}

/// Compares analytic gradients of `Σ R ⊙ f(inputs)` (R fixed and random)
/// against central differences, for every input and every trainable
/// parameter that `f` touches.
pub fn gradcheck<F>(store: &ParamStore<f64>, inputs: &[Tensor<f64>], train: bool, f: F) -> GradReport
where
    F: for<'t> Fn(&Ctx<'t, f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let eval = |store: &ParamStore<f64>, inputs: &[Tensor<f64>]| -> Tensor<f64> {
        let tape = Tape::inference();
        let ctx = Ctx::new(&tape, store, train);
        let vars: Vec<_> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        f(&ctx, &vars).unwrap().to_tensor()
    };
    let out_shape = eval(store, inputs).shape();
    let r = randn(out_shape, 999);
    let loss = |store: &ParamStore<f64>, inputs: &[Tensor<f64>]| -> f64 {
        eval(store, inputs).data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
    };

    let tape = Tape::new();
    let ctx = Ctx::new(&tape, store, train);
    let vars: Vec<_> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&ctx, &vars).unwrap();
    let l = out.dot_const(&r).unwrap();
    let grads = tape.backward(&l);

    let mut checked: Vec<(String, Vec<f64>, Vec<f64>)> = Vec::new();
    let mut record = |name: String, a: Vec<f64>, n: Vec<f64>| checked.push((name, a, n));

    for (k, v) in vars.iter().enumerate() {
        let zero = Tensor::zeros(v.shape());
        let g = grads.wrt(v).unwrap_or(&zero);
        let idx = coords(v.value().len(), k as u64);
        let mut a = Vec::new();
        let mut n = Vec::new();
        for &i in &idx {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += H;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= H;
            n.push((loss(store, &plus) - loss(store, &minus)) / (2.0 * H));
            a.push(g.data()[i]);
        }
        record(format!("input{k}"), a, n);
    }

    for (id, g) in ctx.param_grads(&grads) {
        let idx = coords(g.len(), 1000 + format!("{id:?}").len() as u64);
        let mut a = Vec::new();
        let mut n = Vec::new();
        for &i in &idx {
            let mut plus = store.clone();
            plus.get_mut(id).data_mut()[i] += H;
            let mut minus = store.clone();
            minus.get_mut(id).data_mut()[i] -= H;
            n.push((loss(&plus, inputs) - loss(&minus, inputs)) / (2.0 * H));
            a.push(g.data()[i]);
        }
        record(store.name(id).to_string(), a, n);
    }
    summarize(checked)
}

/// Per-tensor relative error with a floor at 1e-5 of the largest gradient
/// norm seen, so analytically-zero gradients (a bias before BN) compare
/// against the problem's scale rather than pure rounding noise.
fn summarize(checked: Vec<(String, Vec<f64>, Vec<f64>)>) -> GradReport {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let global = checked.iter().map(|(_, a, n)| norm(a).max(norm(n))).fold(0.0, f64::max);
    let floor = (global * 1e-5).max(1e-12);
    let mut report = GradReport { max_rel: 0.0, worst: String::new(), tensors: 0, coords: 0 };
    for (name, a, n) in checked {
        let diff: Vec<f64> = a.iter().zip(&n).map(|(x, y)| x - y).collect();
        let e = norm(&diff) / norm(&a).max(norm(&n)).max(floor);
        report.tensors += 1;
        report.coords += a.len();
        if e >= report.max_rel {
            report.max_rel = e;
            report.worst = name;
        }
    }
    report
}

fn builder_store() -> (ParamStore<f64>, ChaCha8Rng) {
    (ParamStore::new(), rng(17))
}

pub fn check_conv_block() -> GradReport {
    let (mut store, mut r) = builder_store();
    let block = ConvBlock::new(&mut ParamBuilder::new(&mut store, &mut r), 4, 8, Some(4)).unwrap();
    randomize(&mut store, 1, 0.5);
    gradcheck(&store, &[randn([2, 4, 6, 6], 2)], true, |ctx, x| block.forward(ctx, &x[0]))
}

pub fn check_se() -> GradReport {
    let (mut store, mut r) = builder_store();
    let se = SqueezeExcite::new(&mut ParamBuilder::new(&mut store, &mut r), 8, 4).unwrap();
    randomize(&mut store, 3, 0.5);
    gradcheck(&store, &[randn([2, 8, 5, 5], 4)], true, |ctx, x| se.forward(ctx, &x[0]))
}

pub fn check_g_block() -> GradReport {
    let (mut store, mut r) = builder_store();
    let g = GBlock::new(&mut ParamBuilder::new(&mut store, &mut r), 4).unwrap();
    randomize(&mut store, 5, 0.5);
    gradcheck(&store, &[randn([2, 1, 8, 8], 6)], true, |ctx, x| g.forward(ctx, &x[0]))
}

pub fn check_res_fuse() -> GradReport {
    let (mut store, mut r) = builder_store();
    let res = ResFuse::new(&mut ParamBuilder::new(&mut store, &mut r), 4).unwrap();
    randomize(&mut store, 7, 0.5);
    let inputs = [randn([2, 4, 6, 6], 8), randn([2, 4, 6, 6], 9)];
    gradcheck(&store, &inputs, true, |ctx, x| res.forward(ctx, &x[0], &x[1]))
}

pub fn check_lcl() -> GradReport {
    let (mut store, mut r) = builder_store();
    let lcl = Lcl::new(&mut ParamBuilder::new(&mut store, &mut r), 4, LclConfig::default()).unwrap();
    randomize(&mut store, 10, 0.5);
    gradcheck(&store, &[randn([2, 4, 7, 7], 11)], true, |ctx, x| lcl.forward(ctx, &x[0]))
}

pub fn check_channel_attention() -> GradReport {
    let (mut store, mut r) = builder_store();
    let ca = ChannelAttention::new(&mut ParamBuilder::new(&mut store, &mut r), 8, 4).unwrap();
    randomize(&mut store, 12, 0.5);
    gradcheck(&store, &[randn([2, 8, 5, 5], 13)], true, |ctx, y| ca.gate(ctx, &y[0]))
}

pub fn check_spatial_attention() -> GradReport {
    let (mut store, mut r) = builder_store();
    let sa = SpatialAttention::new(&mut ParamBuilder::new(&mut store, &mut r)).unwrap();
    randomize(&mut store, 14, 0.3);
    gradcheck(&store, &[randn([2, 3, 8, 8], 15)], true, |ctx, x| sa.gate(ctx, &x[0]))
}

/// Smallest input the five-scale decoder admits: 16×16 at the top.
pub fn check_decode() -> GradReport {
    let (mut store, mut r) = builder_store();
    let ch = [8, 8, 8, 8, 8];
    let cfg = TgfmConfig { reduction: 4, mode: FusionMode::Tgfm };
    let dec = Decoder::new(&mut ParamBuilder::new(&mut store, &mut r), &ch, cfg).unwrap();
    randomize(&mut store, 16, 0.3);
    let feats: Vec<_> = (0..5).map(|k| randn([1, 8, 16 >> k, 16 >> k], 20 + k as u64)).collect();
    gradcheck(&store, &feats, true, |ctx, f| dec.decode(ctx, f))
}

/// softIoU with respect to the scores, `p ∈ (0.05, 0.95)`.
pub fn check_soft_iou() -> GradReport {
    let store = ParamStore::new();
    let p = Tensor::rand_uniform([3, 1, 6, 6], 0.05, 0.95, &mut rng(30));
    let mut r = rng(31);
    let y = Tensor::from_vec([3, 1, 6, 6], (0..108).map(|_| f64::from(r.gen_bool(0.3) as u8)).collect()).unwrap();
    gradcheck(&store, &[p], true, move |_, p| gglnet::model::soft_iou_loss(&p[0], &y))
}

/// Whole network at 16×16 with narrow channels, default variant.
pub fn check_full_model() -> GradReport {
    let cfg = ModelConfig::default().with_channels(&[8, 8, 8, 8, 8]);
    let mut store = ParamStore::new();
    let mut r = rng(40);
    let net = GglNet::new(&mut ParamBuilder::new(&mut store, &mut r), cfg).unwrap();
    randomize(&mut store, 41, 0.3);
    let img = gglnet::preprocess::GrayImage::new(Array2::from_shape_fn((16, 16), |(y, x)| {
        ((y * 7 + x * 3) % 11) as f32 / 11.0
    }))
    .unwrap();
    let img2 = gglnet::preprocess::GrayImage::new(Array2::from_shape_fn((16, 16), |(y, x)| {
        ((y * 5 + x * 9) % 13) as f32 / 13.0
    }))
    .unwrap();
    let input = ModelInput::<f64>::from_images(&[img, img2]).unwrap();
    gradcheck(&store, &[], true, move |ctx, _| net.forward(ctx, &input))
}

pub fn gradient_cases() -> Vec<(&'static str, fn() -> GradReport)> {
    vec![
        ("conv_block", check_conv_block),
        ("se_attention", check_se),
        ("g_block", check_g_block),
        ("res_fuse", check_res_fuse),
        ("lcl_forward", check_lcl),
        ("channel_attention", check_channel_attention),
        ("spatial_attention", check_spatial_attention),
        ("decode", check_decode),
        ("soft_iou_loss", check_soft_iou),
    ]
}

// ---- metric oracles ----------------------------------------------------

pub fn random_mask(r: &mut ChaCha8Rng, h: usize, w: usize, density: f64) -> MaskImage {
    MaskImage::new(Array2::from_shape_fn((h, w), |_| u8::from(r.gen_bool(density)))).unwrap()
}

/// A prediction correlated with `gt`: flips each pixel with probability `flip`.
pub fn perturb(r: &mut ChaCha8Rng, gt: &MaskImage, flip: f64) -> MaskImage {
    MaskImage::new(gt.pixels().mapv(|v| if r.gen_bool(flip) { 1 - v } else { v })).unwrap()
}

fn counts(p: &MaskImage, g: &MaskImage) -> (u64, u64, u64) {
    let (h, w) = g.dim();
    let (mut tp, mut fp, mut fneg) = (0, 0, 0);
    for y in 0..h {
        for x in 0..w {
            let (a, b) = (p.pixels()[[y, x]], g.pixels()[[y, x]]);
            tp += u64::from(a == 1 && b == 1);
            fp += u64::from(a == 1 && b == 0);
            fneg += u64::from(a == 0 && b == 1);
        }
    }
    (tp, fp, fneg)
}

pub fn oracle_iou(preds: &[MaskImage], gts: &[MaskImage]) -> f64 {
    let (mut i, mut u) = (0u64, 0u64);
    for (p, g) in preds.iter().zip(gts) {
        let (tp, fp, fneg) = counts(p, g);
        i += tp;
        u += tp + fp + fneg;
    }
    if u == 0 {
        1.0
    } else {
        i as f64 / u as f64
    }
}

pub fn oracle_niou(preds: &[MaskImage], gts: &[MaskImage]) -> f64 {
    let per: Vec<f64> = preds
        .iter()
        .zip(gts)
        .map(|(p, g)| {
            let (tp, fp, fneg) = counts(p, g);
            if tp + fp + fneg == 0 {
                1.0
            } else {
                tp as f64 / (tp + fp + fneg) as f64
            }
        })
        .collect();
    per.iter().sum::<f64>() / per.len() as f64
}

/// Union-find labelling; returns (pixel count, centroid) per component.
pub fn oracle_components(m: &MaskImage) -> Vec<(usize, (f64, f64))> {
    let (h, w) = m.dim();
    let mut parent: Vec<usize> = (0..h * w).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    let on = |y: usize, x: usize| m.pixels()[[y, x]] == 1;
    for y in 0..h {
        for x in 0..w {
            if !on(y, x) {
                continue;
            }
            for (dy, dx) in [(-1i64, -1i64), (-1, 0), (-1, 1), (0, -1)] {
                let (ny, nx) = (y as i64 + dy, x as i64 + dx);
                if ny >= 0 && nx >= 0 && (nx as usize) < w && on(ny as usize, nx as usize) {
                    let a = find(&mut parent, y * w + x);
                    let b = find(&mut parent, ny as usize * w + nx as usize);
                    parent[a] = b;
                }
            }
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<(usize, usize)>> = Default::default();
    for y in 0..h {
        for x in 0..w {
            if on(y, x) {
                let root = find(&mut parent, y * w + x);
                groups.entry(root).or_default().push((y, x));
            }
        }
    }
    groups
        .into_values()
        .map(|px| {
            let n = px.len() as f64;
            let sy: usize = px.iter().map(|p| p.0).sum();
            let sx: usize = px.iter().map(|p| p.1).sum();
            (px.len(), (sy as f64 / n, sx as f64 / n))
        })
        .collect()
}

/// Repeatedly takes the globally closest unmatched (target, prediction)
/// pair within `dist`.
pub fn oracle_pd_fa(preds: &[MaskImage], gts: &[MaskImage], dist: f64) -> (f64, f64) {
    let (mut targets, mut detected, mut false_px, mut total) = (0usize, 0usize, 0usize, 0usize);
    for (p, g) in preds.iter().zip(gts) {
        let gc = oracle_components(g);
        let pc = oracle_components(p);
        let mut g_free = vec![true; gc.len()];
        let mut p_free = vec![true; pc.len()];
        loop {
            let mut best: Option<(f64, usize, usize)> = None;
            for (i, gi) in gc.iter().enumerate() {
                for (j, pj) in pc.iter().enumerate() {
                    if !g_free[i] || !p_free[j] {
                        continue;
                    }
                    let d = ((gi.1 .0 - pj.1 .0).powi(2) + (gi.1 .1 - pj.1 .1).powi(2)).sqrt();
                    if d <= dist && best.map_or(true, |b| d < b.0) {
                        best = Some((d, i, j));
                    }
                }
            }
            match best {
                Some((_, i, j)) => {
                    g_free[i] = false;
                    p_free[j] = false;
                    detected += 1;
                }
                None => break,
            }
        }
        targets += gc.len();
        false_px += pc.iter().zip(&p_free).filter(|(_, f)| **f).map(|(c, _)| c.0).sum::<usize>();
        total += g.dim().0 * g.dim().1;
    }
    (detected as f64 / targets as f64, false_px as f64 / total as f64)
}

/// Binarizes at every threshold and counts directly.
pub fn oracle_roc(scores: &[ScoreMap], gts: &[MaskImage], step: f64) -> Vec<(f64, f64, f64)> {
    let k = (1.0 / step).round() as usize;
    let (mut pos, mut neg) = (0u64, 0u64);
    for g in gts {
        for &v in g.pixels() {
            if v == 1 {
                pos += 1;
            } else {
                neg += 1;
            }
        }
    }
    (0..=k)
        .map(|i| {
            let tau = i as f64 / k as f64;
            let (mut tp, mut fp) = (0u64, 0u64);
            for (s, g) in scores.iter().zip(gts) {
                for (&v, &m) in s.scores().iter().zip(g.pixels()) {
                    if f64::from(v) > tau {
                        if m == 1 {
                            tp += 1;
                        } else {
                            fp += 1;
                        }
                    }
                }
            }
            let fpr = if neg == 0 { 0.0 } else { fp as f64 / neg as f64 };
            (tau, tp as f64 / pos as f64, fpr)
        })
        .collect()
}

/// A random evaluation set: 1-4 images up to `max`×`max`, masks with
/// sparse blobs, predictions that partially agree, and scores on a grid
/// that hits thresholds exactly.
pub struct MetricCase {
    pub preds: Vec<MaskImage>,
    pub gts: Vec<MaskImage>,
    pub scores: Vec<ScoreMap>,
}

pub fn random_case(r: &mut ChaCha8Rng, max: usize) -> MetricCase {
    let n = r.gen_range(1..=4);
    let (h, w) = (r.gen_range(1..=max), r.gen_range(1..=max));
    let density = r.gen_range(0.02..0.4);
    let mut gts: Vec<_> = (0..n).map(|_| random_mask(r, h, w, density)).collect();
    if gts.iter().all(|g| g.count_positive() == 0) {
        let mut px = gts[0].pixels().clone();
        px[[r.gen_range(0..h), r.gen_range(0..w)]] = 1;
        gts[0] = MaskImage::new(px).unwrap();
    }
    let flip = r.gen_range(0.0..0.3);
    let preds = gts.iter().map(|g| perturb(r, g, flip)).collect();
    let scores = gts
        .iter()
        .map(|g| {
            ScoreMap::new(g.pixels().mapv(|v| {
                let base = if v == 1 { 12 } else { 4 };
                (r.gen_range(0..=8) + base - 4).min(20) as f32 / 20.0
            }))
            .unwrap()
        })
        .collect();
    MetricCase { preds, gts, scores }
}
