//! Differentiable tensor operations.
//!
//! Each operation computes its forward value eagerly and, when the tape is
//! recording, registers a closure producing the input gradients. Shape
//! problems are reported as [`Error::Shape`] before anything is recorded.

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::tensor::{Float, Shape, Tensor};

fn shape_err<T>(msg: String) -> Result<T> {
    Err(Error::Shape(msg))
}

fn same_shape<T: Float>(op: &str, a: &Var<'_, T>, b: &Var<'_, T>) -> Result<()> {
    if a.shape() != b.shape() {
        return shape_err(format!("{op}: {:?} vs {:?}", a.shape(), b.shape()));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Elementwise

impl<'t, T: Float> Var<'t, T> {
    pub fn relu(&self) -> Var<'t, T> {
        let x = self.shared();
        let out = x.map(|v| if v > T::zero() { v } else { T::zero() });
        self.tape().op(out, &[self], move |g, _| {
            vec![Some(g.zip_map(&x, |g, v| if v > T::zero() { g } else { T::zero() }))]
        })
    }

    pub fn sigmoid(&self) -> Var<'t, T> {
        let out = self.value().map(sigmoid);
        let y = std::sync::Arc::new(out.clone());
        self.tape().op(out, &[self], move |g, _| {
            vec![Some(g.zip_map(&y, |g, y| g * y * (T::one() - y)))]
        })
    }

    pub fn add(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        same_shape("add", self, other)?;
        let out = self.value().zip_map(other.value(), |a, b| a + b);
        Ok(self
            .tape()
            .op(out, &[self, other], |g, _| vec![Some(g.clone()), Some(g.clone())]))
    }

    pub fn sub(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        same_shape("sub", self, other)?;
        let out = self.value().zip_map(other.value(), |a, b| a - b);
        Ok(self.tape().op(out, &[self, other], |g, _| {
            vec![Some(g.clone()), Some(g.map(|v| -v))]
        }))
    }

    pub fn scale(&self, s: T) -> Var<'t, T> {
        let out = self.value().scale(s);
        self.tape().op(out, &[self], move |g, _| vec![Some(g.scale(s))])
    }

    /// `self * gate` where `gate` broadcasts along every axis on which its
    /// extent is 1 (e.g. `[N,C,1,1]` channel weights or `[N,1,H,W]`
    /// spatial weights).
    pub fn mul_broadcast(&self, gate: &Var<'t, T>) -> Result<Var<'t, T>> {
        let xs = self.shape();
        let gs = gate.shape();
        for d in 0..4 {
            if gs[d] != xs[d] && gs[d] != 1 {
                return shape_err(format!("mul_broadcast: {gs:?} does not broadcast to {xs:?}"));
            }
        }
        let strides = broadcast_strides(gs, xs);
        let x = self.shared();
        let gv = gate.shared();
        let mut out = Tensor::zeros(xs);
        for_each_broadcast(xs, strides, |i, j| {
            out.data_mut()[i] = x.data()[i] * gv.data()[j];
        });
        Ok(self.tape().op(out, &[self, gate], move |g, needs| {
            let dx = needs[0].then(|| {
                let mut dx = Tensor::zeros(xs);
                for_each_broadcast(xs, strides, |i, j| {
                    dx.data_mut()[i] = g.data()[i] * gv.data()[j];
                });
                dx
            });
            let dg = needs[1].then(|| {
                let mut dg = Tensor::zeros(gs);
                for_each_broadcast(xs, strides, |i, j| {
                    dg.data_mut()[j] += g.data()[i] * x.data()[i];
                });
                dg
            });
            vec![dx, dg]
        }))
    }

    /// `Σ self · weights` as a `[1,1,1,1]` scalar. `weights` is constant.
    pub fn dot_const(&self, weights: &Tensor<T>) -> Result<Var<'t, T>> {
        if weights.shape() != self.shape() {
            return shape_err(format!(
                "dot_const: {:?} vs {:?}",
                self.shape(),
                weights.shape()
            ));
        }
        let s = self
            .value()
            .data()
            .iter()
            .zip(weights.data())
            .map(|(&a, &b)| a * b)
            .sum();
        let w = weights.clone();
        Ok(self
            .tape()
            .op(Tensor::scalar(s), &[self], move |g, _| {
                vec![Some(w.scale(g.data()[0]))]
            }))
    }

    pub fn sum_all(&self) -> Var<'t, T> {
        let shape = self.shape();
        self.tape()
            .op(Tensor::scalar(self.value().sum()), &[self], move |g, _| {
                vec![Some(Tensor::full(shape, g.data()[0]))]
            })
    }
}

#[inline]
pub fn sigmoid<T: Float>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

fn broadcast_strides(small: Shape, full: Shape) -> [usize; 4] {
    let mut strides = [0; 4];
    let mut acc = 1;
    for d in (0..4).rev() {
        strides[d] = if small[d] == 1 && full[d] != 1 { 0 } else { acc };
        acc *= small[d];
    }
    strides
}

fn for_each_broadcast(full: Shape, strides: [usize; 4], mut f: impl FnMut(usize, usize)) {
    let [n, c, h, w] = full;
    let mut i = 0;
    for a in 0..n {
        for b in 0..c {
            for y in 0..h {
                let base = a * strides[0] + b * strides[1] + y * strides[2];
                for x in 0..w {
                    f(i, base + x * strides[3]);
                    i += 1;
                }
            }
        }
    }
}

/// Concatenates along the channel axis.
pub fn concat_channels<'t, T: Float>(parts: &[&Var<'t, T>]) -> Result<Var<'t, T>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Shape("concat of zero tensors".into()))?;
    let [n, _, h, w] = first.shape();
    for p in parts {
        let s = p.shape();
        if s[0] != n || s[2] != h || s[3] != w {
            return shape_err(format!("concat: {s:?} vs {:?}", first.shape()));
        }
    }
    let chans: Vec<usize> = parts.iter().map(|p| p.shape()[1]).collect();
    let total: usize = chans.iter().sum();
    let hw = h * w;
    let mut out = Tensor::zeros([n, total, h, w]);
    for s in 0..n {
        let mut off = 0;
        for (p, &c) in parts.iter().zip(&chans) {
            let src = p.value().sample(s);
            let dst = (s * total + off) * hw;
            out.data_mut()[dst..dst + c * hw].copy_from_slice(src);
            off += c;
        }
    }
    let tape = first.tape();
    Ok(tape.op(out, parts, move |g, needs| {
        let mut grads = Vec::with_capacity(chans.len());
        let mut off = 0;
        for (k, &c) in chans.iter().enumerate() {
            if needs[k] {
                let mut d = Tensor::zeros([n, c, h, w]);
                for s in 0..n {
                    let src = (s * total + off) * hw;
                    d.data_mut()[s * c * hw..(s + 1) * c * hw]
                        .copy_from_slice(&g.data()[src..src + c * hw]);
                }
                grads.push(Some(d));
            } else {
                grads.push(None);
            }
            off += c;
        }
        grads
    }))
}

// ---------------------------------------------------------------------------
// Convolution

/// Unfolds one sample `[C,H,W]` into `[C*k*k, Ho*Wo]` columns with zero
/// padding.
fn im2col<T: Float>(
    x: &[T],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    pad: usize,
    ho: usize,
    wo: usize,
    cols: &mut [T],
) {
    let plane = ho * wo;
    for ch in 0..c {
        let src = &x[ch * h * w..(ch + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ch * k + ky) * k + kx) * plane;
                let dst = &mut cols[row..row + plane];
                // valid output columns: 0 <= ox + kx - pad < w
                let x_lo = pad.saturating_sub(kx).min(wo);
                let x_hi = (w + pad).saturating_sub(kx).min(wo).max(x_lo);
                for oy in 0..ho {
                    let line = &mut dst[oy * wo..(oy + 1) * wo];
                    let iy = oy + ky;
                    if iy < pad || iy - pad >= h {
                        line.fill(T::zero());
                        continue;
                    }
                    let srow = &src[(iy - pad) * w..(iy - pad + 1) * w];
                    line[..x_lo].fill(T::zero());
                    line[x_hi..].fill(T::zero());
                    if x_hi > x_lo {
                        let s0 = x_lo + kx - pad;
                        line[x_lo..x_hi].copy_from_slice(&srow[s0..s0 + (x_hi - x_lo)]);
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates columns back into `[C,H,W]`.
fn col2im<T: Float>(
    cols: &[T],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    pad: usize,
    ho: usize,
    wo: usize,
    dx: &mut [T],
) {
    let plane = ho * wo;
    for ch in 0..c {
        let dst = &mut dx[ch * h * w..(ch + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ch * k + ky) * k + kx) * plane;
                let src = &cols[row..row + plane];
                let x_lo = pad.saturating_sub(kx).min(wo);
                let x_hi = (w + pad).saturating_sub(kx).min(wo).max(x_lo);
                for oy in 0..ho {
                    let iy = oy + ky;
                    if x_hi == x_lo || iy < pad || iy - pad >= h {
                        continue;
                    }
                    let drow = &mut dst[(iy - pad) * w..(iy - pad + 1) * w];
                    let line = &src[oy * wo..(oy + 1) * wo];
                    let s0 = x_lo + kx - pad;
                    for (d, &v) in drow[s0..s0 + (x_hi - x_lo)]
                        .iter_mut()
                        .zip(&line[x_lo..x_hi])
                    {
                        *d += v;
                    }
                }
            }
        }
    }
}

/// Stride-1 2-D cross-correlation with zero padding.
///
/// `weight` is `[Cout, Cin, k, k]`, `bias` is `[1, Cout, 1, 1]`.
pub fn conv2d<'t, T: Float>(
    x: &Var<'t, T>,
    weight: &Var<'t, T>,
    bias: Option<&Var<'t, T>>,
    pad: usize,
) -> Result<Var<'t, T>> {
    let [n, cin, h, w] = x.shape();
    let [cout, wcin, k, k2] = weight.shape();
    if wcin != cin || k != k2 {
        return shape_err(format!(
            "conv2d: input {:?} incompatible with weight {:?}",
            x.shape(),
            weight.shape()
        ));
    }
    if let Some(b) = bias {
        if b.shape() != [1, cout, 1, 1] {
            return shape_err(format!("conv2d: bias {:?} for {cout} outputs", b.shape()));
        }
    }
    if h + 2 * pad < k || w + 2 * pad < k {
        return shape_err(format!("conv2d: kernel {k} larger than padded input {h}x{w}"));
    }
    let ho = h + 2 * pad - k + 1;
    let wo = w + 2 * pad - k + 1;
    let ckk = cin * k * k;
    let plane = ho * wo;
    let pointwise = k == 1 && pad == 0;

    let xv = x.shared();
    let wv = weight.shared();
    let mut out = Tensor::zeros([n, cout, ho, wo]);
    let mut cols = if pointwise {
        Vec::new()
    } else {
        vec![T::zero(); ckk * plane]
    };
    for s in 0..n {
        let xs = xv.sample(s);
        let cols_ref: &[T] = if pointwise {
            xs
        } else {
            im2col(xs, cin, h, w, k, pad, ho, wo, &mut cols);
            &cols
        };
        let dst = &mut out.data_mut()[s * cout * plane..(s + 1) * cout * plane];
        T::gemm(
            cout,
            ckk,
            plane,
            T::one(),
            wv.data(),
            ckk as isize,
            1,
            cols_ref,
            plane as isize,
            1,
            T::zero(),
            dst,
            plane as isize,
            1,
        );
        if let Some(b) = bias {
            for (co, line) in dst.chunks_mut(plane).enumerate() {
                let bv = b.value().data()[co];
                line.iter_mut().for_each(|v| *v += bv);
            }
        }
    }

    let mut inputs = vec![x, weight];
    if let Some(b) = bias {
        inputs.push(b);
    }
    let has_bias = bias.is_some();
    Ok(x.tape().op(out, &inputs, move |g, needs| {
        let mut dx = needs[0].then(|| Tensor::zeros([n, cin, h, w]));
        let mut dw = needs[1].then(|| Tensor::zeros([cout, cin, k, k]));
        let mut cols = if pointwise {
            Vec::new()
        } else {
            vec![T::zero(); ckk * plane]
        };
        let mut dcols = if pointwise || dx.is_none() {
            Vec::new()
        } else {
            vec![T::zero(); ckk * plane]
        };
        for s in 0..n {
            let gs = &g.data()[s * cout * plane..(s + 1) * cout * plane];
            if let Some(dw) = dw.as_mut() {
                let xs = xv.sample(s);
                let cols_ref: &[T] = if pointwise {
                    xs
                } else {
                    im2col(xs, cin, h, w, k, pad, ho, wo, &mut cols);
                    &cols
                };
                // dW += dY · colsᵀ
                T::gemm(
                    cout,
                    plane,
                    ckk,
                    T::one(),
                    gs,
                    plane as isize,
                    1,
                    cols_ref,
                    1,
                    plane as isize,
                    T::one(),
                    dw.data_mut(),
                    ckk as isize,
                    1,
                );
            }
            if let Some(dx) = dx.as_mut() {
                let dxs = &mut dx.data_mut()[s * cin * h * w..(s + 1) * cin * h * w];
                // dcols = Wᵀ · dY
                let target: &mut [T] = if pointwise { dxs } else { &mut dcols };
                T::gemm(
                    ckk,
                    cout,
                    plane,
                    T::one(),
                    wv.data(),
                    1,
                    ckk as isize,
                    gs,
                    plane as isize,
                    1,
                    T::zero(),
                    target,
                    plane as isize,
                    1,
                );
                if !pointwise {
                    col2im(&dcols, cin, h, w, k, pad, ho, wo, dxs);
                }
            }
        }
        let mut grads = vec![dx, dw];
        if has_bias {
            grads.push(needs[2].then(|| {
                let mut db = Tensor::zeros([1, cout, 1, 1]);
                for s in 0..n {
                    for co in 0..cout {
                        let start = (s * cout + co) * plane;
                        db.data_mut()[co] += g.data()[start..start + plane].iter().copied().sum();
                    }
                }
                db
            }));
        }
        grads
    }))
}

// ---------------------------------------------------------------------------
// Normalization

/// Per-channel statistics from a training-mode batch norm.
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Biased (population) variance over `N*H*W`.
    pub var: Vec<T>,
    pub count: usize,
}

/// Batch normalization using statistics of the current batch.
pub fn batch_norm_train<'t, T: Float>(
    x: &Var<'t, T>,
    gamma: &Var<'t, T>,
    beta: &Var<'t, T>,
    eps: f64,
) -> Result<(Var<'t, T>, BatchStats<T>)> {
    let [n, c, h, w] = x.shape();
    check_affine("batch_norm", c, gamma, beta)?;
    let hw = h * w;
    let m = n * hw;
    let mf = T::from_usize(m).unwrap();
    let eps = T::from_f64_lossy(eps);
    let xv = x.value();
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for ch in 0..c {
        let mut s = T::zero();
        for b in 0..n {
            s += xv.plane(b, ch).iter().copied().sum();
        }
        let mu = s / mf;
        let mut v = T::zero();
        for b in 0..n {
            v += xv.plane(b, ch).iter().map(|&x| (x - mu) * (x - mu)).sum();
        }
        mean[ch] = mu;
        var[ch] = v / mf;
    }
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut xhat = Tensor::zeros([n, c, h, w]);
    let mut out = Tensor::zeros([n, c, h, w]);
    let gv = gamma.value().data().to_vec();
    let bv = beta.value().data().to_vec();
    for b in 0..n {
        for ch in 0..c {
            let start = (b * c + ch) * hw;
            for i in start..start + hw {
                let xh = (xv.data()[i] - mean[ch]) * inv_std[ch];
                xhat.data_mut()[i] = xh;
                out.data_mut()[i] = gv[ch] * xh + bv[ch];
            }
        }
    }
    let stats = BatchStats {
        mean,
        var,
        count: m,
    };
    let var_out = x.tape().op(out, &[x, gamma, beta], move |g, needs| {
        let mut dgamma = vec![T::zero(); c];
        let mut dbeta = vec![T::zero(); c];
        for b in 0..n {
            for ch in 0..c {
                let start = (b * c + ch) * hw;
                for i in start..start + hw {
                    dgamma[ch] += g.data()[i] * xhat.data()[i];
                    dbeta[ch] += g.data()[i];
                }
            }
        }
        let dx = needs[0].then(|| {
            let mut dx = Tensor::zeros([n, c, h, w]);
            for b in 0..n {
                for ch in 0..c {
                    let k = gv[ch] * inv_std[ch];
                    let mean_g = dbeta[ch] / mf;
                    let mean_gx = dgamma[ch] / mf;
                    let start = (b * c + ch) * hw;
                    for i in start..start + hw {
                        dx.data_mut()[i] = k * (g.data()[i] - mean_g - xhat.data()[i] * mean_gx);
                    }
                }
            }
            dx
        });
        vec![
            dx,
            needs[1].then(|| Tensor::from_vec([1, c, 1, 1], dgamma).unwrap()),
            needs[2].then(|| Tensor::from_vec([1, c, 1, 1], dbeta).unwrap()),
        ]
    });
    Ok((var_out, stats))
}

/// Batch normalization with fixed (running) statistics.
pub fn batch_norm_eval<'t, T: Float>(
    x: &Var<'t, T>,
    gamma: &Var<'t, T>,
    beta: &Var<'t, T>,
    mean: &[T],
    var: &[T],
    eps: f64,
) -> Result<Var<'t, T>> {
    let [n, c, h, w] = x.shape();
    check_affine("batch_norm", c, gamma, beta)?;
    if mean.len() != c || var.len() != c {
        return shape_err(format!("batch_norm: running stats for {} channels, input has {c}", mean.len()));
    }
    let hw = h * w;
    let eps = T::from_f64_lossy(eps);
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mean = mean.to_vec();
    let xv = x.shared();
    let gv = gamma.value().data().to_vec();
    let bv = beta.value().data().to_vec();
    let mut out = Tensor::zeros([n, c, h, w]);
    for b in 0..n {
        for ch in 0..c {
            let start = (b * c + ch) * hw;
            for i in start..start + hw {
                out.data_mut()[i] = gv[ch] * (xv.data()[i] - mean[ch]) * inv_std[ch] + bv[ch];
            }
        }
    }
    Ok(x.tape().op(out, &[x, gamma, beta], move |g, needs| {
        let mut dgamma = vec![T::zero(); c];
        let mut dbeta = vec![T::zero(); c];
        let mut dx = needs[0].then(|| Tensor::zeros([n, c, h, w]));
        for b in 0..n {
            for ch in 0..c {
                let start = (b * c + ch) * hw;
                for i in start..start + hw {
                    let xh = (xv.data()[i] - mean[ch]) * inv_std[ch];
                    dgamma[ch] += g.data()[i] * xh;
                    dbeta[ch] += g.data()[i];
                    if let Some(dx) = dx.as_mut() {
                        dx.data_mut()[i] = g.data()[i] * gv[ch] * inv_std[ch];
                    }
                }
            }
        }
        vec![
            dx,
            needs[1].then(|| Tensor::from_vec([1, c, 1, 1], dgamma).unwrap()),
            needs[2].then(|| Tensor::from_vec([1, c, 1, 1], dbeta).unwrap()),
        ]
    }))
}

fn check_affine<T: Float>(op: &str, c: usize, gamma: &Var<'_, T>, beta: &Var<'_, T>) -> Result<()> {
    if gamma.shape() != [1, c, 1, 1] || beta.shape() != [1, c, 1, 1] {
        return shape_err(format!(
            "{op}: affine params {:?}/{:?} for {c} channels",
            gamma.shape(),
            beta.shape()
        ));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Pooling and resampling

/// 2×2 max pooling with stride 2.
pub fn max_pool2<'t, T: Float>(x: &Var<'t, T>) -> Result<Var<'t, T>> {
    let [n, c, h, w] = x.shape();
    if h % 2 != 0 || w % 2 != 0 {
        return shape_err(format!("max_pool2: odd spatial size {h}x{w}"));
    }
    let (ho, wo) = (h / 2, w / 2);
    let xv = x.value();
    let mut out = Tensor::zeros([n, c, ho, wo]);
    let mut argmax = vec![0usize; n * c * ho * wo];
    let mut o = 0;
    for p in 0..n * c {
        let base = p * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let i00 = base + 2 * oy * w + 2 * ox;
                let mut best = i00;
                for cand in [i00 + 1, i00 + w, i00 + w + 1] {
                    // first maximum wins on ties
                    if xv.data()[cand] > xv.data()[best] {
                        best = cand;
                    }
                }
                out.data_mut()[o] = xv.data()[best];
                argmax[o] = best;
                o += 1;
            }
        }
    }
    let in_shape = x.shape();
    Ok(x.tape().op(out, &[x], move |g, _| {
        let mut dx = Tensor::zeros(in_shape);
        for (o, &src) in argmax.iter().enumerate() {
            dx.data_mut()[src] += g.data()[o];
        }
        vec![Some(dx)]
    }))
}

/// Global average over `H×W`, giving `[N,C,1,1]`.
pub fn global_avg_pool<'t, T: Float>(x: &Var<'t, T>) -> Var<'t, T> {
    let [n, c, h, w] = x.shape();
    let hw = h * w;
    let inv = T::one() / T::from_usize(hw).unwrap();
    let mut out = Tensor::zeros([n, c, 1, 1]);
    for p in 0..n * c {
        out.data_mut()[p] = x.value().data()[p * hw..(p + 1) * hw].iter().copied().sum::<T>() * inv;
    }
    x.tape().op(out, &[x], move |g, _| {
        let mut dx = Tensor::zeros([n, c, h, w]);
        for p in 0..n * c {
            let v = g.data()[p] * inv;
            dx.data_mut()[p * hw..(p + 1) * hw].fill(v);
        }
        vec![Some(dx)]
    })
}

/// Global maximum over `H×W`, giving `[N,C,1,1]`.
pub fn global_max_pool<'t, T: Float>(x: &Var<'t, T>) -> Var<'t, T> {
    let [n, c, h, w] = x.shape();
    let hw = h * w;
    let mut out = Tensor::zeros([n, c, 1, 1]);
    let mut argmax = vec![0usize; n * c];
    for p in 0..n * c {
        let plane = &x.value().data()[p * hw..(p + 1) * hw];
        let mut best = 0;
        for (i, &v) in plane.iter().enumerate() {
            if v > plane[best] {
                best = i;
            }
        }
        out.data_mut()[p] = plane[best];
        argmax[p] = p * hw + best;
    }
    x.tape().op(out, &[x], move |g, _| {
        let mut dx = Tensor::zeros([n, c, h, w]);
        for (p, &src) in argmax.iter().enumerate() {
            dx.data_mut()[src] += g.data()[p];
        }
        vec![Some(dx)]
    })
}

/// Mean over channels, giving `[N,1,H,W]`.
pub fn channel_mean<'t, T: Float>(x: &Var<'t, T>) -> Var<'t, T> {
    let [n, c, h, w] = x.shape();
    let hw = h * w;
    let inv = T::one() / T::from_usize(c).unwrap();
    let mut out = Tensor::zeros([n, 1, h, w]);
    for b in 0..n {
        let dst = &mut out.data_mut()[b * hw..(b + 1) * hw];
        for ch in 0..c {
            for (d, &v) in dst.iter_mut().zip(x.value().plane(b, ch)) {
                *d += v;
            }
        }
        dst.iter_mut().for_each(|d| *d *= inv);
    }
    x.tape().op(out, &[x], move |g, _| {
        let mut dx = Tensor::zeros([n, c, h, w]);
        for b in 0..n {
            let gs = &g.data()[b * hw..(b + 1) * hw];
            for ch in 0..c {
                let start = (b * c + ch) * hw;
                for (d, &v) in dx.data_mut()[start..start + hw].iter_mut().zip(gs) {
                    *d = v * inv;
                }
            }
        }
        vec![Some(dx)]
    })
}

/// Maximum over channels, giving `[N,1,H,W]`.
pub fn channel_max<'t, T: Float>(x: &Var<'t, T>) -> Var<'t, T> {
    let [n, c, h, w] = x.shape();
    let hw = h * w;
    let mut out = Tensor::full([n, 1, h, w], T::neg_infinity());
    let mut argmax = vec![0usize; n * hw];
    for b in 0..n {
        for ch in 0..c {
            let start = (b * c + ch) * hw;
            for i in 0..hw {
                let v = x.value().data()[start + i];
                if ch == 0 || v > out.data()[b * hw + i] {
                    out.data_mut()[b * hw + i] = v;
                    argmax[b * hw + i] = start + i;
                }
            }
        }
    }
    x.tape().op(out, &[x], move |g, _| {
        let mut dx = Tensor::zeros([n, c, h, w]);
        for (o, &src) in argmax.iter().enumerate() {
            dx.data_mut()[src] += g.data()[o];
        }
        vec![Some(dx)]
    })
}

/// Source taps for one output coordinate of a half-pixel-centred 2×
/// bilinear upsample: `(i0, i1, weight_of_i1)`.
fn bilinear_taps(len: usize) -> Vec<(usize, usize, f64)> {
    (0..2 * len)
        .map(|o| {
            let src = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(len - 1);
            let i1 = (i0 + 1).min(len - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Bilinear 2× upsampling (half-pixel centres, edge clamped).
pub fn upsample_bilinear2<'t, T: Float>(x: &Var<'t, T>) -> Var<'t, T> {
    let [n, c, h, w] = x.shape();
    let (ho, wo) = (2 * h, 2 * w);
    let ty: Vec<(usize, usize, T)> = bilinear_taps(h)
        .into_iter()
        .map(|(a, b, l)| (a, b, T::from_f64_lossy(l)))
        .collect();
    let tx: Vec<(usize, usize, T)> = bilinear_taps(w)
        .into_iter()
        .map(|(a, b, l)| (a, b, T::from_f64_lossy(l)))
        .collect();
    let mut out = Tensor::zeros([n, c, ho, wo]);
    for p in 0..n * c {
        let src = &x.value().data()[p * h * w..(p + 1) * h * w];
        let dst = &mut out.data_mut()[p * ho * wo..(p + 1) * ho * wo];
        for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                let top = src[y0 * w + x0] * (T::one() - lx) + src[y0 * w + x1] * lx;
                let bot = src[y1 * w + x0] * (T::one() - lx) + src[y1 * w + x1] * lx;
                dst[oy * wo + ox] = top * (T::one() - ly) + bot * ly;
            }
        }
    }
    x.tape().op(out, &[x], move |g, _| {
        let mut dx = Tensor::zeros([n, c, h, w]);
        for p in 0..n * c {
            let gs = &g.data()[p * ho * wo..(p + 1) * ho * wo];
            let d = &mut dx.data_mut()[p * h * w..(p + 1) * h * w];
            for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                    let gv = gs[oy * wo + ox];
                    let top = gv * (T::one() - ly);
                    let bot = gv * ly;
                    d[y0 * w + x0] += top * (T::one() - lx);
                    d[y0 * w + x1] += top * lx;
                    d[y1 * w + x0] += bot * (T::one() - lx);
                    d[y1 * w + x1] += bot * lx;
                }
            }
        }
        vec![Some(dx)]
    })
}

/// `k×k` mean filter with replicate padding; output has the input's shape.
pub fn avg_pool_replicate<'t, T: Float>(x: &Var<'t, T>, k: usize) -> Result<Var<'t, T>> {
    if k % 2 == 0 || k == 0 {
        return Err(Error::Config(format!("avg_pool_replicate: kernel {k} must be odd")));
    }
    let [n, c, h, w] = x.shape();
    let r = (k / 2) as isize;
    let inv = T::one() / T::from_usize(k * k).unwrap();
    let clamp = |v: isize, len: usize| v.clamp(0, len as isize - 1) as usize;
    let mut out = Tensor::zeros([n, c, h, w]);
    for p in 0..n * c {
        let src = &x.value().data()[p * h * w..(p + 1) * h * w];
        let dst = &mut out.data_mut()[p * h * w..(p + 1) * h * w];
        for y in 0..h {
            for xx in 0..w {
                let mut s = T::zero();
                for dy in -r..=r {
                    let sy = clamp(y as isize + dy, h);
                    for dx in -r..=r {
                        s += src[sy * w + clamp(xx as isize + dx, w)];
                    }
                }
                dst[y * w + xx] = s * inv;
            }
        }
    }
    Ok(x.tape().op(out, &[x], move |g, _| {
        let mut dx = Tensor::zeros([n, c, h, w]);
        for p in 0..n * c {
            let gs = &g.data()[p * h * w..(p + 1) * h * w];
            let d = &mut dx.data_mut()[p * h * w..(p + 1) * h * w];
            for y in 0..h {
                for xx in 0..w {
                    let gv = gs[y * w + xx] * inv;
                    for dy in -r..=r {
                        let sy = clamp(y as isize + dy, h);
                        for ddx in -r..=r {
                            d[sy * w + clamp(xx as isize + ddx, w)] += gv;
                        }
                    }
                }
            }
        }
        vec![Some(dx)]
    }))
}

// ---------------------------------------------------------------------------
// Loss

/// Batch mean of `1 − Σpy / (Σ(p + y − py) + eps)`.
///
/// A sample whose union is exactly zero (empty prediction and empty mask)
/// contributes a loss of 0 and no gradient.
pub fn soft_iou_loss<'t, T: Float>(p: &Var<'t, T>, y: &Tensor<T>, eps: f64) -> Result<Var<'t, T>> {
    if p.shape() != y.shape() {
        return shape_err(format!("soft_iou_loss: score {:?} vs mask {:?}", p.shape(), y.shape()));
    }
    let n = p.shape()[0];
    let per = p.value().len() / n.max(1);
    let eps = T::from_f64_lossy(eps);
    let nf = T::from_usize(n).unwrap();
    let mut inter = vec![T::zero(); n];
    let mut union = vec![T::zero(); n];
    for s in 0..n {
        let ps = &p.value().data()[s * per..(s + 1) * per];
        let ys = &y.data()[s * per..(s + 1) * per];
        for (&pv, &yv) in ps.iter().zip(ys) {
            inter[s] += pv * yv;
            union[s] += pv + yv - pv * yv;
        }
    }
    let mut loss = T::zero();
    for s in 0..n {
        if union[s] == T::zero() {
            log::debug!("soft_iou_loss: sample {s} has empty prediction and mask; loss 0");
            continue;
        }
        loss += T::one() - inter[s] / (union[s] + eps);
    }
    loss /= nf;
    let yv = y.clone();
    let shape = p.shape();
    Ok(p.tape().op(Tensor::scalar(loss), &[p], move |g, _| {
        let go = g.data()[0];
        let mut dp = Tensor::zeros(shape);
        for s in 0..n {
            if union[s] == T::zero() {
                continue;
            }
            let u = union[s] + eps;
            let scale = -go / (nf * u * u);
            let ys = &yv.data()[s * per..(s + 1) * per];
            let d = &mut dp.data_mut()[s * per..(s + 1) * per];
            for (dv, &yv) in d.iter_mut().zip(ys) {
                // d(I/U)/dp = (y·U − I·(1−y)) / U²
                *dv = scale * (yv * u - inter[s] * (T::one() - yv));
            }
        }
        vec![Some(dp)]
    }))
}
