//! Raw forward/backward kernels, generic over the scalar type.
//!
//! Convolution uses im2col plus a strided GEMM, parallelized over the batch
//! axis; every output slice is written by exactly one worker and cross-sample
//! reductions happen in fixed order afterwards, so results are independent of
//! scheduling.

use rayon::prelude::*;

use super::{Scalar, Tensor};

/// Self-normalizing activation constants.
pub const SELU_ALPHA: f64 = 1.673_263_242_354_377_2;
pub const SELU_SCALE: f64 = 1.050_700_987_355_480_5;

#[inline]
pub fn shape4<S: Scalar>(t: &Tensor<S>) -> [usize; 4] {
    let s = t.shape();
    debug_assert_eq!(s.len(), 4, "expected rank-4 tensor, got {s:?}");
    [s[0], s[1], s[2], s[3]]
}

/// Zero-padded "same" im2col for a single sample: `[C*K*K, H*W]`.
fn im2col<S: Scalar>(in_s: &[S], c: usize, h: usize, w: usize, k: usize, pad: usize) -> Vec<S> {
    let hw = h * w;
    let mut cols = vec![S::zero(); c * k * k * hw];
    for ci in 0..c {
        let plane = &in_s[ci * hw..(ci + 1) * hw];
        for dy in 0..k {
            for dx in 0..k {
                let row = ((ci * k + dy) * k + dx) * hw;
                let x0 = pad.saturating_sub(dx);
                let x1 = (w + pad).saturating_sub(dx).min(w);
                if x0 >= x1 {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + dy as isize - pad as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = sy as usize * w + x0 + dx - pad;
                    let dst = row + y * w + x0;
                    cols[dst..dst + (x1 - x0)].copy_from_slice(&plane[src..src + (x1 - x0)]);
                }
            }
        }
    }
    cols
}

/// Scatter-add of column gradients back into one input sample.
fn col2im_add<S: Scalar>(
    cols: &[S],
    gin_s: &mut [S],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    pad: usize,
) {
    let hw = h * w;
    for ci in 0..c {
        for dy in 0..k {
            for dx in 0..k {
                let row = ((ci * k + dy) * k + dx) * hw;
                let x0 = pad.saturating_sub(dx);
                let x1 = (w + pad).saturating_sub(dx).min(w);
                if x0 >= x1 {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + dy as isize - pad as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = row + y * w + x0;
                    let dst = ci * hw + sy as usize * w + x0 + dx - pad;
                    for i in 0..(x1 - x0) {
                        gin_s[dst + i] += cols[src + i];
                    }
                }
            }
        }
    }
}

/// Same-padding convolution, kernel size 1 or 3.
pub fn conv2d_forward<S: Scalar>(
    input: &Tensor<S>,
    kernel: &Tensor<S>,
    bias: &Tensor<S>,
) -> Tensor<S> {
    let [n, c, h, w] = shape4(input);
    let [f, _, k, _] = shape4(kernel);
    let pad = k / 2;
    let hw = h * w;
    let ckk = c * k * k;
    let mut out = Tensor::zeros(&[n, f, h, w]);
    let kflat = kernel.data();
    let bias_d = bias.data();
    let in_data = input.data();
    out.data_mut()
        .par_chunks_mut(f * hw)
        .enumerate()
        .for_each(|(s, out_s)| {
            let in_s = &in_data[s * c * hw..(s + 1) * c * hw];
            let cols;
            let cols_ref: &[S] = if k == 1 {
                in_s
            } else {
                cols = im2col(in_s, c, h, w, k, pad);
                &cols
            };
            S::gemm_strided(
                f,
                ckk,
                hw,
                S::one(),
                kflat,
                ckk as isize,
                1,
                cols_ref,
                hw as isize,
                1,
                S::zero(),
                out_s,
                hw as isize,
                1,
            );
            for fi in 0..f {
                let b = bias_d[fi];
                for v in &mut out_s[fi * hw..(fi + 1) * hw] {
                    *v += b;
                }
            }
        });
    out
}

pub fn conv2d_backward<S: Scalar>(
    input: &Tensor<S>,
    kernel: &Tensor<S>,
    grad_out: &Tensor<S>,
) -> (Tensor<S>, Tensor<S>, Tensor<S>) {
    let [n, c, h, w] = shape4(input);
    let [f, _, k, _] = shape4(kernel);
    let pad = k / 2;
    let hw = h * w;
    let ckk = c * k * k;
    let kflat = kernel.data();
    let in_data = input.data();
    let gout = grad_out.data();

    let mut grad_input = Tensor::zeros(input.shape());
    // Per-sample partials are reduced in sample order below.
    let partials: Vec<(Vec<S>, Vec<S>)> = grad_input
        .data_mut()
        .par_chunks_mut(c * hw)
        .enumerate()
        .map(|(s, gin_s)| {
            let in_s = &in_data[s * c * hw..(s + 1) * c * hw];
            let gout_s = &gout[s * f * hw..(s + 1) * f * hw];
            let cols;
            let cols_ref: &[S] = if k == 1 {
                in_s
            } else {
                cols = im2col(in_s, c, h, w, k, pad);
                &cols
            };

            // dK += dOut · colsᵀ
            let mut gk = vec![S::zero(); f * ckk];
            S::gemm_strided(
                f,
                hw,
                ckk,
                S::one(),
                gout_s,
                hw as isize,
                1,
                cols_ref,
                1,
                hw as isize,
                S::zero(),
                &mut gk,
                ckk as isize,
                1,
            );

            // db += row sums of dOut
            let mut gb = vec![S::zero(); f];
            for fi in 0..f {
                let mut acc = S::zero();
                for &v in &gout_s[fi * hw..(fi + 1) * hw] {
                    acc += v;
                }
                gb[fi] = acc;
            }

            // dCols = Kᵀ · dOut, then scatter back to the input layout.
            let mut gcols = vec![S::zero(); ckk * hw];
            S::gemm_strided(
                ckk,
                f,
                hw,
                S::one(),
                kflat,
                1,
                ckk as isize,
                gout_s,
                hw as isize,
                1,
                S::zero(),
                &mut gcols,
                hw as isize,
                1,
            );
            if k == 1 {
                gin_s.copy_from_slice(&gcols);
            } else {
                col2im_add(&gcols, gin_s, c, h, w, k, pad);
            }
            (gk, gb)
        })
        .collect();

    let mut grad_kernel = Tensor::zeros(kernel.shape());
    let mut grad_bias = Tensor::zeros(&[f]);
    for (gk, gb) in partials {
        for (dst, src) in grad_kernel.data_mut().iter_mut().zip(&gk) {
            *dst += *src;
        }
        for (dst, src) in grad_bias.data_mut().iter_mut().zip(&gb) {
            *dst += *src;
        }
    }
    (grad_input, grad_kernel, grad_bias)
}

/// 2×2/stride-2 max pooling. Ties resolve to the first candidate in
/// row-major order. Returns the output and the flat input index of each
/// selected element.
pub fn maxpool_forward<S: Scalar>(input: &Tensor<S>) -> (Tensor<S>, Vec<u32>) {
    let [n, c, h, w] = shape4(input);
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    let mut argmax = vec![0u32; n * c * oh * ow];
    let in_d = input.data();
    let out_d = out.data_mut();
    for nc in 0..n * c {
        let base = nc * h * w;
        let obase = nc * oh * ow;
        for oy in 0..oh {
            for ox in 0..ow {
                let i00 = base + (2 * oy) * w + 2 * ox;
                let candidates = [i00, i00 + 1, i00 + w, i00 + w + 1];
                let mut best = candidates[0];
                let mut best_v = in_d[best];
                for &idx in &candidates[1..] {
                    if in_d[idx] > best_v {
                        best_v = in_d[idx];
                        best = idx;
                    }
                }
                out_d[obase + oy * ow + ox] = best_v;
                argmax[obase + oy * ow + ox] = best as u32;
            }
        }
    }
    (out, argmax)
}

pub fn maxpool_backward<S: Scalar>(
    argmax: &[u32],
    grad_out: &Tensor<S>,
    in_shape: &[usize],
) -> Tensor<S> {
    let mut grad_input = Tensor::zeros(in_shape);
    let gin = grad_input.data_mut();
    for (g, &idx) in grad_out.data().iter().zip(argmax) {
        gin[idx as usize] += *g;
    }
    grad_input
}

/// Nearest-neighbor ×2 upsampling.
pub fn upsample_forward<S: Scalar>(input: &Tensor<S>) -> Tensor<S> {
    let [n, c, h, w] = shape4(input);
    let mut out = Tensor::zeros(&[n, c, 2 * h, 2 * w]);
    let in_d = input.data();
    let out_d = out.data_mut();
    for nc in 0..n * c {
        let base = nc * h * w;
        let obase = nc * 4 * h * w;
        for y in 0..h {
            for x in 0..w {
                let v = in_d[base + y * w + x];
                let o = obase + (2 * y) * (2 * w) + 2 * x;
                out_d[o] = v;
                out_d[o + 1] = v;
                out_d[o + 2 * w] = v;
                out_d[o + 2 * w + 1] = v;
            }
        }
    }
    out
}

pub fn upsample_backward<S: Scalar>(grad_out: &Tensor<S>, in_shape: &[usize]) -> Tensor<S> {
    let [n, c, h, w] = [in_shape[0], in_shape[1], in_shape[2], in_shape[3]];
    let mut grad_input = Tensor::zeros(in_shape);
    let gout = grad_out.data();
    let gin = grad_input.data_mut();
    for nc in 0..n * c {
        let base = nc * h * w;
        let obase = nc * 4 * h * w;
        for y in 0..h {
            for x in 0..w {
                let o = obase + (2 * y) * (2 * w) + 2 * x;
                gin[base + y * w + x] =
                    gout[o] + gout[o + 1] + gout[o + 2 * w] + gout[o + 2 * w + 1];
            }
        }
    }
    grad_input
}

pub fn relu_forward<S: Scalar>(input: &Tensor<S>) -> Tensor<S> {
    let mut out = input.clone();
    for v in out.data_mut() {
        if !(*v > S::zero()) {
            *v = S::zero();
        }
    }
    out
}

pub fn relu_backward<S: Scalar>(input: &Tensor<S>, grad_out: &Tensor<S>) -> Tensor<S> {
    let mut grad = grad_out.clone();
    for (g, &x) in grad.data_mut().iter_mut().zip(input.data()) {
        if !(x > S::zero()) {
            *g = S::zero();
        }
    }
    grad
}

pub fn selu_forward<S: Scalar>(input: &Tensor<S>) -> Tensor<S> {
    let alpha = S::of_f64(SELU_ALPHA);
    let scale = S::of_f64(SELU_SCALE);
    let mut out = input.clone();
    for v in out.data_mut() {
        *v = if *v > S::zero() {
            scale * *v
        } else {
            scale * alpha * (v.exp() - S::one())
        };
    }
    out
}

pub fn selu_backward<S: Scalar>(input: &Tensor<S>, grad_out: &Tensor<S>) -> Tensor<S> {
    let alpha = S::of_f64(SELU_ALPHA);
    let scale = S::of_f64(SELU_SCALE);
    let mut grad = grad_out.clone();
    for (g, &x) in grad.data_mut().iter_mut().zip(input.data()) {
        *g = if x > S::zero() {
            *g * scale
        } else {
            *g * scale * alpha * x.exp()
        };
    }
    grad
}

pub fn sigmoid_forward<S: Scalar>(input: &Tensor<S>) -> Tensor<S> {
    let mut out = input.clone();
    for v in out.data_mut() {
        *v = if *v >= S::zero() {
            S::one() / (S::one() + (-*v).exp())
        } else {
            let e = v.exp();
            e / (S::one() + e)
        };
    }
    out
}

pub fn sigmoid_backward<S: Scalar>(output: &Tensor<S>, grad_out: &Tensor<S>) -> Tensor<S> {
    let mut grad = grad_out.clone();
    for (g, &y) in grad.data_mut().iter_mut().zip(output.data()) {
        *g = *g * y * (S::one() - y);
    }
    grad
}

pub struct BnForward<S: Scalar> {
    pub output: Tensor<S>,
    /// `(x - mean) * inv_std`, cached for the backward pass.
    pub normalized: Tensor<S>,
    pub inv_std: Vec<S>,
    /// Per-channel batch mean/var (train mode only).
    pub batch_stats: Option<(Vec<S>, Vec<S>)>,
}

/// Batch normalization over the (N, H, W) axes of each channel.
///
/// `stats` supplies the mean/variance to normalize with: batch statistics in
/// train mode, running statistics in infer mode. Reductions run serially per
/// channel in a fixed order.
pub fn batchnorm_forward<S: Scalar>(
    input: &Tensor<S>,
    gamma: &Tensor<S>,
    beta: &Tensor<S>,
    eps: S,
    use_batch_stats: bool,
    running_mean: &[S],
    running_var: &[S],
) -> BnForward<S> {
    let [n, c, h, w] = shape4(input);
    let hw = h * w;
    let m = n * hw;
    let in_d = input.data();

    let (mean, var) = if use_batch_stats {
        let mut mean = vec![S::zero(); c];
        let mut var = vec![S::zero(); c];
        for ci in 0..c {
            let mut acc = S::zero();
            for s in 0..n {
                let base = (s * c + ci) * hw;
                for &v in &in_d[base..base + hw] {
                    acc += v;
                }
            }
            let mu = acc / S::of_f64(m as f64);
            let mut acc2 = S::zero();
            for s in 0..n {
                let base = (s * c + ci) * hw;
                for &v in &in_d[base..base + hw] {
                    let d = v - mu;
                    acc2 += d * d;
                }
            }
            mean[ci] = mu;
            var[ci] = acc2 / S::of_f64(m as f64);
        }
        (mean, var)
    } else {
        (running_mean.to_vec(), running_var.to_vec())
    };

    let inv_std: Vec<S> = var.iter().map(|&v| S::one() / (v + eps).sqrt()).collect();
    let mut normalized = Tensor::zeros(input.shape());
    let mut output = Tensor::zeros(input.shape());
    {
        let norm_d = normalized.data_mut();
        let out_d = output.data_mut();
        for s in 0..n {
            for ci in 0..c {
                let base = (s * c + ci) * hw;
                let (mu, istd) = (mean[ci], inv_std[ci]);
                let (g, b) = (gamma.data()[ci], beta.data()[ci]);
                for i in base..base + hw {
                    let xhat = (in_d[i] - mu) * istd;
                    norm_d[i] = xhat;
                    out_d[i] = g * xhat + b;
                }
            }
        }
    }
    BnForward {
        output,
        normalized,
        inv_std,
        batch_stats: if use_batch_stats {
            Some((mean, var))
        } else {
            None
        },
    }
}

/// Backward for batchnorm. `train` selects the batch-statistics formula
/// (statistics depend on the input) versus the frozen-statistics one.
pub fn batchnorm_backward<S: Scalar>(
    normalized: &Tensor<S>,
    inv_std: &[S],
    gamma: &Tensor<S>,
    grad_out: &Tensor<S>,
    train: bool,
) -> (Tensor<S>, Tensor<S>, Tensor<S>) {
    let [n, c, h, w] = shape4(normalized);
    let hw = h * w;
    let m = S::of_f64((n * hw) as f64);
    let gout = grad_out.data();
    let xhat = normalized.data();

    let mut grad_gamma = Tensor::zeros(&[c]);
    let mut grad_beta = Tensor::zeros(&[c]);
    let mut grad_input = Tensor::zeros(normalized.shape());

    for ci in 0..c {
        let mut sum_dy = S::zero();
        let mut sum_dy_xhat = S::zero();
        for s in 0..n {
            let base = (s * c + ci) * hw;
            for i in base..base + hw {
                sum_dy += gout[i];
                sum_dy_xhat += gout[i] * xhat[i];
            }
        }
        grad_gamma.data_mut()[ci] = sum_dy_xhat;
        grad_beta.data_mut()[ci] = sum_dy;

        let g_istd = gamma.data()[ci] * inv_std[ci];
        let gin = grad_input.data_mut();
        if train {
            let mean_dy = sum_dy / m;
            let mean_dy_xhat = sum_dy_xhat / m;
            for s in 0..n {
                let base = (s * c + ci) * hw;
                for i in base..base + hw {
                    gin[i] = g_istd * (gout[i] - mean_dy - xhat[i] * mean_dy_xhat);
                }
            }
        } else {
            for s in 0..n {
                let base = (s * c + ci) * hw;
                for i in base..base + hw {
                    gin[i] = g_istd * gout[i];
                }
            }
        }
    }
    (grad_input, grad_gamma, grad_beta)
}

/// Channel concatenation of two NCHW tensors.
pub fn concat_forward<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Tensor<S> {
    let [n, ca, h, w] = shape4(a);
    let cb = b.shape()[1];
    let hw = h * w;
    let mut out = Tensor::zeros(&[n, ca + cb, h, w]);
    let out_d = out.data_mut();
    for s in 0..n {
        let dst = s * (ca + cb) * hw;
        out_d[dst..dst + ca * hw].copy_from_slice(&a.data()[s * ca * hw..(s + 1) * ca * hw]);
        out_d[dst + ca * hw..dst + (ca + cb) * hw]
            .copy_from_slice(&b.data()[s * cb * hw..(s + 1) * cb * hw]);
    }
    out
}

pub fn concat_backward<S: Scalar>(
    grad_out: &Tensor<S>,
    a_shape: &[usize],
    b_shape: &[usize],
) -> (Tensor<S>, Tensor<S>) {
    let [n, ca, h, w] = [a_shape[0], a_shape[1], a_shape[2], a_shape[3]];
    let cb = b_shape[1];
    let hw = h * w;
    let mut ga = Tensor::zeros(a_shape);
    let mut gb = Tensor::zeros(b_shape);
    let gout = grad_out.data();
    for s in 0..n {
        let src = s * (ca + cb) * hw;
        ga.data_mut()[s * ca * hw..(s + 1) * ca * hw]
            .copy_from_slice(&gout[src..src + ca * hw]);
        gb.data_mut()[s * cb * hw..(s + 1) * cb * hw]
            .copy_from_slice(&gout[src + ca * hw..src + (ca + cb) * hw]);
    }
    (ga, gb)
}

pub fn add_forward<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Tensor<S> {
    let mut out = a.clone();
    for (o, &v) in out.data_mut().iter_mut().zip(b.data()) {
        *o += v;
    }
    out
}

/// Spatial mean: `[N,C,H,W] -> [N,C,1,1]`.
pub fn global_avg_pool_forward<S: Scalar>(input: &Tensor<S>) -> Tensor<S> {
    let [n, c, h, w] = shape4(input);
    let hw = h * w;
    let inv = S::one() / S::of_f64(hw as f64);
    let mut out = Tensor::zeros(&[n, c, 1, 1]);
    for nc in 0..n * c {
        let mut acc = S::zero();
        for &v in &input.data()[nc * hw..(nc + 1) * hw] {
            acc += v;
        }
        out.data_mut()[nc] = acc * inv;
    }
    out
}

pub fn global_avg_pool_backward<S: Scalar>(grad_out: &Tensor<S>, in_shape: &[usize]) -> Tensor<S> {
    let hw = in_shape[2] * in_shape[3];
    let inv = S::one() / S::of_f64(hw as f64);
    let mut grad_input = Tensor::zeros(in_shape);
    for (nc, &g) in grad_out.data().iter().enumerate() {
        let v = g * inv;
        for gi in &mut grad_input.data_mut()[nc * hw..(nc + 1) * hw] {
            *gi = v;
        }
    }
    grad_input
}

/// Composite loss value: weighted positive-class cross-entropy plus the
/// dice-coefficient complement.
///
/// `term1 = -(1/N) Σ (λ/2)·g·ln(clamp(p))`,
/// `term2 = 1 - (2·Σ(g·p) + ε) / (Σp + Σg + ε)`.
pub fn composite_loss_forward<S: Scalar>(
    pred: &Tensor<S>,
    target: &Tensor<S>,
    lambda: S,
    epsilon: S,
    clamp: S,
) -> S {
    let n = S::of_f64(pred.numel() as f64);
    let half_lambda = lambda / S::of_f64(2.0);
    let mut ce = S::zero();
    let mut inter = S::zero();
    let mut sum_p = S::zero();
    let mut sum_g = S::zero();
    for (&p, &g) in pred.data().iter().zip(target.data()) {
        let pc = p.max(clamp).min(S::one() - clamp);
        ce += half_lambda * g * pc.ln();
        inter += g * p;
        sum_p += p;
        sum_g += g;
    }
    let term1 = -(ce / n);
    let term2 = S::one() - (S::of_f64(2.0) * inter + epsilon) / (sum_p + sum_g + epsilon);
    term1 + term2
}

pub fn composite_loss_backward<S: Scalar>(
    pred: &Tensor<S>,
    target: &Tensor<S>,
    lambda: S,
    epsilon: S,
    clamp: S,
    upstream: S,
) -> Tensor<S> {
    let n = S::of_f64(pred.numel() as f64);
    let half_lambda = lambda / S::of_f64(2.0);
    let two = S::of_f64(2.0);
    let mut inter = S::zero();
    let mut sum_p = S::zero();
    let mut sum_g = S::zero();
    for (&p, &g) in pred.data().iter().zip(target.data()) {
        inter += g * p;
        sum_p += p;
        sum_g += g;
    }
    let a = two * inter + epsilon;
    let b = sum_p + sum_g + epsilon;
    let b2 = b * b;

    let mut grad = Tensor::zeros(pred.shape());
    for ((gp, &p), &g) in grad
        .data_mut()
        .iter_mut()
        .zip(pred.data())
        .zip(target.data())
    {
        // Cross-entropy term: zero gradient where the clamp is active.
        let d_ce = if p > clamp && p < S::one() - clamp {
            -(half_lambda * g) / (n * p)
        } else {
            S::zero()
        };
        // d(1 - A/B)/dp = (A - 2gB) / B².
        let d_dice = (a - two * g * b) / b2;
        *gp = upstream * (d_ce + d_dice);
    }
    grad
}

/// Mean binary cross-entropy over both classes (pretraining head loss).
pub fn bce_loss_forward<S: Scalar>(pred: &Tensor<S>, target: &Tensor<S>, clamp: S) -> S {
    let n = S::of_f64(pred.numel() as f64);
    let mut acc = S::zero();
    for (&p, &g) in pred.data().iter().zip(target.data()) {
        let pc = p.max(clamp).min(S::one() - clamp);
        acc += g * pc.ln() + (S::one() - g) * (S::one() - pc).ln();
    }
    -(acc / n)
}

pub fn bce_loss_backward<S: Scalar>(
    pred: &Tensor<S>,
    target: &Tensor<S>,
    clamp: S,
    upstream: S,
) -> Tensor<S> {
    let n = S::of_f64(pred.numel() as f64);
    let mut grad = Tensor::zeros(pred.shape());
    for ((gp, &p), &g) in grad
        .data_mut()
        .iter_mut()
        .zip(pred.data())
        .zip(target.data())
    {
        *gp = if p > clamp && p < S::one() - clamp {
            upstream * (p - g) / (n * p * (S::one() - p))
        } else {
            S::zero()
        };
    }
    grad
}

/// Fixed-weight scalar reduction: `Σ wᵢ·xᵢ`. Used by the gradient checker to
/// turn arbitrary op outputs into a scalar loss.
pub fn weighted_sum_forward<S: Scalar>(input: &Tensor<S>, weights: &Tensor<S>) -> S {
    let mut acc = S::zero();
    for (&x, &w) in input.data().iter().zip(weights.data()) {
        acc += x * w;
    }
    acc
}

pub fn weighted_sum_backward<S: Scalar>(weights: &Tensor<S>, upstream: S) -> Tensor<S> {
    let mut grad = weights.clone();
    for g in grad.data_mut() {
        *g = *g * upstream;
    }
    grad
}
