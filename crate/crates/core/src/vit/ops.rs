//! Row-batched kernels and their backward passes.

use crate::scalar::Real;

use super::params::{LayerNorm, Linear};

pub(crate) const LN_EPS: f64 = 1e-6;

#[inline]
pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    // Four partial sums; the fixed association keeps results reproducible.
    let mut acc = [T::zero(); 4];
    let chunks = a.len() / 4;
    for k in 0..chunks {
        let i = 4 * k;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = T::zero();
    for i in 4 * chunks..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
pub(crate) fn axpy<T: Real>(y: &mut [T], a: T, x: &[T]) {
    debug_assert_eq!(y.len(), x.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// `y[t] = W x[t] + b` for `rows` inputs stored back to back.
pub(crate) fn linear_forward<T: Real>(lin: &Linear<T>, x: &[T], rows: usize) -> Vec<T> {
    let mut y = Vec::with_capacity(rows * lin.out_dim);
    for t in 0..rows {
        let xt = &x[t * lin.in_dim..(t + 1) * lin.in_dim];
        for o in 0..lin.out_dim {
            y.push(dot(lin.row(o), xt) + lin.bias[o]);
        }
    }
    y
}

/// Accumulates weight/bias gradients into `grad` and returns `dL/dx`.
pub(crate) fn linear_backward<T: Real>(
    lin: &Linear<T>,
    x: &[T],
    dy: &[T],
    rows: usize,
    grad: &mut Linear<T>,
) -> Vec<T> {
    let (n_in, n_out) = (lin.in_dim, lin.out_dim);
    let mut dx = vec![T::zero(); rows * n_in];
    for t in 0..rows {
        let xt = &x[t * n_in..(t + 1) * n_in];
        let dyt = &dy[t * n_out..(t + 1) * n_out];
        let dxt = &mut dx[t * n_in..(t + 1) * n_in];
        for o in 0..n_out {
            let g = dyt[o];
            if g == T::zero() {
                continue;
            }
            grad.bias[o] += g;
            axpy(&mut grad.weight[o * n_in..(o + 1) * n_in], g, xt);
            axpy(dxt, g, lin.row(o));
        }
    }
    dx
}

/// Saved statistics of a layer-norm application.
#[derive(Debug, Clone)]
pub(crate) struct LnCache<T> {
    pub xhat: Vec<T>,
    pub rstd: Vec<T>,
}

/// Per-row layer norm with population variance.
pub(crate) fn layer_norm_forward<T: Real>(ln: &LayerNorm<T>, x: &[T], dim: usize) -> (Vec<T>, LnCache<T>) {
    let rows = x.len() / dim;
    let inv_d = T::one() / T::from_usize(dim).unwrap();
    let eps = T::lit(LN_EPS);
    let mut y = Vec::with_capacity(x.len());
    let mut xhat = Vec::with_capacity(x.len());
    let mut rstd = Vec::with_capacity(rows);
    for t in 0..rows {
        let row = &x[t * dim..(t + 1) * dim];
        let mean = row.iter().copied().sum::<T>() * inv_d;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
        let r = T::one() / (var + eps).sqrt();
        rstd.push(r);
        for (i, &v) in row.iter().enumerate() {
            let h = (v - mean) * r;
            xhat.push(h);
            y.push(h * ln.gamma[i] + ln.beta[i]);
        }
    }
    (y, LnCache { xhat, rstd })
}

pub(crate) fn layer_norm_backward<T: Real>(
    ln: &LayerNorm<T>,
    cache: &LnCache<T>,
    dy: &[T],
    dim: usize,
    grad: &mut LayerNorm<T>,
) -> Vec<T> {
    let rows = dy.len() / dim;
    let inv_d = T::one() / T::from_usize(dim).unwrap();
    let mut dx = vec![T::zero(); dy.len()];
    let mut dxhat = vec![T::zero(); dim];
    for t in 0..rows {
        let xh = &cache.xhat[t * dim..(t + 1) * dim];
        let dyt = &dy[t * dim..(t + 1) * dim];
        for i in 0..dim {
            grad.gamma[i] += dyt[i] * xh[i];
            grad.beta[i] += dyt[i];
            dxhat[i] = dyt[i] * ln.gamma[i];
        }
        let mean_dxhat = dxhat.iter().copied().sum::<T>() * inv_d;
        let mean_dxhat_xhat = dxhat.iter().zip(xh).map(|(&a, &b)| a * b).sum::<T>() * inv_d;
        let r = cache.rstd[t];
        for i in 0..dim {
            dx[t * dim + i] = r * (dxhat[i] - mean_dxhat - xh[i] * mean_dxhat_xhat);
        }
    }
    dx
}

/// Exact GELU, `u·Φ(u)`.
#[inline]
pub(crate) fn gelu<T: Real>(u: T) -> T {
    let half = T::lit(0.5);
    half * u * (T::one() + (u * T::lit(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

#[inline]
pub(crate) fn gelu_grad<T: Real>(u: T) -> T {
    let half = T::lit(0.5);
    let cdf = half * (T::one() + (u * T::lit(std::f64::consts::FRAC_1_SQRT_2)).erf());
    let pdf = (-half * u * u).exp() * T::lit(1.0 / (2.0 * std::f64::consts::PI).sqrt());
    cdf + u * pdf
}

/// In-place numerically stable softmax.
pub(crate) fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = T::one() / sum;
    row.iter_mut().for_each(|v| *v *= inv);
}

pub fn softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let mut p = logits.to_vec();
    softmax_in_place(&mut p);
    p
}

/// A head feature rescaled to norm α.
#[derive(Debug, Clone)]
pub struct Rescaled<T> {
    pub feature: Vec<T>,
    pub norm: T,
    /// Zero-norm input: the feature was passed through unscaled.
    pub degenerate: bool,
}

pub fn l2_rescale<T: Real>(f: &[T], alpha: T) -> Rescaled<T> {
    let norm = dot(f, f).sqrt();
    if !(norm > T::zero()) || !norm.is_finite() {
        return Rescaled {
            feature: f.to_vec(),
            norm,
            degenerate: true,
        };
    }
    let s = alpha / norm;
    Rescaled {
        feature: f.iter().map(|&v| v * s).collect(),
        norm,
        degenerate: false,
    }
}

/// `dL/df` given `dL/df̂` for `f̂ = α f / ‖f‖`.
pub fn l2_rescale_backward<T: Real>(r: &Rescaled<T>, alpha: T, d_hat: &[T]) -> Vec<T> {
    if r.degenerate {
        return d_hat.to_vec();
    }
    // With u = f̂/α: df = α/‖f‖ · (d_hat − u (u·d_hat)).
    let proj = dot(&r.feature, d_hat) / (alpha * alpha);
    let s = alpha / r.norm;
    r.feature
        .iter()
        .zip(d_hat)
        .map(|(&fh, &g)| s * (g - fh * proj))
        .collect()
}
