//! Forward kernels shared by the pure API and the gradient tape.

use std::sync::Arc;

use super::Tensor;
use crate::error::{Error, Result};

/// `c = alpha * a·b + beta * c` over strided row/column views.
///
/// Strides are in elements. Every view must lie inside its slice; this is
/// checked before handing raw pointers to the blocked kernel.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |rows: usize, cols: usize, rs: usize, cs: usize| (rows - 1) * rs + (cols - 1) * cs;
    assert!(last(m, n, rsc, csc) < c.len(), "gemm: output view out of bounds");
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    assert!(last(m, k, rsa, csa) < a.len(), "gemm: lhs view out of bounds");
    assert!(last(k, n, rsb, csb) < b.len(), "gemm: rhs view out of bounds");
    // SAFETY: all three views were bounds-checked above and `c` is borrowed
    // mutably, so it cannot alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// Matrix product of `[m×k]` and `[k×n]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(Error::shapes("matmul", a.shape(), b.shape()));
    }
    let mut out = Tensor::zeros([m, n]);
    gemm(m, k, n, 1.0, a.data(), (k, 1), b.data(), (n, 1), 0.0, out.data_mut(), (n, 1));
    Ok(out)
}

pub(crate) struct NormStats {
    pub mean: Vec<f64>,
    pub rstd: Vec<f64>,
}

pub(crate) fn layer_norm_forward(
    x: &Tensor,
    gain: Option<&[f64]>,
    bias: Option<&[f64]>,
    eps: f64,
) -> Result<(Tensor, NormStats)> {
    let d = x.last_dim();
    if d == 0 || x.rank() == 0 {
        return Err(Error::dim("layer_norm", "normalized axis is empty"));
    }
    if !(eps >= 0.0) {
        return Err(Error::Domain(format!("layer_norm eps must be >= 0, got {eps}")));
    }
    for p in [gain, bias].into_iter().flatten() {
        if p.len() != d {
            return Err(Error::dim(
                "layer_norm",
                format!("affine width {} vs last axis {d}", p.len()),
            ));
        }
    }
    let rows = x.numel() / d;
    let mut out = Tensor::zeros(x.shape().to_vec());
    let mut mean = Vec::with_capacity(rows);
    let mut rstd = Vec::with_capacity(rows);
    for (xr, or) in x.data().chunks_exact(d).zip(out.data_mut().chunks_exact_mut(d)) {
        let mu = xr.iter().sum::<f64>() / d as f64;
        let var = xr.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
        let rs = 1.0 / (var + eps).sqrt();
        for (j, (o, &v)) in or.iter_mut().zip(xr).enumerate() {
            let g = gain.map_or(1.0, |g| g[j]);
            let b = bias.map_or(0.0, |b| b[j]);
            *o = (v - mu) * rs * g + b;
        }
        mean.push(mu);
        rstd.push(rs);
    }
    Ok((out, NormStats { mean, rstd }))
}

/// Layer normalization over the last axis with an affine gain and bias.
/// `eps` is added to the variance inside the square root.
pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
    layer_norm_forward(x, Some(gain.data()), Some(bias.data()), eps).map(|(t, _)| t)
}

/// Which keys each query row may attend to.
#[derive(Clone, Debug, PartialEq)]
pub enum KeyMask {
    Full,
    /// Half-open key range `[lo, hi)` per query row.
    Ranges(Arc<[(usize, usize)]>),
}

impl KeyMask {
    pub fn ranges(ranges: Vec<(usize, usize)>) -> Self {
        KeyMask::Ranges(ranges.into())
    }

    fn range(&self, row: usize, nk: usize) -> (usize, usize) {
        match self {
            KeyMask::Full => (0, nk),
            KeyMask::Ranges(r) => r[row],
        }
    }
}

pub(crate) struct AttentionOut {
    pub out: Tensor,
    /// Softmax weights, `heads × nq × nk`, zero outside the key mask.
    pub probs: Vec<f64>,
}

pub(crate) fn attention_forward(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    heads: usize,
    mask: &KeyMask,
) -> Result<AttentionOut> {
    let (nq, d) = q.dims2()?;
    let (nk, dk) = k.dims2()?;
    let (nv, dv) = v.dims2()?;
    if d != dk || nk != nv {
        return Err(Error::dim(
            "attention",
            format!("q {:?}, k {:?}, v {:?}", q.shape(), k.shape(), v.shape()),
        ));
    }
    if heads == 0 || d % heads != 0 || dv % heads != 0 {
        return Err(Error::dim(
            "attention",
            format!("{heads} heads do not divide widths {d} and {dv}"),
        ));
    }
    if let KeyMask::Ranges(r) = mask {
        if r.len() != nq {
            return Err(Error::dim(
                "attention",
                format!("{} key ranges for {nq} queries", r.len()),
            ));
        }
    }
    for row in 0..nq {
        let (lo, hi) = mask.range(row, nk);
        if lo >= hi || hi > nk {
            return Err(Error::EmptyKeys { row });
        }
    }
    let dh = d / heads;
    let dvh = dv / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut probs = vec![0.0; heads * nq * nk];
    let mut out = Tensor::zeros([nq, dv]);
    for h in 0..heads {
        let p = &mut probs[h * nq * nk..(h + 1) * nq * nk];
        gemm(
            nq,
            dh,
            nk,
            scale,
            &q.data()[h * dh..],
            (d, 1),
            &k.data()[h * dh..],
            (1, d),
            0.0,
            p,
            (nk, 1),
        );
        for (row, pr) in p.chunks_exact_mut(nk).enumerate() {
            let (lo, hi) = mask.range(row, nk);
            let mx = pr[lo..hi].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (j, w) in pr.iter_mut().enumerate() {
                if j >= lo && j < hi {
                    *w = (*w - mx).exp();
                    z += *w;
                } else {
                    *w = 0.0;
                }
            }
            pr[lo..hi].iter_mut().for_each(|w| *w /= z);
        }
        gemm(
            nq,
            nk,
            dvh,
            1.0,
            p,
            (nk, 1),
            &v.data()[h * dvh..],
            (dv, 1),
            0.0,
            &mut out.data_mut()[h * dvh..],
            (dv, 1),
        );
    }
    Ok(AttentionOut { out, probs })
}

/// Single-head scaled dot-product attention `softmax(q·kᵀ/√D)·v`.
pub fn softmax_attention(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<Tensor> {
    attention_forward(q, k, v, 1, &KeyMask::Full).map(|a| a.out)
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// Pointwise nonlinearity used between the two layers of an MLP.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// tanh approximation of GELU.
    #[default]
    Gelu,
    Silu,
    /// Test hook: no nonlinearity.
    Identity,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => {
                let u = GELU_C * (x + 0.044715 * x * x * x);
                0.5 * x * (1.0 + u.tanh())
            }
            Activation::Silu => x / (1.0 + (-x).exp()),
            Activation::Identity => x,
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => {
                let u = GELU_C * (x + 0.044715 * x * x * x);
                let th = u.tanh();
                let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
                0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du
            }
            Activation::Silu => {
                let s = 1.0 / (1.0 + (-x).exp());
                s * (1.0 + x * (1.0 - s))
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Two linear layers with an activation between them: `act(x·w1 + b1)·w2 + b2`.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
    pub activation: Activation,
}

impl Mlp {
    /// Applies the perceptron along the last axis of `x`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let din = x.last_dim();
        let rows = if x.rank() == 0 { 1 } else { x.numel() / din.max(1) };
        let flat = x.reshape([rows, din])?;
        let h = linear(&flat, &self.w1, &self.b1)?.map(|v| self.activation.apply(v));
        let y = linear(&h, &self.w2, &self.b2)?;
        let mut shape = x.shape().to_vec();
        match shape.last_mut() {
            Some(last) => *last = y.last_dim(),
            None => shape.push(y.last_dim()),
        }
        y.reshape(shape)
    }
}

/// `x·w + b` with `b` broadcast over rows.
pub(crate) fn linear(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let mut y = matmul(x, w)?;
    let n = y.last_dim();
    if b.numel() != n {
        return Err(Error::shapes("linear bias", b.shape(), &[n]));
    }
    for row in y.data_mut().chunks_exact_mut(n) {
        row.iter_mut().zip(b.data()).for_each(|(v, bb)| *v += bb);
    }
    Ok(y)
}
