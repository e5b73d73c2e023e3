//! Forward and backward kernels on raw row-major buffers. The tape and the
//! incremental decoder both call into these.

use super::array::{gemm, MatMut, MatRef};
use super::Scalar;

/// Additive mask value for blocked attention positions.
pub const MASKED_SCORE: f64 = -1e9;

pub const LAYER_NORM_EPS: f64 = 1e-5;

pub fn softmax_rows<F: Scalar>(x: &[F], cols: usize, out: &mut [F]) {
    for (xr, yr) in x.chunks_exact(cols).zip(out.chunks_exact_mut(cols)) {
        let max = xr.iter().copied().fold(F::neg_infinity(), F::max);
        let mut total = F::zero();
        for (y, &v) in yr.iter_mut().zip(xr) {
            *y = (v - max).exp();
            total += *y;
        }
        let inv = total.recip();
        for y in yr.iter_mut() {
            *y *= inv;
        }
    }
}

pub fn log_softmax_rows<F: Scalar>(x: &[F], cols: usize, out: &mut [F]) {
    for (xr, yr) in x.chunks_exact(cols).zip(out.chunks_exact_mut(cols)) {
        let max = xr.iter().copied().fold(F::neg_infinity(), F::max);
        let lse = xr.iter().map(|&v| (v - max).exp()).sum::<F>().ln() + max;
        for (y, &v) in yr.iter_mut().zip(xr) {
            *y = v - lse;
        }
    }
}

/// `dx = y ∘ (dy − Σ dy∘y)` per row, accumulated into `dx`.
pub fn softmax_backward<F: Scalar>(y: &[F], dy: &[F], cols: usize, dx: &mut [F]) {
    for ((yr, gr), dr) in y
        .chunks_exact(cols)
        .zip(dy.chunks_exact(cols))
        .zip(dx.chunks_exact_mut(cols))
    {
        let dot: F = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
        for ((d, &yv), &gv) in dr.iter_mut().zip(yr).zip(gr) {
            *d += yv * (gv - dot);
        }
    }
}

/// Layer normalization over each row. Writes normalized values and the
/// per-row reciprocal standard deviation for the backward pass.
pub fn layer_norm_forward<F: Scalar>(
    x: &[F],
    cols: usize,
    gamma: &[F],
    beta: &[F],
    out: &mut [F],
    xhat: &mut [F],
    rstd: &mut [F],
) {
    let n = F::lit(cols as f64);
    let eps = F::lit(LAYER_NORM_EPS);
    for (r, xr) in x.chunks_exact(cols).enumerate() {
        let mean = xr.iter().copied().sum::<F>() / n;
        let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / n;
        let inv = (var + eps).sqrt().recip();
        rstd[r] = inv;
        let base = r * cols;
        for c in 0..cols {
            let h = (xr[c] - mean) * inv;
            xhat[base + c] = h;
            out[base + c] = h * gamma[c] + beta[c];
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn layer_norm_backward<F: Scalar>(
    dy: &[F],
    cols: usize,
    gamma: &[F],
    xhat: &[F],
    rstd: &[F],
    dx: Option<&mut [F]>,
    dgamma: Option<&mut [F]>,
    dbeta: Option<&mut [F]>,
) {
    let n = F::lit(cols as f64);
    if let Some(dx) = dx {
        for (r, (gr, hr)) in dy
            .chunks_exact(cols)
            .zip(xhat.chunks_exact(cols))
            .enumerate()
        {
            let mut mean_g = F::zero();
            let mut mean_gh = F::zero();
            for c in 0..cols {
                let g = gr[c] * gamma[c];
                mean_g += g;
                mean_gh += g * hr[c];
            }
            mean_g /= n;
            mean_gh /= n;
            let dr = &mut dx[r * cols..(r + 1) * cols];
            for c in 0..cols {
                let g = gr[c] * gamma[c];
                dr[c] += rstd[r] * (g - mean_g - hr[c] * mean_gh);
            }
        }
    }
    if let Some(dgamma) = dgamma {
        for (gr, hr) in dy.chunks_exact(cols).zip(xhat.chunks_exact(cols)) {
            for c in 0..cols {
                dgamma[c] += gr[c] * hr[c];
            }
        }
    }
    if let Some(dbeta) = dbeta {
        for gr in dy.chunks_exact(cols) {
            for c in 0..cols {
                dbeta[c] += gr[c];
            }
        }
    }
}

/// Multi-head scaled dot-product attention.
///
/// `q` is `n × d`, `k` and `v` are `m × d`; head `h` uses columns
/// `h·d/heads .. (h+1)·d/heads`. `mask` is an optional additive `n × m`
/// matrix. `probs` receives the `heads × n × m` attention weights.
pub fn attention_forward<F: Scalar>(
    q: MatRef<'_, F>,
    k: MatRef<'_, F>,
    v: MatRef<'_, F>,
    heads: usize,
    mask: Option<&[F]>,
    out: &mut [F],
    probs: &mut [F],
) {
    let (n, d, m) = (q.rows(), q.cols(), k.rows());
    let dh = d / heads;
    let scale = F::lit(1.0 / (dh as f64).sqrt());
    let mut scores = vec![F::zero(); n * m];
    for h in 0..heads {
        let qh = q.col_block(h * dh, dh);
        let kh = k.col_block(h * dh, dh);
        let vh = v.col_block(h * dh, dh);
        gemm(scale, qh, kh.t(), F::zero(), MatMut::new(&mut scores, n, m));
        if let Some(mask) = mask {
            for (s, &mk) in scores.iter_mut().zip(mask) {
                *s += mk;
            }
        }
        let p = &mut probs[h * n * m..(h + 1) * n * m];
        softmax_rows(&scores, m, p);
        gemm(
            F::one(),
            MatRef::new(p, n, m),
            vh,
            F::zero(),
            MatMut::new(out, n, d).col_block(h * dh, dh),
        );
    }
}

/// Gradients of [`attention_forward`], accumulated into `dq`, `dk`, `dv`.
#[allow(clippy::too_many_arguments)]
pub fn attention_backward<F: Scalar>(
    q: MatRef<'_, F>,
    k: MatRef<'_, F>,
    v: MatRef<'_, F>,
    heads: usize,
    probs: &[F],
    dout: &[F],
    dq: &mut [F],
    dk: &mut [F],
    dv: &mut [F],
) {
    let (n, d, m) = (q.rows(), q.cols(), k.rows());
    let dh = d / heads;
    let scale = F::lit(1.0 / (dh as f64).sqrt());
    let mut dp = vec![F::zero(); n * m];
    let mut ds = vec![F::zero(); n * m];
    let dout = MatRef::new(dout, n, d);
    for h in 0..heads {
        let p = &probs[h * n * m..(h + 1) * n * m];
        let doh = dout.col_block(h * dh, dh);
        // dP = dO · Vᵀ
        gemm(
            F::one(),
            doh,
            v.col_block(h * dh, dh).t(),
            F::zero(),
            MatMut::new(&mut dp, n, m),
        );
        // dV += Pᵀ · dO
        gemm(
            F::one(),
            MatRef::new(p, n, m).t(),
            doh,
            F::one(),
            MatMut::new(dv, m, d).col_block(h * dh, dh),
        );
        ds.fill(F::zero());
        softmax_backward(p, &dp, m, &mut ds);
        // dQ += scale · dS · K ; dK += scale · dSᵀ · Q
        gemm(
            scale,
            MatRef::new(&ds, n, m),
            k.col_block(h * dh, dh),
            F::one(),
            MatMut::new(dq, n, d).col_block(h * dh, dh),
        );
        gemm(
            scale,
            MatRef::new(&ds, n, m).t(),
            q.col_block(h * dh, dh),
            F::one(),
            MatMut::new(dk, m, d).col_block(h * dh, dh),
        );
    }
}

/// Additive causal mask: position `i` may attend to `j ≤ i`.
pub fn causal_mask<F: Scalar>(n: usize) -> Vec<F> {
    let blocked = F::lit(MASKED_SCORE);
    let mut mask = vec![F::zero(); n * n];
    for i in 0..n {
        for j in i + 1..n {
            mask[i * n + j] = blocked;
        }
    }
    mask
}
