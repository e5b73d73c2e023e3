use rand::Rng;

use crate::numerics::kernels::{layer_norm_forward, MASKED_SCORE};
use crate::numerics::{gemm, MatMut, MatRef, NumResult, ParamId, ParamStore, Scalar, Tape, Var};

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<F: Scalar>(
        store: &mut ParamStore<F>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Linear {
            w: store.glorot(&format!("{name}.w"), fan_in, fan_out, rng),
            b: store.zeros(&format!("{name}.b"), 1, fan_out),
        }
    }

    pub fn apply<F: Scalar>(
        &self,
        tape: &mut Tape<F>,
        store: &ParamStore<F>,
        x: Var,
    ) -> NumResult<Var> {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        tape.linear(x, w, b)
    }

    /// Untaped `x @ w + b` for an `n × fan_in` row-major block.
    pub fn forward<F: Scalar>(&self, store: &ParamStore<F>, x: &[F], n: usize) -> Vec<F> {
        let w = store.get(self.w);
        let b = store.get(self.b).data();
        let mut out: Vec<F> = (0..n).flat_map(|_| b.iter().copied()).collect();
        if n == 1 {
            for (&xi, wr) in x.iter().zip(w.data().chunks_exact(w.cols())) {
                for (o, &wv) in out.iter_mut().zip(wr) {
                    *o += xi * wv;
                }
            }
            return out;
        }
        gemm(
            F::one(),
            MatRef::new(x, n, w.rows()),
            w.view(),
            F::one(),
            MatMut::new(&mut out, n, w.cols()),
        );
        out
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<F: Scalar>(store: &mut ParamStore<F>, name: &str, d: usize) -> Self {
        LayerNorm {
            gamma: store.ones(&format!("{name}.g"), 1, d),
            beta: store.zeros(&format!("{name}.b"), 1, d),
        }
    }

    pub fn apply<F: Scalar>(
        &self,
        tape: &mut Tape<F>,
        store: &ParamStore<F>,
        x: Var,
    ) -> NumResult<Var> {
        let g = tape.param(store, self.gamma);
        let b = tape.param(store, self.beta);
        tape.layer_norm(x, g, b)
    }

    pub fn forward<F: Scalar>(&self, store: &ParamStore<F>, x: &[F]) -> Vec<F> {
        let g = store.get(self.gamma).data();
        let b = store.get(self.beta).data();
        let d = g.len();
        let rows = x.len() / d;
        let mut out = vec![F::zero(); x.len()];
        let mut xhat = vec![F::zero(); x.len()];
        let mut rstd = vec![F::zero(); rows];
        layer_norm_forward(x, d, g, b, &mut out, &mut xhat, &mut rstd);
        out
    }
}

/// Additive key mask that blocks the listed key positions for every query;
/// `None` when nothing (or everything) would be blocked.
pub fn key_mask<F: Scalar>(queries: usize, blocked: &[bool]) -> Option<Vec<F>> {
    let n_blocked = blocked.iter().filter(|&&b| b).count();
    if n_blocked == 0 || n_blocked == blocked.len() {
        return None;
    }
    let row: Vec<F> = blocked
        .iter()
        .map(|&b| if b { F::lit(MASKED_SCORE) } else { F::zero() })
        .collect();
    Some((0..queries).flat_map(|_| row.iter().copied()).collect())
}

pub fn add_in_place<F: Scalar>(x: &mut [F], y: &[F]) {
    for (a, &b) in x.iter_mut().zip(y) {
        *a += b;
    }
}
