use std::collections::HashMap;

use rand::Rng;

use super::array::gemm;
use super::kernels;
use super::{Array, Gradients, NumResult, NumericsError, ParamId, ParamStore, Scalar};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<F> {
    Input,
    Param(ParamId),
    MatMul {
        a: Var,
        b: Var,
        trans_b: bool,
    },
    Add(Var, Var),
    AddRow {
        a: Var,
        row: Var,
    },
    Mul(Var, Var),
    Scale(Var, F),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Log(Var),
    Softmax(Var),
    LogSoftmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<F>,
        rstd: Vec<F>,
    },
    Dropout {
        a: Var,
        keep: Vec<F>,
    },
    Gather {
        table: Var,
        rows: Vec<usize>,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols {
        a: Var,
        start: usize,
    },
    Transpose(Var),
    Sum(Var),
    Mean(Var),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: Vec<F>,
    },
    /// Scalar function of `input` whose gradient was computed alongside it.
    ScalarFn {
        input: Var,
        grad: Array<F>,
    },
}

struct Node<F> {
    value: Array<F>,
    op: Op<F>,
}

/// Records forward operations for one computation graph.
pub struct Tape<F: Scalar> {
    nodes: Vec<Node<F>>,
    params: HashMap<ParamId, Var>,
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

fn mismatch(op: &'static str, a: &Array<impl Scalar>, b: &Array<impl Scalar>) -> NumericsError {
    NumericsError::ShapeMismatch {
        op,
        left: a.shape(),
        right: b.shape(),
    }
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            params: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array<F> {
        &self.nodes[v.0].value
    }

    /// Which ReLU inputs are positive, in recording order. Two evaluations
    /// with equal patterns lie on the same linear piece of every ReLU.
    pub fn relu_pattern(&self) -> Vec<bool> {
        let mut bits = Vec::new();
        for node in &self.nodes {
            if let Op::Relu(a) = node.op {
                bits.extend(self.value(a).data().iter().map(|&x| x > F::zero()));
            }
        }
        bits
    }

    fn push(&mut self, op_name: &'static str, value: Array<F>, op: Op<F>) -> NumResult<Var> {
        if !value.is_finite() {
            return Err(NumericsError::NonFinite { op: op_name });
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A constant input; receives no gradient.
    pub fn input(&mut self, value: Array<F>) -> NumResult<Var> {
        self.push("input", value, Op::Input)
    }

    /// The leaf for a parameter; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore<F>, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        self.nodes.push(Node {
            value: store.get(id).clone(),
            op: Op::Param(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> NumResult<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a @ bᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> NumResult<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> NumResult<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let bview = if trans_b { bv.view().t() } else { bv.view() };
        if av.cols() != bview.rows() {
            return Err(mismatch("matmul", av, bv));
        }
        let mut out = Array::zeros(av.rows(), bview.cols());
        gemm(F::one(), av.view(), bview, F::zero(), out.view_mut());
        self.push("matmul", out, Op::MatMul { a, b, trans_b })
    }

    pub fn add(&mut self, a: Var, b: Var) -> NumResult<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(mismatch("add", av, bv));
        }
        let mut out = av.clone();
        out.add_assign(bv);
        self.push("add", out, Op::Add(a, b))
    }

    /// Adds a `1 × cols` row vector to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> NumResult<Var> {
        let (av, rv) = (self.value(a), self.value(row));
        if rv.rows() != 1 || rv.cols() != av.cols() {
            return Err(mismatch("add_row", av, rv));
        }
        let mut out = av.clone();
        let cols = av.cols();
        for r in out.data_mut().chunks_exact_mut(cols) {
            for (x, &b) in r.iter_mut().zip(rv.data()) {
                *x += b;
            }
        }
        self.push("add_row", out, Op::AddRow { a, row })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> NumResult<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(mismatch("mul", av, bv));
        }
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| x * y)
            .collect();
        let out = Array::from_vec(av.rows(), av.cols(), data)?;
        self.push("mul", out, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: F) -> NumResult<Var> {
        let out = self.value(a).map(|x| x * s);
        self.push("scale", out, Op::Scale(a, s))
    }

    pub fn relu(&mut self, a: Var) -> NumResult<Var> {
        let out = self.value(a).map(|x| x.max(F::zero()));
        self.push("relu", out, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> NumResult<Var> {
        let out = self.value(a).map(fast_tanh);
        self.push("tanh", out, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> NumResult<Var> {
        let out = self.value(a).map(|x| (F::one() + (-x).exp()).recip());
        self.push("sigmoid", out, Op::Sigmoid(a))
    }

    pub fn log(&mut self, a: Var) -> NumResult<Var> {
        let out = self.value(a).map(F::ln);
        self.push("log", out, Op::Log(a))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> NumResult<Var> {
        let av = self.value(a);
        let mut out = Array::zeros(av.rows(), av.cols());
        kernels::softmax_rows(av.data(), av.cols(), out.data_mut());
        self.push("softmax", out, Op::Softmax(a))
    }

    pub fn log_softmax(&mut self, a: Var) -> NumResult<Var> {
        let av = self.value(a);
        let mut out = Array::zeros(av.rows(), av.cols());
        kernels::log_softmax_rows(av.data(), av.cols(), out.data_mut());
        self.push("log_softmax", out, Op::LogSoftmax(a))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> NumResult<Var> {
        let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
        let cols = xv.cols();
        if gv.shape() != [1, cols] || bv.shape() != [1, cols] {
            return Err(mismatch("layer_norm", xv, gv));
        }
        let mut out = Array::zeros(xv.rows(), cols);
        let mut xhat = vec![F::zero(); xv.len()];
        let mut rstd = vec![F::zero(); xv.rows()];
        kernels::layer_norm_forward(
            xv.data(),
            cols,
            gv.data(),
            bv.data(),
            out.data_mut(),
            &mut xhat,
            &mut rstd,
        );
        self.push(
            "layer_norm",
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
        )
    }

    /// Inverted dropout: zeroes each element with probability `p` and scales
    /// survivors by `1/(1−p)`. With `rng = None` or `p = 0` it is the identity.
    pub fn dropout<R: Rng>(&mut self, a: Var, p: f64, rng: Option<&mut R>) -> NumResult<Var> {
        let Some(rng) = rng else { return Ok(a) };
        if p <= 0.0 {
            return Ok(a);
        }
        let scale = F::lit(1.0 / (1.0 - p));
        let av = self.value(a);
        let keep: Vec<F> = (0..av.len())
            .map(|_| {
                if rng.random::<f64>() < p {
                    F::zero()
                } else {
                    scale
                }
            })
            .collect();
        let data = av.data().iter().zip(&keep).map(|(&x, &k)| x * k).collect();
        let out = Array::from_vec(av.rows(), av.cols(), data)?;
        self.push("dropout", out, Op::Dropout { a, keep })
    }

    /// Row gather (embedding lookup).
    pub fn gather(&mut self, table: Var, rows: &[usize]) -> NumResult<Var> {
        let tv = self.value(table);
        let cols = tv.cols();
        let mut out = Array::zeros(rows.len(), cols);
        for (i, &r) in rows.iter().enumerate() {
            if r >= tv.rows() {
                return Err(NumericsError::Invalid(format!(
                    "gather: row {r} outside table of {} rows",
                    tv.rows()
                )));
            }
            out.row_mut(i).copy_from_slice(tv.row(r));
        }
        self.push(
            "gather",
            out,
            Op::Gather {
                table,
                rows: rows.to_vec(),
            },
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> NumResult<Var> {
        let rows = self.value(parts[0]).rows();
        let mut cols = 0;
        for &p in parts {
            let pv = self.value(p);
            if pv.rows() != rows {
                return Err(mismatch("concat_cols", self.value(parts[0]), pv));
            }
            cols += pv.cols();
        }
        let mut out = Array::zeros(rows, cols);
        for r in 0..rows {
            let mut c0 = 0;
            for &p in parts {
                let pv = self.value(p);
                out.row_mut(r)[c0..c0 + pv.cols()].copy_from_slice(pv.row(r));
                c0 += pv.cols();
            }
        }
        self.push("concat_cols", out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> NumResult<Var> {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        for &p in parts {
            let pv = self.value(p);
            if pv.cols() != cols {
                return Err(mismatch("concat_rows", self.value(parts[0]), pv));
            }
            data.extend_from_slice(pv.data());
        }
        let rows = data.len() / cols.max(1);
        let out = Array::from_vec(rows, cols, data)?;
        self.push("concat_rows", out, Op::ConcatRows(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> NumResult<Var> {
        let av = self.value(a);
        if start + len > av.cols() {
            return Err(NumericsError::Invalid(format!(
                "slice_cols: {start}..{} outside {} columns",
                start + len,
                av.cols()
            )));
        }
        let out = Array::from_fn(av.rows(), len, |r, c| av.get(r, start + c));
        self.push("slice_cols", out, Op::SliceCols { a, start })
    }

    pub fn transpose(&mut self, a: Var) -> NumResult<Var> {
        let out = self.value(a).transpose();
        self.push("transpose", out, Op::Transpose(a))
    }

    pub fn sum(&mut self, a: Var) -> NumResult<Var> {
        let out = Array::scalar(self.value(a).sum());
        self.push("sum", out, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> NumResult<Var> {
        let av = self.value(a);
        let out = Array::scalar(av.sum() / F::lit(av.len() as f64));
        self.push("mean", out, Op::Mean(a))
    }

    /// Multi-head scaled dot-product attention with an optional additive mask.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        mask: Option<&[F]>,
    ) -> NumResult<Var> {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        if qv.cols() != kv.cols() || kv.shape() != vv.shape() {
            return Err(mismatch("attention", qv, kv));
        }
        if heads == 0 || qv.cols() % heads != 0 {
            return Err(NumericsError::Invalid(format!(
                "attention: width {} not divisible into {heads} heads",
                qv.cols()
            )));
        }
        let (n, m) = (qv.rows(), kv.rows());
        if let Some(mask) = mask {
            if mask.len() != n * m {
                return Err(NumericsError::Invalid(format!(
                    "attention: mask has {} entries, expected {n}×{m}",
                    mask.len()
                )));
            }
        }
        let mut out = Array::zeros(n, qv.cols());
        let mut probs = vec![F::zero(); heads * n * m];
        kernels::attention_forward(
            qv.view(),
            kv.view(),
            vv.view(),
            heads,
            mask,
            out.data_mut(),
            &mut probs,
        );
        self.push(
            "attention",
            out,
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            },
        )
    }

    /// Records a scalar `value` that depends on `input` with known gradient
    /// `d value / d input`.
    pub fn scalar_fn(&mut self, input: Var, value: F, grad: Array<F>) -> NumResult<Var> {
        if grad.shape() != self.value(input).shape() {
            return Err(mismatch("scalar_fn", self.value(input), &grad));
        }
        if !grad.is_finite() {
            return Err(NumericsError::NonFinite { op: "scalar_fn" });
        }
        self.push(
            "scalar_fn",
            Array::scalar(value),
            Op::ScalarFn { input, grad },
        )
    }

    /// `x @ w + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> NumResult<Var> {
        let h = self.matmul(x, w)?;
        self.add_row(h, b)
    }

    /// Gradients of the scalar `loss` for every parameter in `store`.
    /// Parameters not reachable from `loss` get zeros.
    pub fn backward(&self, loss: Var, store: &ParamStore<F>) -> NumResult<Gradients<F>> {
        let shape = self.value(loss).shape();
        if shape != [1, 1] {
            return Err(NumericsError::NonScalarLoss { shape });
        }
        let mut out = Gradients::zeros_like(store);
        let mut grads: Vec<Option<Array<F>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Array::scalar(F::one()));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Input => {}
                Op::Param(id) => out.grads[id.0].add_assign(&g),
                Op::MatMul { a, b, trans_b } => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let gv = g.view();
                    if *trans_b {
                        // C = A Bᵀ: dA = dC B, dB = dCᵀ A
                        let da = self.grad_buf(&mut grads, *a);
                        gemm(F::one(), gv, bv.view(), F::one(), da.view_mut());
                        let db = self.grad_buf(&mut grads, *b);
                        gemm(F::one(), gv.t(), av.view(), F::one(), db.view_mut());
                    } else {
                        let da = self.grad_buf(&mut grads, *a);
                        gemm(F::one(), gv, bv.view().t(), F::one(), da.view_mut());
                        let db = self.grad_buf(&mut grads, *b);
                        gemm(F::one(), av.view().t(), gv, F::one(), db.view_mut());
                    }
                }
                Op::Add(a, b) => {
                    self.grad_buf(&mut grads, *a).add_assign(&g);
                    self.grad_buf(&mut grads, *b).add_assign(&g);
                }
                Op::AddRow { a, row } => {
                    self.grad_buf(&mut grads, *a).add_assign(&g);
                    let cols = g.cols();
                    let dr = self.grad_buf(&mut grads, *row);
                    for gr in g.data().chunks_exact(cols) {
                        for (d, &x) in dr.data_mut().iter_mut().zip(gr) {
                            *d += x;
                        }
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let da = self.grad_buf(&mut grads, *a);
                    for ((d, &x), &y) in da.data_mut().iter_mut().zip(g.data()).zip(bv.data()) {
                        *d += x * y;
                    }
                    let db = self.grad_buf(&mut grads, *b);
                    for ((d, &x), &y) in db.data_mut().iter_mut().zip(g.data()).zip(av.data()) {
                        *d += x * y;
                    }
                }
                Op::Scale(a, s) => {
                    let da = self.grad_buf(&mut grads, *a);
                    for (d, &x) in da.data_mut().iter_mut().zip(g.data()) {
                        *d += x * *s;
                    }
                }
                Op::Relu(a) => {
                    let y = &node.value;
                    let da = self.grad_buf(&mut grads, *a);
                    for ((d, &x), &yv) in da.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                        if yv > F::zero() {
                            *d += x;
                        }
                    }
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    let da = self.grad_buf(&mut grads, *a);
                    for ((d, &x), &yv) in da.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                        *d += x * (F::one() - yv * yv);
                    }
                }
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    let da = self.grad_buf(&mut grads, *a);
                    for ((d, &x), &yv) in da.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                        *d += x * yv * (F::one() - yv);
                    }
                }
                Op::Log(a) => {
                    let av = self.value(*a);
                    let da = self.grad_buf(&mut grads, *a);
                    for ((d, &x), &v) in da.data_mut().iter_mut().zip(g.data()).zip(av.data()) {
                        *d += x / v;
                    }
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let da = self.grad_buf(&mut grads, *a);
                    kernels::softmax_backward(y.data(), g.data(), y.cols(), da.data_mut());
                }
                Op::LogSoftmax(a) => {
                    let y = &node.value;
                    let cols = y.cols();
                    let da = self.grad_buf(&mut grads, *a);
                    for ((yr, gr), dr) in y
                        .data()
                        .chunks_exact(cols)
                        .zip(g.data().chunks_exact(cols))
                        .zip(da.data_mut().chunks_exact_mut(cols))
                    {
                        let total: F = gr.iter().copied().sum();
                        for ((d, &gv), &lp) in dr.iter_mut().zip(gr).zip(yr) {
                            *d += gv - lp.exp() * total;
                        }
                    }
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    rstd,
                } => {
                    let cols = g.cols();
                    let gv = self.value(*gamma).data().to_vec();
                    let mut dgamma = vec![F::zero(); cols];
                    let mut dbeta = vec![F::zero(); cols];
                    let dx = self.grad_buf(&mut grads, *x);
                    kernels::layer_norm_backward(
                        g.data(),
                        cols,
                        &gv,
                        xhat,
                        rstd,
                        Some(dx.data_mut()),
                        Some(&mut dgamma),
                        Some(&mut dbeta),
                    );
                    add_slice(self.grad_buf(&mut grads, *gamma).data_mut(), &dgamma);
                    add_slice(self.grad_buf(&mut grads, *beta).data_mut(), &dbeta);
                }
                Op::Dropout { a, keep } => {
                    let da = self.grad_buf(&mut grads, *a);
                    for ((d, &x), &k) in da.data_mut().iter_mut().zip(g.data()).zip(keep) {
                        *d += x * k;
                    }
                }
                Op::Gather { table, rows } => {
                    let dt = self.grad_buf(&mut grads, *table);
                    for (i, &r) in rows.iter().enumerate() {
                        add_slice(dt.row_mut(r), g.row(i));
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut c0 = 0;
                    for &p in parts {
                        let pc = self.value(p).cols();
                        let dp = self.grad_buf(&mut grads, p);
                        for r in 0..g.rows() {
                            add_slice(dp.row_mut(r), &g.row(r)[c0..c0 + pc]);
                        }
                        c0 += pc;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let n = self.value(p).len();
                        let dp = self.grad_buf(&mut grads, p);
                        add_slice(dp.data_mut(), &g.data()[offset..offset + n]);
                        offset += n;
                    }
                }
                Op::SliceCols { a, start } => {
                    let len = g.cols();
                    let da = self.grad_buf(&mut grads, *a);
                    for r in 0..g.rows() {
                        add_slice(&mut da.row_mut(r)[*start..*start + len], g.row(r));
                    }
                }
                Op::Transpose(a) => {
                    let gt = g.transpose();
                    self.grad_buf(&mut grads, *a).add_assign(&gt);
                }
                Op::Sum(a) => {
                    let s = g.item();
                    for d in self.grad_buf(&mut grads, *a).data_mut() {
                        *d += s;
                    }
                }
                Op::Mean(a) => {
                    let n = F::lit(self.value(*a).len() as f64);
                    let s = g.item() / n;
                    for d in self.grad_buf(&mut grads, *a).data_mut() {
                        *d += s;
                    }
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    heads,
                    probs,
                } => {
                    let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                    let mut dq = vec![F::zero(); qv.len()];
                    let mut dk = vec![F::zero(); kv.len()];
                    let mut dv = vec![F::zero(); vv.len()];
                    kernels::attention_backward(
                        qv.view(),
                        kv.view(),
                        vv.view(),
                        *heads,
                        probs,
                        g.data(),
                        &mut dq,
                        &mut dk,
                        &mut dv,
                    );
                    add_slice(self.grad_buf(&mut grads, *q).data_mut(), &dq);
                    add_slice(self.grad_buf(&mut grads, *k).data_mut(), &dk);
                    add_slice(self.grad_buf(&mut grads, *v).data_mut(), &dv);
                }
                Op::ScalarFn { input, grad } => {
                    let s = g.item();
                    let da = self.grad_buf(&mut grads, *input);
                    for (d, &x) in da.data_mut().iter_mut().zip(grad.data()) {
                        *d += s * x;
                    }
                }
            }
        }
        Ok(out)
    }

    fn grad_buf<'g>(&self, grads: &'g mut [Option<Array<F>>], v: Var) -> &'g mut Array<F> {
        let value = &self.nodes[v.0].value;
        grads[v.0].get_or_insert_with(|| Array::zeros(value.rows(), value.cols()))
    }
}

/// `tanh` through a single exponential; saturates to ±1 beyond |x| = 20.
fn fast_tanh<F: Scalar>(x: F) -> F {
    let limit = F::lit(20.0);
    if x > limit {
        F::one()
    } else if x < -limit {
        -F::one()
    } else {
        let e = (x + x).exp();
        (e - F::one()) / (e + F::one())
    }
}

fn add_slice<F: Scalar>(dst: &mut [F], src: &[F]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
