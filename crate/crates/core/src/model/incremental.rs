use super::layers::add_in_place;
use super::transformer::{Attention, Transformer};
use crate::numerics::{NumResult, NumericsError, ParamStore, Scalar};

/// Slot-by-slot transformer decoder with cached keys and values.
///
/// Runs without dropout and produces the same logits as the parallel pass
/// over the same input tokens.
pub struct IncrementalDecoder<'a, F: Scalar> {
    model: &'a Transformer,
    store: &'a ParamStore<F>,
    cross_k: Vec<Vec<F>>,
    cross_v: Vec<Vec<F>>,
    memory_len: usize,
    self_k: Vec<Vec<F>>,
    self_v: Vec<Vec<F>>,
    t: usize,
}

/// Single-query multi-head attention over `m` cached keys and values.
fn attend<F: Scalar>(q: &[F], k: &[F], v: &[F], d: usize, heads: usize) -> Vec<F> {
    let m = k.len() / d;
    let dh = d / heads;
    let scale = F::lit(1.0 / (dh as f64).sqrt());
    let mut out = vec![F::zero(); d];
    let mut scores = vec![F::zero(); m];
    for h in 0..heads {
        let cols = h * dh..(h + 1) * dh;
        let qh = &q[cols.clone()];
        for (j, s) in scores.iter_mut().enumerate() {
            let kh = &k[j * d + h * dh..j * d + (h + 1) * dh];
            *s = qh.iter().zip(kh).map(|(&a, &b)| a * b).sum::<F>() * scale;
        }
        let max = scores.iter().copied().fold(F::neg_infinity(), F::max);
        let mut total = F::zero();
        for s in &mut scores {
            *s = (*s - max).exp();
            total += *s;
        }
        let oh = &mut out[cols];
        for (j, &s) in scores.iter().enumerate() {
            let w = s / total;
            let vh = &v[j * d + h * dh..j * d + (h + 1) * dh];
            for (o, &x) in oh.iter_mut().zip(vh) {
                *o += w * x;
            }
        }
    }
    out
}

impl<'a, F: Scalar> IncrementalDecoder<'a, F> {
    /// `memory` is the row-major `len × d` encoder output.
    pub fn new(model: &'a Transformer, store: &'a ParamStore<F>, memory: &[F]) -> Self {
        let d = model.config.d_model;
        let memory_len = memory.len() / d;
        let mut cross_k = Vec::new();
        let mut cross_v = Vec::new();
        for layer in &model.decoder {
            cross_k.push(layer.cross_attn.k.forward(store, memory, memory_len));
            cross_v.push(layer.cross_attn.v.forward(store, memory, memory_len));
        }
        let n = model.decoder.len();
        IncrementalDecoder {
            model,
            store,
            cross_k,
            cross_v,
            memory_len,
            self_k: vec![Vec::new(); n],
            self_v: vec![Vec::new(); n],
            t: 0,
        }
    }

    pub fn position(&self) -> usize {
        self.t
    }

    pub fn memory_len(&self) -> usize {
        self.memory_len
    }

    fn self_attend(&mut self, i: usize, attn: &Attention, h: &[F]) -> Vec<F> {
        let (d, heads) = (self.model.config.d_model, self.model.config.heads);
        let q = attn.q.forward(self.store, h, 1);
        self.self_k[i].extend(attn.k.forward(self.store, h, 1));
        self.self_v[i].extend(attn.v.forward(self.store, h, 1));
        let a = attend(&q, &self.self_k[i], &self.self_v[i], d, heads);
        attn.o.forward(self.store, &a, 1)
    }

    /// Feeds the input token for the current slot and returns that slot's
    /// output logits.
    pub fn step(&mut self, token: usize) -> NumResult<Vec<F>> {
        let model = self.model;
        let store = self.store;
        let (d, heads) = (model.config.d_model, model.config.heads);
        let mut x = model.embeddings.embed_row(store, token, self.t);
        for (i, layer) in model.decoder.iter().enumerate() {
            let h = layer.norm1.forward(store, &x);
            let a = self.self_attend(i, &layer.self_attn, &h);
            add_in_place(&mut x, &a);

            let h = layer.norm2.forward(store, &x);
            let q = layer.cross_attn.q.forward(store, &h, 1);
            let c = attend(&q, &self.cross_k[i], &self.cross_v[i], d, heads);
            let c = layer.cross_attn.o.forward(store, &c, 1);
            add_in_place(&mut x, &c);

            let h = layer.norm3.forward(store, &x);
            let mut u = layer.ff.up.forward(store, &h, 1);
            for v in &mut u {
                *v = v.max(F::zero());
            }
            let f = layer.ff.down.forward(store, &u, 1);
            add_in_place(&mut x, &f);
        }
        let y = model.decoder_norm.forward(store, &x);
        let logits = model.head.forward(store, &y, 1);
        self.t += 1;
        if logits.iter().all(|v| v.is_finite()) {
            Ok(logits)
        } else {
            Err(NumericsError::NonFinite { op: "decode" })
        }
    }
}
