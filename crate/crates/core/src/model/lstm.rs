use rand::Rng;

use super::embedding::Embeddings;
use super::layers::Linear;
use super::{
    argmax, choose_token, input_token, teacher_plan, Decoding, ModelConfig, SeqExample, BOS_TOKEN,
    OUTPUT_CLASSES,
};
use crate::activity::ActivityType;
use crate::numerics::{Array, NumResult, ParamId, ParamStore, Scalar, Tape, Var};

#[derive(Clone, Debug)]
struct LstmCell {
    /// Input projection `in × 4d` with the gate bias.
    input: Linear,
    /// Recurrent projection `d × 4d`.
    recurrent: ParamId,
    d: usize,
}

impl LstmCell {
    fn new<F: Scalar>(
        store: &mut ParamStore<F>,
        name: &str,
        input_dim: usize,
        d: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let input = Linear::new(store, &format!("{name}.x"), input_dim, 4 * d, rng);
        for c in d..2 * d {
            store.get_mut(input.b).set(0, c, F::one());
        }
        let recurrent = store.glorot(&format!("{name}.h"), d, 4 * d, rng);
        LstmCell {
            input,
            recurrent,
            d,
        }
    }

    /// One step from precomputed input gates `xw` (1 × 4d).
    fn step<F: Scalar>(
        &self,
        tape: &mut Tape<F>,
        store: &ParamStore<F>,
        xw: Var,
        h: Var,
        c: Var,
    ) -> NumResult<(Var, Var)> {
        let d = self.d;
        let wh = tape.param(store, self.recurrent);
        let hh = tape.matmul(h, wh)?;
        let gates = tape.add(xw, hh)?;
        let i = tape.slice_cols(gates, 0, d)?;
        let i = tape.sigmoid(i)?;
        let f = tape.slice_cols(gates, d, d)?;
        let f = tape.sigmoid(f)?;
        let g = tape.slice_cols(gates, 2 * d, d)?;
        let g = tape.tanh(g)?;
        let o = tape.slice_cols(gates, 3 * d, d)?;
        let o = tape.sigmoid(o)?;
        let fc = tape.mul(f, c)?;
        let ig = tape.mul(i, g)?;
        let c = tape.add(fc, ig)?;
        let tc = tape.tanh(c)?;
        let h = tape.mul(o, tc)?;
        Ok((h, c))
    }
}

/// LSTM encoder-decoder with additive attention over encoder states.
#[derive(Clone, Debug)]
pub struct LstmBaseline {
    pub config: ModelConfig,
    pub embeddings: Embeddings,
    encoder: LstmCell,
    decoder: LstmCell,
    attn_enc: ParamId,
    attn_dec: ParamId,
    attn_v: ParamId,
    head: Linear,
}

impl LstmBaseline {
    pub fn new<F: Scalar>(
        config: ModelConfig,
        store: &mut ParamStore<F>,
        rng: &mut impl Rng,
    ) -> Self {
        let d = config.d_model;
        let embeddings = Embeddings::new(store, d, config.seq_len, rng);
        LstmBaseline {
            encoder: LstmCell::new(store, "lstm.enc", d, d, rng),
            decoder: LstmCell::new(store, "lstm.dec", 2 * d, d, rng),
            attn_enc: store.glorot("lstm.attn.enc", d, d, rng),
            attn_dec: store.glorot("lstm.attn.dec", d, d, rng),
            attn_v: store.glorot("lstm.attn.v", d, 1, rng),
            head: Linear::new(store, "lstm.head", 2 * d, OUTPUT_CLASSES, rng),
            embeddings,
            config,
        }
    }

    /// Runs encoder and decoder; `next` picks the decoder input at slot `t`
    /// given the logits of slot `t − 1` (empty at `t = 0`).
    fn run<F: Scalar, R: Rng>(
        &self,
        tape: &mut Tape<F>,
        store: &ParamStore<F>,
        day1: &[Option<ActivityType>],
        mask1: &[bool],
        mut rng: Option<&mut R>,
        mut next: impl FnMut(usize, &[F]) -> usize,
    ) -> NumResult<Var> {
        let d = self.config.d_model;
        let p = self.config.dropout;
        let n = day1.len();
        let tokens: Vec<usize> = day1
            .iter()
            .zip(mask1)
            .map(|(&c, &m)| input_token(c, m))
            .collect();

        let x = self.embeddings.embed(tape, store, &tokens)?;
        let x = tape.dropout(x, p, rng.as_deref_mut())?;
        let xw = self.encoder.input.apply(tape, store, x)?;
        let mut h = tape.input(Array::zeros(1, d))?;
        let mut c = tape.input(Array::zeros(1, d))?;
        let mut states = Vec::with_capacity(n);
        for t in 0..n {
            let row = tape.gather(xw, &[t])?;
            (h, c) = self.encoder.step(tape, store, row, h, c)?;
            states.push(h);
        }
        let enc = tape.concat_rows(&states)?;
        let we = tape.param(store, self.attn_enc);
        let keys = tape.matmul(enc, we)?;
        let wd = tape.param(store, self.attn_dec);
        let v = tape.param(store, self.attn_v);

        let act = tape.param(store, self.embeddings.act);
        let time = self.embeddings.time_part(tape, store, n)?;
        let mut rows = Vec::with_capacity(n);
        let mut prev: Vec<F> = Vec::new();
        for t in 0..n {
            let token = next(t, &prev);
            let q = tape.matmul(h, wd)?;
            let pre = tape.add_row(keys, q)?;
            let pre = tape.tanh(pre)?;
            let scores = tape.matmul(pre, v)?;
            let scores = tape.transpose(scores)?;
            let weights = tape.softmax(scores)?;
            let ctx = tape.matmul(weights, enc)?;

            let e = tape.gather(act, &[token])?;
            let tt = tape.gather(time, &[t])?;
            let e = tape.add(e, tt)?;
            let e = tape.dropout(e, p, rng.as_deref_mut())?;
            let inp = tape.concat_cols(&[e, ctx])?;
            let xw = self.decoder.input.apply(tape, store, inp)?;
            (h, c) = self.decoder.step(tape, store, xw, h, c)?;

            let feat = tape.concat_cols(&[h, ctx])?;
            let feat = tape.dropout(feat, p, rng.as_deref_mut())?;
            let logits = self.head.apply(tape, store, feat)?;
            prev = tape.value(logits).data().to_vec();
            rows.push(logits);
        }
        tape.concat_rows(&rows)
    }

    pub fn logits<F: Scalar, R: Rng>(
        &self,
        tape: &mut Tape<F>,
        store: &ParamStore<F>,
        ex: &SeqExample<'_>,
        p_tf: f64,
        train: bool,
        rng: &mut R,
    ) -> NumResult<Var> {
        let plan = teacher_plan(ex, p_tf, rng);
        let dropout_rng = if train { Some(rng) } else { None };
        self.run(tape, store, ex.day1, ex.mask1, dropout_rng, |t, prev| {
            plan[t].unwrap_or_else(|| argmax(prev))
        })
    }

    pub fn generate<F: Scalar, R: Rng>(
        &self,
        store: &ParamStore<F>,
        day1: &[Option<ActivityType>],
        mask1: &[bool],
        decoding: Decoding,
        rng: &mut R,
    ) -> NumResult<Vec<usize>> {
        let mut tape = Tape::new();
        let mut out = Vec::with_capacity(day1.len());
        let logits = self.run::<F, R>(&mut tape, store, day1, mask1, None, |t, prev| {
            if t == 0 {
                BOS_TOKEN
            } else {
                let tok = choose_token(prev, decoding, rng);
                out.push(tok);
                tok
            }
        })?;
        let last = tape.value(logits).row(day1.len() - 1).to_vec();
        out.push(choose_token(&last, decoding, rng));
        Ok(out)
    }
}
