use rand::Rng;

use super::embedding::Embeddings;
use super::incremental::IncrementalDecoder;
use super::layers::{key_mask, LayerNorm, Linear};
use super::{
    choose_token, input_token, teacher_plan, Decoding, ModelConfig, SeqExample, BOS_TOKEN,
    OUTPUT_CLASSES,
};
use crate::activity::ActivityType;
use crate::numerics::kernels::causal_mask;
use crate::numerics::{NumResult, ParamStore, Scalar, Tape, Var};

#[derive(Clone, Debug)]
pub(crate) struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
}

impl Attention {
    fn new<F: Scalar>(store: &mut ParamStore<F>, name: &str, d: usize, rng: &mut impl Rng) -> Self {
        Attention {
            q: Linear::new(store, &format!("{name}.q"), d, d, rng),
            k: Linear::new(store, &format!("{name}.k"), d, d, rng),
            v: Linear::new(store, &format!("{name}.v"), d, d, rng),
            o: Linear::new(store, &format!("{name}.o"), d, d, rng),
        }
    }

    fn apply<F: Scalar>(
        &self,
        tape: &mut Tape<F>,
        store: &ParamStore<F>,
        x: Var,
        ctx: Var,
        heads: usize,
        mask: Option<&[F]>,
    ) -> NumResult<Var> {
        let q = self.q.apply(tape, store, x)?;
        let k = self.k.apply(tape, store, ctx)?;
        let v = self.v.apply(tape, store, ctx)?;
        let a = tape.attention(q, k, v, heads, mask)?;
        self.o.apply(tape, store, a)
    }
}

#[derive(Clone, Debug)]
pub(crate) struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    fn new<F: Scalar>(
        store: &mut ParamStore<F>,
        name: &str,
        d: usize,
        ff: usize,
        rng: &mut impl Rng,
    ) -> Self {
        FeedForward {
            up: Linear::new(store, &format!("{name}.up"), d, ff, rng),
            down: Linear::new(store, &format!("{name}.down"), ff, d, rng),
        }
    }

    fn apply<F: Scalar>(
        &self,
        tape: &mut Tape<F>,
        store: &ParamStore<F>,
        x: Var,
    ) -> NumResult<Var> {
        let h = self.up.apply(tape, store, x)?;
        let h = tape.relu(h)?;
        self.down.apply(tape, store, h)
    }
}

#[derive(Clone, Debug)]
pub(crate) struct EncoderLayer {
    pub norm1: LayerNorm,
    pub attn: Attention,
    pub norm2: LayerNorm,
    pub ff: FeedForward,
}

#[derive(Clone, Debug)]
pub(crate) struct DecoderLayer {
    pub norm1: LayerNorm,
    pub self_attn: Attention,
    pub norm2: LayerNorm,
    pub cross_attn: Attention,
    pub norm3: LayerNorm,
    pub ff: FeedForward,
}

/// Pre-norm encoder-decoder transformer with period-aware embeddings.
#[derive(Clone, Debug)]
pub struct Transformer {
    pub config: ModelConfig,
    pub embeddings: Embeddings,
    pub(crate) encoder: Vec<EncoderLayer>,
    pub(crate) encoder_norm: LayerNorm,
    pub(crate) decoder: Vec<DecoderLayer>,
    pub(crate) decoder_norm: LayerNorm,
    pub(crate) head: Linear,
}

/// Dropout helper: active only when an RNG is supplied.
fn drop<F: Scalar, R: Rng>(
    tape: &mut Tape<F>,
    x: Var,
    p: f64,
    rng: &mut Option<&mut R>,
) -> NumResult<Var> {
    tape.dropout(x, p, rng.as_deref_mut())
}

impl Transformer {
    pub fn new<F: Scalar>(
        config: ModelConfig,
        store: &mut ParamStore<F>,
        rng: &mut impl Rng,
    ) -> Self {
        let d = config.d_model;
        let embeddings = Embeddings::new(store, d, config.seq_len, rng);
        let encoder = (0..config.encoder_layers)
            .map(|i| EncoderLayer {
                norm1: LayerNorm::new(store, &format!("enc.{i}.norm1"), d),
                attn: Attention::new(store, &format!("enc.{i}.attn"), d, rng),
                norm2: LayerNorm::new(store, &format!("enc.{i}.norm2"), d),
                ff: FeedForward::new(store, &format!("enc.{i}.ff"), d, config.ff_dim, rng),
            })
            .collect();
        let encoder_norm = LayerNorm::new(store, "enc.norm", d);
        let decoder = (0..config.decoder_layers)
            .map(|i| DecoderLayer {
                norm1: LayerNorm::new(store, &format!("dec.{i}.norm1"), d),
                self_attn: Attention::new(store, &format!("dec.{i}.self"), d, rng),
                norm2: LayerNorm::new(store, &format!("dec.{i}.norm2"), d),
                cross_attn: Attention::new(store, &format!("dec.{i}.cross"), d, rng),
                norm3: LayerNorm::new(store, &format!("dec.{i}.norm3"), d),
                ff: FeedForward::new(store, &format!("dec.{i}.ff"), d, config.ff_dim, rng),
            })
            .collect();
        let decoder_norm = LayerNorm::new(store, "dec.norm", d);
        let head = Linear::new(store, "head", d, OUTPUT_CLASSES, rng);
        Transformer {
            config,
            embeddings,
            encoder,
            encoder_norm,
            decoder,
            decoder_norm,
            head,
        }
    }

    /// Encoder memory (`len × d`) for day 1.
    pub fn encode<F: Scalar, R: Rng>(
        &self,
        tape: &mut Tape<F>,
        store: &ParamStore<F>,
        day1: &[Option<ActivityType>],
        mask1: &[bool],
        mut rng: Option<&mut R>,
    ) -> NumResult<Var> {
        let p = self.config.dropout;
        let heads = self.config.heads;
        let tokens: Vec<usize> = day1
            .iter()
            .zip(mask1)
            .map(|(&c, &m)| input_token(c, m))
            .collect();
        let mask = if self.config.mask_unobserved_keys {
            let blocked: Vec<bool> = mask1.iter().map(|&m| !m).collect();
            key_mask::<F>(tokens.len(), &blocked)
        } else {
            None
        };
        let mut x = self.embeddings.embed(tape, store, &tokens)?;
        x = drop(tape, x, p, &mut rng)?;
        for layer in &self.encoder {
            let h = layer.norm1.apply(tape, store, x)?;
            let a = layer
                .attn
                .apply(tape, store, h, h, heads, mask.as_deref())?;
            let a = drop(tape, a, p, &mut rng)?;
            x = tape.add(x, a)?;
            let h = layer.norm2.apply(tape, store, x)?;
            let f = layer.ff.apply(tape, store, h)?;
            let f = drop(tape, f, p, &mut rng)?;
            x = tape.add(x, f)?;
        }
        self.encoder_norm.apply(tape, store, x)
    }

    /// Parallel decoder pass over fixed input tokens (BOS first).
    pub fn decode<F: Scalar, R: Rng>(
        &self,
        tape: &mut Tape<F>,
        store: &ParamStore<F>,
        memory: Var,
        inputs: &[usize],
        mut rng: Option<&mut R>,
    ) -> NumResult<Var> {
        let p = self.config.dropout;
        let heads = self.config.heads;
        let causal = causal_mask::<F>(inputs.len());
        let mut y = self.embeddings.embed(tape, store, inputs)?;
        y = drop(tape, y, p, &mut rng)?;
        for layer in &self.decoder {
            let h = layer.norm1.apply(tape, store, y)?;
            let a = layer
                .self_attn
                .apply(tape, store, h, h, heads, Some(&causal))?;
            let a = drop(tape, a, p, &mut rng)?;
            y = tape.add(y, a)?;
            let h = layer.norm2.apply(tape, store, y)?;
            let c = layer
                .cross_attn
                .apply(tape, store, h, memory, heads, None)?;
            let c = drop(tape, c, p, &mut rng)?;
            y = tape.add(y, c)?;
            let h = layer.norm3.apply(tape, store, y)?;
            let f = layer.ff.apply(tape, store, h)?;
            let f = drop(tape, f, p, &mut rng)?;
            y = tape.add(y, f)?;
        }
        let y = self.decoder_norm.apply(tape, store, y)?;
        self.head.apply(tape, store, y)
    }

    /// Teacher-forced logits. Non-teacher inputs are the argmax of the
    /// model's own logits, found by a sequential dropout-free pass.
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
        let dropout_rng = if train { Some(&mut *rng) } else { None };
        let memory = self.encode(tape, store, ex.day1, ex.mask1, dropout_rng)?;
        let inputs = self.resolve_inputs(store, tape.value(memory).data(), &plan)?;
        let dropout_rng = if train { Some(rng) } else { None };
        self.decode(tape, store, memory, &inputs, dropout_rng)
    }

    fn resolve_inputs<F: Scalar>(
        &self,
        store: &ParamStore<F>,
        memory: &[F],
        plan: &[Option<usize>],
    ) -> NumResult<Vec<usize>> {
        let Some(last_free) = plan.iter().rposition(Option::is_none) else {
            return Ok(plan.iter().map(|t| t.expect("teacher token")).collect());
        };
        let mut inputs: Vec<usize> = Vec::with_capacity(plan.len());
        let mut dec = IncrementalDecoder::new(self, store, memory);
        let mut prev_logits = Vec::new();
        for (t, slot) in plan.iter().enumerate() {
            let token = match slot {
                Some(tok) => *tok,
                None => super::argmax(&prev_logits),
            };
            inputs.push(token);
            if t < last_free {
                prev_logits = dec.step(token)?;
            }
        }
        Ok(inputs)
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
        let memory = self.encode::<F, R>(&mut tape, store, day1, mask1, None)?;
        let mut dec = IncrementalDecoder::new(self, store, tape.value(memory).data());
        let mut token = BOS_TOKEN;
        let mut out = Vec::with_capacity(day1.len());
        for _ in 0..day1.len() {
            let logits = dec.step(token)?;
            token = choose_token(&logits, decoding, rng);
            out.push(token);
        }
        Ok(out)
    }
}
