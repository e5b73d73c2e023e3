//! Sequence models over the 96-slot day: the period-aware transformer
//! encoder-decoder and an LSTM-with-attention baseline.

mod embedding;
mod incremental;
mod layers;
mod lstm;
mod period;
#[cfg(test)]
mod tests;
mod transformer;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::activity::{ActivityType, DayGrid, ObservationMask, NUM_ACTIVITY_TYPES, SLOTS_PER_DAY};
use crate::error::{Error, Result};
use crate::numerics::{NumResult, ParamStore, Scalar, Tape, Var};

pub use embedding::{sinusoid, Embeddings};
pub use incremental::IncrementalDecoder;
pub use lstm::LstmBaseline;
pub(crate) use period::period_of_index;
pub use period::{period_of, PeriodId};
pub use transformer::Transformer;

/// Input token for a slot that is not observed.
pub const UNOBSERVED_TOKEN: usize = NUM_ACTIVITY_TYPES;
/// Decoder start token.
pub const BOS_TOKEN: usize = NUM_ACTIVITY_TYPES + 1;
/// Size of the input vocabulary: 15 activity codes plus the two sentinels.
pub const INPUT_VOCAB: usize = NUM_ACTIVITY_TYPES + 2;
/// The output head covers the real codes only.
pub const OUTPUT_CLASSES: usize = NUM_ACTIVITY_TYPES;

pub fn input_token(code: Option<ActivityType>, observed: bool) -> usize {
    match code {
        Some(kind) if observed => kind.index(),
        _ => UNOBSERVED_TOKEN,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    #[default]
    Transformer,
    LstmAttention,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub architecture: Architecture,
    pub d_model: usize,
    pub heads: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub dropout: f64,
    pub ff_dim: usize,
    pub seq_len: usize,
    /// Block attention to unobserved encoder positions instead of relying on
    /// the sentinel token alone.
    pub mask_unobserved_keys: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    /// 4+4 layers, 8 heads, width 128.
    pub fn paper() -> Self {
        ModelConfig {
            architecture: Architecture::Transformer,
            d_model: 128,
            heads: 8,
            encoder_layers: 4,
            decoder_layers: 4,
            dropout: 0.1,
            ff_dim: 512,
            seq_len: SLOTS_PER_DAY,
            mask_unobserved_keys: false,
        }
    }

    /// 2+2 layers, 4 heads, width 64.
    pub fn desk() -> Self {
        ModelConfig {
            d_model: 64,
            heads: 4,
            encoder_layers: 2,
            decoder_layers: 2,
            ff_dim: 256,
            ..Self::paper()
        }
    }

    /// Width 16, 2+2 layers on 24-slot toy sequences; used by gradient checks.
    pub fn tiny() -> Self {
        ModelConfig {
            d_model: 16,
            heads: 2,
            encoder_layers: 2,
            decoder_layers: 2,
            ff_dim: 64,
            seq_len: 24,
            ..Self::paper()
        }
    }

    pub fn with_architecture(mut self, architecture: Architecture) -> Self {
        self.architecture = architecture;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("d_model", self.d_model),
            ("heads", self.heads),
            ("ff_dim", self.ff_dim),
            ("seq_len", self.seq_len),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by heads {}",
                self.d_model, self.heads
            )));
        }
        if !self.d_model.is_multiple_of(2) {
            return Err(Error::Config("d_model must be even".into()));
        }
        if self.seq_len > SLOTS_PER_DAY {
            return Err(Error::Config(format!(
                "seq_len {} exceeds {SLOTS_PER_DAY}",
                self.seq_len
            )));
        }
        if self.architecture == Architecture::Transformer
            && (self.encoder_layers == 0 || self.decoder_layers == 0)
        {
            return Err(Error::Config("layer counts must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// One training/evaluation example, truncated to the model's sequence length.
#[derive(Clone, Copy, Debug)]
pub struct SeqExample<'a> {
    pub day1: &'a [Option<ActivityType>],
    pub mask1: &'a [bool],
    pub day2: &'a [Option<ActivityType>],
    pub mask2: &'a [bool],
}

impl<'a> SeqExample<'a> {
    pub fn new(
        day1: &'a DayGrid,
        mask1: &'a ObservationMask,
        day2: &'a DayGrid,
        mask2: &'a ObservationMask,
        len: usize,
    ) -> Self {
        SeqExample {
            day1: &day1.0[..len],
            mask1: &mask1.0[..len],
            day2: &day2.0[..len],
            mask2: &mask2.0[..len],
        }
    }

    pub fn len(&self) -> usize {
        self.day1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.day1.is_empty()
    }

    pub fn encoder_tokens(&self) -> Vec<usize> {
        self.day1
            .iter()
            .zip(self.mask1)
            .map(|(&c, &m)| input_token(c, m))
            .collect()
    }

    /// Ground-truth token for slot `t` of day 2, if observed.
    pub fn target_token(&self, t: usize) -> Option<usize> {
        match self.day2[t] {
            Some(kind) if self.mask2[t] => Some(kind.index()),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Decoding {
    Greedy,
    /// Sample from `softmax(logits / τ)`.
    Temperature(f64),
}

pub fn argmax<F: Scalar>(row: &[F]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn choose_token<F: Scalar, R: Rng>(row: &[F], decoding: Decoding, rng: &mut R) -> usize {
    match decoding {
        Decoding::Greedy => argmax(row),
        Decoding::Temperature(tau) => {
            let scaled: Vec<f64> = row.iter().map(|&x| x.as_f64() / tau).collect();
            let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let weights: Vec<f64> = scaled.iter().map(|&x| (x - max).exp()).collect();
            let total: f64 = weights.iter().sum();
            let mut u = rng.random::<f64>() * total;
            for (i, w) in weights.iter().enumerate() {
                if u < *w {
                    return i;
                }
                u -= w;
            }
            weights.len() - 1
        }
    }
}

/// Per-slot teacher-forcing decisions for decoder inputs 1..len.
///
/// Slot `t ≥ 1` is fed the ground truth of slot `t − 1` when the coin comes
/// up teacher and that slot is observed; otherwise it is fed the model's own
/// argmax at `t − 1`.
pub(crate) fn teacher_plan<R: Rng>(
    ex: &SeqExample<'_>,
    p_tf: f64,
    rng: &mut R,
) -> Vec<Option<usize>> {
    let mut plan = vec![Some(BOS_TOKEN)];
    for t in 1..ex.len() {
        let teach = p_tf >= 1.0 || (p_tf > 0.0 && rng.random::<f64>() < p_tf);
        plan.push(if teach { ex.target_token(t - 1) } else { None });
    }
    plan
}

/// A trained or initialized sequence model.
#[derive(Clone, Debug)]
pub enum Model {
    Transformer(Transformer),
    Lstm(LstmBaseline),
}

impl Model {
    /// Builds the architecture and registers freshly initialized parameters.
    pub fn init<F: Scalar>(config: &ModelConfig, seed: u64) -> Result<(Model, ParamStore<F>)> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = match config.architecture {
            Architecture::Transformer => {
                Model::Transformer(Transformer::new(config.clone(), &mut store, &mut rng))
            }
            Architecture::LstmAttention => {
                Model::Lstm(LstmBaseline::new(config.clone(), &mut store, &mut rng))
            }
        };
        Ok((model, store))
    }

    pub fn config(&self) -> &ModelConfig {
        match self {
            Model::Transformer(m) => &m.config,
            Model::Lstm(m) => &m.config,
        }
    }

    pub fn set_dropout(&mut self, p: f64) {
        match self {
            Model::Transformer(m) => m.config.dropout = p,
            Model::Lstm(m) => m.config.dropout = p,
        }
    }

    /// Decoder logits (`len × 15`) for day 2 given day 1.
    ///
    /// `train` enables dropout; `p_tf` sets the teacher-forcing rate.
    pub fn logits<F: Scalar, R: Rng>(
        &self,
        tape: &mut Tape<F>,
        store: &ParamStore<F>,
        ex: &SeqExample<'_>,
        p_tf: f64,
        train: bool,
        rng: &mut R,
    ) -> NumResult<Var> {
        match self {
            Model::Transformer(m) => m.logits(tape, store, ex, p_tf, train, rng),
            Model::Lstm(m) => m.logits(tape, store, ex, p_tf, train, rng),
        }
    }

    /// Autoregressively generates day 2 from day 1. The result holds only
    /// real activity codes.
    pub fn generate_slots<F: Scalar, R: Rng>(
        &self,
        store: &ParamStore<F>,
        day1: &[Option<ActivityType>],
        mask1: &[bool],
        decoding: Decoding,
        rng: &mut R,
    ) -> NumResult<Vec<ActivityType>> {
        let tokens = match self {
            Model::Transformer(m) => m.generate(store, day1, mask1, decoding, rng)?,
            Model::Lstm(m) => m.generate(store, day1, mask1, decoding, rng)?,
        };
        Ok(tokens
            .into_iter()
            .map(|t| ActivityType::from_index(t).expect("output head covers real codes only"))
            .collect())
    }

    pub fn generate<F: Scalar, R: Rng>(
        &self,
        store: &ParamStore<F>,
        day1: &DayGrid,
        mask1: &ObservationMask,
        decoding: Decoding,
        rng: &mut R,
    ) -> Result<DayGrid> {
        if self.config().seq_len != SLOTS_PER_DAY {
            return Err(Error::Config(format!(
                "whole-day generation needs seq_len {SLOTS_PER_DAY}, model has {}",
                self.config().seq_len
            )));
        }
        let slots = self.generate_slots(store, &day1.0, &mask1.0, decoding, rng)?;
        let mut grid = DayGrid::unobserved();
        for (t, k) in slots.into_iter().enumerate() {
            grid.0[t] = Some(k);
        }
        Ok(grid)
    }
}
