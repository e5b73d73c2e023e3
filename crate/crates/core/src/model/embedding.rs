use std::f64::consts::PI;

use rand::Rng;

use super::period::period_of_index;
use super::{input_token, INPUT_VOCAB};
use crate::activity::{DayGrid, ObservationMask, SLOTS_PER_DAY};
use crate::numerics::{Array, NumResult, ParamId, ParamStore, Scalar, Tape, Var};

/// Fixed day-periodic features: interleaved `sin, cos` of `2π·k·t/96`
/// for `k = 1..=d/2`.
pub fn sinusoid(t: usize, d: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(d);
    for k in 1..=d / 2 {
        let angle = 2.0 * PI * (k * t) as f64 / SLOTS_PER_DAY as f64;
        out.push(angle.sin());
        out.push(angle.cos());
    }
    out
}

/// Activity, positional and period tables shared by encoder and decoder.
#[derive(Clone, Debug)]
pub struct Embeddings {
    pub d_model: usize,
    pub act: ParamId,
    pub pos: ParamId,
    pub period: ParamId,
}

impl Embeddings {
    pub fn new<F: Scalar>(
        store: &mut ParamStore<F>,
        d_model: usize,
        seq_len: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Embeddings {
            d_model,
            act: store.normal("emb.act", INPUT_VOCAB, d_model, 1.0, rng),
            pos: store.normal("emb.pos", seq_len, d_model, 0.1, rng),
            period: store.normal("emb.period", 4, d_model, 0.1, rng),
        }
    }

    fn sinusoid_array<F: Scalar>(&self, n: usize) -> Array<F> {
        let mut out = Array::zeros(n, self.d_model);
        for t in 0..n {
            for (o, s) in out.row_mut(t).iter_mut().zip(sinusoid(t, self.d_model)) {
                *o = F::lit(s);
            }
        }
        out
    }

    /// `e_time(t)` for `t = 0..n` as an `n × d` node.
    pub fn time_part<F: Scalar>(
        &self,
        tape: &mut Tape<F>,
        store: &ParamStore<F>,
        n: usize,
    ) -> NumResult<Var> {
        let pos = tape.param(store, self.pos);
        let period = tape.param(store, self.period);
        let slots: Vec<usize> = (0..n).collect();
        let p = tape.gather(pos, &slots)?;
        let periods: Vec<usize> = slots.iter().map(|&t| period_of_index(t).index()).collect();
        let q = tape.gather(period, &periods)?;
        let s = tape.input(self.sinusoid_array(n))?;
        let x = tape.add(p, q)?;
        tape.add(x, s)
    }

    /// `e_act(token_t) + e_time(t)` for `t = 0..tokens.len()`.
    pub fn embed<F: Scalar>(
        &self,
        tape: &mut Tape<F>,
        store: &ParamStore<F>,
        tokens: &[usize],
    ) -> NumResult<Var> {
        let act = tape.param(store, self.act);
        let a = tape.gather(act, tokens)?;
        let time = self.time_part(tape, store, tokens.len())?;
        tape.add(a, time)
    }

    /// `e_time(t) = e_pos(t) + e_period(p(t)) + e_sin(t)`.
    pub fn time_embedding<F: Scalar>(&self, store: &ParamStore<F>, t: usize) -> Vec<F> {
        let pos = store.get(self.pos).row(t);
        let per = store.get(self.period).row(period_of_index(t).index());
        pos.iter()
            .zip(per)
            .zip(sinusoid(t, self.d_model))
            .map(|((&a, &b), s)| a + b + F::lit(s))
            .collect()
    }

    /// Embedding of a single decoder or encoder input without a tape.
    pub fn embed_row<F: Scalar>(&self, store: &ParamStore<F>, token: usize, t: usize) -> Vec<F> {
        let act = store.get(self.act).row(token);
        self.time_embedding(store, t)
            .into_iter()
            .zip(act)
            .map(|(e, &a)| e + a)
            .collect()
    }

    /// Embeds a whole observed day, substituting the unobserved sentinel
    /// wherever the mask bit is 0.
    pub fn embed_sequence<F: Scalar>(
        &self,
        store: &ParamStore<F>,
        grid: &DayGrid,
        mask: &ObservationMask,
    ) -> Array<F> {
        let mut out = Array::zeros(SLOTS_PER_DAY, self.d_model);
        for t in 0..SLOTS_PER_DAY {
            let row = self.embed_row(store, input_token(grid.0[t], mask.0[t]), t);
            out.row_mut(t).copy_from_slice(&row);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::activity::ActivityType;
    use crate::model::UNOBSERVED_TOKEN;

    fn setup() -> (Embeddings, ParamStore<f64>) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let emb = Embeddings::new(&mut store, 8, SLOTS_PER_DAY, &mut rng);
        (emb, store)
    }

    #[test]
    fn sinusoid_at_zero() {
        let s = sinusoid(0, 8);
        for k in 0..4 {
            assert_eq!(s[2 * k], 0.0);
            assert_eq!(s[2 * k + 1], 1.0);
        }
    }

    #[test]
    fn sinusoid_is_daily() {
        for t in [0, 13, 57, 95] {
            let a = sinusoid(t, 16);
            let b = sinusoid(t + SLOTS_PER_DAY, 16);
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn same_period_differs_only_by_pos_and_sin() {
        let (emb, store) = setup();
        let (t1, t2) = (41, 65);
        let diff: Vec<f64> = emb
            .time_embedding(&store, t1)
            .iter()
            .zip(emb.time_embedding(&store, t2))
            .map(|(a, b)| a - b)
            .collect();
        let pos = store.get(emb.pos);
        let (s1, s2) = (sinusoid(t1, 8), sinusoid(t2, 8));
        for c in 0..8 {
            let expected = pos.get(t1, c) - pos.get(t2, c) + s1[c] - s2[c];
            assert!((diff[c] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn masked_slot_uses_sentinel() {
        let (emb, store) = setup();
        let grid = DayGrid::filled(ActivityType::Home);
        let mut mask = ObservationMask::full();
        mask.0[10] = false;
        let e = emb.embed_sequence(&store, &grid, &mask);
        assert_eq!(
            e.row(10),
            emb.embed_row(&store, UNOBSERVED_TOKEN, 10).as_slice()
        );

        let mut other = grid.clone();
        other.0[10] = Some(ActivityType::Work);
        assert_eq!(emb.embed_sequence(&store, &other, &mask), e);
    }

    #[test]
    fn all_home_rows_differ_by_time_only() {
        let (emb, store) = setup();
        let e = emb.embed_sequence(
            &store,
            &DayGrid::filled(ActivityType::Home),
            &ObservationMask::full(),
        );
        let act = store.get(emb.act).row(ActivityType::Home.index());
        for t in [0, 30, 95] {
            for (c, &a) in act.iter().enumerate() {
                let time = emb.time_embedding(&store, t)[c];
                assert!((e.get(t, c) - a - time).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn taped_matches_direct() {
        let (emb, store) = setup();
        let tokens: Vec<usize> = (0..SLOTS_PER_DAY).map(|t| t % INPUT_VOCAB).collect();
        let mut tape = Tape::new();
        let v = emb.embed(&mut tape, &store, &tokens).unwrap();
        for t in [0, 50, 95] {
            let direct = emb.embed_row(&store, tokens[t], t);
            for c in 0..8 {
                assert!((tape.value(v).get(t, c) - direct[c]).abs() < 1e-12);
            }
        }
    }
}
