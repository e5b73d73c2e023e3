use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::activity::ActivityType::{self, *};
use crate::numerics::Array;

fn small(arch: Architecture) -> ModelConfig {
    ModelConfig {
        architecture: arch,
        d_model: 16,
        heads: 2,
        encoder_layers: 2,
        decoder_layers: 2,
        ff_dim: 32,
        ..ModelConfig::desk()
    }
}

fn day(pattern: &[(ActivityType, usize)]) -> DayGrid {
    let mut grid = DayGrid::unobserved();
    let mut t = 0;
    for &(kind, len) in pattern {
        for _ in 0..len {
            grid.0[t] = Some(kind);
            t += 1;
        }
    }
    assert_eq!(t, SLOTS_PER_DAY);
    grid
}

fn sample() -> (DayGrid, ObservationMask, DayGrid, ObservationMask) {
    let d1 = day(&[(Home, 30), (Work, 34), (Leisure, 8), (Home, 24)]);
    let d2 = day(&[(Home, 28), (Work, 36), (ShopGoods, 4), (Home, 28)]);
    let mut m1 = ObservationMask::full();
    for t in 5..15 {
        m1.0[t] = false;
    }
    (d1, m1, d2, ObservationMask::full())
}

fn rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(11)
}

fn transformer(store_seed: u64) -> (Transformer, ParamStore<f64>) {
    match Model::init::<f64>(&small(Architecture::Transformer), store_seed).unwrap() {
        (Model::Transformer(t), s) => (t, s),
        _ => unreachable!(),
    }
}

fn memory(
    t: &Transformer,
    store: &ParamStore<f64>,
    d1: &DayGrid,
    m1: &ObservationMask,
) -> Array<f64> {
    let mut tape = Tape::new();
    let m = t
        .encode::<f64, ChaCha8Rng>(&mut tape, store, &d1.0, &m1.0, None)
        .unwrap();
    tape.value(m).clone()
}

#[test]
fn config_validation() {
    assert!(ModelConfig::paper().validate().is_ok());
    assert!(ModelConfig::desk().validate().is_ok());
    assert!(ModelConfig::tiny().validate().is_ok());
    let bad = ModelConfig {
        heads: 3,
        ..ModelConfig::desk()
    };
    assert!(bad.validate().is_err());
    let zero = ModelConfig {
        ff_dim: 0,
        ..ModelConfig::desk()
    };
    assert!(zero.validate().is_err());
}

#[test]
fn paper_preset_dimensions() {
    let c = ModelConfig::paper();
    assert_eq!(
        (c.d_model, c.heads, c.encoder_layers, c.decoder_layers),
        (128, 8, 4, 4)
    );
    assert_eq!(c.dropout, 0.1);
    assert_eq!(c.ff_dim, 4 * c.d_model);
}

#[test]
fn memory_shape_and_determinism() {
    let (t, store) = transformer(1);
    let (d1, m1, _, _) = sample();
    let a = memory(&t, &store, &d1, &m1);
    assert_eq!(a.shape(), [SLOTS_PER_DAY, 16]);
    assert_eq!(a, memory(&t, &store, &d1, &m1));
}

#[test]
fn memory_uses_period_rows() {
    let (t, mut store) = transformer(2);
    let (d1, m1, _, _) = sample();
    let before = memory(&t, &store, &d1, &m1);
    let table = store.get(t.embeddings.period).clone();
    let permuted = Array::from_fn(4, 16, |r, c| table.get((r + 1) % 4, c));
    *store.get_mut(t.embeddings.period) = permuted;
    let after = memory(&t, &store, &d1, &m1);
    let diff: f64 = before
        .data()
        .iter()
        .zip(after.data())
        .map(|(a, b)| (a - b).abs())
        .sum();
    assert!(
        diff > 1e-3,
        "memory unchanged by period permutation: {diff}"
    );
}

#[test]
fn full_teacher_forcing_feeds_gold_tokens() {
    let (t, store) = transformer(3);
    let (d1, m1, d2, m2) = sample();
    let ex = SeqExample::new(&d1, &m1, &d2, &m2, SLOTS_PER_DAY);
    let mut tape = Tape::new();
    let v = t
        .logits(&mut tape, &store, &ex, 1.0, false, &mut rng())
        .unwrap();
    let got = tape.value(v).clone();

    let mut inputs = vec![BOS_TOKEN];
    inputs.extend(d2.0[..SLOTS_PER_DAY - 1].iter().map(|c| c.unwrap().index()));
    let mut tape = Tape::new();
    let mem = t
        .encode::<f64, ChaCha8Rng>(&mut tape, &store, &d1.0, &m1.0, None)
        .unwrap();
    let out = t
        .decode::<f64, ChaCha8Rng>(&mut tape, &store, mem, &inputs, None)
        .unwrap();
    assert_eq!(tape.value(out), &got);
    assert_eq!(got.shape(), [SLOTS_PER_DAY, OUTPUT_CLASSES]);
}

#[test]
fn decoder_is_causal() {
    let (t, store) = transformer(4);
    let (d1, m1, d2, m2) = sample();
    let cut = 40;
    let mut altered = d2.clone();
    for s in cut + 1..SLOTS_PER_DAY {
        altered.0[s] = Some(Exercise);
    }
    let run = |grid: &DayGrid| {
        let ex = SeqExample::new(&d1, &m1, grid, &m2, SLOTS_PER_DAY);
        let mut tape = Tape::new();
        let v = t
            .logits(&mut tape, &store, &ex, 1.0, false, &mut rng())
            .unwrap();
        tape.value(v).clone()
    };
    let (a, b) = (run(&d2), run(&altered));
    // Slot t sees gold tokens up to t − 1, so rows ≤ cut + 1 are unaffected.
    for s in 0..=cut + 1 {
        for c in 0..OUTPUT_CLASSES {
            assert!((a.get(s, c) - b.get(s, c)).abs() < 1e-12, "slot {s}");
        }
    }
    let later: f64 = (cut + 2..SLOTS_PER_DAY)
        .map(|s| (a.get(s, 0) - b.get(s, 0)).abs())
        .sum();
    assert!(later > 0.0);
}

#[test]
fn incremental_matches_parallel() {
    let (t, store) = transformer(5);
    let (d1, m1, d2, _) = sample();
    let mut tape = Tape::new();
    let mem = t
        .encode::<f64, ChaCha8Rng>(&mut tape, &store, &d1.0, &m1.0, None)
        .unwrap();
    let mut inputs = vec![BOS_TOKEN];
    inputs.extend(d2.0[..SLOTS_PER_DAY - 1].iter().map(|c| c.unwrap().index()));
    inputs[20] = UNOBSERVED_TOKEN;
    let out = t
        .decode::<f64, ChaCha8Rng>(&mut tape, &store, mem, &inputs, None)
        .unwrap();
    let parallel = tape.value(out).clone();
    let mut dec = IncrementalDecoder::new(&t, &store, tape.value(mem).data());
    for (s, &tok) in inputs.iter().enumerate() {
        let row = dec.step(tok).unwrap();
        for c in 0..OUTPUT_CLASSES {
            assert!(
                (row[c] - parallel.get(s, c)).abs() < 1e-9,
                "slot {s} class {c}"
            );
        }
    }
}

#[test]
fn free_running_uses_own_argmax() {
    let (t, store) = transformer(6);
    let (d1, m1, d2, m2) = sample();
    let ex = SeqExample::new(&d1, &m1, &d2, &m2, SLOTS_PER_DAY);
    let mut tape = Tape::new();
    let v = t
        .logits(&mut tape, &store, &ex, 0.0, false, &mut rng())
        .unwrap();
    let free = tape.value(v).clone();
    let generated = t
        .generate(&store, &d1.0, &m1.0, Decoding::Greedy, &mut rng())
        .unwrap();
    for s in 0..SLOTS_PER_DAY {
        assert_eq!(argmax(free.row(s)), generated[s], "slot {s}");
    }
}

#[test]
fn unobserved_gold_falls_back_to_model_token() {
    let (t, store) = transformer(7);
    let (d1, m1, d2, mut m2) = sample();
    for s in 0..SLOTS_PER_DAY {
        m2.0[s] = false;
    }
    let d2 = d2.masked(&m2);
    let ex = SeqExample::new(&d1, &m1, &d2, &m2, SLOTS_PER_DAY);
    let mut tape = Tape::new();
    let v = t
        .logits(&mut tape, &store, &ex, 1.0, false, &mut rng())
        .unwrap();
    let forced = tape.value(v).clone();
    let mut tape = Tape::new();
    let v = t
        .logits(&mut tape, &store, &ex, 0.0, false, &mut rng())
        .unwrap();
    assert_eq!(tape.value(v), &forced);
}

#[test]
fn generation_is_valid_and_deterministic() {
    for arch in [Architecture::Transformer, Architecture::LstmAttention] {
        let (model, store) = Model::init::<f32>(&small(arch), 9).unwrap();
        let (d1, m1, _, _) = sample();
        let a = model
            .generate(&store, &d1, &m1, Decoding::Greedy, &mut rng())
            .unwrap();
        let b = model
            .generate(&store, &d1, &m1, Decoding::Greedy, &mut rng())
            .unwrap();
        assert!(a.is_complete());
        assert_eq!(a, b);
        let s = model
            .generate(&store, &d1, &m1, Decoding::Temperature(1.5), &mut rng())
            .unwrap();
        assert!(s.is_complete());
    }
}

#[test]
fn lstm_logits_shape_and_gradients() {
    let (model, store) = Model::init::<f64>(&small(Architecture::LstmAttention), 10).unwrap();
    let (d1, m1, d2, m2) = sample();
    let ex = SeqExample::new(&d1, &m1, &d2, &m2, SLOTS_PER_DAY);
    let mut tape = Tape::new();
    let v = model
        .logits(&mut tape, &store, &ex, 0.5, true, &mut rng())
        .unwrap();
    assert_eq!(tape.value(v).shape(), [SLOTS_PER_DAY, OUTPUT_CLASSES]);
    let loss = tape.mean(v).unwrap();
    let grads = tape.backward(loss, &store).unwrap();
    let head = store.id_of("lstm.head.w").unwrap();
    assert!(grads.get(head).sq_norm() > 0.0);
}

#[test]
fn lstm_greedy_generation_matches_free_running_logits() {
    let (model, store) = Model::init::<f64>(&small(Architecture::LstmAttention), 12).unwrap();
    let (d1, m1, d2, m2) = sample();
    let ex = SeqExample::new(&d1, &m1, &d2, &m2, SLOTS_PER_DAY);
    let mut tape = Tape::new();
    let v = model
        .logits(&mut tape, &store, &ex, 0.0, false, &mut rng())
        .unwrap();
    let generated = model
        .generate_slots(&store, &d1.0, &m1.0, Decoding::Greedy, &mut rng())
        .unwrap();
    for s in 0..SLOTS_PER_DAY {
        assert_eq!(argmax(tape.value(v).row(s)), generated[s].index());
    }
}

#[test]
fn short_sequences_are_supported() {
    let (model, store) = Model::init::<f64>(&ModelConfig::tiny(), 13).unwrap();
    let (d1, m1, d2, m2) = sample();
    let ex = SeqExample::new(&d1, &m1, &d2, &m2, 24);
    let mut tape = Tape::new();
    let v = model
        .logits(&mut tape, &store, &ex, 0.5, true, &mut rng())
        .unwrap();
    assert_eq!(tape.value(v).shape(), [24, OUTPUT_CLASSES]);
    assert!(model
        .generate(&store, &d1, &m1, Decoding::Greedy, &mut rng())
        .is_err());
}
