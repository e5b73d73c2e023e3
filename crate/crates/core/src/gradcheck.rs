//! Finite-difference checks of every tape kernel and of the full combined
//! loss through small models.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::activity::{ActivityType, DayGrid, ObservationMask};
use crate::loss::{combined_loss_tape, LossWeights};
use crate::model::{Architecture, Model, ModelConfig, SeqExample};
use crate::numerics::kernels::causal_mask;
use crate::numerics::{
    grad_check_piecewise, Array, NumResult, NumericsError, ParamId, ParamStore, Tape, Var,
};
use crate::Result;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckLine {
    pub name: String,
    pub max_rel_error: f64,
    pub worst_param: String,
    pub coords: usize,
    /// Coordinates skipped at ReLU kinks.
    pub skipped: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckSummary {
    pub h: f64,
    pub checks: Vec<CheckLine>,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub h: f64,
    pub seed: u64,
    /// Coordinates sampled per parameter array in the model checks.
    pub model_coords: usize,
    pub model: ModelConfig,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            h: 1e-4,
            seed: 0,
            model_coords: 12,
            model: ModelConfig::tiny(),
        }
    }
}

type Build = fn(&mut Tape<f64>, &[Var], &mut ChaCha8Rng) -> NumResult<Var>;

/// Parameter shapes and the op under test. Each check reduces the op's
/// output to a scalar by a fixed random projection.
fn kernels() -> Vec<(&'static str, Vec<[usize; 2]>, Build)> {
    vec![
        ("matmul", vec![[3, 4], [4, 5]], |t, p, _| t.matmul(p[0], p[1])),
        ("matmul_t", vec![[3, 4], [5, 4]], |t, p, _| t.matmul_t(p[0], p[1])),
        ("add", vec![[3, 4], [3, 4]], |t, p, _| t.add(p[0], p[1])),
        ("add_row", vec![[3, 4], [1, 4]], |t, p, _| t.add_row(p[0], p[1])),
        ("mul", vec![[3, 4], [3, 4]], |t, p, _| t.mul(p[0], p[1])),
        ("scale", vec![[3, 4]], |t, p, _| t.scale(p[0], -1.7)),
        ("relu", vec![[4, 5]], |t, p, _| t.relu(p[0])),
        ("tanh", vec![[4, 5]], |t, p, _| t.tanh(p[0])),
        ("sigmoid", vec![[4, 5]], |t, p, _| t.sigmoid(p[0])),
        ("log", vec![[3, 4]], |t, p, _| {
            let s = t.sigmoid(p[0])?;
            t.log(s)
        }),
        ("softmax", vec![[3, 6]], |t, p, _| t.softmax(p[0])),
        ("log_softmax", vec![[3, 6]], |t, p, _| t.log_softmax(p[0])),
        ("layer_norm", vec![[3, 6], [1, 6], [1, 6]], |t, p, _| {
            t.layer_norm(p[0], p[1], p[2])
        }),
        ("dropout", vec![[4, 5]], |t, p, rng| t.dropout(p[0], 0.3, Some(rng))),
        ("gather", vec![[6, 4]], |t, p, _| t.gather(p[0], &[2, 0, 2, 5])),
        ("concat_cols", vec![[3, 2], [3, 4]], |t, p, _| t.concat_cols(&[p[0], p[1]])),
        ("concat_rows", vec![[2, 4], [3, 4]], |t, p, _| t.concat_rows(&[p[0], p[1]])),
        ("slice_cols", vec![[3, 6]], |t, p, _| t.slice_cols(p[0], 1, 3)),
        ("transpose", vec![[3, 5]], |t, p, _| t.transpose(p[0])),
        ("sum", vec![[3, 4]], |t, p, _| t.sum(p[0])),
        ("mean", vec![[3, 4]], |t, p, _| t.mean(p[0])),
        ("linear", vec![[3, 4], [4, 2], [1, 2]], |t, p, _| t.linear(p[0], p[1], p[2])),
        ("attention", vec![[4, 6], [5, 6], [5, 6]], |t, p, _| {
            t.attention(p[0], p[1], p[2], 2, None)
        }),
        ("attention_causal", vec![[4, 6], [4, 6], [4, 6]], |t, p, _| {
            let mask = causal_mask::<f64>(4);
            t.attention(p[0], p[1], p[2], 3, Some(&mask))
        }),
    ]
}

fn check_kernel(name: &str, shapes: &[[usize; 2]], build: Build, opts: &GradCheckOptions) -> Result<CheckLine> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut store = ParamStore::<f64>::new();
    for (i, &[r, c]) in shapes.iter().enumerate() {
        let a = Array::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0));
        store.insert(format!("{name}.{i}"), a);
    }
    let proj_seed: u64 = rng.random();
    let eval = |store: &ParamStore<f64>, tape: &mut Tape<f64>| -> NumResult<Var> {
        let params: Vec<Var> = (0..store.len()).map(|i| tape.param(store, ParamId(i))).collect();
        let mut op_rng = ChaCha8Rng::seed_from_u64(proj_seed);
        let out = build(tape, &params, &mut op_rng)?;
        let shape = tape.value(out).shape();
        let w = Array::from_fn(shape[0], shape[1], |_, _| op_rng.random_range(-1.0..1.0));
        let w = tape.input(w)?;
        let y = tape.mul(out, w)?;
        tape.sum(y)
    };
    let mut tape = Tape::new();
    let loss = eval(&store, &mut tape)?;
    let grads = tape.backward(loss, &store)?;
    let mut f = |s: &ParamStore<f64>| {
        let mut tape = Tape::new();
        let v = eval(s, &mut tape)?;
        Ok((tape.value(v).item(), tape.relu_pattern()))
    };
    let report = grad_check_piecewise(&mut f, &store, &grads, opts.h, None, opts.seed)?;
    Ok(CheckLine {
        name: name.to_string(),
        max_rel_error: report.max_rel_error,
        worst_param: report.worst_param,
        coords: report.coords_checked,
        skipped: report.coords_skipped,
    })
}

/// A toy day pair over `len` slots with a data gap in each day.
fn toy_example(len: usize, rng: &mut ChaCha8Rng) -> (DayGrid, ObservationMask, DayGrid, ObservationMask) {
    let mut d1 = DayGrid::unobserved();
    let mut d2 = DayGrid::unobserved();
    let kinds = [ActivityType::Home, ActivityType::Work, ActivityType::MealsOut];
    let mut k1 = 0;
    let mut k2 = 1;
    for t in 0..d1.0.len() {
        if rng.random::<f64>() < 0.2 {
            k1 = rng.random_range(0..kinds.len());
        }
        if rng.random::<f64>() < 0.2 {
            k2 = rng.random_range(0..kinds.len());
        }
        d1.0[t] = Some(kinds[k1]);
        d2.0[t] = Some(kinds[k2]);
    }
    let mut m1 = ObservationMask::full();
    let mut m2 = ObservationMask::full();
    for t in len / 4..len / 4 + 3 {
        m1.0[t] = false;
    }
    for t in len / 2..len / 2 + 2 {
        m2.0[t] = false;
        d2.0[t] = None;
    }
    (d1, m1, d2, m2)
}

fn check_model(arch: Architecture, opts: &GradCheckOptions) -> Result<CheckLine> {
    let config = opts.model.clone().with_architecture(arch);
    let (model, store) = Model::init::<f64>(&config, opts.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5eed);
    let (d1, m1, d2, m2) = toy_example(config.seq_len, &mut rng);
    let ex = SeqExample::new(&d1, &m1, &d2, &m2, config.seq_len);
    let weights = LossWeights::default();
    let eval = |store: &ParamStore<f64>, tape: &mut Tape<f64>| -> crate::Result<Var> {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let logits = model.logits(tape, store, &ex, 1.0, true, &mut rng)?;
        Ok(combined_loss_tape(tape, logits, ex.day2, ex.mask2, &weights)?.0)
    };
    let mut tape = Tape::new();
    let loss = eval(&store, &mut tape)?;
    let grads = tape.backward(loss, &store)?;
    let mut f = |s: &ParamStore<f64>| {
        let mut tape = Tape::new();
        let v = eval(s, &mut tape).map_err(|e| NumericsError::Invalid(e.to_string()))?;
        Ok((tape.value(v).item(), tape.relu_pattern()))
    };
    let report = grad_check_piecewise(&mut f, &store, &grads, opts.h, Some(opts.model_coords), opts.seed)?;
    let name = match arch {
        Architecture::Transformer => "model_transformer",
        Architecture::LstmAttention => "model_lstm_attention",
    };
    Ok(CheckLine {
        name: name.to_string(),
        max_rel_error: report.max_rel_error,
        worst_param: report.worst_param,
        coords: report.coords_checked,
        skipped: report.coords_skipped,
    })
}

/// Every kernel check followed by the combined loss through both models,
/// all in 64-bit arithmetic.
pub fn run(opts: &GradCheckOptions) -> Result<GradCheckSummary> {
    let mut checks = Vec::new();
    for (name, shapes, build) in kernels() {
        checks.push(check_kernel(name, &shapes, build, opts)?);
    }
    for arch in [Architecture::Transformer, Architecture::LstmAttention] {
        checks.push(check_model(arch, opts)?);
    }
    let max_rel_error = checks.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
    Ok(GradCheckSummary {
        h: opts.h,
        checks,
        max_rel_error,
    })
}
