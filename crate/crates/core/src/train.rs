//! Mini-batch training with progressive artificial masking, partial teacher
//! forcing, per-epoch validation and checkpoints.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::index::sample_weighted;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activity::{ActivityType, AgentDayPair, ObservationMask, Split, SLOTS_PER_DAY};
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalOptions, EvalReport};
use crate::loss::{combined_loss, combined_loss_tape, transition_f1_hard, LossBreakdown, LossWeights};
use crate::model::{argmax, period_of_index, Model, ModelConfig, PeriodId, SeqExample};
use crate::numerics::checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
use crate::numerics::{clip_global_norm, AdamConfig, AdamState, Gradients, ParamStore, Tape};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Global gradient-norm ceiling.
    pub clip: f64,
    pub dropout: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub tau: usize,
    pub window: usize,
    /// Probability of feeding the ground-truth previous slot.
    pub teacher_forcing: f64,
    /// Artificial masking ratio at the first epoch.
    pub r_min: f64,
    /// Artificial masking ratio at the last epoch.
    pub r_max: f64,
    /// Relative selection weight of overnight slots when masking.
    pub overnight_bias: f64,
    /// Generate the validation split each epoch and record its JSDs.
    pub val_jsd: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let w = LossWeights::default();
        TrainConfig {
            epochs: 50,
            batch_size: 32,
            lr: 1e-4,
            weight_decay: 1e-5,
            clip: 1.0,
            dropout: 0.1,
            alpha: w.alpha,
            beta: w.beta,
            gamma: w.gamma,
            tau: w.tau,
            window: w.window,
            teacher_forcing: 0.5,
            r_min: 0.10,
            r_max: 0.40,
            overnight_bias: 2.0,
            val_jsd: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Ten epochs of batch 8 at a learning rate of 1e-3, sized for a few
    /// thousand pairs.
    pub fn desk() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 8,
            lr: 1e-3,
            ..Self::default()
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            alpha: self.alpha,
            beta: self.beta,
            gamma: self.gamma,
            tau: self.tau,
            window: self.window,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.loss_weights().validate()?;
        let bad = |msg: String| Err(Error::Config(msg));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be at least 1".into());
        }
        if !(0.0 <= self.r_min && self.r_min <= self.r_max && self.r_max < 1.0) {
            return bad(format!(
                "masking bounds must satisfy 0 ≤ r_min ≤ r_max < 1, got {} and {}",
                self.r_min, self.r_max
            ));
        }
        if !(self.lr > 0.0 && self.clip > 0.0 && self.weight_decay >= 0.0) {
            return bad("lr and clip must be positive, weight_decay non-negative".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if !(0.0..=1.0).contains(&self.teacher_forcing) {
            return bad(format!(
                "teacher_forcing must lie in [0, 1], got {}",
                self.teacher_forcing
            ));
        }
        if !(self.overnight_bias > 0.0 && self.overnight_bias.is_finite()) {
            return bad("overnight_bias must be positive".into());
        }
        Ok(())
    }
}

/// Masking ratio for a 1-based epoch: linear from `r_min` to `r_max`.
pub fn masking_schedule(epoch: usize, total_epochs: usize, r_min: f64, r_max: f64) -> f64 {
    if total_epochs <= 1 {
        return r_min;
    }
    let e = epoch.clamp(1, total_epochs);
    r_min + (r_max - r_min) * (e - 1) as f64 / (total_epochs - 1) as f64
}

/// Hides `round(ratio · observed)` observed slots, drawn without
/// replacement with overnight slots weighted by `overnight_bias`.
pub fn apply_artificial_mask(
    mask: &ObservationMask,
    ratio: f64,
    overnight_bias: f64,
    rng: &mut impl Rng,
) -> ObservationMask {
    let observed: Vec<usize> = (0..SLOTS_PER_DAY).filter(|&t| mask.0[t]).collect();
    let k = (ratio * observed.len() as f64).round() as usize;
    let mut out = *mask;
    if k == 0 {
        return out;
    }
    let weight = |i: usize| {
        if period_of_index(observed[i]) == PeriodId::Overnight {
            overnight_bias
        } else {
            1.0
        }
    };
    let picked = sample_weighted(rng, observed.len(), weight, k.min(observed.len()))
        .expect("positive finite weights");
    for i in picked {
        out.0[observed[i]] = false;
    }
    out
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mask_ratio: f64,
    pub steps: usize,
    /// Mean per-pair loss components over the epoch's training samples.
    pub train: LossBreakdown,
    pub val: LossBreakdown,
    /// Mean hard transition F1 of teacher-forced argmax predictions.
    pub val_f1: f64,
    pub val_jsd: Option<EvalReport>,
    /// Largest pre-clip and post-clip global gradient norms.
    pub grad_norm_max: f64,
    pub clipped_norm_max: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub wall_seconds: f64,
}

/// Where training writes `best.ckpt`, `last.ckpt` and `train_log.jsonl`.
#[derive(Clone, Debug)]
pub struct OutputPaths {
    pub dir: PathBuf,
}

impl OutputPaths {
    pub fn best(&self) -> PathBuf {
        self.dir.join("best.ckpt")
    }

    pub fn last(&self) -> PathBuf {
        self.dir.join("last.ckpt")
    }

    pub fn log(&self) -> PathBuf {
        self.dir.join("train_log.jsonl")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct CheckpointMeta {
    model: ModelConfig,
    train: TrainConfig,
    epoch: usize,
    best_epoch: usize,
    /// Absent until a validation pass has run.
    best_val_loss: Option<f64>,
}

/// A checkpoint with its configuration decoded.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub model: Model,
    pub params: ParamStore<f32>,
    pub adam: AdamState<f32>,
    pub train: TrainConfig,
    /// Last completed epoch.
    pub epoch: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

pub fn save_checkpoint(path: impl AsRef<Path>, state: &TrainState) -> Result<()> {
    let meta = CheckpointMeta {
        model: state.model.config().clone(),
        train: state.train.clone(),
        epoch: state.epoch,
        best_epoch: state.best_epoch,
        best_val_loss: Some(state.best_val_loss).filter(|v| v.is_finite()),
    };
    write_checkpoint(
        path,
        &Checkpoint {
            meta: serde_json::to_value(&meta).expect("meta serializes"),
            params: state.params.clone(),
            adam: Some(state.adam.clone()),
        },
    )
}

/// Rebuilds the model from the stored configuration and loads its arrays.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<TrainState> {
    let path = path.as_ref();
    let ckpt = read_checkpoint(path)?;
    let meta: CheckpointMeta = serde_json::from_value(ckpt.meta)
        .map_err(|e| Error::Checkpoint(format!("{}: bad metadata: {e}", path.display())))?;
    let (model, params) = restore_params(&meta.model, &ckpt.params)?;
    let adam = match ckpt.adam {
        Some(a) if a.m.len() == params.len() && a.v.len() == params.len() => a,
        Some(_) => return Err(Error::Checkpoint("optimizer state does not match parameters".into())),
        None => AdamState::new(meta.train.adam(), &params),
    };
    Ok(TrainState {
        model,
        params,
        adam,
        train: meta.train,
        epoch: meta.epoch,
        best_epoch: meta.best_epoch,
        best_val_loss: meta.best_val_loss.unwrap_or(f64::INFINITY),
    })
}

/// Loads stored arrays into a freshly built model of `config`; any missing,
/// extra or reshaped parameter is named in the error.
pub fn restore_params(config: &ModelConfig, stored: &ParamStore<f32>) -> Result<(Model, ParamStore<f32>)> {
    let (model, mut params) = Model::init::<f32>(config, 0)?;
    params
        .load_from(stored)
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    Ok((model, params))
}

fn sample_rng(seed: u64, epoch: usize, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((epoch as u64) << 32) | index as u64);
    rng
}

fn add_breakdown(acc: &mut LossBreakdown, b: &LossBreakdown) {
    acc.total += b.total;
    acc.ce += b.ce;
    acc.transition += b.transition;
    acc.distribution += b.distribution;
    acc.soft_label += b.soft_label;
}

fn scale_breakdown(b: &mut LossBreakdown, s: f64) {
    b.total *= s;
    b.ce *= s;
    b.transition *= s;
    b.distribution *= s;
    b.soft_label *= s;
}

struct Trainer<'a> {
    model: &'a Model,
    cfg: &'a TrainConfig,
    weights: LossWeights,
    len: usize,
}

impl Trainer<'_> {
    fn sample_gradient(
        &self,
        params: &ParamStore<f32>,
        pair: &AgentDayPair,
        ratio: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Gradients<f32>, LossBreakdown)> {
        let mask1 = apply_artificial_mask(&pair.mask1, ratio, self.cfg.overnight_bias, rng);
        let mask2 = apply_artificial_mask(&pair.mask2, ratio, self.cfg.overnight_bias, rng);
        let ex = SeqExample::new(&pair.day1, &mask1, &pair.day2, &mask2, self.len);
        let mut tape = Tape::new();
        let logits = self
            .model
            .logits(&mut tape, params, &ex, self.cfg.teacher_forcing, true, rng)?;
        let (loss, parts) = combined_loss_tape(&mut tape, logits, ex.day2, ex.mask2, &self.weights)?;
        Ok((tape.backward(loss, params)?, parts))
    }

    /// Teacher-forced loss and hard transition F1 without dropout or
    /// artificial masking.
    fn validate(&self, params: &ParamStore<f32>, pairs: &[AgentDayPair]) -> Result<(LossBreakdown, f64)> {
        let results: Vec<Result<(LossBreakdown, f64)>> = pairs
            .par_iter()
            .map(|pair| {
                let ex = SeqExample::new(&pair.day1, &pair.mask1, &pair.day2, &pair.mask2, self.len);
                let mut tape = Tape::new();
                let mut rng = ChaCha8Rng::seed_from_u64(0);
                let logits = self.model.logits(&mut tape, params, &ex, 1.0, false, &mut rng)?;
                let lv = tape.value(logits);
                let parts = combined_loss(lv, ex.day2, ex.mask2, &self.weights);
                let pred: Vec<Option<ActivityType>> = (0..lv.rows())
                    .map(|t| ActivityType::from_index(argmax(lv.row(t))))
                    .collect();
                let f1 = transition_f1_hard(&pred, ex.day2, self.weights.tau, ex.mask2);
                Ok((parts, f1))
            })
            .collect();
        let mut acc = LossBreakdown::default();
        let mut f1 = 0.0;
        for r in results {
            let (parts, f) = r?;
            add_breakdown(&mut acc, &parts);
            f1 += f;
        }
        let n = pairs.len().max(1) as f64;
        scale_breakdown(&mut acc, 1.0 / n);
        Ok((acc, f1 / n))
    }
}

fn diverged(epoch: usize, step: usize, reason: impl Into<String>) -> Error {
    Error::Diverged {
        epoch,
        step,
        reason: reason.into(),
    }
}

/// Trains `state` through epoch `state.train.epochs`, resuming after
/// `state.epoch`. With `out`, writes checkpoints and appends one JSON line
/// per epoch to the training log.
pub fn train(corpus: &Corpus, state: &mut TrainState, out: Option<&OutputPaths>) -> Result<TrainReport> {
    train_until(corpus, state, out, state.train.epochs)
}

/// Like [`train`] but stops after epoch `stop` of the configured schedule.
pub fn train_until(
    corpus: &Corpus,
    state: &mut TrainState,
    out: Option<&OutputPaths>,
    stop: usize,
) -> Result<TrainReport> {
    let cfg = state.train.clone();
    cfg.validate()?;
    let train_pairs = corpus.split_owned(Split::Train);
    let val_pairs = corpus.split_owned(Split::Val);
    if train_pairs.is_empty() || val_pairs.is_empty() {
        return Err(Error::Usage(
            "training needs non-empty train and val splits".into(),
        ));
    }
    state.model.set_dropout(cfg.dropout);
    if state.adam.config != cfg.adam() {
        state.adam.config = cfg.adam();
    }
    if let Some(out) = out {
        fs::create_dir_all(&out.dir).map_err(|e| Error::io(&out.dir, e))?;
        if state.epoch == 0 {
            fs::write(out.log(), "").map_err(|e| Error::io(out.log(), e))?;
        }
    }
    let model = state.model.clone();
    let trainer = Trainer {
        model: &model,
        cfg: &cfg,
        weights: cfg.loss_weights(),
        len: model.config().seq_len,
    };
    let started = Instant::now();
    let mut report = TrainReport {
        best_epoch: state.best_epoch,
        best_val_loss: state.best_val_loss,
        ..TrainReport::default()
    };
    let mut step = state.adam.step as usize;
    for epoch in state.epoch + 1..=stop.min(cfg.epochs) {
        let ratio = masking_schedule(epoch, cfg.epochs, cfg.r_min, cfg.r_max);
        let mut order: Vec<usize> = (0..train_pairs.len()).collect();
        order.shuffle(&mut sample_rng(cfg.seed, epoch, u32::MAX as usize));
        let mut record = EpochRecord {
            epoch,
            mask_ratio: ratio,
            ..EpochRecord::default()
        };
        for batch in order.chunks(cfg.batch_size) {
            step += 1;
            let params = &state.params;
            let results: Vec<Result<(Gradients<f32>, LossBreakdown)>> = batch
                .par_iter()
                .map(|&i| {
                    let mut rng = sample_rng(cfg.seed, epoch, i);
                    trainer.sample_gradient(params, &train_pairs[i], ratio, &mut rng)
                })
                .collect();
            let mut grads = Gradients::zeros_like(&state.params);
            for r in results {
                let (g, parts) = r?;
                if !parts.total.is_finite() {
                    return Err(diverged(epoch, step, format!("loss is {}", parts.total)));
                }
                grads.add_assign(&g);
                add_breakdown(&mut record.train, &parts);
            }
            grads.scale(1.0 / batch.len() as f32);
            let norm = clip_global_norm(&mut grads, cfg.clip);
            if !norm.is_finite() {
                return Err(diverged(epoch, step, format!("gradient norm is {norm}")));
            }
            record.grad_norm_max = record.grad_norm_max.max(norm);
            record.clipped_norm_max = record
                .clipped_norm_max
                .max(crate::numerics::global_norm(&grads));
            state
                .adam
                .step(&mut state.params, &grads)
                .map_err(|e| diverged(epoch, step, e.to_string()))?;
            record.steps += 1;
        }
        scale_breakdown(&mut record.train, 1.0 / train_pairs.len() as f64);

        let (val, f1) = trainer.validate(&state.params, &val_pairs)?;
        if !val.total.is_finite() {
            return Err(diverged(epoch, step, "validation loss is not finite"));
        }
        record.val = val;
        record.val_f1 = f1;
        if cfg.val_jsd && model.config().seq_len == SLOTS_PER_DAY {
            let options = EvalOptions {
                seed: cfg.seed,
                ..EvalOptions::default()
            };
            record.val_jsd = Some(evaluate(&model, &state.params, &val_pairs, &options)?.report);
        }
        state.epoch = epoch;
        let improved = report.best_epoch == 0 || val.total < report.best_val_loss;
        if improved {
            report.best_epoch = epoch;
            report.best_val_loss = val.total;
        }
        state.best_epoch = report.best_epoch;
        state.best_val_loss = report.best_val_loss;
        log::info!(
            "epoch {epoch}: train {:.4} val {:.4} f1 {:.3} mask {:.2}",
            record.train.total,
            record.val.total,
            record.val_f1,
            ratio
        );
        if let Some(out) = out {
            save_checkpoint(out.last(), state)?;
            if improved {
                save_checkpoint(out.best(), state)?;
            }
            let mut log = fs::OpenOptions::new()
                .append(true)
                .create(true)
                .open(out.log())
                .map_err(|e| Error::io(out.log(), e))?;
            let line = serde_json::to_string(&record).expect("record serializes");
            writeln!(log, "{line}").map_err(|e| Error::io(out.log(), e))?;
        }
        report.epochs.push(record);
    }
    report.wall_seconds = started.elapsed().as_secs_f64();
    Ok(report)
}

/// Fresh parameters and optimizer for `model_config` under `train`.
pub fn init_state(model_config: &ModelConfig, train: &TrainConfig) -> Result<TrainState> {
    train.validate()?;
    let mut config = model_config.clone();
    config.dropout = train.dropout;
    let (model, params) = Model::init::<f32>(&config, train.seed)?;
    let adam = AdamState::new(train.adam(), &params);
    Ok(TrainState {
        model,
        params,
        adam,
        train: train.clone(),
        epoch: 0,
        best_epoch: 0,
        best_val_loss: f64::INFINITY,
    })
}

/// Mean validation loss of the stored parameters, as recorded per epoch.
pub fn validation_loss(corpus: &Corpus, state: &TrainState) -> Result<LossBreakdown> {
    let val_pairs = corpus.split_owned(Split::Val);
    let trainer = Trainer {
        model: &state.model,
        cfg: &state.train,
        weights: state.train.loss_weights(),
        len: state.model.config().seq_len,
    };
    Ok(trainer.validate(&state.params, &val_pairs)?.0)
}

/// Resumes from `path`, failing if `train` changes anything but the epoch
/// budget.
pub fn resume(path: impl AsRef<Path>, train: &TrainConfig) -> Result<TrainState> {
    let mut state = load_checkpoint(path)?;
    let stored = TrainConfig {
        epochs: train.epochs,
        ..state.train.clone()
    };
    if &stored != train {
        let a = serde_json::to_value(&stored).expect("config serializes");
        let b = serde_json::to_value(train).expect("config serializes");
        let key = a
            .as_object()
            .and_then(|a| a.iter().find(|(k, v)| b.get(k.as_str()) != Some(v)))
            .map_or("?".to_string(), |(k, _)| k.clone());
        return Err(Error::Config(format!(
            "resume config differs from checkpoint in {key}"
        )));
    }
    state.train.epochs = train.epochs;
    Ok(state)
}
