//! Masked training losses over decoder logits and the hard transition metric.
//!
//! Every component reads targets only at observed slots, so target codes
//! under a 0 mask bit never influence a value or a gradient.

use serde::{Deserialize, Serialize};

use crate::activity::{ActivityType, NUM_ACTIVITY_TYPES};
use crate::error::{Error, Result};
use crate::numerics::kernels::{log_softmax_rows, softmax_rows};
use crate::numerics::{Array, NumResult, Scalar, Tape, Var};

const K: usize = NUM_ACTIVITY_TYPES;
/// Guard used by the soft transition F1.
pub const SOFT_F1_EPS: f64 = 1e-8;
/// Floor on a histogram's total mass before normalization.
pub const JSD_MASS_FLOOR: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    /// Soft transition term.
    pub alpha: f64,
    /// Distribution term.
    pub beta: f64,
    /// Soft-label term.
    pub gamma: f64,
    /// Transition matching tolerance in slots.
    pub tau: usize,
    /// Soft-label blend window in slots.
    pub window: usize,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 0.5,
            beta: 0.3,
            gamma: 0.2,
            tau: 2,
            window: 2,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "loss weight {name} must be ≥ 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub ce: f64,
    pub transition: f64,
    pub distribution: f64,
    pub soft_label: f64,
}

impl LossBreakdown {
    fn combine(
        ce: f64,
        transition: f64,
        distribution: f64,
        soft_label: f64,
        w: &LossWeights,
    ) -> Self {
        LossBreakdown {
            total: ce + w.alpha * transition + w.beta * distribution + w.gamma * soft_label,
            ce,
            transition,
            distribution,
            soft_label,
        }
    }
}

fn observed_target(target: &[Option<ActivityType>], mask: &[bool], t: usize) -> Option<usize> {
    match target[t] {
        Some(kind) if mask[t] => Some(kind.index()),
        _ => None,
    }
}

/// Slots `t ≥ 1` where both `t` and `t − 1` are observed and the code changes.
pub fn transitions_of(grid: &[Option<ActivityType>], mask: &[bool]) -> Vec<usize> {
    (1..grid.len())
        .filter(|&t| {
            mask[t]
                && mask[t - 1]
                && grid[t].is_some()
                && grid[t - 1].is_some()
                && grid[t] != grid[t - 1]
        })
        .collect()
}

/// Number of predicted/true transitions matched one-to-one within `tau`.
///
/// Predictions are visited in increasing time and each takes the earliest
/// unmatched true transition within tolerance. Because every tolerance window
/// has the same width, this greedy order yields a maximum matching.
pub fn match_transitions(pred: &[usize], truth: &[usize], tau: usize) -> usize {
    let mut j = 0;
    let mut matched = 0;
    for &p in pred {
        while j < truth.len() && truth[j] + tau < p {
            j += 1;
        }
        if j < truth.len() && truth[j] <= p + tau {
            matched += 1;
            j += 1;
        }
    }
    matched
}

/// F1 from set sizes; both empty gives 1, exactly one empty gives 0.
pub fn f1_from_counts(matched: usize, n_pred: usize, n_true: usize) -> f64 {
    match (n_pred, n_true) {
        (0, 0) => 1.0,
        (0, _) | (_, 0) => 0.0,
        _ => {
            let p = matched as f64 / n_pred as f64;
            let r = matched as f64 / n_true as f64;
            if p + r == 0.0 {
                0.0
            } else {
                2.0 * p * r / (p + r)
            }
        }
    }
}

pub fn transition_f1_hard(
    pred: &[Option<ActivityType>],
    target: &[Option<ActivityType>],
    tau: usize,
    mask: &[bool],
) -> f64 {
    let p = transitions_of(pred, mask);
    let t = transitions_of(target, mask);
    f1_from_counts(match_transitions(&p, &t, tau), p.len(), t.len())
}

/// Row-stochastic `n × 15` targets that blend the two codes on either side
/// of each observed boundary.
///
/// A slot at 1-based distance `d ≤ w` from a boundary of its own observed run
/// puts `(w + 1 − d)/(w + 2)` on the code across that boundary and the rest on
/// its own code. The nearer boundary wins, ties going to the earlier one.
/// Unobserved rows are uniform.
pub fn soft_targets(target: &[Option<ActivityType>], mask: &[bool], w: usize) -> Array<f64> {
    let n = target.len();
    let mut out = Array::zeros(n, K);
    let code = |t: usize| observed_target(target, mask, t);
    let mut start = 0;
    while start < n {
        let Some(own) = code(start) else {
            out.row_mut(start).fill(1.0 / K as f64);
            start += 1;
            continue;
        };
        let mut end = start + 1;
        while end < n && code(end) == Some(own) {
            end += 1;
        }
        let left = if start > 0 { code(start - 1) } else { None };
        let right = if end < n { code(end) } else { None };
        for t in start..end {
            let before = left.map(|c| (t - start + 1, c));
            let after = right.map(|c| (end - t, c));
            let nearest = match (before, after) {
                (Some(b), Some(a)) => Some(if a.0 < b.0 { a } else { b }),
                (b, a) => b.or(a),
            };
            match nearest {
                Some((d, adj)) if d <= w => {
                    let a = (w + 1 - d) as f64 / (w + 2) as f64;
                    out.set(t, adj, a);
                    out.set(t, own, 1.0 - a);
                }
                _ => out.set(t, own, 1.0),
            }
        }
        start = end;
    }
    out
}

fn one_hot_targets(target: &[Option<ActivityType>], mask: &[bool]) -> Array<f64> {
    soft_targets(target, mask, 0)
}

/// Masked mean cross-entropy against row targets, with its gradient
/// `(softmax − y)/n_obs` on observed rows.
fn soft_ce_with_grad<F: Scalar>(
    logits: &Array<F>,
    y: &Array<f64>,
    mask: &[bool],
) -> (f64, Array<F>) {
    let n_obs = mask.iter().filter(|&&m| m).count();
    let mut grad = Array::zeros(logits.rows(), logits.cols());
    if n_obs == 0 {
        return (0.0, grad);
    }
    let x: Vec<f64> = logits.data().iter().map(|v| v.as_f64()).collect();
    let mut lp = vec![0.0; x.len()];
    log_softmax_rows(&x, K, &mut lp);
    let mut total = 0.0;
    let inv = 1.0 / n_obs as f64;
    for t in (0..logits.rows()).filter(|&t| mask[t]) {
        let row = &lp[t * K..(t + 1) * K];
        let yr = y.row(t);
        total -= row.iter().zip(yr).map(|(l, y)| y * l).sum::<f64>();
        for c in 0..K {
            grad.set(t, c, F::lit((row[c].exp() - yr[c]) * inv));
        }
    }
    (total * inv, grad)
}

pub fn masked_ce<F: Scalar>(
    logits: &Array<F>,
    target: &[Option<ActivityType>],
    mask: &[bool],
) -> f64 {
    soft_ce_with_grad(logits, &one_hot_targets(target, mask), mask).0
}

pub fn soft_label_loss<F: Scalar>(
    logits: &Array<F>,
    target: &[Option<ActivityType>],
    w: usize,
    mask: &[bool],
) -> f64 {
    soft_ce_with_grad(logits, &soft_targets(target, mask, w), mask).0
}

/// Pairs `(t − 1, t)` with both slots observed.
fn valid_pairs(mask: &[bool]) -> Vec<usize> {
    (1..mask.len())
        .filter(|&t| mask[t] && mask[t - 1])
        .collect()
}

/// Soft `1 − F1` over predicted transition scores
/// `s_t = 1 − Σ_c p[t,c]·p[t−1,c]`, with its gradient with respect to `probs`.
fn soft_transition_with_grad<F: Scalar>(
    probs: &Array<F>,
    target: &[Option<ActivityType>],
    tau: usize,
    mask: &[bool],
) -> (f64, Array<F>) {
    let n = probs.rows();
    let p = |t: usize, c: usize| probs.get(t, c).as_f64();
    let pairs = valid_pairs(mask);
    let truth = transitions_of(target, mask);
    let near_truth = |t: usize| truth.iter().any(|&j| t.abs_diff(j) <= tau);

    let mut s = vec![0.0; n];
    for &t in &pairs {
        s[t] = 1.0 - (0..K).map(|c| p(t, c) * p(t - 1, c)).sum::<f64>();
    }
    let eps = SOFT_F1_EPS;
    let sum_s: f64 = pairs.iter().map(|&t| s[t]).sum();
    let hit: f64 = pairs
        .iter()
        .filter(|&&t| near_truth(t))
        .map(|&t| s[t])
        .sum();
    let denom_p = sum_s + eps;
    let prec = (hit + eps) / denom_p;

    let window_sums: Vec<f64> = truth
        .iter()
        .map(|&j| {
            pairs
                .iter()
                .filter(|&&t| t.abs_diff(j) <= tau)
                .map(|&t| s[t])
                .sum()
        })
        .collect();
    let denom_r = truth.len() as f64 + eps;
    let rec = (window_sums.iter().map(|&x: &f64| x.min(1.0)).sum::<f64>() + eps) / denom_r;
    let f1 = 2.0 * prec * rec / (prec + rec);

    let df_dp = 2.0 * rec * rec / (prec + rec).powi(2);
    let df_dr = 2.0 * prec * prec / (prec + rec).powi(2);
    let mut grad = Array::<f64>::zeros(n, probs.cols());
    for &t in &pairs {
        let dil = if near_truth(t) { 1.0 } else { 0.0 };
        let dprec = (dil - prec) / denom_p;
        let unsaturated = truth
            .iter()
            .zip(&window_sums)
            .filter(|(&j, &w)| t.abs_diff(j) <= tau && w < 1.0)
            .count();
        let drec = unsaturated as f64 / denom_r;
        // d(1 − F1)/ds_t
        let g = -(df_dp * dprec + df_dr * drec);
        for c in 0..K {
            let a = grad.get(t, c) - g * p(t - 1, c);
            grad.set(t, c, a);
            let b = grad.get(t - 1, c) - g * p(t, c);
            grad.set(t - 1, c, b);
        }
    }
    (1.0 - f1, grad.cast())
}

pub fn transition_loss_soft<F: Scalar>(
    probs: &Array<F>,
    target: &[Option<ActivityType>],
    tau: usize,
    mask: &[bool],
) -> f64 {
    soft_transition_with_grad(probs, target, tau, mask).0
}

/// Empirical class frequencies of observed targets (all zero if none).
fn target_frequencies(target: &[Option<ActivityType>], mask: &[bool]) -> Vec<f64> {
    let mut q = vec![0.0; K];
    let mut n = 0usize;
    for t in 0..target.len() {
        if let Some(c) = observed_target(target, mask, t) {
            q[c] += 1.0;
            n += 1;
        }
    }
    if n > 0 {
        for v in &mut q {
            *v /= n as f64;
        }
    }
    q
}

/// Base-2 Jensen-Shannon divergence of two already-normalized distributions,
/// using `0·log 0 = 0`.
fn js_normalized(p: &[f64], q: &[f64]) -> f64 {
    let mut total = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        let m = 0.5 * (a + b);
        if a > 0.0 {
            total += 0.5 * a * (a / m).log2();
        }
        if b > 0.0 {
            total += 0.5 * b * (b / m).log2();
        }
    }
    total.clamp(0.0, 1.0)
}

/// Base-2 Jensen-Shannon divergence between two non-negative histograms.
///
/// Each histogram is normalized by its total mass (floored at
/// [`JSD_MASS_FLOOR`]). Two empty histograms have divergence 0; one empty
/// and one non-empty have divergence 1.
pub fn jsd(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len(), "jsd: histogram lengths differ");
    let (sp, sq): (f64, f64) = (p.iter().sum(), q.iter().sum());
    match (sp > 0.0, sq > 0.0) {
        (false, false) => 0.0,
        (true, false) | (false, true) => 1.0,
        _ => {
            let pn: Vec<f64> = p.iter().map(|v| v / sp.max(JSD_MASS_FLOOR)).collect();
            let qn: Vec<f64> = q.iter().map(|v| v / sq.max(JSD_MASS_FLOOR)).collect();
            js_normalized(&pn, &qn)
        }
    }
}

/// `JS(P̂ ‖ P)` between the mean predicted distribution over observed slots
/// and the empirical target distribution, with its gradient.
fn distribution_with_grad<F: Scalar>(
    probs: &Array<F>,
    target: &[Option<ActivityType>],
    mask: &[bool],
) -> (f64, Array<F>) {
    let n_obs = mask.iter().filter(|&&m| m).count();
    let mut grad = Array::zeros(probs.rows(), probs.cols());
    if n_obs == 0 {
        return (0.0, grad);
    }
    let inv = 1.0 / n_obs as f64;
    let mut mean = vec![0.0; K];
    for t in (0..probs.rows()).filter(|&t| mask[t]) {
        for (c, m) in mean.iter_mut().enumerate() {
            *m += probs.get(t, c).as_f64() * inv;
        }
    }
    let q = target_frequencies(target, mask);
    let value = js_normalized(&mean, &q);
    let dmean: Vec<f64> = mean
        .iter()
        .zip(&q)
        .map(|(&p, &q)| {
            let p = p.max(f64::MIN_POSITIVE);
            0.5 * (p / (0.5 * (p + q))).log2()
        })
        .collect();
    for t in (0..probs.rows()).filter(|&t| mask[t]) {
        for (c, d) in dmean.iter().enumerate() {
            grad.set(t, c, F::lit(d * inv));
        }
    }
    (value, grad)
}

pub fn distribution_loss<F: Scalar>(
    probs: &Array<F>,
    target: &[Option<ActivityType>],
    mask: &[bool],
) -> f64 {
    distribution_with_grad(probs, target, mask).0
}

fn softmax_array<F: Scalar>(logits: &Array<F>) -> Array<F> {
    let mut out = Array::zeros(logits.rows(), logits.cols());
    softmax_rows(logits.data(), logits.cols(), out.data_mut());
    out
}

/// All four components and their weighted total, without gradients.
pub fn combined_loss<F: Scalar>(
    logits: &Array<F>,
    target: &[Option<ActivityType>],
    mask: &[bool],
    w: &LossWeights,
) -> LossBreakdown {
    let probs = softmax_array(logits);
    LossBreakdown::combine(
        masked_ce(logits, target, mask),
        transition_loss_soft(&probs, target, w.tau, mask),
        distribution_loss(&probs, target, mask),
        soft_label_loss(logits, target, w.window, mask),
        w,
    )
}

/// Records the combined loss on `tape` and returns the scalar node plus
/// the per-component values.
pub fn combined_loss_tape<F: Scalar>(
    tape: &mut Tape<F>,
    logits: Var,
    target: &[Option<ActivityType>],
    mask: &[bool],
    w: &LossWeights,
) -> NumResult<(Var, LossBreakdown)> {
    let lv = tape.value(logits).clone();
    let (ce, g_ce) = soft_ce_with_grad(&lv, &one_hot_targets(target, mask), mask);
    let (soft, g_soft) = soft_ce_with_grad(&lv, &soft_targets(target, mask, w.window), mask);
    let probs = tape.softmax(logits)?;
    let pv = tape.value(probs).clone();
    let (trans, g_trans) = soft_transition_with_grad(&pv, target, w.tau, mask);
    let (dist, g_dist) = distribution_with_grad(&pv, target, mask);

    let mut total = tape.scalar_fn(logits, F::lit(ce), g_ce)?;
    let terms = [
        (probs, trans, g_trans, w.alpha),
        (probs, dist, g_dist, w.beta),
        (logits, soft, g_soft, w.gamma),
    ];
    for (input, value, grad, weight) in terms {
        if weight == 0.0 {
            continue;
        }
        let node = tape.scalar_fn(input, F::lit(value), grad)?;
        let node = tape.scale(node, F::lit(weight))?;
        total = tape.add(total, node)?;
    }
    Ok((total, LossBreakdown::combine(ce, trans, dist, soft, w)))
}
