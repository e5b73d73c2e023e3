//! Population-level evaluation: run histograms, Jensen-Shannon divergences
//! between reference and generated day-2 schedules, and the shift-worker
//! classifier.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activity::{
    concat_days, runs_of, ActivityType, AgentDayPair, DayGrid, ObservationMask, NUM_ACTIVITY_TYPES,
    SLOTS_PER_DAY,
};
use crate::error::{Error, Result};
use crate::loss::jsd;
use crate::model::{period_of_index, Decoding, Model, PeriodId};
use crate::numerics::{ParamStore, Scalar};

const DAY: usize = SLOTS_PER_DAY;

/// Raw run counts behind the six evaluation histograms.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistributionProfile {
    pub start: Vec<u64>,
    pub end: Vec<u64>,
    /// Bin `i` counts runs of `i + 1` slots; longer runs land in the last bin.
    pub duration: Vec<u64>,
    pub activity_type: Vec<u64>,
    pub work_start: Vec<u64>,
    pub work_end: Vec<u64>,
}

impl Default for DistributionProfile {
    fn default() -> Self {
        DistributionProfile {
            start: vec![0; DAY],
            end: vec![0; DAY],
            duration: vec![0; DAY],
            activity_type: vec![0; NUM_ACTIVITY_TYPES],
            work_start: vec![0; DAY],
            work_end: vec![0; DAY],
        }
    }
}

/// The six histograms in report order.
pub const METRICS: [&str; 6] = [
    "start",
    "end",
    "duration",
    "type",
    "work_start",
    "work_end",
];

pub fn normalized(counts: &[u64]) -> Vec<f64> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return vec![0.0; counts.len()];
    }
    counts.iter().map(|&c| c as f64 / total as f64).collect()
}

impl DistributionProfile {
    pub fn runs(&self) -> u64 {
        self.activity_type.iter().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.runs() == 0
    }

    pub fn histogram(&self, metric: &str) -> Option<&[u64]> {
        Some(match metric {
            "start" => &self.start,
            "end" => &self.end,
            "duration" => &self.duration,
            "type" => &self.activity_type,
            "work_start" => &self.work_start,
            "work_end" => &self.work_end,
            _ => return None,
        })
    }

    fn record(&mut self, kind: ActivityType, start: usize, end: usize) {
        let len = end - start;
        self.start[start % DAY] += 1;
        self.end[end % DAY] += 1;
        self.duration[len.min(DAY) - 1] += 1;
        self.activity_type[kind.index()] += 1;
        if kind == ActivityType::Work {
            self.work_start[start % DAY] += 1;
            self.work_end[end % DAY] += 1;
        }
    }

    /// Records the observed runs that reach into day 2. A run continuing
    /// from day 1 keeps its day-1 start and its full merged length.
    pub fn add_pair(&mut self, pair: &AgentDayPair) {
        for run in concat_days(pair).runs() {
            if run.end > DAY {
                self.record(run.kind, run.start, run.end);
            }
        }
    }

    /// Records the observed runs of a single day.
    pub fn add_day(&mut self, grid: &DayGrid, mask: &ObservationMask) {
        for run in runs_of(&grid.0, &mask.0) {
            self.record(run.kind, run.start, run.end);
        }
    }

    pub fn merge(&mut self, other: &DistributionProfile) {
        let pairs = [
            (&mut self.start, &other.start),
            (&mut self.end, &other.end),
            (&mut self.duration, &other.duration),
            (&mut self.activity_type, &other.activity_type),
            (&mut self.work_start, &other.work_start),
            (&mut self.work_end, &other.work_end),
        ];
        for (a, b) in pairs {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
}

pub fn profile<'a>(pairs: impl IntoIterator<Item = &'a AgentDayPair>) -> DistributionProfile {
    let mut p = DistributionProfile::default();
    for pair in pairs {
        p.add_pair(pair);
    }
    p
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub start: f64,
    pub end: f64,
    pub duration: f64,
    #[serde(rename = "type")]
    pub activity_type: f64,
    pub work_start: f64,
    pub work_end: f64,
    /// Mean of start, end, duration and type.
    pub average: f64,
    pub pairs: usize,
    pub reference_runs: u64,
    pub generated_runs: u64,
}

impl EvalReport {
    pub fn compare(reference: &DistributionProfile, generated: &DistributionProfile, pairs: usize) -> Self {
        let d = |metric: &str| {
            jsd(
                &normalized(reference.histogram(metric).expect("metric")),
                &normalized(generated.histogram(metric).expect("metric")),
            )
        };
        let (start, end, duration, activity_type) = (d("start"), d("end"), d("duration"), d("type"));
        EvalReport {
            start,
            end,
            duration,
            activity_type,
            work_start: d("work_start"),
            work_end: d("work_end"),
            average: (start + end + duration + activity_type) / 4.0,
            pairs,
            reference_runs: reference.runs(),
            generated_runs: generated.runs(),
        }
    }

    pub fn value(&self, metric: &str) -> Option<f64> {
        Some(match metric {
            "start" => self.start,
            "end" => self.end,
            "duration" => self.duration,
            "type" => self.activity_type,
            "work_start" => self.work_start,
            "work_end" => self.work_end,
            _ => return None,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalOptions {
    pub decoding: Decoding,
    pub seed: u64,
    /// Score generated day 2 only on the slots observed in the reference.
    pub observed_only: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            decoding: Decoding::Greedy,
            seed: 0,
            observed_only: true,
        }
    }
}

/// Replaces each pair's day 2 with a fully observed generated day.
pub fn generate_day2<F: Scalar>(
    model: &Model,
    store: &ParamStore<F>,
    pairs: &[AgentDayPair],
    decoding: Decoding,
    seed: u64,
) -> Result<Vec<AgentDayPair>> {
    pairs
        .par_iter()
        .enumerate()
        .map(|(i, pair)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let day2 = model.generate(store, &pair.day1, &pair.mask1, decoding, &mut rng)?;
            Ok(AgentDayPair {
                day2,
                mask2: ObservationMask::full(),
                ..pair.clone()
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub report: EvalReport,
    pub reference: DistributionProfile,
    pub generated: DistributionProfile,
}

pub fn evaluate<F: Scalar>(
    model: &Model,
    store: &ParamStore<F>,
    test: &[AgentDayPair],
    options: &EvalOptions,
) -> Result<Evaluation> {
    if test.is_empty() {
        return Err(Error::Usage("evaluation needs a non-empty test split".into()));
    }
    let mut generated = generate_day2(model, store, test, options.decoding, options.seed)?;
    if options.observed_only {
        for (g, r) in generated.iter_mut().zip(test) {
            g.mask2 = r.mask2;
            g.day2 = g.day2.masked(&r.mask2);
        }
    }
    let reference = profile(test);
    let generated = profile(&generated);
    Ok(Evaluation {
        report: EvalReport::compare(&reference, &generated, test.len()),
        reference,
        generated,
    })
}

/// Which shift-work criteria a pair meets on its observed slots.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShiftVerdict {
    /// Work during 18:00–22:00.
    pub evening_work: bool,
    /// A work run continuing through midnight between the two days.
    pub crosses_midnight: bool,
    /// A long work run touching 22:00–06:00.
    pub sustained_overnight: bool,
}

impl ShiftVerdict {
    pub fn is_shift(&self) -> bool {
        self.evening_work || self.crosses_midnight || self.sustained_overnight
    }
}

/// Work runs of at least this many slots touching the overnight band count
/// as sustained night work (2 hours).
pub const SUSTAINED_MIN_SLOTS: usize = 8;

pub fn classify_shift(pair: &AgentDayPair, sustained_min: usize) -> ShiftVerdict {
    let grid = concat_days(pair);
    let evening_work = grid.codes.iter().zip(&grid.observed).enumerate().any(|(t, (&c, &o))| {
        o && c == Some(ActivityType::Work) && (72..88).contains(&(t % DAY))
    });
    let mut verdict = ShiftVerdict {
        evening_work,
        ..ShiftVerdict::default()
    };
    for run in grid.runs() {
        if run.kind != ActivityType::Work {
            continue;
        }
        if run.start < DAY && run.end > DAY {
            verdict.crosses_midnight = true;
        }
        if run.len() >= sustained_min
            && (run.start..run.end).any(|t| period_of_index(t) == PeriodId::Overnight)
        {
            verdict.sustained_overnight = true;
        }
    }
    verdict
}

pub fn is_shift_worker(pair: &AgentDayPair) -> ShiftVerdict {
    classify_shift(pair, SUSTAINED_MIN_SLOTS)
}

/// Writes `<prefix>report.json` and one `<prefix><metric>.csv` per
/// histogram with columns `bin,reference,generated`.
pub fn emit_report(
    report: &EvalReport,
    reference: &DistributionProfile,
    generated: &DistributionProfile,
    prefix: impl AsRef<Path>,
) -> Result<Vec<PathBuf>> {
    let prefix = prefix.as_ref().to_string_lossy().into_owned();
    let mut written = Vec::new();
    let write = |path: PathBuf, body: String| -> Result<PathBuf> {
        fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    };
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    written.push(write(PathBuf::from(format!("{prefix}report.json")), json + "\n")?);
    for metric in METRICS {
        let r = normalized(reference.histogram(metric).expect("metric"));
        let g = normalized(generated.histogram(metric).expect("metric"));
        let mut body = String::from("bin,reference,generated\n");
        for (i, (a, b)) in r.iter().zip(&g).enumerate() {
            let bin = if metric == "duration" { i + 1 } else { i };
            let _ = writeln!(body, "{bin},{a:.9},{b:.9}");
        }
        written.push(write(PathBuf::from(format!("{prefix}{metric}.csv")), body)?);
    }
    Ok(written)
}
