//! Synthetic two-day activity schedules for shift and regular workers,
//! with observation gaps concentrated overnight.
//!
//! Each pair is drawn from a 192-slot latent schedule: work blocks from the
//! template's shift options (a night shift begun the evening before day 1
//! shows up as work from midnight), optional meal breaks inside work,
//! discretionary outings while awake, and Home everywhere else. The gap
//! model then hides slots; codes are never altered.

use std::fmt;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::activity::{concat_days, ActivityType, AgentDayPair, DayGrid, ObservationMask, SLOTS_PER_DAY};
use crate::corpus::{Corpus, SplitFractions};
use crate::error::{Error, Result};
use crate::eval::is_shift_worker;
use crate::model::{period_of_index, PeriodId};

const DAY: usize = SLOTS_PER_DAY;
const SPAN: usize = 2 * DAY;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateKind {
    NightFixed,
    NightRotating,
    EveningShift,
    DayWorker,
}

impl TemplateKind {
    pub const ALL: [TemplateKind; 4] = [
        TemplateKind::NightFixed,
        TemplateKind::NightRotating,
        TemplateKind::EveningShift,
        TemplateKind::DayWorker,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TemplateKind::NightFixed => "night_fixed",
            TemplateKind::NightRotating => "night_rotating",
            TemplateKind::EveningShift => "evening_shift",
            TemplateKind::DayWorker => "day_worker",
        }
    }

    pub fn is_shift(self) -> bool {
        self != TemplateKind::DayWorker
    }
}

impl fmt::Display for TemplateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One way of working a day: a clamped normal start slot and a uniform
/// duration. Starts may run past midnight into the next day.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftOption {
    pub weight: f64,
    pub start_mean: f64,
    pub start_sd: f64,
    pub start_min: usize,
    pub start_max: usize,
    pub duration_min: usize,
    pub duration_max: usize,
}

impl ShiftOption {
    fn sample(&self, rng: &mut impl Rng) -> (usize, usize) {
        let start = self.clamp_start(normal(self.start_mean, self.start_sd, rng));
        let len = rng.random_range(self.duration_min..=self.duration_max);
        (start, len)
    }

    fn clamp_start(&self, z: f64) -> usize {
        (z.round().max(0.0) as usize).clamp(self.start_min, self.start_max)
    }

    /// The agent's habitual `(start, length)` perturbed for one day.
    fn vary(&self, habit: (usize, usize), routine: &Routine, rng: &mut impl Rng) -> (usize, usize) {
        let start = self.clamp_start(normal(habit.0 as f64, routine.start_jitter, rng));
        let j = routine.duration_jitter as i64;
        let len = (habit.1 as i64 + rng.random_range(-j..=j))
            .clamp(self.duration_min as i64, self.duration_max as i64) as usize;
        (start, len)
    }
}

fn normal(mean: f64, sd: f64, rng: &mut impl Rng) -> f64 {
    if sd <= 0.0 {
        return mean;
    }
    Normal::new(mean, sd).expect("finite sd").sample(rng)
}

/// How closely an agent's days follow personal habits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Routine {
    /// Day-to-day standard deviation of the shift start around the
    /// agent's habitual start, in slots.
    pub start_jitter: f64,
    /// Largest day-to-day change of the shift length, in slots.
    pub duration_jitter: usize,
    /// Probability that an outing of day 1 recurs at the same time on day 2.
    pub repeat_outings: f64,
}

impl Default for Routine {
    fn default() -> Self {
        Routine {
            start_jitter: 0.5,
            duration_jitter: 1,
            repeat_outings: 0.9,
        }
    }
}

/// When the agent sleeps, which bounds where outings can go.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SleepRule {
    /// Earliest outing slot on a day without a finished night shift.
    pub wake: usize,
    /// Outings end by this slot.
    pub bedtime: usize,
    /// Slots of sleep after a shift that ends in the morning.
    pub after_night_shift: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleTemplate {
    pub kind: TemplateKind,
    pub shifts: Vec<ShiftOption>,
    /// Probability that a day repeats the previous day's shift option.
    pub keep_shift: f64,
    /// Probability of working on any given day.
    pub work_rate: f64,
    /// Probability that a work block is split by a meal out.
    pub meal_break_rate: f64,
    pub sleep: SleepRule,
    /// Expected outings per day.
    pub discretionary_rate: f64,
    #[serde(default)]
    pub routine: Routine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapModel {
    /// Per-slot probability of a gap starting, indexed by period.
    pub hazard: [f64; 4],
    /// Extra factor on the overnight hazard.
    pub overnight_multiplier: f64,
    /// Mean gap length in slots (one plus a geometric count).
    pub mean_length: f64,
}

impl Default for GapModel {
    fn default() -> Self {
        GapModel {
            hazard: [0.0105; 4],
            overnight_multiplier: 5.4,
            mean_length: 7.5,
        }
    }
}

impl GapModel {
    pub fn validate(&self) -> Result<()> {
        let ok = self.hazard.iter().all(|h| (0.0..1.0).contains(h))
            && self.overnight_multiplier >= 0.0
            && self.mean_length >= 1.0
            && self.hazard[PeriodId::Overnight.index()] * self.overnight_multiplier < 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid gap model {self:?}")))
        }
    }

    fn hazard_at(&self, t: usize) -> f64 {
        let p = period_of_index(t);
        let h = self.hazard[p.index()];
        if p == PeriodId::Overnight {
            h * self.overnight_multiplier
        } else {
            h
        }
    }

    /// Expected fraction of observed slots, ignoring gap overlap.
    pub fn expected_observed(&self) -> f64 {
        let hidden: f64 = (0..DAY).map(|t| self.hazard_at(t)).sum::<f64>() * self.mean_length;
        (1.0 - hidden / DAY as f64).max(0.0)
    }

    /// Masks for both days from one pass over the 192 slots.
    pub fn sample(&self, rng: &mut impl Rng) -> (ObservationMask, ObservationMask) {
        let mut seen = [true; SPAN];
        let extra = 1.0 / self.mean_length;
        let mut t = 0;
        while t < SPAN {
            if rng.random::<f64>() < self.hazard_at(t) {
                let mut len = 1;
                while rng.random::<f64>() >= extra {
                    len += 1;
                }
                for s in seen.iter_mut().skip(t).take(len) {
                    *s = false;
                }
                t += len;
            } else {
                t += 1;
            }
        }
        let mut m1 = ObservationMask::full();
        let mut m2 = ObservationMask::full();
        m1.0.copy_from_slice(&seen[..DAY]);
        m2.0.copy_from_slice(&seen[DAY..]);
        (m1, m2)
    }
}

const OUTINGS: [(ActivityType, f64); 12] = [
    (ActivityType::ShopGoods, 0.18),
    (ActivityType::ShopServices, 0.06),
    (ActivityType::MealsOut, 0.14),
    (ActivityType::Errands, 0.1),
    (ActivityType::Leisure, 0.12),
    (ActivityType::Exercise, 0.1),
    (ActivityType::Social, 0.1),
    (ActivityType::Healthcare, 0.03),
    (ActivityType::Worship, 0.02),
    (ActivityType::Caregiving, 0.05),
    (ActivityType::PickupDrop, 0.07),
    (ActivityType::Other, 0.03),
];

/// Complete two-day schedule before gaps.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LatentSchedule {
    pub slots: [ActivityType; SPAN],
}

impl LatentSchedule {
    pub fn days(&self) -> (DayGrid, DayGrid) {
        let mut d1 = DayGrid::unobserved();
        let mut d2 = DayGrid::unobserved();
        for t in 0..DAY {
            d1.0[t] = Some(self.slots[t]);
            d2.0[t] = Some(self.slots[DAY + t]);
        }
        (d1, d2)
    }
}

fn pick_shift(template: &ScheduleTemplate, prev: Option<usize>, rng: &mut impl Rng) -> usize {
    if let Some(p) = prev {
        if rng.random::<f64>() < template.keep_shift {
            return p;
        }
    }
    let weights: Vec<f64> = template.shifts.iter().map(|s| s.weight).collect();
    WeightedIndex::new(&weights)
        .expect("template shift weights")
        .sample(rng)
}

pub fn sample_schedule(template: &ScheduleTemplate, rng: &mut impl Rng) -> LatentSchedule {
    let mut slots = [ActivityType::Home; SPAN];

    // Day 0 is the day before day 1; only its spill past midnight matters.
    let mut prev = None;
    let mut awake_from = [template.sleep.wake; 2];
    let mut awake_to = [template.sleep.bedtime; 2];
    let routine = &template.routine;
    let habits: Vec<(usize, usize)> = template.shifts.iter().map(|s| s.sample(rng)).collect();
    let mut blocks: Vec<(isize, isize)> = Vec::new();
    for day in 0..3 {
        let option = pick_shift(template, prev, rng);
        prev = Some(option);
        if rng.random::<f64>() >= template.work_rate {
            continue;
        }
        let (start, len) = template.shifts[option].vary(habits[option], routine, rng);
        let from = (day as isize - 1) * DAY as isize + start as isize;
        let to = from + len as isize;
        if to <= 0 {
            continue;
        }
        blocks.push((from, to));
        for t in from.max(0)..to.min(SPAN as isize) {
            slots[t as usize] = ActivityType::Work;
        }
    }

    for &(from, to) in &blocks {
        for (d, (lo, hi)) in awake_from.iter_mut().zip(awake_to.iter_mut()).enumerate() {
            let base = (d * DAY) as isize;
            // A shift ending this morning pushes outings past the sleep.
            if from < base && to > base && to < base + DAY as isize / 2 {
                *lo = (*lo).max((to - base) as usize + template.sleep.after_night_shift);
            }
            // A shift starting this afternoon or evening ends outings early.
            if from >= base + DAY as isize / 2 && from < base + DAY as isize {
                *hi = (*hi).min(((from - base) as usize).saturating_sub(2));
            }
        }
    }

    let meal = (rng.random::<f64>() < template.meal_break_rate)
        .then(|| (rng.random_range(2..=4i64) as isize, rng.random_range(40..=55i64) as isize));
    for &(from, to) in &blocks {
        if let Some((len, at)) = meal {
            let mid = from + (to - from) * at / 100;
            if mid > 0 && mid + len < to && mid + len < SPAN as isize {
                for t in mid..mid + len {
                    slots[t as usize] = ActivityType::MealsOut;
                }
            }
        }
    }

    let kinds: Vec<f64> = OUTINGS.iter().map(|o| o.1).collect();
    let kind_dist = WeightedIndex::new(&kinds).expect("outing weights");
    let poisson = |rate: f64| (rate > 0.0).then(|| Poisson::new(rate).expect("positive rate"));
    let first_day = poisson(template.discretionary_rate);
    let fresh = poisson(template.discretionary_rate * (1.0 - routine.repeat_outings));
    let mut day1_outings = Vec::new();
    for d in 0..2 {
        let (lo, hi) = (awake_from[d], awake_to[d].min(DAY));
        if d == 1 {
            for &(s, len, kind) in &day1_outings {
                if rng.random::<f64>() < routine.repeat_outings
                    && s >= lo
                    && s + len <= hi
                    && slots[DAY + s..DAY + s + len].iter().all(|&k| k == ActivityType::Home)
                {
                    slots[DAY + s..DAY + s + len].fill(kind);
                }
            }
        }
        let dist = if d == 0 { &first_day } else { &fresh };
        let n = dist.as_ref().map_or(0, |p| p.sample(rng) as usize);
        for _ in 0..n {
            let len = rng.random_range(2..=8);
            if hi < lo + len {
                break;
            }
            for _attempt in 0..10 {
                let s = rng.random_range(lo..=hi - len);
                if slots[d * DAY + s..d * DAY + s + len].iter().all(|&k| k == ActivityType::Home) {
                    let kind = OUTINGS[kind_dist.sample(rng)].0;
                    slots[d * DAY + s..d * DAY + s + len].fill(kind);
                    if d == 0 {
                        day1_outings.push((s, len, kind));
                    }
                    break;
                }
            }
        }
    }
    LatentSchedule { slots }
}

pub fn sample_agent_pair(
    agent_id: impl Into<String>,
    template: &ScheduleTemplate,
    gaps: &GapModel,
    rng: &mut impl Rng,
) -> AgentDayPair {
    let latent = sample_schedule(template, rng);
    let (d1, d2) = latent.days();
    let (m1, m2) = gaps.sample(rng);
    let mut pair = AgentDayPair::from_latent(agent_id, &d1, m1, &d2, m2);
    pair.shift_label = Some(template.kind.is_shift());
    pair
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixEntry {
    pub template: ScheduleTemplate,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub mix: Vec<MixEntry>,
    pub gaps: GapModel,
    /// Redraw shift-template pairs until the classifier accepts them, as a
    /// shift-worker corpus selected by the same criteria would be.
    pub require_shift_criteria: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    ShiftOnly,
    Population,
}

impl Preset {
    pub fn parse(name: &str) -> Result<Preset> {
        match name {
            "shift_only" => Ok(Preset::ShiftOnly),
            "population" => Ok(Preset::Population),
            other => Err(Error::Usage(format!(
                "unknown preset {other:?} (expected shift_only or population)"
            ))),
        }
    }
}

fn shift(weight: f64, mean: f64, sd: f64, range: (usize, usize), dur: (usize, usize)) -> ShiftOption {
    ShiftOption {
        weight,
        start_mean: mean,
        start_sd: sd,
        start_min: range.0,
        start_max: range.1,
        duration_min: dur.0,
        duration_max: dur.1,
    }
}

const DAY_SLEEP: SleepRule = SleepRule {
    wake: 26,
    bedtime: 90,
    after_night_shift: 28,
};

/// Default parameters of each template kind.
pub fn template(kind: TemplateKind) -> ScheduleTemplate {
    let night = shift(1.0, 88.0, 1.5, (84, 91), (32, 40));
    match kind {
        TemplateKind::NightFixed => ScheduleTemplate {
            kind,
            shifts: vec![night],
            keep_shift: 1.0,
            work_rate: 0.97,
            meal_break_rate: 0.0,
            sleep: DAY_SLEEP,
            discretionary_rate: 0.85,
            routine: Routine::default(),
        },
        TemplateKind::NightRotating => ScheduleTemplate {
            kind,
            shifts: vec![
                shift(0.46, 21.0, 1.5, (17, 23), (32, 36)),
                shift(0.26, 60.0, 3.0, (54, 66), (30, 34)),
                shift(0.11, 88.0, 1.5, (84, 91), (32, 40)),
                shift(0.17, 98.0, 2.0, (94, 102), (32, 36)),
            ],
            keep_shift: 0.85,
            work_rate: 0.9,
            meal_break_rate: 0.2,
            sleep: DAY_SLEEP,
            discretionary_rate: 0.85,
            routine: Routine::default(),
        },
        TemplateKind::EveningShift => ScheduleTemplate {
            kind,
            shifts: vec![shift(1.0, 60.0, 3.0, (52, 68), (30, 36))],
            keep_shift: 1.0,
            work_rate: 0.9,
            meal_break_rate: 0.2,
            sleep: DAY_SLEEP,
            discretionary_rate: 0.85,
            routine: Routine::default(),
        },
        TemplateKind::DayWorker => ScheduleTemplate {
            kind,
            shifts: vec![shift(1.0, 32.0, 2.5, (26, 38), (30, 34))],
            keep_shift: 1.0,
            work_rate: 0.92,
            meal_break_rate: 0.27,
            sleep: DAY_SLEEP,
            discretionary_rate: 1.7,
            routine: Routine::default(),
        },
    }
}

impl SynthConfig {
    pub fn preset(preset: Preset) -> SynthConfig {
        let weights: [(TemplateKind, f64); 4] = match preset {
            Preset::ShiftOnly => [
                (TemplateKind::NightFixed, 0.4),
                (TemplateKind::NightRotating, 0.35),
                (TemplateKind::EveningShift, 0.25),
                (TemplateKind::DayWorker, 0.0),
            ],
            Preset::Population => [
                (TemplateKind::NightFixed, 0.08),
                (TemplateKind::NightRotating, 0.15),
                (TemplateKind::EveningShift, 0.1),
                (TemplateKind::DayWorker, 0.67),
            ],
        };
        SynthConfig {
            mix: weights
                .iter()
                .filter(|w| w.1 > 0.0)
                .map(|&(kind, weight)| MixEntry {
                    template: template(kind),
                    weight,
                })
                .collect(),
            gaps: GapModel::default(),
            require_shift_criteria: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.gaps.validate()?;
        let total: f64 = self.mix.iter().map(|m| m.weight).sum();
        if self.mix.is_empty() || (total - 1.0).abs() > 1e-6 || self.mix.iter().any(|m| m.weight < 0.0) {
            return Err(Error::Config(format!(
                "template proportions must be non-negative and sum to 1, got {total}"
            )));
        }
        for m in &self.mix {
            let t = &m.template;
            let shifts_ok = !t.shifts.is_empty()
                && t.shifts.iter().all(|s| {
                    s.weight >= 0.0
                        && s.start_min <= s.start_max
                        && s.duration_min >= 1
                        && s.duration_min <= s.duration_max
                })
                && t.shifts.iter().any(|s| s.weight > 0.0);
            let probs_ok = [t.keep_shift, t.work_rate, t.meal_break_rate, t.routine.repeat_outings]
                .iter()
                .all(|p| (0.0..=1.0).contains(p))
                && t.routine.start_jitter.is_finite()
                && t.routine.start_jitter >= 0.0;
            if !shifts_ok || !probs_ok || t.discretionary_rate < 0.0 {
                return Err(Error::Config(format!("invalid {} template", t.kind)));
            }
        }
        Ok(())
    }
}

/// Tries per shift-template pair before giving up on the criteria.
const MAX_REDRAWS: usize = 200;

/// Deterministic given `seed`: pair `i` draws from its own stream, so the
/// corpus does not depend on generation order.
pub fn generate_corpus(n_pairs: usize, config: &SynthConfig, seed: u64) -> Result<Corpus> {
    config.validate()?;
    let weights: Vec<f64> = config.mix.iter().map(|m| m.weight).collect();
    let choose = WeightedIndex::new(&weights).map_err(|e| Error::Config(e.to_string()))?;
    let pairs = (0..n_pairs)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let template = &config.mix[choose.sample(&mut rng)].template;
            let id = format!("agent{i:06}");
            let mut pair = sample_agent_pair(id.clone(), template, &config.gaps, &mut rng);
            if config.require_shift_criteria && template.kind.is_shift() {
                for _ in 0..MAX_REDRAWS {
                    if is_shift_worker(&pair).is_shift() {
                        break;
                    }
                    pair = sample_agent_pair(id.clone(), template, &config.gaps, &mut rng);
                }
            }
            pair
        })
        .collect();
    let mut corpus = Corpus { pairs };
    corpus.assign_splits(SplitFractions::default(), seed);
    Ok(corpus)
}

/// Band labels for the four six-hour start bands.
pub const BANDS: [&str; 4] = ["00-06", "06-12", "12-18", "18-24"];
/// Reference work-start shares per band, in percent.
pub const WORK_START_TARGETS: [f64; 4] = [18.5, 52.2, 21.8, 7.5];
/// Reference home-start shares per band, in percent.
pub const HOME_START_TARGETS: [f64; 4] = [35.3, 15.4, 25.3, 24.0];
/// Deviations above this many percentage points are flagged.
pub const CALIBRATION_TOLERANCE: f64 = 5.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandShare {
    pub band: String,
    /// `None` when there are no starts to share out.
    pub observed: Option<f64>,
    pub target: f64,
    pub deviation: Option<f64>,
    pub flagged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub work_starts: u64,
    pub home_starts: u64,
    pub work: Vec<BandShare>,
    pub home: Vec<BandShare>,
}

impl CalibrationReport {
    pub fn max_deviation(&self) -> Option<f64> {
        self.work
            .iter()
            .chain(&self.home)
            .map(|b| b.deviation)
            .try_fold(0.0f64, |m, d| d.map(|d| m.max(d)))
    }

    pub fn any_flagged(&self) -> bool {
        self.work.iter().chain(&self.home).any(|b| b.flagged)
    }
}

/// Start slots of observed runs of `kind`, each day read as its own chain
/// (a day that begins mid-activity starts it at midnight).
pub fn start_band_counts(corpus: &Corpus, kind: ActivityType) -> [u64; 4] {
    let mut counts = [0u64; 4];
    for pair in &corpus.pairs {
        let grid = concat_days(pair);
        for t in 0..SPAN {
            let here = grid.observed[t] && grid.codes[t] == Some(kind);
            let day_start = t % DAY == 0;
            let continues = !day_start && grid.observed[t - 1] && grid.codes[t - 1] == Some(kind);
            if here && !continues {
                counts[(t % DAY) / 24] += 1;
            }
        }
    }
    counts
}

fn shares(counts: [u64; 4], targets: [f64; 4]) -> Vec<BandShare> {
    let total: u64 = counts.iter().sum();
    (0..4)
        .map(|b| {
            let observed = (total > 0).then(|| 100.0 * counts[b] as f64 / total as f64);
            let deviation = observed.map(|o| (o - targets[b]).abs());
            BandShare {
                band: BANDS[b].to_string(),
                observed,
                target: targets[b],
                deviation,
                flagged: deviation.is_none_or(|d| d > CALIBRATION_TOLERANCE),
            }
        })
        .collect()
}

pub fn calibration_report(corpus: &Corpus) -> CalibrationReport {
    let work = start_band_counts(corpus, ActivityType::Work);
    let home = start_band_counts(corpus, ActivityType::Home);
    CalibrationReport {
        work_starts: work.iter().sum(),
        home_starts: home.iter().sum(),
        work: shares(work, WORK_START_TARGETS),
        home: shares(home, HOME_START_TARGETS),
    }
}
