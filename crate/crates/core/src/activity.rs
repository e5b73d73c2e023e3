//! Activity chains on the 96-slot day grid.
//!
//! Slots are 0-based: slot `i` covers minutes `[15·i, 15·(i+1))` after
//! midnight, so 18:00 is slot 72. Survey-style 1-based slot numbers
//! (1..=96) are one greater than the indices used here. Activity ends are
//! exclusive, so a day's durations always sum to 96.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SLOTS_PER_DAY: usize = 96;
pub const NUM_ACTIVITY_TYPES: usize = 15;

/// The fifteen activity categories. Discriminants are the on-disk codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum ActivityType {
    Home = 1,
    Work = 2,
    School = 3,
    Caregiving = 4,
    ShopGoods = 5,
    ShopServices = 6,
    MealsOut = 7,
    Errands = 8,
    Leisure = 9,
    Exercise = 10,
    Social = 11,
    Healthcare = 12,
    Worship = 13,
    Other = 14,
    PickupDrop = 15,
}

impl ActivityType {
    pub const ALL: [ActivityType; NUM_ACTIVITY_TYPES] = [
        ActivityType::Home,
        ActivityType::Work,
        ActivityType::School,
        ActivityType::Caregiving,
        ActivityType::ShopGoods,
        ActivityType::ShopServices,
        ActivityType::MealsOut,
        ActivityType::Errands,
        ActivityType::Leisure,
        ActivityType::Exercise,
        ActivityType::Social,
        ActivityType::Healthcare,
        ActivityType::Worship,
        ActivityType::Other,
        ActivityType::PickupDrop,
    ];

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            1..=15 => Ok(Self::ALL[code as usize - 1]),
            _ => Err(Error::Record(format!(
                "activity code {code} outside 1..=15"
            ))),
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    /// Zero-based class index used by the models (code − 1).
    pub fn index(self) -> usize {
        self as usize - 1
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ActivityType::Home => "Home",
            ActivityType::Work => "Work",
            ActivityType::School => "School",
            ActivityType::Caregiving => "Caregiving",
            ActivityType::ShopGoods => "Shop goods",
            ActivityType::ShopServices => "Shop services",
            ActivityType::MealsOut => "Meals out",
            ActivityType::Errands => "Errands",
            ActivityType::Leisure => "Leisure",
            ActivityType::Exercise => "Exercise",
            ActivityType::Social => "Social",
            ActivityType::Healthcare => "Healthcare",
            ActivityType::Worship => "Worship",
            ActivityType::Other => "Other",
            ActivityType::PickupDrop => "Pickup/Drop",
        }
    }
}

impl fmt::Display for ActivityType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A 15-minute interval of the day, `0..=95`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TimeSlot(u8);

impl TimeSlot {
    pub fn new(index: usize) -> Result<Self> {
        if index < SLOTS_PER_DAY {
            Ok(TimeSlot(index as u8))
        } else {
            Err(Error::Chain(format!("time slot {index} outside 0..=95")))
        }
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    /// Minutes after midnight at which the slot begins.
    pub fn start_minute(self) -> u32 {
        self.0 as u32 * 15
    }
}

/// One activity `[start, end)` in slot units.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Activity {
    pub kind: ActivityType,
    pub start: usize,
    pub end: usize,
}

impl Activity {
    pub fn new(kind: ActivityType, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > SLOTS_PER_DAY {
            return Err(Error::Chain(format!(
                "{kind} [{start}, {end}) is not a non-empty interval within the day"
            )));
        }
        Ok(Activity { kind, start, end })
    }

    pub fn duration(&self) -> usize {
        self.end - self.start
    }
}

/// One day of slot codes; `None` marks an unobserved slot.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct DayGrid(pub [Option<ActivityType>; SLOTS_PER_DAY]);

impl DayGrid {
    pub fn unobserved() -> Self {
        DayGrid([None; SLOTS_PER_DAY])
    }

    pub fn filled(kind: ActivityType) -> Self {
        DayGrid([Some(kind); SLOTS_PER_DAY])
    }

    pub fn slots(&self) -> &[Option<ActivityType>] {
        &self.0
    }

    pub fn get(&self, slot: usize) -> Option<ActivityType> {
        self.0[slot]
    }

    pub fn is_complete(&self) -> bool {
        self.0.iter().all(Option::is_some)
    }

    /// Copy with every slot whose mask bit is 0 set to unobserved.
    pub fn masked(&self, mask: &ObservationMask) -> DayGrid {
        let mut out = *self;
        for (slot, &seen) in out.0.iter_mut().zip(mask.0.iter()) {
            if !seen {
                *slot = None;
            }
        }
        out
    }
}

impl fmt::Debug for DayGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let codes: Vec<u8> = self.0.iter().map(|s| s.map_or(0, |k| k.code())).collect();
        f.debug_tuple("DayGrid").field(&codes).finish()
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct ObservationMask(pub [bool; SLOTS_PER_DAY]);

impl ObservationMask {
    pub fn full() -> Self {
        ObservationMask([true; SLOTS_PER_DAY])
    }

    pub fn empty() -> Self {
        ObservationMask([false; SLOTS_PER_DAY])
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn observed_count(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    /// True when every observed bit here is also observed in `other`.
    pub fn is_subset_of(&self, other: &ObservationMask) -> bool {
        self.0.iter().zip(other.0.iter()).all(|(&a, &b)| !a || b)
    }
}

impl fmt::Debug for ObservationMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let bits: String = self.0.iter().map(|&b| if b { '1' } else { '0' }).collect();
        f.debug_tuple("ObservationMask").field(&bits).finish()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Two consecutive observed days of one agent.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AgentDayPair {
    pub agent_id: String,
    pub day1: DayGrid,
    pub day2: DayGrid,
    pub mask1: ObservationMask,
    pub mask2: ObservationMask,
    pub shift_label: Option<bool>,
    pub split: Option<Split>,
}

impl AgentDayPair {
    /// Builds a pair, enforcing that a slot is unobserved exactly when its
    /// mask bit is 0.
    pub fn new(
        agent_id: impl Into<String>,
        day1: DayGrid,
        mask1: ObservationMask,
        day2: DayGrid,
        mask2: ObservationMask,
    ) -> Result<Self> {
        let pair = AgentDayPair {
            agent_id: agent_id.into(),
            day1,
            day2,
            mask1,
            mask2,
            shift_label: None,
            split: None,
        };
        pair.validate()?;
        Ok(pair)
    }

    pub fn validate(&self) -> Result<()> {
        for (day, grid, mask) in [(1, &self.day1, &self.mask1), (2, &self.day2, &self.mask2)] {
            for t in 0..SLOTS_PER_DAY {
                if grid.0[t].is_some() != mask.0[t] {
                    return Err(Error::Record(format!(
                        "day{day} slot {t}: code and mask bit disagree"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Builds a pair from complete grids by hiding every unobserved slot.
    pub fn from_latent(
        agent_id: impl Into<String>,
        day1: &DayGrid,
        mask1: ObservationMask,
        day2: &DayGrid,
        mask2: ObservationMask,
    ) -> Self {
        AgentDayPair {
            agent_id: agent_id.into(),
            day1: day1.masked(&mask1),
            day2: day2.masked(&mask2),
            mask1,
            mask2,
            shift_label: None,
            split: None,
        }
    }
}

/// A maximal run of one observed code in a slot sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Run {
    pub kind: ActivityType,
    pub start: usize,
    pub end: usize,
}

impl Run {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

/// Run-length encodes `codes`; unobserved slots terminate runs.
pub fn runs_of(codes: &[Option<ActivityType>], observed: &[bool]) -> Vec<Run> {
    let mut runs = Vec::new();
    let mut current: Option<Run> = None;
    for (t, (&code, &seen)) in codes.iter().zip(observed).enumerate() {
        let code = if seen { code } else { None };
        match (current.as_mut(), code) {
            (Some(run), Some(kind)) if run.kind == kind => run.end = t + 1,
            (_, Some(kind)) => {
                runs.extend(current.take());
                current = Some(Run {
                    kind,
                    start: t,
                    end: t + 1,
                });
            }
            (_, None) => runs.extend(current.take()),
        }
    }
    runs.extend(current);
    runs
}

/// Materializes a chain on the grid. Uncovered slots stay unobserved.
pub fn chain_to_grid(chain: &[Activity]) -> Result<(DayGrid, ObservationMask)> {
    let mut sorted: Vec<Activity> = chain.to_vec();
    sorted.sort_by_key(|a| (a.start, a.end));
    for w in sorted.windows(2) {
        if w[1].start < w[0].end {
            return Err(Error::Chain(format!(
                "{} [{}, {}) overlaps {} [{}, {})",
                w[0].kind, w[0].start, w[0].end, w[1].kind, w[1].start, w[1].end
            )));
        }
    }
    let mut grid = DayGrid::unobserved();
    let mut mask = ObservationMask::empty();
    for a in &sorted {
        if a.start >= a.end || a.end > SLOTS_PER_DAY {
            return Err(Error::Chain(format!(
                "{} [{}, {}) is not a valid interval",
                a.kind, a.start, a.end
            )));
        }
        for t in a.start..a.end {
            grid.0[t] = Some(a.kind);
            mask.0[t] = true;
        }
    }
    Ok((grid, mask))
}

pub fn grid_to_chain(grid: &DayGrid, mask: &ObservationMask) -> Vec<Activity> {
    runs_of(&grid.0, &mask.0)
        .into_iter()
        .map(|r| Activity {
            kind: r.kind,
            start: r.start,
            end: r.end,
        })
        .collect()
}

/// Both days of a pair laid end to end (192 slots).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TwoDayGrid {
    pub codes: Vec<Option<ActivityType>>,
    pub observed: Vec<bool>,
}

impl TwoDayGrid {
    pub fn runs(&self) -> Vec<Run> {
        runs_of(&self.codes, &self.observed)
    }
}

pub fn concat_days(pair: &AgentDayPair) -> TwoDayGrid {
    concat_grids(&pair.day1, &pair.mask1, &pair.day2, &pair.mask2)
}

pub fn concat_grids(
    day1: &DayGrid,
    mask1: &ObservationMask,
    day2: &DayGrid,
    mask2: &ObservationMask,
) -> TwoDayGrid {
    let mut codes = Vec::with_capacity(2 * SLOTS_PER_DAY);
    codes.extend_from_slice(&day1.0);
    codes.extend_from_slice(&day2.0);
    let mut observed = Vec::with_capacity(2 * SLOTS_PER_DAY);
    observed.extend_from_slice(&mask1.0);
    observed.extend_from_slice(&mask2.0);
    TwoDayGrid { codes, observed }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use ActivityType::*;

    fn act(kind: ActivityType, start: usize, end: usize) -> Activity {
        Activity::new(kind, start, end).unwrap()
    }

    fn grid_from_runs(runs: &[(ActivityType, usize)]) -> DayGrid {
        let mut grid = DayGrid::unobserved();
        let mut t = 0;
        for &(kind, len) in runs {
            for slot in &mut grid.0[t..t + len] {
                *slot = Some(kind);
            }
            t += len;
        }
        assert_eq!(t, SLOTS_PER_DAY);
        grid
    }

    #[test]
    fn codes_round_trip_and_reject_out_of_range() {
        for kind in ActivityType::ALL {
            assert_eq!(ActivityType::from_code(kind.code()).unwrap(), kind);
            assert_eq!(ActivityType::from_index(kind.index()), Some(kind));
        }
        assert!(ActivityType::from_code(0).is_err());
        assert!(ActivityType::from_code(16).is_err());
        assert!(TimeSlot::new(96).is_err());
        assert_eq!(TimeSlot::new(72).unwrap().start_minute(), 18 * 60);
    }

    #[test]
    fn empty_chain_is_unobserved() {
        let (grid, mask) = chain_to_grid(&[]).unwrap();
        assert_eq!(grid, DayGrid::unobserved());
        assert_eq!(mask, ObservationMask::empty());
    }

    #[test]
    fn full_day_home() {
        let (grid, mask) = chain_to_grid(&[act(Home, 0, 96)]).unwrap();
        assert_eq!(grid, DayGrid::filled(Home));
        assert_eq!(mask, ObservationMask::full());
    }

    #[test]
    fn unsorted_chain_with_gap() {
        let (grid, mask) = chain_to_grid(&[act(Work, 88, 96), act(Home, 0, 24)]).unwrap();
        for t in 0..24 {
            assert_eq!(grid.get(t), Some(Home));
            assert!(mask.0[t]);
        }
        for t in 24..88 {
            assert_eq!(grid.get(t), None);
            assert!(!mask.0[t]);
        }
        for t in 88..96 {
            assert_eq!(grid.get(t), Some(Work));
        }
    }

    #[test]
    fn overlap_names_both_activities() {
        let err = chain_to_grid(&[act(Home, 0, 40), act(Work, 32, 72)]).unwrap_err();
        let msg = err.to_string();
        assert!(
            msg.contains("Home [0, 40)") && msg.contains("Work [32, 72)"),
            "{msg}"
        );
    }

    #[test]
    fn run_length_decoding() {
        assert_eq!(
            grid_to_chain(&DayGrid::filled(Home), &ObservationMask::full()),
            vec![act(Home, 0, 96)]
        );
        let grid = grid_from_runs(&[(Home, 32), (Work, 40), (Home, 24)]);
        assert_eq!(
            grid_to_chain(&grid, &ObservationMask::full()),
            vec![act(Home, 0, 32), act(Work, 32, 72), act(Home, 72, 96)]
        );
    }

    #[test]
    fn mask_gap_splits_run() {
        let grid = DayGrid::filled(Home);
        let mut mask = ObservationMask::full();
        mask.0[10] = false;
        assert_eq!(
            grid_to_chain(&grid, &mask),
            vec![act(Home, 0, 10), act(Home, 11, 96)]
        );
    }

    fn pair_of(day1: DayGrid, day2: DayGrid) -> AgentDayPair {
        let m1 = ObservationMask(std::array::from_fn(|t| day1.0[t].is_some()));
        let m2 = ObservationMask(std::array::from_fn(|t| day2.0[t].is_some()));
        AgentDayPair::new("a", day1, m1, day2, m2).unwrap()
    }

    #[test]
    fn midnight_work_merges_across_days() {
        let day1 = grid_from_runs(&[(Home, 88), (Work, 8)]);
        let day2 = grid_from_runs(&[(Work, 24), (Home, 72)]);
        let runs = concat_days(&pair_of(day1, day2)).runs();
        let work: Vec<_> = runs.iter().filter(|r| r.kind == Work).collect();
        assert_eq!(work.len(), 1);
        assert_eq!((work[0].start, work[0].end), (88, 120));
        assert_eq!(work[0].len(), 32);
    }

    #[test]
    fn home_only_pair_is_one_run() {
        let runs = concat_days(&pair_of(DayGrid::filled(Home), DayGrid::filled(Home))).runs();
        assert_eq!(runs.len(), 1);
        assert_eq!(runs[0].len(), 192);
    }

    #[test]
    fn boundary_gap_blocks_merge() {
        let mut day1 = grid_from_runs(&[(Home, 88), (Work, 8)]);
        day1.0[95] = None;
        let day2 = grid_from_runs(&[(Work, 24), (Home, 72)]);
        let runs = concat_days(&pair_of(day1, day2)).runs();
        assert_eq!(runs.iter().filter(|r| r.kind == Work).count(), 2);
    }

    #[test]
    fn pair_rejects_code_mask_disagreement() {
        let mut mask = ObservationMask::full();
        mask.0[3] = false;
        let err = AgentDayPair::new(
            "a",
            DayGrid::filled(Home),
            mask,
            DayGrid::filled(Home),
            ObservationMask::full(),
        );
        assert!(err.is_err());
    }

    fn arb_chain() -> impl Strategy<Value = Vec<Activity>> {
        // Random cut points over the day and a code per segment; adjacent
        // segments get distinct codes so the chain is already maximal.
        (
            proptest::collection::btree_set(1usize..96, 0..20),
            proptest::collection::vec(0usize..14, 21),
        )
            .prop_map(|(cuts, offsets)| {
                let mut bounds = vec![0];
                bounds.extend(cuts);
                bounds.push(96);
                let mut chain: Vec<Activity> = Vec::new();
                let mut prev: Option<usize> = None;
                for (i, w) in bounds.windows(2).enumerate() {
                    let mut idx = offsets[i] % 15;
                    if prev == Some(idx) {
                        idx = (idx + 1 + offsets[i + 1] % 14) % 15;
                    }
                    prev = Some(idx);
                    chain.push(act(ActivityType::ALL[idx], w[0], w[1]));
                }
                chain
            })
    }

    proptest! {
        #[test]
        fn chain_grid_round_trip(chain in arb_chain()) {
            let (grid, mask) = chain_to_grid(&chain).unwrap();
            prop_assert!(grid.is_complete());
            prop_assert_eq!(grid_to_chain(&grid, &mask), chain.clone());
            // Slot multiset equals the one implied by the chain.
            let mut counts = [0usize; 15];
            for a in &chain {
                counts[a.kind.index()] += a.duration();
            }
            let mut grid_counts = [0usize; 15];
            for k in grid.0.iter().flatten() {
                grid_counts[k.index()] += 1;
            }
            prop_assert_eq!(counts, grid_counts);
        }
    }
}
