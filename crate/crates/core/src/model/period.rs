use std::fmt;

use serde::{Deserialize, Serialize};

use crate::activity::{TimeSlot, SLOTS_PER_DAY};
use crate::error::Result;

/// Coarse time-of-day band used by the period embedding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeriodId {
    /// 18:00–22:00, slots 72..88.
    EveningStart = 0,
    /// 22:00–06:00, slots 88..96 and 0..24.
    Overnight = 1,
    /// 06:00–10:00, slots 24..40.
    Morning = 2,
    /// Everything else, slots 40..72.
    Other = 3,
}

impl PeriodId {
    pub const ALL: [PeriodId; 4] = [
        PeriodId::EveningStart,
        PeriodId::Overnight,
        PeriodId::Morning,
        PeriodId::Other,
    ];

    /// Period of a raw slot index; errors outside 0..96.
    pub fn of_index(t: usize) -> Result<PeriodId> {
        TimeSlot::new(t).map(period_of)
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            PeriodId::EveningStart => "evening_start",
            PeriodId::Overnight => "overnight",
            PeriodId::Morning => "morning",
            PeriodId::Other => "other",
        }
    }
}

impl fmt::Display for PeriodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub fn period_of(t: TimeSlot) -> PeriodId {
    period_of_index(t.index())
}

/// Period of slot `t mod 96`.
pub(crate) fn period_of_index(t: usize) -> PeriodId {
    match t % SLOTS_PER_DAY {
        72..=87 => PeriodId::EveningStart,
        88..=95 | 0..=23 => PeriodId::Overnight,
        24..=39 => PeriodId::Morning,
        _ => PeriodId::Other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn listed_slots() {
        let p = |t| period_of(TimeSlot::new(t).unwrap());
        assert_eq!(p(80), PeriodId::EveningStart);
        assert_eq!(p(0), PeriodId::Overnight);
        assert_eq!(p(24), PeriodId::Morning);
        assert_eq!(p(40), PeriodId::Other);
    }

    #[test]
    fn preimage_sizes() {
        let mut counts = [0; 4];
        for t in 0..SLOTS_PER_DAY {
            counts[PeriodId::of_index(t).unwrap().index()] += 1;
        }
        assert_eq!(counts, [16, 32, 16, 32]);
    }

    #[test]
    fn boundaries() {
        let p = |t| PeriodId::of_index(t).unwrap();
        assert_eq!(p(71), PeriodId::Other);
        assert_eq!(p(72), PeriodId::EveningStart);
        assert_eq!(p(87), PeriodId::EveningStart);
        assert_eq!(p(88), PeriodId::Overnight);
        assert_eq!(p(95), PeriodId::Overnight);
        assert_eq!(p(23), PeriodId::Overnight);
        assert_eq!(p(39), PeriodId::Morning);
    }

    #[test]
    fn out_of_range() {
        assert!(PeriodId::of_index(96).is_err());
    }
}
