//! Line-delimited corpus files.
//!
//! One JSON object per line:
//!
//! ```text
//! {"agent_id":"a17","day1":[1,1,...],"day2":[...],"mask1":[1,1,...],"mask2":[...],"shift_label":true,"split":"train"}
//! ```
//!
//! `day1`/`day2` hold 96 codes in `1..=15`, or `0` for an unobserved slot;
//! `mask1`/`mask2` hold 96 bits. `shift_label` and `split` are optional.

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::activity::{ActivityType, AgentDayPair, DayGrid, ObservationMask, Split, SLOTS_PER_DAY};
use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Corpus {
    pub pairs: Vec<AgentDayPair>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    agent_id: String,
    day1: Vec<u8>,
    day2: Vec<u8>,
    mask1: Vec<u8>,
    mask2: Vec<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    shift_label: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    split: Option<Split>,
}

fn grid_to_codes(grid: &DayGrid) -> Vec<u8> {
    grid.0
        .iter()
        .map(|s| s.map_or(0, ActivityType::code))
        .collect()
}

fn mask_to_bits(mask: &ObservationMask) -> Vec<u8> {
    mask.0.iter().map(|&b| b as u8).collect()
}

fn codes_to_grid(field: &str, codes: &[u8]) -> std::result::Result<DayGrid, String> {
    if codes.len() != SLOTS_PER_DAY {
        return Err(format!(
            "{field} has {} slots, expected {SLOTS_PER_DAY}",
            codes.len()
        ));
    }
    let mut grid = DayGrid::unobserved();
    for (t, &c) in codes.iter().enumerate() {
        grid.0[t] = match c {
            0 => None,
            _ => Some(
                ActivityType::from_code(c)
                    .map_err(|_| format!("{field}[{t}]: unknown activity code {c}"))?,
            ),
        };
    }
    Ok(grid)
}

fn bits_to_mask(field: &str, bits: &[u8]) -> std::result::Result<ObservationMask, String> {
    if bits.len() != SLOTS_PER_DAY {
        return Err(format!(
            "{field} has {} slots, expected {SLOTS_PER_DAY}",
            bits.len()
        ));
    }
    let mut mask = ObservationMask::empty();
    for (t, &b) in bits.iter().enumerate() {
        mask.0[t] = match b {
            0 => false,
            1 => true,
            _ => return Err(format!("{field}[{t}]: mask bit {b} is not 0 or 1")),
        };
    }
    Ok(mask)
}

impl Record {
    fn from_pair(pair: &AgentDayPair) -> Self {
        Record {
            agent_id: pair.agent_id.clone(),
            day1: grid_to_codes(&pair.day1),
            day2: grid_to_codes(&pair.day2),
            mask1: mask_to_bits(&pair.mask1),
            mask2: mask_to_bits(&pair.mask2),
            shift_label: pair.shift_label,
            split: pair.split,
        }
    }

    fn into_pair(self) -> std::result::Result<AgentDayPair, String> {
        let day1 = codes_to_grid("day1", &self.day1)?;
        let day2 = codes_to_grid("day2", &self.day2)?;
        let mask1 = bits_to_mask("mask1", &self.mask1)?;
        let mask2 = bits_to_mask("mask2", &self.mask2)?;
        let mut pair =
            AgentDayPair::new(self.agent_id, day1, mask1, day2, mask2).map_err(|e| match e {
                Error::Record(msg) => msg,
                other => other.to_string(),
            })?;
        pair.shift_label = self.shift_label;
        pair.split = self.split;
        Ok(pair)
    }
}

/// Parses one corpus line. `line_no` is 1-based and only used in errors.
pub fn parse_record(path: &Path, line_no: usize, line: &str) -> Result<AgentDayPair> {
    let parse_err = |reason: String| Error::Parse {
        path: path.to_path_buf(),
        line: line_no,
        reason,
    };
    let record: Record = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
    record.into_pair().map_err(parse_err)
}

pub fn encode_record(pair: &AgentDayPair) -> String {
    serde_json::to_string(&Record::from_pair(pair)).expect("record serialization is infallible")
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut pairs = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        pairs.push(parse_record(path, i + 1, &line)?);
    }
    Ok(Corpus { pairs })
}

pub fn save_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for pair in &corpus.pairs {
        writeln!(out, "{}", encode_record(pair)).map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Fractions of agents assigned to train / val / test.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            train: 0.8,
            val: 0.1,
        }
    }
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Assigns splits by agent so no agent straddles two splits.
    pub fn assign_splits(&mut self, fractions: SplitFractions, seed: u64) {
        let mut agents: Vec<String> = self
            .pairs
            .iter()
            .map(|p| p.agent_id.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        agents.shuffle(&mut rng);
        let n = agents.len();
        let n_train = (fractions.train * n as f64).round() as usize;
        let n_val = ((fractions.val * n as f64).round() as usize).min(n - n_train.min(n));
        let split_of: std::collections::HashMap<&str, Split> = agents
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let split = if i < n_train {
                    Split::Train
                } else if i < n_train + n_val {
                    Split::Val
                } else {
                    Split::Test
                };
                (a.as_str(), split)
            })
            .collect();
        for pair in &mut self.pairs {
            pair.split = Some(split_of[pair.agent_id.as_str()]);
        }
    }

    pub fn split(&self, split: Split) -> Vec<&AgentDayPair> {
        self.pairs
            .iter()
            .filter(|p| p.split == Some(split))
            .collect()
    }

    pub fn split_owned(&self, split: Split) -> Vec<AgentDayPair> {
        self.split(split).into_iter().cloned().collect()
    }
}
