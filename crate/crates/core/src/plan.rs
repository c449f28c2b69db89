//! Calendar-style movement plans: where a node intends to be, and when.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Region;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub from: f64,
    pub to: f64,
    pub region: Region,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlanError {
    #[error("plan is empty")]
    Empty,
    #[error("entry {0} has from >= to")]
    EmptyInterval(usize),
    #[error("entries {0} and {1} overlap or are out of order")]
    Overlap(usize, usize),
}

/// Time-ordered, non-overlapping `(from, to, region)` entries.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MovementPlan {
    entries: Vec<PlanEntry>,
}

impl MovementPlan {
    pub fn new(entries: Vec<PlanEntry>) -> Result<Self, PlanError> {
        if entries.is_empty() {
            return Err(PlanError::Empty);
        }
        for (i, e) in entries.iter().enumerate() {
            if !(e.from < e.to) {
                return Err(PlanError::EmptyInterval(i));
            }
            if i > 0 && entries[i - 1].to > e.from {
                return Err(PlanError::Overlap(i - 1, i));
            }
        }
        Ok(Self { entries })
    }

    /// A plan that keeps the node in one region over `[from, to)`.
    pub fn stationary(region: Region, from: f64, to: f64) -> Self {
        Self { entries: vec![PlanEntry { from, to, region }] }
    }

    pub fn entries(&self) -> &[PlanEntry] {
        &self.entries
    }

    pub fn start(&self) -> f64 {
        self.entries.first().map_or(0.0, |e| e.from)
    }

    pub fn end(&self) -> f64 {
        self.entries.last().map_or(0.0, |e| e.to)
    }

    /// Region scheduled at `t`, if any entry covers it. Intervals are half-open.
    pub fn region_at(&self, t: f64) -> Option<Region> {
        self.entries.iter().find(|e| e.from <= t && t < e.to).map(|e| e.region)
    }

    /// Like `region_at`, falling back to the last entry's region outside the plan.
    pub fn region_at_or_last(&self, t: f64) -> Option<Region> {
        self.region_at(t).or_else(|| self.entries.last().map(|e| e.region))
    }

    /// True when every instant of `[from, to]` falls inside some entry.
    pub fn covers(&self, from: f64, to: f64) -> bool {
        let mut cursor = from;
        for e in &self.entries {
            if e.from > cursor {
                return false;
            }
            if e.to > cursor {
                cursor = e.to;
            }
            if cursor > to {
                return true;
            }
        }
        cursor >= to
    }
}
