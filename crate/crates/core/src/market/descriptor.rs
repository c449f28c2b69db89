use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::ads::Category;
use crate::geometry::Region;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MarketId(pub u32);

impl fmt::Display for MarketId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "m{}", self.0)
    }
}

/// Advertisement of a market: where it is and what it holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketDescriptor {
    pub market_id: MarketId,
    pub region: Region,
    pub categories: BTreeMap<Category, u64>,
    pub advertised_at: f64,
}

impl MarketDescriptor {
    pub fn new(market_id: MarketId, region: Region, advertised_at: f64) -> Self {
        Self { market_id, region, categories: BTreeMap::new(), advertised_at }
    }

    /// Total order used to pick between two descriptors of the same market:
    /// newer `advertised_at` first, then larger inventory for determinism.
    pub fn freshness_cmp(&self, other: &Self) -> Ordering {
        self.advertised_at
            .total_cmp(&other.advertised_at)
            .then_with(|| self.categories.cmp(&other.categories))
            .then_with(|| self.region.radius.total_cmp(&other.region.radius))
    }
}

/// Newest descriptor per market id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KnownMarkets {
    by_id: BTreeMap<MarketId, MarketDescriptor>,
}

/// Effect of merging one descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MergeOutcome {
    New,
    Refreshed,
    Stale,
}

impl MergeOutcome {
    pub fn changed(self) -> bool {
        !matches!(self, MergeOutcome::Stale)
    }
}

impl KnownMarkets {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn merge(&mut self, d: &MarketDescriptor) -> MergeOutcome {
        match self.by_id.get_mut(&d.market_id) {
            None => {
                self.by_id.insert(d.market_id, d.clone());
                MergeOutcome::New
            }
            Some(cur) if d.freshness_cmp(cur) == Ordering::Greater => {
                *cur = d.clone();
                MergeOutcome::Refreshed
            }
            Some(_) => MergeOutcome::Stale,
        }
    }

    pub fn merge_all<'a>(&mut self, ds: impl IntoIterator<Item = &'a MarketDescriptor>) -> Vec<(MarketId, MergeOutcome)> {
        ds.into_iter()
            .map(|d| (d.market_id, self.merge(d)))
            .filter(|(_, o)| o.changed())
            .collect()
    }

    pub fn get(&self, id: MarketId) -> Option<&MarketDescriptor> {
        self.by_id.get(&id)
    }

    pub fn contains(&self, id: MarketId) -> bool {
        self.by_id.contains_key(&id)
    }

    pub fn len(&self) -> usize {
        self.by_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_id.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &MarketDescriptor> {
        self.by_id.values()
    }

    pub fn to_vec(&self) -> Vec<MarketDescriptor> {
        self.by_id.values().cloned().collect()
    }
}
