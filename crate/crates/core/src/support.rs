//! Stationary storage-only nodes: market directories and pool backup under
//! low density.

use std::collections::{BTreeMap, BTreeSet};

use crate::ads::{ItemId, ItemStore};
use crate::geometry::Position;
use crate::kernel::NodeId;
use crate::market::{KnownMarkets, Market, MarketDescriptor, MarketId};

pub const DEFAULT_DENSITY_THRESHOLD: usize = 3;
/// Consecutive ticks at or above threshold before re-seeding.
pub const RECOVERY_TICKS: u32 = 2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SupportAction {
    Idle,
    Absorbed(usize),
    Reseeded(usize),
}

#[derive(Debug, Clone, Default)]
struct Watch {
    low: bool,
    high_streak: u32,
    absorbed: BTreeSet<ItemId>,
}

#[derive(Debug, Clone)]
pub struct SupportNode {
    pub id: NodeId,
    pub position: Position,
    pub storage: ItemStore,
    pub directory: KnownMarkets,
    pub density_threshold: usize,
    watch: BTreeMap<MarketId, Watch>,
}

impl SupportNode {
    pub fn new(id: NodeId, position: Position, density_threshold: usize) -> Self {
        Self {
            id,
            position,
            storage: ItemStore::new(),
            directory: KnownMarkets::new(),
            density_threshold: density_threshold.max(1),
            watch: BTreeMap::new(),
        }
    }

    /// Current directory, newest descriptor per market.
    pub fn lookup_markets(&self) -> Vec<MarketDescriptor> {
        self.directory.to_vec()
    }

    pub fn absorbing(&self, market: MarketId) -> bool {
        self.watch.get(&market).is_some_and(|w| w.low)
    }

    /// Items this node currently holds on behalf of `market`.
    pub fn absorbed(&self, market: MarketId) -> BTreeSet<ItemId> {
        self.watch.get(&market).map(|w| w.absorbed.clone()).unwrap_or_default()
    }

    /// Copies every pool item it lacks; returns how many were new.
    pub fn absorb_pool(&mut self, market: &Market) -> usize {
        let w = self.watch.entry(market.id).or_default();
        let mut n = 0;
        for item in market.pool_items() {
            w.absorbed.insert(item.id);
            if !self.storage.contains(&item.id) {
                n += 1;
            }
            self.storage.put_local(item);
        }
        n
    }

    /// Per-tick density check for a market this node sits in.
    pub fn observe(&mut self, market: &mut Market) -> SupportAction {
        let members = market.member_count();
        let threshold = self.density_threshold;
        let w = self.watch.entry(market.id).or_default();
        if members < threshold {
            w.low = true;
            w.high_streak = 0;
            if members == 0 {
                return SupportAction::Idle;
            }
            return SupportAction::Absorbed(self.absorb_pool(market));
        }
        w.high_streak += 1;
        if !(w.low && w.high_streak >= RECOVERY_TICKS) {
            return SupportAction::Idle;
        }
        w.low = false;
        let ids: Vec<ItemId> = w.absorbed.iter().copied().collect();
        let pool = market.pool_ids();
        let Some(seed_at) = market.members().next() else { return SupportAction::Idle };
        let mut n = 0;
        for id in ids {
            if pool.contains(&id) {
                continue;
            }
            if let Some(item) = self.storage.get(&id).cloned() {
                if market.ingest(item, seed_at).is_ok() {
                    n += 1;
                }
            }
        }
        SupportAction::Reseeded(n)
    }
}
