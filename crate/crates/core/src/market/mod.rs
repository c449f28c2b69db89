//! Information markets: a designated hotspot whose current occupants pool,
//! replicate and serve categorized items.
//!
//! The pool is held in per-member shares. Members coordinate once per tick
//! (registry union, replica rebalancing), so the replica invariant is stated
//! at tick boundaries.

mod descriptor;
mod select;

pub use descriptor::{KnownMarkets, MarketDescriptor, MarketId, MergeOutcome};
pub use select::{category_overlap, scores, select_market, SelectionWeights};

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ads::{join, Asrq, InfoItem, ItemId, QueryId, ResultChunk};
use crate::geometry::{Position, Region};
use crate::kernel::{NodeId, RadioModel};
use crate::plan::MovementPlan;
use crate::rng::hash_words;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MarketError {
    #[error("no information market is known")]
    NoKnownMarket,
    #[error("node {0} is not a member of the market")]
    NotAMember(NodeId),
    #[error("query {0} arrived after its ttl")]
    ExpiredQuery(QueryId),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketParams {
    /// Replication factor.
    pub k: usize,
    pub chunk_size: usize,
    pub refresh_interval: f64,
}

impl Default for MarketParams {
    fn default() -> Self {
        Self { k: 3, chunk_size: 5, refresh_interval: 300.0 }
    }
}

/// Rendezvous weight of `member` for `item`.
pub fn rendezvous_score(item: ItemId, member: NodeId) -> u64 {
    hash_words(&[u64::from(item.origin.0), item.counter, u64::from(member.0)])
}

/// The `k` members with the highest rendezvous weight for `item`
/// (ties by smaller id), highest first.
pub fn rendezvous_top_k(item: ItemId, members: impl IntoIterator<Item = NodeId>, k: usize) -> Vec<NodeId> {
    let mut ranked: Vec<(u64, NodeId)> = members.into_iter().map(|m| (rendezvous_score(item, m), m)).collect();
    ranked.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
    ranked.truncate(k);
    ranked.into_iter().map(|(_, m)| m).collect()
}

/// `ceil(distance / (0.8 * range))`, at least one hop.
pub fn hop_estimate(distance: f64, range: f64) -> u32 {
    ((distance / (0.8 * range)).ceil() as u32).max(1)
}

pub fn estimated_transit(from: Position, to: Position, radio: &RadioModel) -> f64 {
    f64::from(hop_estimate(from.distance(&to), radio.range)) * radio.latency_per_hop
}

/// Where to send results assembled at `clock`: the plan's region at the
/// predicted arrival time, or its last region outside the plan.
pub fn chunk_target(plan: &MovementPlan, clock: f64, transit: f64) -> Option<Region> {
    plan.region_at_or_last(clock + transit)
}

/// Predictive destination for a chunk leaving from `from`.
pub fn chunk_destination(plan: &MovementPlan, clock: f64, from: Position, radio: &RadioModel) -> Option<Region> {
    let now = plan.region_at_or_last(clock)?;
    let transit = estimated_transit(from, now.center, radio);
    chunk_target(plan, clock, transit)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegisteredQuery {
    pub asrq: Asrq,
    pub registered_at: f64,
    pub sent_item_ids: BTreeSet<ItemId>,
    pub next_chunk_seq: u64,
}

impl RegisteredQuery {
    pub fn new(asrq: Asrq, registered_at: f64) -> Self {
        Self { asrq, registered_at, sent_item_ids: BTreeSet::new(), next_chunk_seq: 0 }
    }

    pub fn satisfied(&self) -> bool {
        self.asrq.expected_results.is_some_and(|e| self.sent_item_ids.len() >= e)
    }

    pub fn is_active(&self, clock: f64) -> bool {
        self.asrq.is_active(clock) && !self.satisfied()
    }

    fn absorb(&mut self, other: &RegisteredQuery) {
        self.sent_item_ids.extend(other.sent_item_ids.iter().copied());
        self.next_chunk_seq = self.next_chunk_seq.max(other.next_chunk_seq);
        self.registered_at = self.registered_at.min(other.registered_at);
    }
}

/// The part of the market a single member holds.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MemberShare {
    pub pool: BTreeMap<ItemId, InfoItem>,
    pub registry: BTreeMap<QueryId, RegisteredQuery>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MembershipDelta {
    pub joined: Vec<NodeId>,
    pub left: Vec<NodeId>,
}

impl MembershipDelta {
    pub fn is_empty(&self) -> bool {
        self.joined.is_empty() && self.left.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReplicaReport {
    pub holders: Vec<NodeId>,
    pub copied_to: Vec<NodeId>,
    pub dropped_from: Vec<NodeId>,
    /// Fewer than `k` members were available.
    pub degraded: bool,
}

/// A chunk ready to leave the market.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannedChunk {
    pub asrq: Asrq,
    pub chunk: ResultChunk,
}

#[derive(Debug, Clone)]
pub struct Market {
    pub id: MarketId,
    pub region: Region,
    pub params: MarketParams,
    shares: BTreeMap<NodeId, MemberShare>,
    descriptor: MarketDescriptor,
    last_refresh: f64,
}

impl Market {
    pub fn new(id: MarketId, region: Region, params: MarketParams, clock: f64) -> Self {
        Self {
            id,
            region,
            params,
            shares: BTreeMap::new(),
            descriptor: MarketDescriptor::new(id, region, clock),
            last_refresh: clock,
        }
    }

    pub fn members(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.shares.keys().copied()
    }

    pub fn member_count(&self) -> usize {
        self.shares.len()
    }

    pub fn is_member(&self, n: NodeId) -> bool {
        self.shares.contains_key(&n)
    }

    pub fn share(&self, n: NodeId) -> Option<&MemberShare> {
        self.shares.get(&n)
    }

    /// Ids held by at least one member.
    pub fn pool_ids(&self) -> BTreeSet<ItemId> {
        self.shares.values().flat_map(|s| s.pool.keys().copied()).collect()
    }

    /// The joined copy of a pooled item across all holders.
    pub fn pool_item(&self, id: &ItemId) -> Option<InfoItem> {
        let mut acc: Option<InfoItem> = None;
        for s in self.shares.values() {
            if let Some(it) = s.pool.get(id) {
                acc = Some(match acc {
                    None => it.clone(),
                    Some(cur) => join(&cur, it).item,
                });
            }
        }
        acc
    }

    pub fn pool_items(&self) -> Vec<InfoItem> {
        self.pool_ids().iter().filter_map(|id| self.pool_item(id)).collect()
    }

    pub fn holders(&self, id: &ItemId) -> BTreeSet<NodeId> {
        self.shares.iter().filter(|(_, s)| s.pool.contains_key(id)).map(|(n, _)| *n).collect()
    }

    /// Sets members to exactly `inside`. Leavers take their share with them;
    /// joiners start empty and receive the registry through gossip.
    pub fn update_membership(&mut self, inside: &BTreeSet<NodeId>) -> MembershipDelta {
        let mut delta = MembershipDelta::default();
        let current: Vec<NodeId> = self.shares.keys().copied().collect();
        for n in current {
            if !inside.contains(&n) {
                self.shares.remove(&n);
                delta.left.push(n);
            }
        }
        for n in inside {
            if !self.shares.contains_key(n) {
                self.shares.insert(*n, MemberShare::default());
                delta.joined.push(*n);
            }
        }
        if !delta.is_empty() {
            self.gossip_registry();
        }
        delta
    }

    /// Places `item` into `at`'s share and replicates it.
    pub fn ingest(&mut self, item: InfoItem, at: NodeId) -> Result<ReplicaReport, MarketError> {
        let share = self.shares.get_mut(&at).ok_or(MarketError::NotAMember(at))?;
        let id = item.id;
        let merged = match share.pool.get(&id) {
            Some(cur) => join(cur, &item).item,
            None => item,
        };
        share.pool.insert(id, merged);
        Ok(self.replicate(id))
    }

    /// Restores the holder set of `id` to the rendezvous top-k of current members.
    pub fn replicate(&mut self, id: ItemId) -> ReplicaReport {
        let Some(item) = self.pool_item(&id) else {
            return ReplicaReport::default();
        };
        let k = self.params.k.max(1);
        let targets = rendezvous_top_k(id, self.shares.keys().copied(), k);
        let mut report = ReplicaReport { degraded: self.shares.len() < k, ..Default::default() };
        for (n, share) in self.shares.iter_mut() {
            let want = targets.contains(n);
            match (want, share.pool.contains_key(&id)) {
                (true, false) => {
                    share.pool.insert(id, item.clone());
                    report.copied_to.push(*n);
                }
                (true, true) => {
                    share.pool.insert(id, item.clone());
                }
                (false, true) => {
                    share.pool.remove(&id);
                    report.dropped_from.push(*n);
                }
                (false, false) => {}
            }
        }
        report.holders = targets;
        report
    }

    /// Re-replicates every pooled item.
    pub fn rebalance(&mut self) -> Vec<(ItemId, ReplicaReport)> {
        self.pool_ids().into_iter().map(|id| (id, self.replicate(id))).collect()
    }

    /// Unions the query registries of all members into every member.
    pub fn gossip_registry(&mut self) {
        let mut merged: BTreeMap<QueryId, RegisteredQuery> = BTreeMap::new();
        for s in self.shares.values() {
            for (q, r) in &s.registry {
                merged.entry(*q).and_modify(|m| m.absorb(r)).or_insert_with(|| r.clone());
            }
        }
        for s in self.shares.values_mut() {
            s.registry = merged.clone();
        }
    }

    pub fn registry(&self) -> BTreeMap<QueryId, RegisteredQuery> {
        self.shares.values().next().map(|s| s.registry.clone()).unwrap_or_default()
    }

    /// Registers `asrq` at member `at`. Returns `false` if already known.
    pub fn register(&mut self, asrq: Asrq, at: NodeId, clock: f64) -> Result<bool, MarketError> {
        if !asrq.is_active(clock) {
            return Err(MarketError::ExpiredQuery(asrq.query_id));
        }
        let share = self.shares.get_mut(&at).ok_or(MarketError::NotAMember(at))?;
        let fresh = !share.registry.contains_key(&asrq.query_id);
        if fresh {
            share.registry.insert(asrq.query_id, RegisteredQuery::new(asrq, clock));
        }
        self.gossip_registry();
        Ok(fresh)
    }

    /// Assembles chunks of not-yet-sent matching pool items for active
    /// queries (only `only`, when given). Expired queries are dropped.
    pub fn service(&mut self, clock: f64, only: Option<QueryId>) -> Vec<PlannedChunk> {
        if self.shares.is_empty() {
            return Vec::new();
        }
        self.gossip_registry();
        let mut registry = self.registry();
        registry.retain(|_, r| r.asrq.is_active(clock));
        let pool = self.pool_items();
        let chunk_size = self.params.chunk_size.max(1);
        let mut out = Vec::new();
        for (qid, reg) in registry.iter_mut() {
            if only.is_some_and(|o| o != *qid) || !reg.is_active(clock) {
                continue;
            }
            let mut fresh: Vec<&InfoItem> = pool
                .iter()
                .filter(|i| reg.asrq.selector.matches(i) && !reg.sent_item_ids.contains(&i.id))
                .collect();
            fresh.sort_by(|a, b| a.created_at.total_cmp(&b.created_at).then_with(|| a.id.cmp(&b.id)));
            if let Some(e) = reg.asrq.expected_results {
                fresh.truncate(e.saturating_sub(reg.sent_item_ids.len()));
            }
            for batch in fresh.chunks(chunk_size) {
                let chunk = ResultChunk {
                    query_id: *qid,
                    chunk_seq: reg.next_chunk_seq,
                    items: batch.iter().map(|i| (*i).clone()).collect(),
                    from_market: self.id,
                    piggyback: Vec::new(),
                };
                reg.next_chunk_seq += 1;
                reg.sent_item_ids.extend(batch.iter().map(|i| i.id));
                out.push(PlannedChunk { asrq: reg.asrq.clone(), chunk });
            }
        }
        for s in self.shares.values_mut() {
            s.registry = registry.clone();
        }
        out
    }

    pub fn descriptor(&self) -> &MarketDescriptor {
        &self.descriptor
    }

    fn inventory(&self) -> BTreeMap<crate::ads::Category, u64> {
        let mut counts = BTreeMap::new();
        for it in self.pool_items() {
            *counts.entry(it.category).or_insert(0) += 1;
        }
        counts
    }

    /// Re-advertises when the inventory changed or the refresh interval
    /// elapsed. Returns the fresh descriptor when one was issued.
    pub fn maybe_refresh(&mut self, clock: f64) -> Option<MarketDescriptor> {
        let inv = self.inventory();
        let changed = inv != self.descriptor.categories;
        let due = clock - self.last_refresh >= self.params.refresh_interval;
        if !(changed || due) {
            return None;
        }
        self.descriptor = MarketDescriptor { market_id: self.id, region: self.region, categories: inv, advertised_at: clock };
        self.last_refresh = clock;
        Some(self.descriptor.clone())
    }
}
