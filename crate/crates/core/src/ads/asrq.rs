//! Asynchronous smart remote queries, initiator side.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::item::{InfoItem, ItemId};
use super::selector::Selector;
use super::store::ItemStore;
use super::AdsError;
use crate::kernel::NodeId;
use crate::market::{KnownMarkets, MarketDescriptor, MarketId};
use crate::plan::MovementPlan;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct QueryId {
    pub initiator: NodeId,
    pub seq: u64,
}

impl fmt::Display for QueryId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "q{}.{}", self.initiator, self.seq)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Asrq {
    pub query_id: QueryId,
    pub initiator: NodeId,
    pub selector: Selector,
    pub launch_time: f64,
    pub ttl: f64,
    pub movement_plan: MovementPlan,
    pub expected_results: Option<usize>,
    pub known_markets: Vec<MarketDescriptor>,
}

impl Asrq {
    pub fn expires_at(&self) -> f64 {
        self.launch_time + self.ttl
    }

    pub fn is_active(&self, clock: f64) -> bool {
        clock <= self.expires_at()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultChunk {
    pub query_id: QueryId,
    pub chunk_seq: u64,
    pub items: Vec<InfoItem>,
    pub from_market: MarketId,
    pub piggyback: Vec<MarketDescriptor>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueryState {
    Pending,
    Expired,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultStatus {
    pub items: Vec<InfoItem>,
    pub chunks: usize,
    pub state: QueryState,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ChunkOutcome {
    Accepted { new_items: Vec<ItemId> },
    Duplicate,
    /// Descriptors were merged, items discarded.
    UnknownQuery,
}

#[derive(Debug, Clone, PartialEq)]
struct PendingQuery {
    asrq: Asrq,
    items: BTreeMap<ItemId, InfoItem>,
    chunks: BTreeSet<(MarketId, u64)>,
    first_chunk_at: Option<f64>,
}

/// Locally launched queries and everything received for them.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QueryBook {
    queries: BTreeMap<QueryId, PendingQuery>,
}

impl QueryBook {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, asrq: Asrq) {
        self.queries.insert(
            asrq.query_id,
            PendingQuery { asrq, items: BTreeMap::new(), chunks: BTreeSet::new(), first_chunk_at: None },
        );
    }

    pub fn get(&self, id: QueryId) -> Option<&Asrq> {
        self.queries.get(&id).map(|p| &p.asrq)
    }

    pub fn ids(&self) -> impl Iterator<Item = QueryId> + '_ {
        self.queries.keys().copied()
    }

    pub fn first_chunk_at(&self, id: QueryId) -> Option<f64> {
        self.queries.get(&id).and_then(|p| p.first_chunk_at)
    }

    /// Merges a chunk: items into `store`, descriptors into `known`.
    pub fn accept_chunk(&mut self, chunk: &ResultChunk, store: &mut ItemStore, known: &mut KnownMarkets, clock: f64) -> ChunkOutcome {
        known.merge_all(chunk.piggyback.iter());
        let Some(pending) = self.queries.get_mut(&chunk.query_id) else {
            return ChunkOutcome::UnknownQuery;
        };
        if !pending.chunks.insert((chunk.from_market, chunk.chunk_seq)) {
            return ChunkOutcome::Duplicate;
        }
        pending.first_chunk_at.get_or_insert(clock);
        let mut new_items = Vec::new();
        for item in &chunk.items {
            if !pending.asrq.selector.matches(item) {
                continue;
            }
            if !store.contains(&item.id) {
                new_items.push(item.id);
            }
            store.put_local(item.clone());
            pending
                .items
                .entry(item.id)
                .and_modify(|cur| *cur = super::item::join(cur, item).item)
                .or_insert_with(|| item.clone());
        }
        ChunkOutcome::Accepted { new_items }
    }

    pub fn collect_results(&self, id: QueryId, clock: f64) -> Result<ResultStatus, AdsError> {
        let p = self.queries.get(&id).ok_or(AdsError::UnknownQuery(id))?;
        Ok(ResultStatus {
            items: p.items.values().cloned().collect(),
            chunks: p.chunks.len(),
            state: if clock > p.asrq.expires_at() { QueryState::Expired } else { QueryState::Pending },
        })
    }
}
