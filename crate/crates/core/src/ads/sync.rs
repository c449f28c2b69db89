//! Bookkeeping for synchronous neighborhood queries (scoped flooding).
//!
//! The origin answers from its own store at once, floods `SYNC_QUERY` up to
//! `hop_radius` hops, and merges `SYNC_REPLY`s that come back along the
//! reverse path before its timeout fires. Late replies are ignored.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::item::{join, InfoItem, ItemId};
use super::selector::Selector;
use crate::kernel::NodeId;

pub const DEFAULT_HOP_RADIUS: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SyncQueryId {
    pub origin: NodeId,
    pub seq: u64,
}

impl fmt::Display for SyncQueryId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}.{}", self.origin, self.seq)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpenSyncQuery {
    pub selector: Selector,
    pub deadline: f64,
    results: BTreeMap<ItemId, InfoItem>,
    closed: bool,
}

impl OpenSyncQuery {
    pub fn new(selector: Selector, deadline: f64, local: Vec<InfoItem>) -> Self {
        Self { selector, deadline, results: local.into_iter().map(|i| (i.id, i)).collect(), closed: false }
    }

    /// Merges a reply; returns `false` if the query already timed out.
    pub fn merge_reply(&mut self, items: &[InfoItem]) -> bool {
        if self.closed {
            return false;
        }
        for it in items.iter().filter(|i| self.selector.matches(i)) {
            self.results
                .entry(it.id)
                .and_modify(|cur| *cur = join(cur, it).item)
                .or_insert_with(|| it.clone());
        }
        true
    }

    pub fn close(&mut self) {
        self.closed = true;
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    /// Results ordered like `query_local`, truncated to `max_results`.
    pub fn results(&self) -> Vec<InfoItem> {
        let mut out: Vec<InfoItem> = self.results.values().cloned().collect();
        out.sort_by(|a, b| a.created_at.total_cmp(&b.created_at).then_with(|| a.id.cmp(&b.id)));
        if let Some(n) = self.selector.max_results {
            out.truncate(n);
        }
        out
    }
}

/// Per-node state for sync queries: own open queries and relay parents.
#[derive(Debug, Clone, Default)]
pub struct SyncTable {
    pub open: BTreeMap<SyncQueryId, OpenSyncQuery>,
    /// For relayed queries: who we got it from first.
    pub parents: BTreeMap<SyncQueryId, NodeId>,
    pub seen: BTreeSet<SyncQueryId>,
}
