//! Greedy geographic forwarding toward a region, with store-carry-forward
//! when no neighbor makes progress.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::hash::Hash;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Position, Region};
use crate::kernel::NodeId;

pub const DEFAULT_HOP_LIMIT: u32 = 32;
pub const SEEN_CAPACITY: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MsgId {
    pub origin: NodeId,
    pub seq: u64,
}

impl fmt::Display for MsgId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.origin, self.seq)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutedMessage<P> {
    pub msg_id: MsgId,
    pub origin: NodeId,
    pub dest_region: Region,
    pub hop_count: u32,
    pub hop_limit: u32,
    pub carry_deadline: f64,
    pub payload: P,
}

impl<P> RoutedMessage<P> {
    pub fn new(msg_id: MsgId, dest_region: Region, carry_deadline: f64, payload: P) -> Self {
        Self {
            msg_id,
            origin: msg_id.origin,
            dest_region,
            hop_count: 0,
            hop_limit: DEFAULT_HOP_LIMIT,
            carry_deadline,
            payload,
        }
    }

    pub fn with_hop_limit(mut self, hop_limit: u32) -> Self {
        self.hop_limit = hop_limit.max(1);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardAction {
    Deliver,
    Forward(NodeId),
    Carry,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum RouteError {
    #[error("carry deadline passed")]
    Expired,
    #[error("hop limit exceeded")]
    HopLimitExceeded,
}

impl RouteError {
    /// Reason code used in `DROP` trace lines.
    pub fn code(&self) -> &'static str {
        match self {
            RouteError::Expired => "expired",
            RouteError::HopLimitExceeded => "hop_limit",
        }
    }
}

/// The neighbor strictly closer to `dest.center` than `self_pos` that
/// minimizes that distance; ties go to the smallest id.
pub fn next_hop<I>(self_pos: Position, dest: &Region, neighbors: I) -> Option<NodeId>
where
    I: IntoIterator<Item = (NodeId, Position)>,
{
    let mine = self_pos.distance(&dest.center);
    let mut best: Option<(f64, NodeId)> = None;
    for (id, p) in neighbors {
        let d = p.distance(&dest.center);
        if d >= mine {
            continue;
        }
        let better = match best {
            None => true,
            Some((bd, bid)) => d < bd || (d == bd && id < bid),
        };
        if better {
            best = Some((d, id));
        }
    }
    best.map(|(_, id)| id)
}

/// Decides what the node at `at_pos` does with `msg`. On `Forward` the
/// message's hop count has already been incremented.
pub fn route<P, I>(msg: &mut RoutedMessage<P>, at_pos: Position, neighbors: I, clock: f64) -> Result<ForwardAction, RouteError>
where
    I: IntoIterator<Item = (NodeId, Position)>,
{
    if clock > msg.carry_deadline {
        return Err(RouteError::Expired);
    }
    if msg.dest_region.contains(&at_pos) {
        return Ok(ForwardAction::Deliver);
    }
    match next_hop(at_pos, &msg.dest_region, neighbors) {
        Some(n) if msg.hop_count < msg.hop_limit => {
            msg.hop_count += 1;
            Ok(ForwardAction::Forward(n))
        }
        Some(_) => Err(RouteError::HopLimitExceeded),
        None => Ok(ForwardAction::Carry),
    }
}

/// Bounded set of recently seen keys (message ids by default), evicting the
/// least recently used.
#[derive(Debug, Clone)]
pub struct SeenSet<K = MsgId> {
    capacity: usize,
    clock: u64,
    stamps: HashMap<K, u64>,
    order: BTreeMap<u64, K>,
}

impl<K: Copy + Eq + Hash> Default for SeenSet<K> {
    fn default() -> Self {
        Self::with_capacity(SEEN_CAPACITY)
    }
}

impl<K: Copy + Eq + Hash> SeenSet<K> {
    pub fn with_capacity(capacity: usize) -> Self {
        Self { capacity: capacity.max(1), clock: 0, stamps: HashMap::new(), order: BTreeMap::new() }
    }

    pub fn len(&self) -> usize {
        self.stamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stamps.is_empty()
    }

    pub fn contains(&self, id: &K) -> bool {
        self.stamps.contains_key(id)
    }

    /// Records `id`; returns `true` when it had not been seen.
    pub fn insert(&mut self, id: K) -> bool {
        self.clock += 1;
        let fresh = match self.stamps.insert(id, self.clock) {
            Some(old) => {
                self.order.remove(&old);
                false
            }
            None => true,
        };
        self.order.insert(self.clock, id);
        while self.stamps.len() > self.capacity {
            let (_, evict) = self.order.pop_first().expect("non-empty");
            self.stamps.remove(&evict);
        }
        fresh
    }
}
