//! Per-node information management: items, profiles, the local store,
//! en-passant sync, neighborhood queries and remote-query bookkeeping.

mod asrq;
mod item;
mod selector;
mod store;
mod sync;

pub use asrq::{Asrq, ChunkOutcome, QueryBook, QueryId, QueryState, ResultChunk, ResultStatus};
pub use item::{join, Category, Evaluation, InfoItem, ItemId, Joined, Payload, Rating};
pub use selector::{PayloadMatch, Profile, Selector};
pub use store::{plan_transfer, Digest, DigestEntry, ItemStore, PutChange, PutOutcome};
pub use sync::{OpenSyncQuery, SyncQueryId, SyncTable, DEFAULT_HOP_RADIUS};

use thiserror::Error;

use crate::geometry::Position;
use crate::kernel::NodeId;
use crate::market::{select_market, KnownMarkets, MarketDescriptor, SelectionWeights};
use crate::plan::MovementPlan;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AdsError {
    #[error("no information market is known")]
    NoKnownMarket,
    #[error("unknown query {0}")]
    UnknownQuery(QueryId),
    #[error("invalid selector")]
    InvalidSelector,
    #[error("ttl must be positive")]
    InvalidTtl,
    #[error("movement plan does not cover the query lifetime")]
    PlanTooShort,
}

/// Middleware state of one mobile device.
#[derive(Debug, Clone)]
pub struct AdsNode {
    pub id: NodeId,
    pub profile: Profile,
    pub store: ItemStore,
    pub known: KnownMarkets,
    pub queries: QueryBook,
    pub sync: SyncTable,
    next_item: u64,
    next_query: u64,
    next_sync: u64,
}

impl AdsNode {
    pub fn new(profile: Profile) -> Self {
        Self {
            id: profile.node,
            profile,
            store: ItemStore::new(),
            known: KnownMarkets::new(),
            queries: QueryBook::new(),
            sync: SyncTable::default(),
            next_item: 1,
            next_query: 1,
            next_sync: 1,
        }
    }

    /// Ensures freshly minted ids start above `counter`.
    pub fn reserve_item_ids(&mut self, counter: u64) {
        self.next_item = self.next_item.max(counter + 1);
    }

    pub fn next_item_id(&mut self) -> ItemId {
        let id = ItemId { origin: self.id, counter: self.next_item };
        self.next_item += 1;
        id
    }

    pub fn next_sync_id(&mut self) -> SyncQueryId {
        let id = SyncQueryId { origin: self.id, seq: self.next_sync };
        self.next_sync += 1;
        id
    }

    /// Builds an ASRQ, registers it locally and returns it together with the
    /// market it should be routed to.
    pub fn launch_asrq(
        &mut self,
        selector: Selector,
        ttl: f64,
        plan: MovementPlan,
        expected_results: Option<usize>,
        clock: f64,
        here: Position,
        weights: SelectionWeights,
    ) -> Result<(Asrq, MarketDescriptor), AdsError> {
        if !selector.is_valid() {
            return Err(AdsError::InvalidSelector);
        }
        if !(ttl > 0.0) {
            return Err(AdsError::InvalidTtl);
        }
        if !plan.covers(clock, clock + ttl) {
            return Err(AdsError::PlanTooShort);
        }
        let known = self.known.to_vec();
        let market = select_market(&selector.categories, here, &known, weights)
            .map_err(|_| AdsError::NoKnownMarket)?
            .clone();
        let query_id = QueryId { initiator: self.id, seq: self.next_query };
        self.next_query += 1;
        let asrq = Asrq {
            query_id,
            initiator: self.id,
            selector,
            launch_time: clock,
            ttl,
            movement_plan: plan,
            expected_results,
            known_markets: known,
        };
        self.queries.register(asrq.clone());
        Ok((asrq, market))
    }
}
