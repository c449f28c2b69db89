use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::ads::{
    plan_transfer, AdsNode, Category, ChunkOutcome, InfoItem, ItemId, OpenSyncQuery, PutChange, PutOutcome, Rating,
    ResultChunk, Selector, SyncQueryId,
};
use crate::carla::{self, JokerKind, QuizState};
use crate::geometry::{Position, Region};
use crate::kernel::{Handler, Kernel, LinkChange, NodeId, Target};
use crate::market::{
    chunk_destination, rendezvous_top_k, select_market, Market, MarketDescriptor, MarketId, MergeOutcome, PlannedChunk,
    SelectionWeights,
};
use crate::plan::MovementPlan;
use crate::routing::{route, ForwardAction, MsgId, RoutedMessage, SeenSet};
use crate::scenario::{Action, AdsSection, Directive, MaterialSpec, NodeRole};
use crate::support::{SupportAction, SupportNode};
use crate::trace::TraceEvent;

use super::messages::{Message, Routed, RoutedPayload};

#[derive(Debug, Clone, PartialEq)]
pub enum Timer {
    Script(usize),
    SyncTimeout(SyncQueryId),
    AckTimeout(MsgId),
    /// Send the next queued exchange item to this peer.
    Pace(NodeId),
}

pub(crate) type K = Kernel<Message, Timer>;

#[derive(Debug, Default)]
pub(crate) struct Router {
    /// `(msg, hop_count)` pairs already accepted; retransmissions repeat both.
    seen: SeenSet<(MsgId, u32)>,
    carried: Vec<Routed>,
    awaiting: BTreeMap<MsgId, Routed>,
    next_seq: u64,
}

/// Application state of every node, driven by kernel callbacks.
pub(crate) struct Network {
    pub params: AdsSection,
    pub roles: BTreeMap<NodeId, NodeRole>,
    pub ads: BTreeMap<NodeId, AdsNode>,
    pub routers: BTreeMap<NodeId, Router>,
    pub support: BTreeMap<NodeId, SupportNode>,
    /// Support node ids per market index.
    pub market_support: Vec<Vec<NodeId>>,
    pub markets: Vec<Market>,
    pub plans: BTreeMap<NodeId, MovementPlan>,
    pub regions: BTreeMap<String, Region>,
    pub labels: BTreeMap<String, ItemId>,
    pub script: Vec<Directive>,
    pub quiz: BTreeMap<NodeId, QuizState>,
    last_exchange: BTreeMap<(NodeId, NodeId), f64>,
    sessions: BTreeMap<(NodeId, NodeId), VecDeque<InfoItem>>,
    peer_interests: BTreeMap<(NodeId, NodeId), BTreeSet<Category>>,
    eval_stamp: u64,
    next_purge: f64,
}

impl Network {
    pub fn new(params: AdsSection) -> Self {
        let next_purge = params.purge_interval;
        Self {
            params,
            roles: BTreeMap::new(),
            ads: BTreeMap::new(),
            routers: BTreeMap::new(),
            support: BTreeMap::new(),
            market_support: Vec::new(),
            markets: Vec::new(),
            plans: BTreeMap::new(),
            regions: BTreeMap::new(),
            labels: BTreeMap::new(),
            script: Vec::new(),
            quiz: BTreeMap::new(),
            last_exchange: BTreeMap::new(),
            sessions: BTreeMap::new(),
            peer_interests: BTreeMap::new(),
            eval_stamp: 0,
            next_purge,
        }
    }

    fn weights(&self) -> SelectionWeights {
        SelectionWeights { w_cat: self.params.w_cat, w_dist: self.params.w_dist }
    }

    fn emit(k: &mut K, node: Option<NodeId>, kind: &str, f: impl FnOnce(TraceEvent) -> TraceEvent) {
        let ev = f(k.event(node, kind));
        k.emit(ev);
    }

    fn error(k: &mut K, node: NodeId, op: &str, reason: impl std::fmt::Display) {
        Self::emit(k, Some(node), "ERROR", |e| e.with("op", op).with("reason", reason));
    }

    fn ads_neighbors(&self, k: &K, n: NodeId) -> Vec<NodeId> {
        k.neighbors(n).unwrap_or_default().into_iter().filter(|m| self.ads.contains_key(m)).collect()
    }

    fn send(k: &mut K, from: NodeId, to: NodeId, msg: Message) {
        // Senders only address current neighbors; a peer that just moved
        // away is a lost transmission, not an error.
        let _ = k.send(from, to, msg);
    }

    // ----- local store ---------------------------------------------------

    pub fn store_put(&mut self, k: &mut K, node: NodeId, item: InfoItem, via: &str) -> Option<PutOutcome> {
        let ads = self.ads.get_mut(&node)?;
        let id = item.id;
        let before = ads.store.get(&id).map(|i| i.version);
        let out = ads.store.put_local(item);
        let grew = match out.change {
            PutChange::Inserted => true,
            PutChange::Updated => before.is_some_and(|v| out.version > v),
            _ => false,
        };
        if grew {
            Self::emit(k, Some(node), "STORE", |e| e.with("item", id).with("v", out.version).with("via", via));
        }
        if out.conflict {
            Self::emit(k, Some(node), "ANOMALY", |e| e.with("item", id).with("reason", "equal_version_conflict"));
        }
        Some(out)
    }

    // ----- market descriptors -------------------------------------------

    /// Merges descriptors at `node`; an ADS node pushes whatever was new
    /// to it on to its neighbors.
    pub fn learn(&mut self, k: &mut K, node: NodeId, descs: &[MarketDescriptor]) {
        if let Some(s) = self.support.get_mut(&node) {
            for (m, outcome) in s.directory.merge_all(descs) {
                if outcome.changed() {
                    let at = descs.iter().filter(|d| d.market_id == m).map(|d| d.advertised_at).fold(f64::MIN, f64::max);
                    Self::emit(k, Some(node), "SUP_LEARN", |e| e.with("market", m).with("advertised", format!("{at:.3}")));
                }
            }
            return;
        }
        let Some(ads) = self.ads.get_mut(&node) else { return };
        let mut changed = Vec::new();
        let mut fresh = Vec::new();
        for d in descs {
            match ads.known.merge(d) {
                MergeOutcome::New => {
                    fresh.push(d.market_id);
                    changed.push(d.clone());
                }
                MergeOutcome::Refreshed => changed.push(d.clone()),
                MergeOutcome::Stale => {}
            }
        }
        for m in fresh {
            Self::emit(k, Some(node), "KNOW_MKT", |e| e.with("market", m));
        }
        if !changed.is_empty() {
            for nb in k.neighbors(node).unwrap_or_default() {
                Self::send(k, node, nb, Message::MarketAdv { descriptors: changed.clone() });
            }
        }
    }

    fn on_link_up(&mut self, k: &mut K, a: NodeId, b: NodeId) {
        for (x, y) in [(a, b), (b, a)] {
            let Some(ads) = self.ads.get(&x) else { continue };
            if !ads.known.is_empty() {
                let descriptors = ads.known.to_vec();
                Self::send(k, x, y, Message::MarketAdv { descriptors });
            }
            if self.support.contains_key(&y) {
                Self::send(k, x, y, Message::SupLookup);
            }
        }
    }

    // ----- geographic routing -------------------------------------------

    pub fn originate(&mut self, k: &mut K, node: NodeId, dest: Region, deadline: f64, payload: RoutedPayload) -> MsgId {
        let hop_limit = self.params.hop_limit;
        let router = self.routers.entry(node).or_default();
        let id = MsgId { origin: node, seq: router.next_seq };
        router.next_seq += 1;
        router.seen.insert((id, 0));
        let msg = RoutedMessage::new(id, dest, deadline, payload).with_hop_limit(hop_limit);
        Self::emit(k, Some(node), "ROUTE", |e| {
            e.with("msg", id)
                .with("kind", msg.payload.kind())
                .with("dest", dest.center)
                .with("r", format!("{:.3}", dest.radius))
                .with("deadline", format!("{deadline:.3}"))
        });
        self.process_routed(k, node, msg, false);
        id
    }

    fn process_routed(&mut self, k: &mut K, at: NodeId, mut msg: Routed, requeued: bool) {
        let clock = k.clock();
        let Ok(pos) = k.position(at) else { return };
        let nbrs = self.ads_neighbors(k, at);
        if let RoutedPayload::Chunk { chunk, plan } = &msg.payload {
            let initiator = chunk.query_id.initiator;
            if at == initiator {
                Self::emit(k, Some(at), "DELIVER", |e| e.with("msg", msg.msg_id).with("hop", msg.hop_count));
                let RoutedPayload::Chunk { chunk, .. } = msg.payload else { unreachable!() };
                self.accept_chunk(k, at, &chunk);
                return;
            }
            if clock <= msg.carry_deadline && nbrs.contains(&initiator) && msg.hop_count < msg.hop_limit {
                msg.hop_count += 1;
                self.forward(k, at, initiator, msg);
                return;
            }
            let radio = *k.radio();
            if let Some(dest) = chunk_destination(plan, clock, pos, &radio) {
                if dest != msg.dest_region {
                    Self::emit(k, Some(at), "RETARGET", |e| e.with("msg", msg.msg_id).with("dest", dest.center));
                    msg.dest_region = dest;
                }
            }
        }
        let candidates: Vec<(NodeId, Position)> =
            nbrs.iter().filter_map(|n| k.position(*n).ok().map(|p| (*n, p))).collect();
        match route(&mut msg, pos, candidates, clock) {
            Ok(ForwardAction::Deliver) => self.deliver(k, at, msg, requeued),
            Ok(ForwardAction::Forward(n)) => self.forward(k, at, n, msg),
            Ok(ForwardAction::Carry) => {
                if !requeued {
                    Self::emit(k, Some(at), "CARRY", |e| e.with("msg", msg.msg_id));
                }
                self.routers.entry(at).or_default().carried.push(msg);
            }
            Err(err) => {
                Self::emit(k, Some(at), "DROP", |e| e.with("msg", msg.msg_id).with("reason", err.code()));
            }
        }
    }

    fn forward(&mut self, k: &mut K, at: NodeId, to: NodeId, msg: Routed) {
        let id = msg.msg_id;
        Self::emit(k, Some(at), "FWD", |e| e.with("msg", id).with("to", to).with("hop", msg.hop_count));
        let mut retry = msg.clone();
        retry.hop_count -= 1;
        self.routers.entry(at).or_default().awaiting.insert(id, retry);
        Self::send(k, at, to, Message::Routed(Box::new(msg)));
        let wait = 3.0 * k.radio().latency_per_hop;
        k.schedule_timer(wait, Target::Node(at), Timer::AckTimeout(id));
    }

    fn on_routed(&mut self, k: &mut K, at: NodeId, from: NodeId, msg: Routed) {
        if !self.ads.contains_key(&at) {
            return;
        }
        Self::send(k, at, from, Message::Ack { msg: msg.msg_id });
        let router = self.routers.entry(at).or_default();
        if !router.seen.insert((msg.msg_id, msg.hop_count)) {
            return;
        }
        self.process_routed(k, at, msg, false);
    }

    fn on_ack_timeout(&mut self, k: &mut K, at: NodeId, id: MsgId) {
        let Some(msg) = self.routers.get_mut(&at).and_then(|r| r.awaiting.remove(&id)) else { return };
        Self::emit(k, Some(at), "RETRY", |e| e.with("msg", id));
        self.process_routed(k, at, msg, false);
    }

    fn deliver(&mut self, k: &mut K, at: NodeId, msg: Routed, requeued: bool) {
        let clock = k.clock();
        match &msg.payload {
            RoutedPayload::Chunk { .. } => {
                // Inside the target region but not at the initiator: hold it
                // until the initiator comes within range.
                if !requeued {
                    Self::emit(k, Some(at), "HOLD", |e| e.with("msg", msg.msg_id));
                }
                self.routers.entry(at).or_default().carried.push(msg);
            }
            RoutedPayload::Probe => {
                Self::emit(k, Some(at), "DELIVER", |e| e.with("msg", msg.msg_id).with("hop", msg.hop_count));
            }
            RoutedPayload::Publish { market, .. } | RoutedPayload::Asrq { market, .. } => {
                let mi = market.0 as usize;
                if !self.markets.get(mi).is_some_and(|m| m.is_member(at)) {
                    // Entered the region since the last membership update.
                    self.routers.entry(at).or_default().carried.push(msg);
                    return;
                }
                Self::emit(k, Some(at), "DELIVER", |e| e.with("msg", msg.msg_id).with("hop", msg.hop_count));
                match msg.payload {
                    RoutedPayload::Publish { item, .. } => self.ingest(k, mi, item, at),
                    RoutedPayload::Asrq { asrq, .. } => {
                        let qid = asrq.query_id;
                        match self.markets[mi].register(asrq, at, clock) {
                            Ok(fresh) => {
                                if fresh {
                                    let m = self.markets[mi].id;
                                    Self::emit(k, Some(at), "MKT_QREG", |e| e.with("market", m).with("query", qid));
                                }
                                let chunks = self.markets[mi].service(clock, Some(qid));
                                self.dispatch_chunks(k, mi, chunks);
                            }
                            Err(err) => {
                                Self::emit(k, Some(at), "DROP", |e| {
                                    e.with("msg", msg.msg_id).with("reason", "expired_query").with("detail", err)
                                });
                            }
                        }
                    }
                    _ => unreachable!(),
                }
            }
        }
    }

    fn ingest(&mut self, k: &mut K, mi: usize, item: InfoItem, at: NodeId) {
        let id = item.id;
        let m = self.markets[mi].id;
        match self.markets[mi].ingest(item, at) {
            Ok(rep) => {
                Self::emit(k, Some(at), "MKT_PUB", |e| e.with("market", m).with("item", id));
                Self::emit_repl(k, m, id, &rep.holders, rep.copied_to.len(), rep.degraded);
            }
            Err(err) => Self::error(k, at, "ingest", err),
        }
    }

    fn emit_repl(k: &mut K, m: MarketId, id: ItemId, holders: &[NodeId], copied: usize, degraded: bool) {
        let hs = holders.iter().map(ToString::to_string).collect::<Vec<_>>().join(",");
        Self::emit(k, None, "MKT_REPL", |e| {
            e.with("market", m).with("item", id).with("holders", hs).with("copied", copied).with("degraded", u8::from(degraded))
        });
    }

    fn piggyback(&self, mi: usize) -> Vec<MarketDescriptor> {
        let m = &self.markets[mi];
        let mut known = crate::market::KnownMarkets::new();
        known.merge(m.descriptor());
        for n in m.members() {
            if let Some(a) = self.ads.get(&n) {
                known.merge_all(a.known.iter());
            }
        }
        known.to_vec()
    }

    fn dispatch_chunks(&mut self, k: &mut K, mi: usize, chunks: Vec<PlannedChunk>) {
        if chunks.is_empty() {
            return;
        }
        let piggyback = self.piggyback(mi);
        let center = self.markets[mi].region.center;
        let mid = self.markets[mi].id;
        for PlannedChunk { asrq, mut chunk } in chunks {
            let radio = *k.radio();
            let Some(dest) = chunk_destination(&asrq.movement_plan, k.clock(), center, &radio) else { continue };
            let sender = self.markets[mi]
                .members()
                .filter_map(|n| k.position(n).ok().map(|p| (p.distance(&dest.center), n)))
                .min_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)))
                .map(|(_, n)| n);
            let Some(sender) = sender else { continue };
            chunk.piggyback = piggyback.clone();
            Self::emit(k, Some(sender), "MKT_CHUNK", |e| {
                e.with("market", mid)
                    .with("query", chunk.query_id)
                    .with("seq", chunk.chunk_seq)
                    .with("items", chunk.items.len())
                    .with("dest", dest.center)
            });
            self.originate(k, sender, dest, asrq.expires_at(), RoutedPayload::Chunk { chunk, plan: asrq.movement_plan });
        }
    }

    fn accept_chunk(&mut self, k: &mut K, at: NodeId, chunk: &ResultChunk) {
        let clock = k.clock();
        let Some(ads) = self.ads.get_mut(&at) else { return };
        let before: BTreeMap<ItemId, u64> =
            chunk.items.iter().filter_map(|i| ads.store.get(&i.id).map(|s| (i.id, s.version))).collect();
        let mut known = ads.known.clone();
        let out = ads.queries.accept_chunk(chunk, &mut ads.store, &mut known, clock);
        let mut grown = Vec::new();
        for i in &chunk.items {
            if let Some(now) = ads.store.get(&i.id) {
                if before.get(&i.id).is_none_or(|v| now.version > *v) {
                    grown.push((i.id, now.version));
                }
            }
        }
        let (status, fresh) = match &out {
            ChunkOutcome::Accepted { new_items } => ("accepted", new_items.len()),
            ChunkOutcome::Duplicate => ("duplicate", 0),
            ChunkOutcome::UnknownQuery => ("unknown_query", 0),
        };
        Self::emit(k, Some(at), "CHUNK_RX", |e| {
            e.with("query", chunk.query_id)
                .with("market", chunk.from_market)
                .with("seq", chunk.chunk_seq)
                .with("items", chunk.items.len())
                .with("new", fresh)
                .with("status", status)
        });
        for (id, v) in grown {
            Self::emit(k, Some(at), "STORE", |e| e.with("item", id).with("v", v).with("via", "chunk"));
        }
        self.learn(k, at, &chunk.piggyback);
    }

    fn retry_carried(&mut self, k: &mut K) {
        let holders: Vec<NodeId> = self.routers.iter().filter(|(_, r)| !r.carried.is_empty()).map(|(n, _)| *n).collect();
        for n in holders {
            let list = std::mem::take(&mut self.routers.get_mut(&n).expect("listed").carried);
            for msg in list {
                self.process_routed(k, n, msg, true);
            }
        }
    }

    // ----- markets --------------------------------------------------------

    fn market_round(&mut self, k: &mut K) {
        let clock = k.clock();
        for mi in 0..self.markets.len() {
            let region = self.markets[mi].region;
            let inside: BTreeSet<NodeId> = self
                .ads
                .keys()
                .copied()
                .filter(|n| k.position(*n).is_ok_and(|p| region.contains(&p)))
                .collect();
            let mid = self.markets[mi].id;
            // Nodes crossing the boundary are still in radio range this
            // tick, so a support node can pull their shares before they go.
            for s in self.market_support[mi].clone() {
                let sup = self.support.get_mut(&s).expect("support node");
                if inside.len() < sup.density_threshold && self.markets[mi].member_count() > 0 {
                    let n = sup.absorb_pool(&self.markets[mi]);
                    if n > 0 {
                        let held = sup.absorbed(mid).len();
                        Self::emit(k, Some(s), "SUP_ABSORB", |e| e.with("market", mid).with("items", n).with("held", held));
                    }
                }
            }
            let delta = self.markets[mi].update_membership(&inside);
            let desc = self.markets[mi].descriptor().clone();
            for j in &delta.joined {
                Self::emit(k, Some(*j), "MKT_JOIN", |e| e.with("market", mid));
                self.learn(k, *j, std::slice::from_ref(&desc));
            }
            for l in &delta.left {
                Self::emit(k, Some(*l), "MKT_LEAVE", |e| e.with("market", mid));
                self.learn(k, *l, std::slice::from_ref(&desc));
            }
            if !delta.is_empty() {
                for (id, rep) in self.markets[mi].rebalance() {
                    if !rep.copied_to.is_empty() {
                        Self::emit_repl(k, mid, id, &rep.holders, rep.copied_to.len(), rep.degraded);
                    }
                }
            }
            for s in self.market_support[mi].clone() {
                let sup = self.support.get_mut(&s).expect("support node");
                let before = self.markets[mi].pool_ids().len();
                let action = sup.observe(&mut self.markets[mi]);
                let held = sup.absorbed(mid).len();
                match action {
                    SupportAction::Absorbed(n) if n > 0 => {
                        Self::emit(k, Some(s), "SUP_ABSORB", |e| e.with("market", mid).with("items", n).with("held", held));
                    }
                    SupportAction::Reseeded(n) => {
                        let after = self.markets[mi].pool_ids().len();
                        Self::emit(k, Some(s), "SUP_RESEED", |e| {
                            e.with("market", mid).with("items", n).with("pool", after).with("before", before)
                        });
                    }
                    _ => {}
                }
            }
            let chunks = self.markets[mi].service(clock, None);
            self.dispatch_chunks(k, mi, chunks);
            if let Some(d) = self.markets[mi].maybe_refresh(clock) {
                let cats = d.categories.iter().map(|(c, n)| format!("{}:{n}", c.0)).collect::<Vec<_>>().join(",");
                Self::emit(k, None, "MKT_ADV", |e| e.with("market", mid).with("cats", cats));
                for s in self.market_support[mi].clone() {
                    self.learn(k, s, std::slice::from_ref(&d));
                }
                let members: Vec<NodeId> = self.markets[mi].members().collect();
                for n in members {
                    self.learn(k, n, std::slice::from_ref(&d));
                }
            }
            let m = &self.markets[mi];
            if m.member_count() > 0 {
                let members: Vec<NodeId> = m.members().collect();
                let pool = m.pool_ids();
                let ok = pool.iter().all(|id| {
                    let want: BTreeSet<NodeId> = rendezvous_top_k(*id, members.iter().copied(), m.params.k).into_iter().collect();
                    m.holders(id) == want
                });
                let (count, items) = (members.len(), pool.len());
                Self::emit(k, None, "MKT_CHECK", |e| {
                    e.with("market", mid)
                        .with("members", count)
                        .with("items", items)
                        .with("ok", u8::from(ok))
                        .with("stable", u8::from(delta.is_empty()))
                });
            }
        }
    }

    pub fn publish(&mut self, k: &mut K, node: NodeId, item: InfoItem) -> Option<MarketId> {
        let Some(ads) = self.ads.get(&node) else { return None };
        let Ok(pos) = k.position(node) else { return None };
        let cats: BTreeSet<Category> = [item.category.clone()].into();
        let known = ads.known.to_vec();
        let chosen = match select_market(&cats, pos, &known, self.weights()) {
            Ok(d) => d.clone(),
            Err(err) => {
                Self::error(k, node, "publish", err);
                return None;
            }
        };
        let mi = chosen.market_id.0 as usize;
        if mi >= self.markets.len() {
            return None;
        }
        let id = item.id;
        if self.markets[mi].is_member(node) {
            Self::emit(k, Some(node), "PUBLISH", |e| e.with("item", id).with("market", chosen.market_id).with("mode", "direct"));
            self.ingest(k, mi, item, node);
        } else {
            Self::emit(k, Some(node), "PUBLISH", |e| e.with("item", id).with("market", chosen.market_id).with("mode", "routed"));
            let deadline = k.clock() + self.params.asrq_ttl;
            self.originate(k, node, chosen.region, deadline, RoutedPayload::Publish { item, market: chosen.market_id });
        }
        Some(chosen.market_id)
    }

    // ----- en-passant exchange -------------------------------------------

    fn exchange_round(&mut self, k: &mut K) {
        let clock = k.clock();
        let interval = self.params.exchange_interval;
        let pairs: Vec<(NodeId, NodeId)> = k
            .links()
            .iter()
            .copied()
            .filter(|(a, b)| self.ads.contains_key(a) && self.ads.contains_key(b))
            .filter(|p| self.last_exchange.get(p).is_none_or(|t| clock - t >= interval))
            .collect();
        for (a, b) in pairs {
            self.last_exchange.insert((a, b), clock);
            Self::emit(k, Some(a), "EXCH", |e| e.with("peer", b));
            self.send_profile(k, a, b, true);
        }
    }

    fn send_profile(&mut self, k: &mut K, from: NodeId, to: NodeId, reply: bool) {
        let Some(ads) = self.ads.get(&from) else { return };
        let interests = ads.profile.interests.clone();
        let entries = ads.store.digest(&interests).into_iter().collect();
        let budget = ads.profile.exchange_budget;
        Self::send(k, from, to, Message::Profile { interests, budget, reply });
        Self::send(k, from, to, Message::Digest { entries });
    }

    fn on_digest(&mut self, k: &mut K, at: NodeId, from: NodeId, entries: Vec<(crate::ads::ItemId, crate::ads::DigestEntry)>) {
        let Some(interests) = self.peer_interests.remove(&(at, from)) else { return };
        let Some(ads) = self.ads.get(&at) else { return };
        let digest = entries.into_iter().collect();
        let items = plan_transfer(&ads.store, &interests, &digest, ads.profile.exchange_budget);
        if items.is_empty() {
            return;
        }
        self.sessions.insert((at, from), items.into());
        self.pace(k, at, from);
    }

    fn pace(&mut self, k: &mut K, at: NodeId, peer: NodeId) {
        let Some(queue) = self.sessions.get_mut(&(at, peer)) else { return };
        if !k.in_range(at, peer) {
            let left = queue.len();
            self.sessions.remove(&(at, peer));
            Self::emit(k, Some(at), "LINK_LOST", |e| e.with("peer", peer).with("unsent", left));
            return;
        }
        let Some(item) = queue.pop_front() else {
            self.sessions.remove(&(at, peer));
            return;
        };
        let more = !queue.is_empty();
        if !more {
            self.sessions.remove(&(at, peer));
        }
        Self::send(k, at, peer, Message::Items { item });
        if more {
            let gap = k.radio().latency_per_hop;
            k.schedule_timer(gap, Target::Node(at), Timer::Pace(peer));
        }
    }

    // ----- neighborhood queries -----------------------------------------

    pub fn query_sync(&mut self, k: &mut K, node: NodeId, sel: Selector, timeout: f64, hop_radius: u32) -> Option<SyncQueryId> {
        let clock = k.clock();
        let ads = self.ads.get_mut(&node)?;
        let id = ads.next_sync_id();
        let mut unbounded = sel.clone();
        unbounded.max_results = None;
        let local = ads.store.query_local(&unbounded);
        let n_local = local.len();
        let deadline = clock + timeout;
        ads.sync.open.insert(id, OpenSyncQuery::new(sel.clone(), deadline, local));
        ads.sync.seen.insert(id);
        Self::emit(k, Some(node), "SYNC_START", |e| {
            e.with("query", id).with("radius", hop_radius).with("timeout", format!("{timeout:.3}")).with("local", n_local)
        });
        if hop_radius > 0 {
            for nb in self.ads_neighbors(k, node) {
                Self::send(k, node, nb, Message::SyncQuery { query: id, selector: sel.clone(), ttl: hop_radius, deadline });
            }
        }
        k.schedule_timer(timeout, Target::Node(node), Timer::SyncTimeout(id));
        Some(id)
    }

    fn on_sync_query(&mut self, k: &mut K, at: NodeId, from: NodeId, query: SyncQueryId, selector: Selector, ttl: u32, deadline: f64) {
        if k.clock() > deadline {
            return;
        }
        let Some(ads) = self.ads.get_mut(&at) else { return };
        if !ads.sync.seen.insert(query) {
            return;
        }
        ads.sync.parents.insert(query, from);
        let mut unbounded = selector.clone();
        unbounded.max_results = None;
        let items = ads.store.query_local(&unbounded);
        if !items.is_empty() {
            Self::send(k, at, from, Message::SyncReply { query, items });
        }
        if ttl > 1 {
            for nb in self.ads_neighbors(k, at) {
                if nb != from && nb != query.origin {
                    Self::send(k, at, nb, Message::SyncQuery { query, selector: selector.clone(), ttl: ttl - 1, deadline });
                }
            }
        }
    }

    fn on_sync_reply(&mut self, k: &mut K, at: NodeId, query: SyncQueryId, items: Vec<InfoItem>) {
        let Some(ads) = self.ads.get_mut(&at) else { return };
        if query.origin == at {
            if let Some(open) = ads.sync.open.get_mut(&query) {
                if !open.merge_reply(&items) {
                    Self::emit(k, Some(at), "SYNC_LATE", |e| e.with("query", query).with("items", items.len()));
                }
            }
            return;
        }
        let Some(parent) = ads.sync.parents.get(&query).copied() else { return };
        if k.in_range(at, parent) {
            Self::send(k, at, parent, Message::SyncReply { query, items });
        }
    }

    fn on_sync_timeout(&mut self, k: &mut K, at: NodeId, query: SyncQueryId) {
        let Some(open) = self.ads.get_mut(&at).and_then(|a| a.sync.open.get_mut(&query)) else { return };
        open.close();
        let n = open.results().len();
        Self::emit(k, Some(at), "SYNC_DONE", |e| e.with("query", query).with("results", n));
    }

    // ----- fake removal ---------------------------------------------------

    fn purge_round(&mut self, k: &mut K) {
        let roles = &self.roles;
        let is_staff = |n: NodeId| roles.get(&n) == Some(&NodeRole::Staff);
        let mut hidden = Vec::new();
        for (n, ads) in self.ads.iter_mut() {
            for id in carla::purge_fakes(&mut ads.store, is_staff, self.params.fake_threshold, self.params.fake_min_evaluations) {
                hidden.push((*n, id));
            }
        }
        for (n, id) in hidden {
            Self::emit(k, Some(n), "HIDE", |e| e.with("item", id));
        }
    }

    // ----- workload -------------------------------------------------------

    fn run_directive(&mut self, k: &mut K, index: usize) {
        let Some(d) = self.script.get(index).cloned() else { return };
        let node = NodeId(d.action.actor());
        let clock = k.clock();
        match d.action {
            Action::Release { course, region, items, .. } => self.release(k, node, &course, &region, &items),
            Action::Attend { region, until, .. } => {
                let r = self.regions[&region];
                if let Ok(m) = k.mobility_mut(node) {
                    m.hold_in(r, until);
                }
                Self::emit(k, Some(node), "ATTEND", |e| e.with("region", region).with("until", format!("{until:.3}")));
            }
            Action::SkipLecture { course, ttl, expected_results, .. } => {
                let ttl = ttl.unwrap_or(self.params.asrq_ttl);
                let sel = Selector::categories([carla::SLIDE, carla::ARTICLE]).with_predicate("course", &course);
                self.fetch(k, node, sel, ttl, expected_results);
            }
            Action::Annotate { label, target, text, .. } => {
                let item = carla::annotation(self.labels[&label], self.labels[&target], &text, clock);
                self.create(k, node, item, None);
            }
            Action::Ask { label, target, choices, correct, .. } => {
                let target = target.map(|t| self.labels[&t]);
                let item = carla::question(self.labels[&label], target, &choices, correct, clock);
                self.create(k, node, item, None);
            }
            Action::Link { label, a, b, .. } => {
                let item = carla::link(self.labels[&label], self.labels[&a], self.labels[&b], clock);
                self.create(k, node, item, None);
            }
            Action::Evaluate { item, rating, .. } => {
                let id = self.labels[&item];
                let rating = Rating::from_value(rating).unwrap_or(Rating::Up);
                self.eval_stamp += 1;
                let stamp = self.eval_stamp;
                let Some(ads) = self.ads.get_mut(&node) else { return };
                match carla::evaluate_item(&mut ads.store, node, id, rating, stamp) {
                    Ok(()) => Self::emit(k, Some(node), "EVAL", |e| e.with("item", id).with("rating", rating.value())),
                    Err(err) => Self::error(k, node, "evaluate", err),
                }
            }
            Action::Answer { question, choice, .. } => self.answer(k, node, self.labels[&question], choice),
            Action::Joker { kind, question, .. } => self.joker(k, node, kind, self.labels[&question]),
            Action::Rank { .. } => self.rank(k, node),
            Action::SyncQuery { categories, course, timeout, hop_radius, .. } => {
                let mut sel = Selector::categories(categories.iter().map(|c| Category::new(c)));
                if let Some(c) = course {
                    sel = sel.with_predicate("course", &c);
                }
                let radius = hop_radius.unwrap_or(self.params.hop_radius);
                self.query_sync(k, node, sel, timeout, radius);
            }
        }
    }

    fn create(&mut self, k: &mut K, node: NodeId, item: InfoItem, course: Option<&str>) {
        let (id, cat, v) = (item.id, item.category.clone(), item.version);
        Self::emit(k, Some(node), "CREATE", |e| {
            let e = e.with("item", id).with("cat", &cat.0).with("v", v);
            match course {
                Some(c) => e.with("course", c),
                None => e,
            }
        });
        self.store_put(k, node, item.clone(), "local");
        self.publish(k, node, item);
    }

    fn release(&mut self, k: &mut K, staff: NodeId, course: &str, region: &str, items: &[MaterialSpec]) {
        let r = self.regions[region];
        if !k.position(staff).is_ok_and(|p| r.contains(&p)) {
            Self::error(k, staff, "release", format!("not inside {region}"));
            return;
        }
        for m in items {
            let mut item = carla::material(self.labels[&m.label], m.kind, course, m.index, k.clock());
            item.version = m.version;
            self.create(k, staff, item, Some(course));
        }
    }

    pub fn fetch(&mut self, k: &mut K, node: NodeId, sel: Selector, ttl: f64, expected: Option<usize>) -> Option<crate::ads::QueryId> {
        let clock = k.clock();
        let Some(plan) = self.plans.get(&node).cloned() else {
            Self::error(k, node, "skip_lecture", "no movement plan");
            return None;
        };
        let pos = k.position(node).ok()?;
        let weights = self.weights();
        let ads = self.ads.get_mut(&node)?;
        match ads.launch_asrq(sel, ttl, plan, expected, clock, pos, weights) {
            Ok((asrq, market)) => {
                let qid = asrq.query_id;
                let course = asrq.selector.predicate.as_ref().map(|p| p.value.clone()).unwrap_or_default();
                let cats = asrq.selector.categories.iter().map(|c| c.0.clone()).collect::<Vec<_>>().join(",");
                let expires = asrq.expires_at();
                Self::emit(k, Some(node), "ASRQ_LAUNCH", |e| {
                    e.with("query", qid)
                        .with("market", market.market_id)
                        .with("cats", cats)
                        .with("course", course)
                        .with("expires", format!("{expires:.3}"))
                });
                self.originate(k, node, market.region, expires, RoutedPayload::Asrq { asrq, market: market.market_id });
                Some(qid)
            }
            Err(err) => {
                Self::error(k, node, "skip_lecture", err);
                None
            }
        }
    }

    fn answer(&mut self, k: &mut K, node: NodeId, question: ItemId, choice: usize) {
        let jokers = self.params.jokers_per_kind;
        let clock = k.clock();
        let Some(ads) = self.ads.get_mut(&node) else { return };
        let answer_id = ads.next_item_id();
        let quiz = self.quiz.entry(node).or_insert_with(|| QuizState::new(node, jokers));
        match quiz.answer(&mut ads.store, question, choice, answer_id, clock) {
            Ok(correct) => {
                Self::emit(k, Some(node), "ANSWER", |e| {
                    e.with("question", question).with("choice", choice).with("correct", u8::from(correct)).with("item", answer_id)
                });
                Self::emit(k, Some(node), "CREATE", |e| e.with("item", answer_id).with("cat", carla::ANSWER).with("v", 1));
                Self::emit(k, Some(node), "STORE", |e| e.with("item", answer_id).with("v", 1).with("via", "local"));
            }
            Err(err) => Self::error(k, node, "answer", err),
        }
    }

    fn joker(&mut self, k: &mut K, node: NodeId, kind: JokerKind, question: ItemId) {
        let jokers = self.params.jokers_per_kind;
        let Some(ads) = self.ads.get(&node) else { return };
        let quiz = self.quiz.entry(node).or_insert_with(|| QuizState::new(node, jokers));
        match quiz.use_joker(&ads.store, kind, question) {
            Ok(hint) => {
                let shown = match hint {
                    carla::Hint::Links(ids) | carla::Hint::Annotations(ids) => {
                        ids.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
                    }
                    carla::Hint::Statistics(t) => t.iter().map(|(c, n)| format!("{c}:{n}")).collect::<Vec<_>>().join(","),
                };
                Self::emit(k, Some(node), "JOKER", |e| e.with("kind", kind).with("question", question).with("hint", shown));
            }
            Err(err) => Self::error(k, node, "joker", err),
        }
    }

    fn rank(&mut self, k: &mut K, node: NodeId) {
        let players: BTreeSet<NodeId> =
            self.roles.iter().filter(|(_, r)| **r == NodeRole::Student).map(|(n, _)| *n).collect();
        let Some(ads) = self.ads.get(&node) else { return };
        let local = match carla::quiz_rank(&players, &ads.store, k.clock(), self.params.quiz_deadline) {
            Ok(r) => r,
            Err(err) => {
                Self::error(k, node, "rank", err);
                return;
            }
        };
        let mut global: BTreeMap<ItemId, &InfoItem> = BTreeMap::new();
        for a in self.ads.values() {
            for it in a.store.iter().filter(|i| i.category.0 == carla::ANSWER) {
                global.insert(it.id, it);
            }
        }
        let seen = ads.store.iter().filter(|i| i.category.0 == carla::ANSWER).count();
        let completeness = if global.is_empty() { 1.0 } else { seen as f64 / global.len() as f64 };
        let oracle = carla::rank(&players, &carla::scores_from(global.values().copied()));
        let fmt = |r: &[(NodeId, u32)]| r.iter().map(|(n, s)| format!("{n}:{s}")).collect::<Vec<_>>().join(",");
        let (lo, go) = (fmt(&local), fmt(&oracle));
        let agrees = u8::from(local == oracle);
        Self::emit(k, Some(node), "RANK", |e| {
            e.with("order", lo).with("completeness", format!("{completeness:.4}")).with("agrees", agrees)
        });
        Self::emit(k, Some(node), "RANK_ORACLE", |e| e.with("order", go));
    }
}

impl Handler<Message, Timer> for Network {
    fn on_message(&mut self, k: &mut K, to: NodeId, from: NodeId, msg: Message) {
        match msg {
            Message::Profile { interests, reply, .. } => {
                if !self.ads.contains_key(&to) {
                    return;
                }
                self.peer_interests.insert((to, from), interests);
                if reply {
                    self.send_profile(k, to, from, false);
                }
            }
            Message::Digest { entries } => self.on_digest(k, to, from, entries),
            Message::Items { item } => {
                self.store_put(k, to, item, "exchange");
            }
            Message::SyncQuery { query, selector, ttl, deadline } => self.on_sync_query(k, to, from, query, selector, ttl, deadline),
            Message::SyncReply { query, items } => self.on_sync_reply(k, to, query, items),
            Message::Routed(r) => self.on_routed(k, to, from, *r),
            Message::Ack { msg } => {
                if let Some(r) = self.routers.get_mut(&to) {
                    r.awaiting.remove(&msg);
                }
            }
            Message::MarketAdv { descriptors } => self.learn(k, to, &descriptors),
            Message::SupLookup => {
                let Some(s) = self.support.get(&to) else { return };
                let descriptors = s.lookup_markets();
                let n = descriptors.len();
                Self::emit(k, Some(to), "SUP_DIR", |e| e.with("requester", from).with("entries", n));
                if n > 0 {
                    Self::send(k, to, from, Message::MarketAdv { descriptors });
                }
            }
        }
    }

    fn on_timer(&mut self, k: &mut K, target: Target, timer: Timer) {
        let Target::Node(node) = target else { return };
        match timer {
            Timer::Script(i) => self.run_directive(k, i),
            Timer::SyncTimeout(q) => self.on_sync_timeout(k, node, q),
            Timer::AckTimeout(id) => self.on_ack_timeout(k, node, id),
            Timer::Pace(peer) => self.pace(k, node, peer),
        }
    }

    fn on_tick(&mut self, k: &mut K, changes: &[LinkChange]) {
        for c in changes {
            if let LinkChange::Up(a, b) = c {
                self.on_link_up(k, *a, *b);
            }
        }
        self.market_round(k);
        self.retry_carried(k);
        self.exchange_round(k);
        if k.clock() >= self.next_purge {
            self.purge_round(k);
            while self.next_purge <= k.clock() {
                self.next_purge += self.params.purge_interval;
            }
        }
    }
}
