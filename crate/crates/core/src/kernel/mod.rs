//! Deterministic discrete-event kernel.
//!
//! Owns the virtual clock, the `(time, seq)`-ordered event queue, node
//! positions and mobility, the unit-disk radio and the trace. Application
//! logic plugs in through [`Handler`].

mod mobility;

pub use mobility::{random_point_in, MobilityModel, MobilityState, Waypoint};

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::fmt;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Position, World};
use crate::rng::{RngStreams, Stream};
use crate::trace::{RunStats, Trace, TraceEvent};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadioModel {
    pub range: f64,
    pub loss_prob: f64,
    pub latency_per_hop: f64,
}

impl Default for RadioModel {
    fn default() -> Self {
        Self { range: 50.0, loss_prob: 0.0, latency_per_hop: 0.01 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Target {
    Kernel,
    Node(NodeId),
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventKind<M, T> {
    Receive { from: NodeId, msg: M },
    Timer(T),
    Tick,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event<M, T> {
    pub time: f64,
    pub seq: u64,
    pub target: Target,
    pub kind: EventKind<M, T>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventHandle {
    pub time: f64,
    pub seq: u64,
}

struct Queued<M, T>(Event<M, T>);

impl<M, T> PartialEq for Queued<M, T> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl<M, T> Eq for Queued<M, T> {}
impl<M, T> PartialOrd for Queued<M, T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<M, T> Ord for Queued<M, T> {
    // BinaryHeap is a max-heap; invert so the smallest (time, seq) pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.time.total_cmp(&self.0.time).then_with(|| other.0.seq.cmp(&self.0.seq))
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KernelError {
    #[error("event time {time} is before the clock {clock}")]
    PastEvent { time: f64, clock: f64 },
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("node {0} is already registered")]
    DuplicateNode(NodeId),
    #[error("node {to} is not within range of {from}")]
    NotInRange { from: NodeId, to: NodeId },
    #[error("position {0} lies outside the world")]
    OutOfWorld(Position),
}

/// Messages carried by the radio expose a short name for the trace.
pub trait Wire {
    fn kind(&self) -> &'static str;
}

impl Wire for () {
    fn kind(&self) -> &'static str {
        "UNIT"
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Delivery {
    Scheduled(EventHandle),
    Dropped,
}

impl Eq for EventHandle {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum LinkChange {
    Up(NodeId, NodeId),
    Down(NodeId, NodeId),
}

/// Callbacks invoked from the event loop.
pub trait Handler<M, T> {
    fn on_message(&mut self, k: &mut Kernel<M, T>, to: NodeId, from: NodeId, msg: M);
    fn on_timer(&mut self, k: &mut Kernel<M, T>, target: Target, timer: T);
    /// Runs after positions advanced and links were recomputed.
    fn on_tick(&mut self, _k: &mut Kernel<M, T>, _changes: &[LinkChange]) {}
}

/// Ignores every callback.
#[derive(Debug, Default, Clone, Copy)]
pub struct Idle;

impl<M, T> Handler<M, T> for Idle {
    fn on_message(&mut self, _: &mut Kernel<M, T>, _: NodeId, _: NodeId, _: M) {}
    fn on_timer(&mut self, _: &mut Kernel<M, T>, _: Target, _: T) {}
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelConfig {
    pub world: World,
    pub radio: RadioModel,
    pub tick: f64,
    pub seed: u64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            world: World { width: 1000.0, height: 1000.0 },
            radio: RadioModel::default(),
            tick: 1.0,
            seed: 0,
        }
    }
}

pub struct Kernel<M, T> {
    cfg: KernelConfig,
    clock: f64,
    next_seq: u64,
    queue: BinaryHeap<Queued<M, T>>,
    nodes: BTreeMap<NodeId, MobilityState>,
    cells: BTreeMap<(i64, i64), Vec<NodeId>>,
    links: BTreeSet<(NodeId, NodeId)>,
    rng: RngStreams,
    trace: Trace,
    stats: RunStats,
    ticks_started: bool,
    ticks_done: u64,
    trace_links: bool,
    trace_tx: bool,
}

impl<M: Wire, T> Kernel<M, T> {
    pub fn new(cfg: KernelConfig) -> Self {
        Self {
            cfg,
            clock: 0.0,
            next_seq: 0,
            queue: BinaryHeap::new(),
            nodes: BTreeMap::new(),
            cells: BTreeMap::new(),
            links: BTreeSet::new(),
            rng: RngStreams::new(cfg.seed),
            trace: Trace::new(),
            stats: RunStats::default(),
            ticks_started: false,
            ticks_done: 0,
            trace_links: true,
            trace_tx: true,
        }
    }

    /// Turns per-transmission `TX` lines on or off (counters are kept either way).
    pub fn set_trace_tx(&mut self, on: bool) {
        self.trace_tx = on;
    }

    pub fn set_trace_links(&mut self, on: bool) {
        self.trace_links = on;
    }

    pub fn config(&self) -> &KernelConfig {
        &self.cfg
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn radio(&self) -> &RadioModel {
        &self.cfg.radio
    }

    pub fn world(&self) -> &World {
        &self.cfg.world
    }

    pub fn stats(&self) -> RunStats {
        self.stats
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    pub fn take_trace(&mut self) -> Trace {
        let mut t = std::mem::take(&mut self.trace);
        t.set_stats(&self.stats);
        t
    }

    /// A trace event stamped with the current clock.
    pub fn event(&self, node: Option<NodeId>, kind: &str) -> TraceEvent {
        TraceEvent::new(self.clock, node, kind)
    }

    pub fn emit(&mut self, ev: TraceEvent) {
        self.trace.push(ev);
    }

    pub fn rng(&mut self, node: NodeId, stream: Stream) -> &mut ChaCha8Rng {
        self.rng.get(node, stream)
    }

    pub fn add_node(&mut self, id: NodeId, mobility: MobilityState) -> Result<(), KernelError> {
        if self.nodes.contains_key(&id) {
            return Err(KernelError::DuplicateNode(id));
        }
        if !self.cfg.world.contains(&mobility.current) {
            return Err(KernelError::OutOfWorld(mobility.current));
        }
        self.nodes.insert(id, mobility);
        self.rebuild_cells();
        Ok(())
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.keys().copied()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn position(&self, id: NodeId) -> Result<Position, KernelError> {
        self.nodes.get(&id).map(|m| m.current).ok_or(KernelError::UnknownNode(id))
    }

    pub fn mobility(&self, id: NodeId) -> Result<&MobilityState, KernelError> {
        self.nodes.get(&id).ok_or(KernelError::UnknownNode(id))
    }

    pub fn mobility_mut(&mut self, id: NodeId) -> Result<&mut MobilityState, KernelError> {
        self.nodes.get_mut(&id).ok_or(KernelError::UnknownNode(id))
    }

    /// Teleports a node; intended for tests and scenario setup.
    pub fn set_position(&mut self, id: NodeId, p: Position) -> Result<(), KernelError> {
        if !self.cfg.world.contains(&p) {
            return Err(KernelError::OutOfWorld(p));
        }
        let m = self.nodes.get_mut(&id).ok_or(KernelError::UnknownNode(id))?;
        m.current = p;
        self.rebuild_cells();
        Ok(())
    }

    pub fn schedule(&mut self, time: f64, target: Target, kind: EventKind<M, T>) -> Result<EventHandle, KernelError> {
        if !(time >= self.clock) {
            return Err(KernelError::PastEvent { time, clock: self.clock });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Queued(Event { time, seq, target, kind }));
        Ok(EventHandle { time, seq })
    }

    pub fn schedule_timer(&mut self, delay: f64, target: Target, timer: T) -> EventHandle {
        let t = self.clock + delay.max(0.0);
        self.schedule(t, target, EventKind::Timer(timer))
            .expect("non-negative delay is never in the past")
    }

    pub fn pending_events(&self) -> usize {
        self.queue.len()
    }

    fn cell_of(&self, p: &Position) -> (i64, i64) {
        let s = self.cfg.radio.range;
        ((p.x / s).floor() as i64, (p.y / s).floor() as i64)
    }

    fn rebuild_cells(&mut self) {
        let mut cells: BTreeMap<(i64, i64), Vec<NodeId>> = BTreeMap::new();
        for (id, m) in &self.nodes {
            cells.entry(self.cell_of(&m.current)).or_default().push(*id);
        }
        self.cells = cells;
    }

    /// Nodes other than `id` within radio range, ascending by id.
    pub fn neighbors(&self, id: NodeId) -> Result<Vec<NodeId>, KernelError> {
        let me = self.position(id)?;
        let (cx, cy) = self.cell_of(&me);
        let range = self.cfg.radio.range;
        let mut out = Vec::new();
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(bucket) = self.cells.get(&(cx + dx, cy + dy)) {
                    for other in bucket {
                        if *other != id && self.nodes[other].current.distance(&me) <= range {
                            out.push(*other);
                        }
                    }
                }
            }
        }
        out.sort_unstable();
        Ok(out)
    }

    pub fn in_range(&self, a: NodeId, b: NodeId) -> bool {
        match (self.nodes.get(&a), self.nodes.get(&b)) {
            (Some(x), Some(y)) => a != b && x.current.distance(&y.current) <= self.cfg.radio.range,
            _ => false,
        }
    }

    /// Current undirected links as `(low, high)` pairs, refreshed each tick.
    pub fn links(&self) -> &BTreeSet<(NodeId, NodeId)> {
        &self.links
    }

    fn compute_links(&self) -> BTreeSet<(NodeId, NodeId)> {
        let mut set = BTreeSet::new();
        for id in self.nodes.keys() {
            for n in self.neighbors(*id).expect("registered") {
                if *id < n {
                    set.insert((*id, n));
                }
            }
        }
        set
    }

    /// Transmits `msg`; one loss draw on the sender's radio stream.
    pub fn send(&mut self, from: NodeId, to: NodeId, msg: M) -> Result<Delivery, KernelError> {
        if !self.nodes.contains_key(&from) {
            return Err(KernelError::UnknownNode(from));
        }
        if !self.nodes.contains_key(&to) {
            return Err(KernelError::UnknownNode(to));
        }
        if !self.in_range(from, to) {
            return Err(KernelError::NotInRange { from, to });
        }
        let loss = self.cfg.radio.loss_prob;
        let draw: f64 = self.rng.get(from, Stream::Radio).gen();
        self.stats.messages_sent += 1;
        let kind = msg.kind();
        let outcome = if draw < loss {
            self.stats.messages_dropped += 1;
            Delivery::Dropped
        } else {
            let at = self.clock + self.cfg.radio.latency_per_hop;
            self.stats.messages_in_flight += 1;
            let h = self.schedule(at, Target::Node(to), EventKind::Receive { from, msg })?;
            Delivery::Scheduled(h)
        };
        if self.trace_tx {
            let ok = matches!(outcome, Delivery::Scheduled(_)) as u8;
            let ev = self.event(Some(from), "TX").with("to", to).with("msg", kind).with("ok", ok);
            self.trace.push(ev);
        }
        Ok(outcome)
    }

    /// Advances every node by `dt` seconds.
    pub fn step_mobility(&mut self, dt: f64) {
        if dt <= 0.0 {
            return;
        }
        let now = self.clock;
        let world = self.cfg.world;
        let ids: Vec<NodeId> = self.nodes.keys().copied().collect();
        for id in ids {
            let mut m = self.nodes.remove(&id).expect("listed");
            m.step(dt, now, &world, self.rng.get(id, Stream::Mobility));
            self.nodes.insert(id, m);
        }
        self.rebuild_cells();
    }

    fn tick<H: Handler<M, T>>(&mut self, handler: &mut H) {
        if self.ticks_done > 0 {
            self.step_mobility(self.cfg.tick);
        }
        self.ticks_done += 1;
        self.stats.ticks += 1;
        let fresh = self.compute_links();
        let mut changes = Vec::new();
        for l in self.links.difference(&fresh) {
            changes.push(LinkChange::Down(l.0, l.1));
        }
        for l in fresh.difference(&self.links) {
            changes.push(LinkChange::Up(l.0, l.1));
        }
        changes.sort_unstable();
        self.links = fresh;
        if self.trace_links {
            for c in &changes {
                let (kind, a, b) = match c {
                    LinkChange::Up(a, b) => ("LINK_UP", a, b),
                    LinkChange::Down(a, b) => ("LINK_DOWN", a, b),
                };
                let ev = self.event(Some(*a), kind).with("peer", b);
                self.trace.push(ev);
            }
        }
        let next = self.ticks_done as f64 * self.cfg.tick;
        self.schedule(next, Target::Kernel, EventKind::Tick).expect("future tick");
        handler.on_tick(self, &changes);
    }

    /// Processes every event with `time <= t_end` in `(time, seq)` order,
    /// interleaving mobility ticks, then sets the clock to `t_end`.
    pub fn run_until<H: Handler<M, T>>(&mut self, t_end: f64, handler: &mut H) -> Result<RunStats, KernelError> {
        if !(t_end >= self.clock) {
            return Err(KernelError::PastEvent { time: t_end, clock: self.clock });
        }
        if !self.ticks_started {
            self.ticks_started = true;
            self.schedule(self.clock, Target::Kernel, EventKind::Tick)?;
        }
        while self.queue.peek().is_some_and(|q| q.0.time <= t_end) {
            let Queued(ev) = self.queue.pop().expect("peeked");
            debug_assert!(ev.time >= self.clock);
            self.clock = ev.time;
            self.stats.events_processed += 1;
            match ev.kind {
                EventKind::Tick => self.tick(handler),
                EventKind::Receive { from, msg } => {
                    self.stats.messages_in_flight -= 1;
                    self.stats.messages_delivered += 1;
                    let Target::Node(to) = ev.target else { continue };
                    handler.on_message(self, to, from, msg);
                }
                EventKind::Timer(t) => handler.on_timer(self, ev.target, t),
            }
        }
        self.clock = t_end;
        Ok(self.stats)
    }
}
