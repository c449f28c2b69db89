//! The simulated world: every node's middleware, the markets, support
//! nodes and the scripted workload, driven by the kernel.

mod messages;
mod network;

pub use messages::{decode, encode, CodecError, Message, Routed, RoutedPayload, CODEC_VERSION};
pub use network::Timer;

use rand::Rng;

use crate::ads::{AdsNode, InfoItem, ItemId, Profile, QueryId, Selector, SyncQueryId};
use crate::geometry::Region;
use crate::kernel::{
    random_point_in, EventKind, Kernel, KernelConfig, KernelError, MobilityModel, MobilityState, NodeId, RadioModel,
    Target,
};
use crate::market::{Market, MarketId, MarketParams};
use crate::rng::Stream;
use crate::routing::MsgId;
use crate::scenario::{MobilityKind, NodeRole, Resolved, ScenarioConfig, ScenarioError, StartPlacement};
use crate::support::SupportNode;
use crate::trace::{RunStats, Trace};

use network::Network;

pub struct Simulation {
    kernel: Kernel<Message, Timer>,
    net: Network,
    duration: f64,
}

impl Simulation {
    /// Builds the world at t=0: places nodes, runs the first tick, then
    /// schedules the workload script.
    pub fn new(cfg: &ScenarioConfig) -> Result<Self, ScenarioError> {
        let res = cfg.resolve().map_err(ScenarioError::Invalid)?;
        Ok(Self::from_resolved(cfg, &res))
    }

    fn from_resolved(cfg: &ScenarioConfig, res: &Resolved) -> Self {
        let mut kernel: Kernel<Message, Timer> = Kernel::new(KernelConfig {
            world: res.world,
            radio: RadioModel {
                range: cfg.radio.range,
                loss_prob: cfg.radio.loss_prob,
                latency_per_hop: cfg.radio.latency_per_hop,
            },
            tick: cfg.world.tick,
            seed: cfg.seed,
        });
        kernel.set_trace_tx(cfg.ads.trace_tx);
        let mut net = Network::new(cfg.ads.clone());
        net.regions = res.regions.clone();
        net.labels = res.labels.clone();
        net.plans = res.plans.clone();
        net.script = res.script.clone();

        let header = kernel
            .event(None, "SIM")
            .with("name", if cfg.name.is_empty() { "-" } else { &cfg.name })
            .with("seed", cfg.seed)
            .with("duration", format!("{:.3}", cfg.world.duration))
            .with("tick", format!("{:.3}", cfg.world.tick))
            .with("nodes", res.nodes.len())
            .with("range", format!("{:.3}", cfg.radio.range));
        kernel.emit(header);

        let world = res.world;
        for spec in &res.nodes {
            let id = spec.id;
            let rng = kernel.rng(id, Stream::Mobility);
            let start = match &spec.start {
                StartPlacement::At(p) => *p,
                StartPlacement::In(r) => random_point_in(r, &world, rng),
                StartPlacement::Anywhere => {
                    crate::geometry::Position::new(rng.gen_range(0.0..=world.width), rng.gen_range(0.0..=world.height))
                }
            };
            let mobility = match spec.group.map(|g| &cfg.groups[g]) {
                None => MobilityState::stationary(start),
                Some(g) => {
                    let model = match g.mobility {
                        MobilityKind::Static => MobilityModel::Static,
                        MobilityKind::RandomWaypoint => MobilityModel::RandomWaypoint { dwell: g.dwell },
                        MobilityKind::Poi => MobilityModel::Poi {
                            anchors: g.anchors.iter().map(|a| res.regions[a]).collect(),
                            dwell: g.dwell,
                        },
                        MobilityKind::Plan => MobilityModel::Plan { plan: res.plans[&id].clone(), dwell: g.dwell },
                    };
                    MobilityState::new(start, g.speed, model)
                }
            };
            kernel.add_node(id, mobility).expect("validated placement");
            net.roles.insert(id, spec.role);
            let interests = spec.interests.iter().map(|c| c.0.clone()).collect::<Vec<_>>().join(",");
            let ev = kernel
                .event(Some(id), "NODE")
                .with("role", spec.role)
                .with("interests", if interests.is_empty() { "-".to_string() } else { interests })
                .with("pos", start);
            kernel.emit(ev);
            if spec.role == NodeRole::Support {
                net.support.insert(id, SupportNode::new(id, start, cfg.ads.density_threshold));
            } else {
                let mut ads = AdsNode::new(Profile {
                    node: id,
                    interests: spec.interests.clone(),
                    exchange_budget: spec.budget,
                });
                let top = res.labels.values().filter(|l| l.origin == id).map(|l| l.counter).max().unwrap_or(0);
                ads.reserve_item_ids(top);
                net.ads.insert(id, ads);
            }
        }
        let params = MarketParams { k: cfg.ads.k, chunk_size: cfg.ads.chunk_size, refresh_interval: cfg.ads.descriptor_refresh };
        for (i, m) in res.markets.iter().enumerate() {
            let id = MarketId(i as u32);
            net.markets.push(Market::new(id, m.region, params, 0.0));
            let hotspot = &m.name;
            let supports = res.supports.iter().filter(|(_, h)| h == hotspot).map(|(n, _)| *n).collect();
            net.market_support.push(supports);
            let ev = kernel
                .event(None, "MARKET")
                .with("market", id)
                .with("name", hotspot)
                .with("center", m.region.center)
                .with("r", format!("{:.3}", m.region.radius));
            kernel.emit(ev);
        }
        let mut sim = Self { kernel, net, duration: cfg.world.duration };
        sim.kernel.run_until(0.0, &mut sim.net).expect("clock starts at zero");
        for (i, d) in res.script.iter().enumerate() {
            let target = Target::Node(NodeId(d.action.actor()));
            sim.kernel.schedule(d.at, target, EventKind::Timer(Timer::Script(i))).expect("validated time");
        }
        sim
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn clock(&self) -> f64 {
        self.kernel.clock()
    }

    pub fn run_until(&mut self, t: f64) -> Result<RunStats, KernelError> {
        self.kernel.run_until(t, &mut self.net)
    }

    /// Runs to the configured duration.
    pub fn run(&mut self) -> RunStats {
        let end = self.duration.max(self.kernel.clock());
        self.run_until(end).expect("end is not in the past")
    }

    /// Hands over the trace with the final `#STAT` block.
    pub fn finish(mut self) -> Trace {
        self.kernel.take_trace()
    }

    pub fn trace(&self) -> &Trace {
        self.kernel.trace()
    }

    pub fn kernel(&self) -> &Kernel<Message, Timer> {
        &self.kernel
    }

    pub fn kernel_mut(&mut self) -> &mut Kernel<Message, Timer> {
        &mut self.kernel
    }

    pub fn role(&self, id: NodeId) -> Option<NodeRole> {
        self.net.roles.get(&id).copied()
    }

    pub fn node(&self, id: NodeId) -> Option<&AdsNode> {
        self.net.ads.get(&id)
    }

    pub fn node_mut(&mut self, id: NodeId) -> Option<&mut AdsNode> {
        self.net.ads.get_mut(&id)
    }

    pub fn ads_nodes(&self) -> impl Iterator<Item = &AdsNode> {
        self.net.ads.values()
    }

    pub fn support(&self, id: NodeId) -> Option<&SupportNode> {
        self.net.support.get(&id)
    }

    pub fn markets(&self) -> &[Market] {
        &self.net.markets
    }

    pub fn market(&self, id: MarketId) -> Option<&Market> {
        self.net.markets.get(id.0 as usize)
    }

    /// Item id assigned to a script label.
    pub fn label(&self, label: &str) -> Option<ItemId> {
        self.net.labels.get(label).copied()
    }

    pub fn region(&self, name: &str) -> Option<Region> {
        self.net.regions.get(name).copied()
    }

    /// Stores `item` at `node` as if created there (no publication).
    pub fn put_local(&mut self, node: NodeId, item: InfoItem) {
        self.net.store_put(&mut self.kernel, node, item, "local");
    }

    /// Publishes to the best known market; `None` when no market is known.
    pub fn publish(&mut self, node: NodeId, item: InfoItem) -> Option<MarketId> {
        self.net.store_put(&mut self.kernel, node, item.clone(), "local");
        self.net.publish(&mut self.kernel, node, item)
    }

    pub fn query_sync(&mut self, node: NodeId, sel: Selector, timeout: f64, hop_radius: u32) -> Option<SyncQueryId> {
        self.net.query_sync(&mut self.kernel, node, sel, timeout, hop_radius)
    }

    /// Results of a neighborhood query once its timeout fired.
    pub fn sync_results(&self, id: SyncQueryId) -> Option<Vec<InfoItem>> {
        let q = self.net.ads.get(&id.origin)?.sync.open.get(&id)?;
        q.is_closed().then(|| q.results())
    }

    /// Launches an ASRQ using the node's configured movement plan.
    pub fn launch_asrq(&mut self, node: NodeId, sel: Selector, ttl: f64, expected: Option<usize>) -> Option<QueryId> {
        self.net.fetch(&mut self.kernel, node, sel, ttl, expected)
    }

    /// Routes an application-less message toward `dest`.
    pub fn send_probe(&mut self, node: NodeId, dest: Region, deadline: f64) -> MsgId {
        self.net.originate(&mut self.kernel, node, dest, deadline, RoutedPayload::Probe)
    }
}
