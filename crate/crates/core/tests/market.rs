mod common;

use std::collections::{BTreeMap, BTreeSet};

use adsim::ads::{Category, InfoItem, ItemId, Payload};
use adsim::geometry::{Position, Region};
use adsim::kernel::NodeId;
use adsim::market::{chunk_target, scores, select_market, MarketDescriptor, MarketId, SelectionWeights};
use adsim::plan::{MovementPlan, PlanEntry};
use adsim::scenario::parse_scenario;
use adsim::sim::Simulation;
use common::{shipped, static_world};

#[test]
fn members_follow_geometric_containment() {
    let cfg = parse_scenario(
        r#"format_version = 1
name = "walkers"
seed = 5

[world]
width = 200.0
height = 200.0
duration = 400.0

[[hotspots]]
name = "hall"
x = 100.0
y = 100.0
radius = 40.0
market = true

[[groups]]
name = "walkers"
role = "student"
count = 14
mobility = "random_waypoint"
speed = 3.0
dwell = 5.0
"#,
    )
    .unwrap();
    let hall = Region::new(Position::new(100.0, 100.0), 40.0);
    let mut sim = Simulation::new(&cfg).unwrap();
    let mut sizes = BTreeSet::new();
    for t in 0..=400 {
        sim.run_until(f64::from(t)).unwrap();
        let inside: BTreeSet<NodeId> = sim
            .ads_nodes()
            .map(|n| n.id)
            .filter(|n| hall.contains(&sim.kernel().position(*n).unwrap()))
            .collect();
        let members: BTreeSet<NodeId> = sim.markets()[0].members().collect();
        assert_eq!(members, inside, "t = {t}");
        sizes.insert(members.len());
    }
    assert!(sizes.len() > 3, "membership barely changed: {sizes:?}");
}

#[test]
fn far_full_match_beats_near_empty_match() {
    let mut far = MarketDescriptor::new(MarketId(0), Region::new(Position::new(100.0, 0.0), 10.0), 0.0);
    far.categories.insert(Category::new("slide"), 4);
    let near = MarketDescriptor::new(MarketId(1), Region::new(Position::new(10.0, 0.0), 10.0), 0.0);
    let wanted = BTreeSet::from([Category::new("slide")]);
    let known = [far, near];
    let s = scores(&wanted, Position::new(0.0, 0.0), &known, SelectionWeights::default());
    // 1.0 * 1 - 0.5 * 1.0 and 1.0 * 0 - 0.5 * 0.1
    assert!((s[0] - 0.5).abs() < 1e-12 && (s[1] + 0.05).abs() < 1e-12, "{s:?}");
    let chosen = select_market(&wanted, Position::new(0.0, 0.0), &known, SelectionWeights::default()).unwrap();
    assert_eq!(chosen.market_id, MarketId(0));
}

#[test]
fn publish_along_a_connected_path_reaches_a_member() {
    let chain: Vec<Position> = (0..6).map(|i| Position::new(15.0 + 40.0 * i as f64, 50.0)).collect();
    let hotspot = "\n[[hotspots]]\nname = \"hall\"\nx = 215.0\ny = 50.0\nradius = 20.0\nmarket = true\n";
    let cfg = static_world(&chain, (240.0, 100.0), &["slide"], hotspot);
    let mut sim = Simulation::new(&cfg).unwrap();
    sim.run_until(5.0).unwrap();
    assert!(!sim.markets()[0].is_member(NodeId(0)));
    let item = InfoItem::new(ItemId { origin: NodeId(0), counter: 900 }, "slide", Payload::default(), 5.0);
    assert_eq!(sim.publish(NodeId(0), item.clone()), Some(MarketId(0)));
    sim.run_until(30.0).unwrap();
    let market = &sim.markets()[0];
    assert!(market.pool_ids().contains(&item.id));
    let holders = market.holders(&item.id);
    assert!(!holders.is_empty() && holders.iter().all(|h| market.is_member(*h)));
}

#[test]
fn chunk_targets_the_region_at_predicted_arrival() {
    let a = Region::new(Position::new(50.0, 50.0), 20.0);
    let b = Region::new(Position::new(400.0, 50.0), 20.0);
    let plan = MovementPlan::new(vec![
        PlanEntry { from: 0.0, to: 500.0, region: a },
        PlanEntry { from: 500.0, to: 1000.0, region: b },
    ])
    .unwrap();
    assert_eq!(chunk_target(&plan, 490.0, 30.0), plan.region_at(520.0));
    assert_eq!(chunk_target(&plan, 490.0, 30.0), Some(b));
    assert_eq!(chunk_target(&plan, 400.0, 30.0), Some(a));
}

#[test]
fn support_directory_matches_descriptors_it_received() {
    let cfg = shipped("commuters.toml");
    let mut sim = Simulation::new(&cfg).unwrap();
    sim.run();
    let trace = sim.trace();
    let supports: Vec<NodeId> =
        trace.of_kind("NODE").filter(|e| e.get("role") == Some("support")).filter_map(|e| e.node).collect();
    assert!(!supports.is_empty());
    for s in supports {
        let mut received: BTreeMap<String, f64> = BTreeMap::new();
        for e in trace.of_kind("SUP_LEARN").filter(|e| e.node == Some(s)) {
            let at: f64 = e.parse_field("advertised").unwrap();
            let slot = received.entry(e.get("market").unwrap().to_string()).or_insert(at);
            *slot = slot.max(at);
        }
        let dir: BTreeMap<String, f64> = sim
            .support(s)
            .unwrap()
            .lookup_markets()
            .iter()
            .map(|d| (d.market_id.to_string(), (d.advertised_at * 1000.0).round() / 1000.0))
            .collect();
        assert!(!dir.is_empty());
        assert_eq!(dir, received, "support node {s}");
    }
}
