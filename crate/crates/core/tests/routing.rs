mod common;

use std::collections::BTreeSet;

use adsim::geometry::{Position, Region};
use adsim::kernel::{MobilityModel, MobilityState, NodeId, Waypoint};
use adsim::routing::{next_hop, route, ForwardAction, MsgId, RoutedMessage};
use adsim::sim::Simulation;
use common::static_world;
use proptest::prelude::*;

fn points() -> impl Strategy<Value = Vec<Position>> {
    prop::collection::vec((0.0..300.0f64, 0.0..300.0f64).prop_map(|(x, y)| Position::new(x, y)), 40)
}

fn in_range(all: &[Position], i: usize) -> Vec<(NodeId, Position)> {
    (0..all.len())
        .filter(|&j| j != i && all[i].distance(&all[j]) <= 50.0)
        .map(|j| (NodeId(j as u32), all[j]))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn next_hop_is_the_closest_strictly_better_neighbor(pts in points(), cx in 0.0..300.0f64, cy in 0.0..300.0f64) {
        let dest = Region::new(Position::new(cx, cy), 20.0);
        for i in 0..pts.len() {
            let mine = pts[i].distance(&dest.center);
            let mut cands: Vec<(f64, u32)> = in_range(&pts, i)
                .into_iter()
                .map(|(n, p)| (p.distance(&dest.center), n.0))
                .filter(|(d, _)| *d < mine)
                .collect();
            cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let want = cands.first().map(|(_, n)| NodeId(*n));
            prop_assert_eq!(next_hop(pts[i], &dest, in_range(&pts, i)), want);
        }
    }

    #[test]
    fn greedy_walks_never_revisit_a_node(pts in points(), start in 0usize..40, cx in 0.0..300.0f64, cy in 0.0..300.0f64) {
        let dest = Region::new(Position::new(cx, cy), 20.0);
        let mut msg = RoutedMessage::new(MsgId { origin: NodeId(start as u32), seq: 1 }, dest, 100.0, ());
        let mut at = start;
        let mut visited = BTreeSet::from([at]);
        loop {
            match route(&mut msg, pts[at], in_range(&pts, at), 0.0) {
                Ok(ForwardAction::Forward(n)) => {
                    at = n.0 as usize;
                    prop_assert!(visited.insert(at), "revisited {}", at);
                }
                Ok(ForwardAction::Deliver) => {
                    prop_assert!(dest.contains(&pts[at]));
                    break;
                }
                Ok(ForwardAction::Carry) => break,
                Err(e) => prop_assert!(false, "unexpected {e}"),
            }
        }
        prop_assert_eq!(msg.hop_count as usize, visited.len() - 1);
    }
}

#[test]
fn five_node_chain_delivers_after_four_hops() {
    let chain: Vec<Position> = (0..5).map(|i| Position::new(10.0 + 40.0 * i as f64, 50.0)).collect();
    let cfg = static_world(&chain, (200.0, 100.0), &["link"], "");
    let mut sim = Simulation::new(&cfg).unwrap();
    sim.run_until(1.0).unwrap();
    let dest = Region::new(Position::new(170.0, 50.0), 5.0);
    let msg = sim.send_probe(NodeId(0), dest, 50.0).to_string();
    sim.run_until(10.0).unwrap();
    let delivered: Vec<_> = sim
        .trace()
        .of_kind("DELIVER")
        .filter(|e| e.get("msg") == Some(msg.as_str()))
        .map(|e| (e.node, e.parse_field::<u32>("hop")))
        .collect();
    assert_eq!(delivered, [(Some(NodeId(4)), Some(4))]);
}

#[test]
fn lone_carrier_delivers_on_entering_the_region() {
    let cfg = static_world(&[Position::new(10.0, 50.0)], (200.0, 100.0), &["link"], "");
    let mut sim = Simulation::new(&cfg).unwrap();
    let target = Position::new(180.0, 50.0);
    *sim.kernel_mut().mobility_mut(NodeId(0)).unwrap() = MobilityState::new(Position::new(10.0, 50.0), 2.0, MobilityModel::Static)
        .with_waypoints([Waypoint { position: target, dwell: 0.0 }]);
    let dest = Region::new(target, 10.0);
    let msg = sim.send_probe(NodeId(0), dest, 200.0).to_string();
    sim.run_until(200.0).unwrap();

    let ours: Vec<_> = sim.trace().events.iter().filter(|e| e.get("msg") == Some(msg.as_str())).collect();
    let deliver = ours.iter().position(|e| e.kind == "DELIVER").expect("delivered");
    assert!(ours[..deliver].iter().any(|e| e.kind == "CARRY"));
    assert!(ours[..deliver].iter().all(|e| e.kind != "FWD"));
    // 160 m to the region edge at 2 m/s, checked once per one-second tick.
    let entered = ((target.x - dest.radius - 10.0) / 2.0_f64).ceil();
    assert!((ours[deliver].time - entered).abs() < 1e-6, "delivered at {}", ours[deliver].time);
}
