mod common;

use std::collections::{BTreeMap, BTreeSet};

use adsim::ads::{
    join, Asrq, Evaluation, InfoItem, ItemId, ItemStore, Payload, QueryBook, QueryId, Rating, ResultChunk, Selector,
};
use adsim::geometry::{Position, Region};
use adsim::kernel::NodeId;
use adsim::market::{KnownMarkets, MarketId};
use adsim::plan::MovementPlan;
use adsim::sim::Simulation;
use common::static_world;
use proptest::prelude::*;

const CATS: [&str; 3] = ["slide", "article", "link"];

fn item_strategy() -> impl Strategy<Value = InfoItem> {
    (0u32..5, 0u64..60, 0usize..3, 0u32..3, 0u32..100, 1u64..4, prop::collection::vec((0u32..4, 0u64..3, any::<bool>()), 0..3))
        .prop_map(|(origin, counter, cat, course, t, version, evals)| {
            let mut it = InfoItem::new(
                ItemId { origin: NodeId(origin), counter },
                CATS[cat],
                Payload::default().with("course", course),
                f64::from(t),
            );
            it.version = version;
            for (n, stamp, up) in evals {
                it.evaluate(NodeId(n), Evaluation { stamp, rating: if up { Rating::Up } else { Rating::Down } });
            }
            it
        })
}

fn copy_strategy() -> impl Strategy<Value = InfoItem> {
    item_strategy().prop_map(|mut it| {
        it.id = ItemId { origin: NodeId(1), counter: 1 };
        it
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn join_is_a_semilattice(a in copy_strategy(), b in copy_strategy(), c in copy_strategy()) {
        prop_assert_eq!(join(&a, &b).item, join(&b, &a).item);
        prop_assert_eq!(join(&join(&a, &b).item, &c).item, join(&a, &join(&b, &c).item).item);
        prop_assert_eq!(join(&a, &a).item, a);
    }

    #[test]
    fn query_local_equals_linear_scan(
        items in prop::collection::vec(item_strategy(), 200),
        cats in prop::sample::subsequence(CATS.to_vec(), 1..=3),
        course in prop::option::of(0u32..3),
        limit in prop::option::of(1usize..40),
    ) {
        let mut store = ItemStore::new();
        let mut oracle: BTreeMap<ItemId, InfoItem> = BTreeMap::new();
        for it in &items {
            store.put_local(it.clone());
            oracle.entry(it.id).and_modify(|cur| *cur = join(cur, it).item).or_insert_with(|| it.clone());
        }
        let mut sel = Selector::categories(cats.iter().copied());
        if let Some(c) = course {
            sel = sel.with_predicate("course", &c.to_string());
        }
        if let Some(n) = limit {
            sel = sel.with_max_results(n);
        }
        let mut want: Vec<&InfoItem> = oracle
            .values()
            .filter(|it| cats.contains(&it.category.0.as_str()))
            .filter(|it| course.is_none_or(|c| it.payload.get("course") == Some(c.to_string().as_str())))
            .collect();
        want.sort_by(|a, b| a.created_at.total_cmp(&b.created_at).then(a.id.cmp(&b.id)));
        if let Some(n) = limit {
            want.truncate(n);
        }
        let got = store.query_local(&sel);
        prop_assert_eq!(got.iter().collect::<Vec<_>>(), want);
    }

    #[test]
    fn chunks_from_two_markets_merge_to_the_union(
        a in prop::collection::vec(item_strategy(), 0..12),
        b in prop::collection::vec(item_strategy(), 0..12),
        order in prop::collection::vec(any::<bool>(), 24),
    ) {
        let (mut book, qid) = book_with_query();
        let mut store = ItemStore::new();
        let mut known = KnownMarkets::new();
        let chunks = |items: &[InfoItem], m: u32| -> Vec<ResultChunk> {
            items.chunks(5).enumerate().map(|(i, c)| chunk(qid, MarketId(m), i as u64 + 1, c.to_vec())).collect()
        };
        let (mut ca, mut cb) = (chunks(&a, 0).into_iter(), chunks(&b, 1).into_iter());
        for first in order {
            let next = if first { ca.next().or_else(|| cb.next()) } else { cb.next().or_else(|| ca.next()) };
            if let Some(c) = next {
                book.accept_chunk(&c, &mut store, &mut known, 10.0);
            }
        }
        for c in ca.chain(cb) {
            book.accept_chunk(&c, &mut store, &mut known, 10.0);
        }
        let want: BTreeSet<ItemId> = a.iter().chain(&b).filter(|i| i.category.0 == "slide").map(|i| i.id).collect();
        let got: BTreeSet<ItemId> = store.iter().map(|i| i.id).collect();
        prop_assert_eq!(got, want);
    }
}

fn book_with_query() -> (QueryBook, QueryId) {
    let qid = QueryId { initiator: NodeId(9), seq: 1 };
    let mut book = QueryBook::new();
    book.register(Asrq {
        query_id: qid,
        initiator: NodeId(9),
        selector: Selector::categories(["slide"]),
        launch_time: 0.0,
        ttl: 1000.0,
        movement_plan: MovementPlan::stationary(Region::new(Position::new(0.0, 0.0), 1.0), 0.0, 1000.0),
        expected_results: None,
        known_markets: vec![],
    });
    (book, qid)
}

fn chunk(qid: QueryId, market: MarketId, seq: u64, items: Vec<InfoItem>) -> ResultChunk {
    ResultChunk { query_id: qid, chunk_seq: seq, items, from_market: market, piggyback: vec![] }
}

fn slide(origin: u32, counter: u64) -> InfoItem {
    InfoItem::new(ItemId { origin: NodeId(origin), counter }, "slide", Payload::default(), counter as f64)
}

#[test]
fn three_plus_two_distinct_items_give_five() {
    let (mut book, qid) = book_with_query();
    let mut store = ItemStore::new();
    let mut known = KnownMarkets::new();
    let first: Vec<InfoItem> = (1..=3).map(|c| slide(1, c)).collect();
    let second: Vec<InfoItem> = (4..=5).map(|c| slide(1, c)).collect();
    book.accept_chunk(&chunk(qid, MarketId(0), 1, first.clone()), &mut store, &mut known, 1.0);
    book.accept_chunk(&chunk(qid, MarketId(0), 2, second.clone()), &mut store, &mut known, 2.0);
    book.accept_chunk(&chunk(qid, MarketId(0), 2, second), &mut store, &mut known, 3.0);
    assert_eq!(store.len(), 5);
    assert_eq!(book.collect_results(qid, 3.0).unwrap().items.len(), 5);
}

#[test]
fn one_hop_neighbor_contributes_its_item() {
    let pts = [Position::new(20.0, 20.0), Position::new(50.0, 20.0), Position::new(150.0, 20.0)];
    let cfg = static_world(&pts, (200.0, 50.0), &["link"], "");
    let mut sim = Simulation::new(&cfg).unwrap();
    let mine = slide(0, 100);
    let theirs = slide(1, 100);
    let far = slide(2, 100);
    sim.put_local(NodeId(0), mine.clone());
    sim.put_local(NodeId(1), theirs.clone());
    sim.put_local(NodeId(2), far);
    let q = sim.query_sync(NodeId(0), Selector::categories(["slide"]), 5.0, 1).unwrap();
    sim.run_until(10.0).unwrap();
    let got: BTreeSet<ItemId> = sim.sync_results(q).unwrap().iter().map(|i| i.id).collect();
    assert_eq!(got, BTreeSet::from([mine.id, theirs.id]));
}

#[test]
fn budget_one_needs_three_encounters_for_three_items() {
    let pts = [Position::new(20.0, 20.0), Position::new(50.0, 20.0)];
    let ads = "\n[ads]\nexchange_budget = 1\nexchange_interval = 30.0\n";
    let cfg = static_world(&pts, (100.0, 50.0), &["slide"], ads);
    let mut sim = Simulation::new(&cfg).unwrap();
    for c in 1..=3 {
        sim.put_local(NodeId(1), slide(1, c));
    }
    sim.run_until(200.0).unwrap();

    // Replay: node 0 gains exactly one missing item per encounter with node 1.
    let encounters: Vec<f64> = sim
        .trace()
        .of_kind("EXCH")
        .filter(|e| matches!((e.node, e.get("peer")), (Some(NodeId(0)), Some("1")) | (Some(NodeId(1)), Some("0"))))
        .map(|e| e.time)
        .collect();
    assert!(encounters.len() >= 3);
    let held_after = |t: f64| {
        sim.trace()
            .of_kind("STORE")
            .filter(|e| e.node == Some(NodeId(0)) && e.time <= t + 1e-9)
            .count()
    };
    for (i, t) in encounters.iter().enumerate() {
        assert_eq!(held_after(*t + 1.0), (i + 1).min(3), "after encounter {}", i + 1);
    }
    assert_eq!(sim.node(NodeId(0)).unwrap().store.len(), 3);
}
