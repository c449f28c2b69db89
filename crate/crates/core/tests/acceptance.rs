//! Acceptance suite. Each check prints one PASS/FAIL line; the binary
//! exits nonzero if any check fails.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use std::path::PathBuf;
use std::time::Instant;

use adsim::ads::{
    plan_transfer, Asrq, Category, Evaluation, InfoItem, ItemId, ItemStore, Payload, QueryBook, QueryId,
    Rating, ResultChunk, Selector,
};
use adsim::carla;
use adsim::geometry::{Position, Region};
use adsim::kernel::NodeId;
use adsim::market::{rendezvous_score, select_market, KnownMarkets, MarketDescriptor, MarketId, SelectionWeights};
use adsim::plan::MovementPlan;
use adsim::run::execute;
use adsim::scenario::{load_scenario, parse_scenario, ScenarioConfig};
use adsim::sim::Simulation;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn scenario(name: &str) -> ScenarioConfig {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name);
    load_scenario(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

/// A world of static students at `positions`, nothing scripted.
fn static_world(positions: &[Position], size: f64, loss: f64, seed: u64, duration: f64, ads: &str) -> ScenarioConfig {
    let pos: Vec<String> = positions.iter().map(|p| format!("[{:.6}, {:.6}]", p.x, p.y)).collect();
    let text = format!(
        r#"format_version = 1
name = "static"
seed = {seed}

[world]
width = {size:.1}
height = {size:.1}
duration = {duration:.1}

[radio]
range = 50.0
loss_prob = {loss}

[ads]
{ads}

[[groups]]
name = "nodes"
role = "student"
mobility = "static"
interests = ["link"]
positions = [{}]
"#,
        pos.join(", ")
    );
    parse_scenario(&text).unwrap_or_else(|e| panic!("{e}\n{text}"))
}

fn random_positions(rng: &mut ChaCha8Rng, n: usize, size: f64) -> Vec<Position> {
    (0..n).map(|_| Position::new(rng.gen_range(0.0..size), rng.gen_range(0.0..size))).collect()
}

fn unit_disk(positions: &[Position], range: f64) -> Vec<Vec<usize>> {
    (0..positions.len())
        .map(|i| (0..positions.len()).filter(|&j| j != i && positions[i].distance(&positions[j]) <= range).collect())
        .collect()
}

// ---------------------------------------------------------------------------

fn determinism() -> Check {
    let started = Instant::now();
    let names = ["campus.toml", "absent_student.toml", "churn.toml", "collapse.toml", "commuters.toml"];
    let mut bad = Vec::new();
    let mut pairs = 0;
    for name in names {
        let cfg = scenario(name);
        if cfg.ads_node_count() > 100 || cfg.world.duration > 3600.0 {
            bad.push(format!("{name} exceeds the size budget"));
        }
        for seed in [1, 2, 3] {
            let c = cfg.clone().with_seed(seed);
            let a = execute(&c).map_err(|e| e.to_string())?;
            let b = execute(&c).map_err(|e| e.to_string())?;
            pairs += 1;
            if a.text != b.text {
                bad.push(format!("{name} seed {seed}"));
            }
        }
    }
    let secs = started.elapsed().as_secs_f64();
    if secs >= 60.0 {
        bad.push(format!("took {secs:.1} s"));
    }
    if bad.is_empty() {
        Ok(format!("{pairs} scenario/seed pairs rerun byte-identical in {secs:.1} s"))
    } else {
        Err(bad.join("; "))
    }
}

// ---------------------------------------------------------------------------

const CATS: [&str; 3] = ["slide", "article", "annotation"];

fn neighborhood_query() -> Check {
    let mut violations = Vec::new();
    let mut equal_runs = 0;
    for trial in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + trial);
        let n = rng.gen_range(20..=60);
        let positions = random_positions(&mut rng, n, 260.0);
        let mut items: Vec<(usize, InfoItem)> = Vec::new();
        for node in 0..n {
            for j in 0..rng.gen_range(0..=3u64) {
                let cat = CATS[rng.gen_range(0..3)];
                let course = if rng.gen_bool(0.5) { "a" } else { "b" };
                let id = ItemId { origin: NodeId(node as u32), counter: 100 + j };
                items.push((node, InfoItem::new(id, cat, Payload::default().with("course", course), 0.0)));
            }
        }
        let origin = rng.gen_range(0..n);
        let radius = rng.gen_range(1..=3u32);
        let mut sel = Selector::categories(CATS.iter().copied().filter(|_| rng.gen_bool(0.6)));
        if sel.categories.is_empty() {
            sel = Selector::categories(["slide"]);
        }
        if rng.gen_bool(0.3) {
            sel = sel.with_predicate("course", "a");
        }

        // Flooding oracle: every node within `radius` hops, lossless.
        let adj = unit_disk(&positions, 50.0);
        let mut depth = vec![u32::MAX; n];
        depth[origin] = 0;
        let mut queue = VecDeque::from([origin]);
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if depth[v] == u32::MAX {
                    depth[v] = depth[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        let matching = |pred: &dyn Fn(usize) -> bool| -> BTreeSet<ItemId> {
            items.iter().filter(|(node, it)| pred(*node) && sel.matches(it)).map(|(_, it)| it.id).collect()
        };
        let oracle = matching(&|v| depth[v] <= radius);
        let local = matching(&|v| v == origin);

        for loss in [0.0, 0.3] {
            let cfg = static_world(&positions, 260.0, loss, trial, 100.0, "");
            let mut sim = Simulation::new(&cfg).map_err(|e| e.to_string())?;
            for (node, it) in &items {
                sim.put_local(NodeId(*node as u32), it.clone());
            }
            let id = sim.query_sync(NodeId(origin as u32), sel.clone(), 5.0, radius).ok_or("query refused")?;
            sim.run_until(10.0).map_err(|e| e.to_string())?;
            let got: BTreeSet<ItemId> =
                sim.sync_results(id).ok_or("query not closed")?.into_iter().map(|i| i.id).collect();
            if !got.is_subset(&oracle) || !local.is_subset(&got) {
                violations.push(format!("trial {trial} loss {loss}: bounds"));
            }
            if loss == 0.0 {
                if got == oracle {
                    equal_runs += 1;
                } else {
                    violations.push(format!("trial {trial}: lossless {} != oracle {}", got.len(), oracle.len()));
                }
            }
        }
    }
    if violations.is_empty() {
        Ok(format!("50 topologies, lossy and lossless; {equal_runs}/50 lossless runs equal the flooding oracle"))
    } else {
        Err(format!("{} violations: {}", violations.len(), violations.join("; ")))
    }
}

// ---------------------------------------------------------------------------

/// Hop count of the greedy walk into `dest`, or `None` if it gets stuck.
fn greedy_oracle(positions: &[Position], origin: usize, dest: &Region) -> Option<u32> {
    let mut at = origin;
    let mut hops = 0;
    loop {
        if dest.center.distance(&positions[at]) <= dest.radius {
            return Some(hops);
        }
        let here = positions[at].distance(&dest.center);
        let mut best: Option<(f64, usize)> = None;
        for (j, p) in positions.iter().enumerate() {
            if j == at || positions[at].distance(p) > 50.0 {
                continue;
            }
            let d = p.distance(&dest.center);
            if d < here && best.is_none_or(|(bd, bj)| d < bd || (d == bd && j < bj)) {
                best = Some((d, j));
            }
        }
        at = best?.1;
        hops += 1;
    }
}

fn routing() -> Check {
    let mut violations = Vec::new();
    let (mut with_path, mut without) = (0, 0);
    let mut trial = 0u64;
    while with_path + without < 100 {
        trial += 1;
        let mut rng = ChaCha8Rng::seed_from_u64(2000 + trial);
        let n = rng.gen_range(20..=60);
        let size = if trial % 2 == 0 { 200.0 } else { 300.0 };
        let positions = random_positions(&mut rng, n, size);
        let dest = Region::new(Position::new(rng.gen_range(20.0..size - 20.0), rng.gen_range(20.0..size - 20.0)), 25.0);
        let origin = rng.gen_range(0..n);
        if dest.contains(&positions[origin]) {
            continue;
        }
        let expect = greedy_oracle(&positions, origin, &dest);
        if expect.is_some_and(|h| h > 32) {
            continue;
        }
        let cfg = static_world(&positions, size, 0.0, trial, 20.0, "");
        let mut sim = Simulation::new(&cfg).map_err(|e| e.to_string())?;
        let msg = sim.send_probe(NodeId(origin as u32), dest, 5.0);
        sim.run_until(20.0).map_err(|e| e.to_string())?;
        let tag = msg.to_string();
        let delivers: Vec<u32> = sim
            .trace()
            .of_kind("DELIVER")
            .filter(|e| e.get("msg") == Some(tag.as_str()))
            .filter_map(|e| e.parse_field("hop"))
            .collect();
        let parked = sim.trace().events.iter().any(|e| {
            e.get("msg") == Some(tag.as_str())
                && (e.kind == "CARRY" || (e.kind == "DROP" && e.get("reason") == Some("expired")))
        });
        match expect {
            Some(h) => {
                with_path += 1;
                if delivers != [h] {
                    violations.push(format!("trial {trial}: delivered {delivers:?}, oracle {h}"));
                }
            }
            None => {
                without += 1;
                if !delivers.is_empty() || !parked {
                    violations.push(format!("trial {trial}: no greedy path but delivered={delivers:?} parked={parked}"));
                }
            }
        }
    }
    if violations.is_empty() {
        Ok(format!("{with_path} topologies with a greedy path matched hop counts, {without} without ended in carry/expiry"))
    } else {
        Err(format!("{} violations: {}", violations.len(), violations.join("; ")))
    }
}

// ---------------------------------------------------------------------------

fn material(id: ItemId, cat: &str, version: u64) -> InfoItem {
    let mut it = InfoItem::new(id, cat, Payload::default().with("rev", version), id.counter as f64);
    it.version = version;
    it
}

fn en_passant() -> Check {
    let mut violations = Vec::new();
    let mut max_encounters = 0;
    for trial in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(3000 + trial);
        let budget = rng.gen_range(1..=5usize);
        let interval = 30.0;
        let mut stores: [BTreeMap<ItemId, InfoItem>; 2] = [BTreeMap::new(), BTreeMap::new()];
        for c in 0..rng.gen_range(1..=20u64) {
            let id = ItemId { origin: NodeId(500), counter: c };
            let cat = ["slide", "article"][rng.gen_range(0..2)];
            let holders: &[usize] = [&[0usize][..], &[1], &[0, 1]][rng.gen_range(0..3)];
            for &h in holders {
                stores[h].insert(id, material(id, cat, rng.gen_range(1..=3)));
            }
        }
        // Items each side lacks or holds in an older form.
        let missing = |to: usize, from: usize| {
            stores[from].values().filter(|it| stores[to].get(&it.id).is_none_or(|m| m.version < it.version)).count()
        };
        let delta = missing(0, 1) + missing(1, 0);
        let encounters = delta.div_ceil(budget).max(1);
        max_encounters = max_encounters.max(encounters);

        let ads = format!("exchange_interval = {interval:.1}\nexchange_budget = {budget}");
        let positions = [Position::new(40.0, 50.0), Position::new(60.0, 50.0)];
        let mut cfg = static_world(&positions, 100.0, 0.0, trial, 10.0, &ads);
        for g in &mut cfg.groups {
            g.interests = Some(vec!["slide".into(), "article".into()]);
        }
        let end = interval * encounters as f64 + 5.0;
        cfg.world.duration = end;
        let mut sim = Simulation::new(&cfg).map_err(|e| e.to_string())?;
        for (h, s) in stores.iter().enumerate() {
            for it in s.values() {
                sim.put_local(NodeId(h as u32), it.clone());
            }
        }
        sim.run_until(end).map_err(|e| e.to_string())?;
        let view = |n: u32| -> BTreeMap<ItemId, InfoItem> {
            sim.node(NodeId(n)).expect("node").store.iter().map(|i| (i.id, i.clone())).collect()
        };
        let (a, b) = (view(0), view(1));
        if a != b {
            violations.push(format!("trial {trial}: delta {delta} budget {budget} not converged"));
        }
    }
    if violations.is_empty() {
        Ok(format!("100 trials converged within ceil(delta/budget) encounters (up to {max_encounters})"))
    } else {
        Err(format!("{} violations: {}", violations.len(), violations.join("; ")))
    }
}

// ---------------------------------------------------------------------------

fn random_copy(rng: &mut ChaCha8Rng, id: ItemId) -> InfoItem {
    let version = rng.gen_range(1..=3);
    let mut it = InfoItem::new(id, "slide", Payload::default().with("text", rng.gen_range(0..2)), 1.0);
    it.version = version;
    for _ in 0..rng.gen_range(0..3) {
        let rating = if rng.gen_bool(0.5) { Rating::Up } else { Rating::Down };
        it.evaluate(NodeId(rng.gen_range(0..4)), Evaluation { stamp: rng.gen_range(0..4), rating });
    }
    it
}

#[derive(Clone, Copy)]
enum Channel {
    Put,
    Chunk,
    Exchange,
}

struct Receiver {
    store: ItemStore,
    book: QueryBook,
    known: KnownMarkets,
    chunk_seq: u64,
}

impl Receiver {
    fn new() -> Self {
        let mut book = QueryBook::new();
        book.register(Asrq {
            query_id: QueryId { initiator: NodeId(9), seq: 1 },
            initiator: NodeId(9),
            selector: Selector::categories(["slide"]),
            launch_time: 0.0,
            ttl: 1e9,
            movement_plan: MovementPlan::stationary(Region::new(Position::new(0.0, 0.0), 1.0), 0.0, 1e9),
            expected_results: None,
            known_markets: vec![],
        });
        Self { store: ItemStore::new(), book, known: KnownMarkets::new(), chunk_seq: 0 }
    }

    fn apply(&mut self, ch: Channel, item: &InfoItem) {
        match ch {
            Channel::Put => {
                self.store.put_local(item.clone());
            }
            Channel::Chunk => {
                self.chunk_seq += 1;
                let chunk = ResultChunk {
                    query_id: QueryId { initiator: NodeId(9), seq: 1 },
                    chunk_seq: self.chunk_seq,
                    items: vec![item.clone()],
                    from_market: MarketId(0),
                    piggyback: vec![],
                };
                self.book.accept_chunk(&chunk, &mut self.store, &mut self.known, 0.0);
            }
            Channel::Exchange => {
                let mut peer = ItemStore::new();
                peer.put_local(item.clone());
                let interests: BTreeSet<Category> = [Category::new("slide")].into();
                let digest = self.store.digest(&interests);
                for it in plan_transfer(&peer, &interests, &digest, usize::MAX) {
                    self.store.put_local(it);
                }
            }
        }
    }

    fn snapshot(&self) -> BTreeMap<ItemId, InfoItem> {
        self.store.iter().map(|i| (i.id, i.clone())).collect()
    }
}

fn merge_algebra() -> Check {
    let mut violations = 0;
    for trial in 0..1000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(5000 + trial);
        let mut deliveries: Vec<InfoItem> = (0..rng.gen_range(1..=12))
            .map(|_| {
                let id = ItemId { origin: NodeId(1), counter: rng.gen_range(0..4) };
                random_copy(&mut rng, id)
            })
            .collect();
        let dupes: Vec<InfoItem> = deliveries.iter().filter(|_| rng.gen_bool(0.3)).cloned().collect();
        deliveries.extend(dupes);
        let mut reference: Option<BTreeMap<ItemId, InfoItem>> = None;
        for _ in 0..3 {
            let mut order = deliveries.clone();
            order.shuffle(&mut rng);
            let mut r = Receiver::new();
            for it in &order {
                let ch = [Channel::Put, Channel::Chunk, Channel::Exchange][rng.gen_range(0..3)];
                r.apply(ch, it);
            }
            let snap = r.snapshot();
            match &reference {
                None => reference = Some(snap),
                Some(want) if *want != snap => violations += 1,
                Some(_) => {}
            }
        }
    }
    if violations == 0 {
        Ok("1000 sequences, 3 permutations each with duplicates and mixed channels, identical stores".into())
    } else {
        Err(format!("{violations} divergent permutations"))
    }
}

// ---------------------------------------------------------------------------

/// Top-k members by rendezvous score, written independently of the
/// simulator's own ranking.
fn replica_oracle(id: ItemId, members: &BTreeSet<NodeId>, k: usize) -> BTreeSet<NodeId> {
    let mut ranked: Vec<(u64, NodeId)> = members.iter().map(|m| (rendezvous_score(id, *m), *m)).collect();
    ranked.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    ranked.into_iter().take(k).map(|(_, m)| m).collect()
}

fn replica_invariant() -> Check {
    let mut worst_streak = 0;
    let mut change_tick_violations = 0;
    let (mut lo, mut hi) = (usize::MAX, 0);
    let mut stable_ticks = 0;
    for seed in [1u64, 2, 3] {
        let cfg = scenario("churn.toml").with_seed(seed);
        let k = cfg.ads.k;
        let region = cfg.hotspot("hall").map(|h| Region::new(Position::new(h.x, h.y), h.radius)).ok_or("no hall")?;
        let mut sim = Simulation::new(&cfg).map_err(|e| e.to_string())?;
        let mut prev: Option<BTreeSet<NodeId>> = None;
        let mut streak = 0;
        let mut t = 0.0;
        while t <= cfg.world.duration {
            sim.run_until(t).map_err(|e| e.to_string())?;
            let members: BTreeSet<NodeId> = sim
                .ads_nodes()
                .map(|a| a.id)
                .filter(|n| sim.kernel().position(*n).is_ok_and(|p| region.contains(&p)))
                .collect();
            let market = &sim.markets()[0];
            let ok = market.pool_ids().iter().all(|id| {
                let held: BTreeSet<NodeId> =
                    members.iter().copied().filter(|m| market.share(*m).is_some_and(|s| s.pool.contains_key(id))).collect();
                held.len() == k.min(members.len()) && held == replica_oracle(*id, &members, k)
            });
            let stable = prev.as_ref() == Some(&members);
            if stable {
                stable_ticks += 1;
                streak = if ok { 0 } else { streak + 1 };
                worst_streak = worst_streak.max(streak);
            } else {
                streak = 0;
                change_tick_violations += usize::from(!ok);
            }
            if !members.is_empty() {
                lo = lo.min(members.len());
                hi = hi.max(members.len());
            }
            prev = Some(members);
            t += cfg.world.tick;
        }
    }
    let detail = format!(
        "3 seeds, members {lo}..{hi}, {stable_ticks} stable ticks, longest stable violation run {worst_streak}, {change_tick_violations} change-tick violations"
    );
    if worst_streak < 2 && lo <= 2 && hi >= 10 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------------------

fn no_information_loss() -> Check {
    let mut lost = Vec::new();
    let mut collapsed = 0;
    for seed in 1..=20u64 {
        let cfg = scenario("collapse.toml").with_seed(seed);
        let mut sim = Simulation::new(&cfg).map_err(|e| e.to_string())?;
        sim.run_until(290.0).map_err(|e| e.to_string())?;
        let before = sim.markets()[0].pool_ids();
        let members_before = sim.markets()[0].member_count();
        sim.run_until(450.0).map_err(|e| e.to_string())?;
        let empty = sim.markets()[0].member_count() == 0;
        collapsed += usize::from(empty && members_before == 5);
        sim.run();
        let after = sim.markets()[0].pool_ids();
        let chunks_in_collapse =
            sim.trace().of_kind("MKT_CHUNK").filter(|e| e.time > 350.0 && e.time < 600.0).count();
        if before.is_empty() || before != after || chunks_in_collapse > 0 {
            lost.push(format!("seed {seed}: {} -> {} items", before.len(), after.len()));
        }
    }
    let detail = format!("20 seeds, {collapsed} collapsed 5 -> 0 -> 5");
    if lost.is_empty() && collapsed == 20 {
        Ok(format!("{detail}, pool id set preserved in all"))
    } else {
        Err(format!("{detail}; {}", lost.join("; ")))
    }
}

// ---------------------------------------------------------------------------

fn asrq_end_to_end() -> Check {
    let mut fractions = BTreeMap::new();
    for loss in [0.0, 0.2] {
        let mut fs = Vec::new();
        for seed in 1..=20u64 {
            let mut cfg = scenario("absent_student.toml").with_seed(seed);
            cfg.radio.loss_prob = loss;
            let out = execute(&cfg).map_err(|e| e.to_string())?;
            let student = NodeId(12);
            // Independent of the metrics code: released items versus the
            // student's store lines in the trace.
            let released: BTreeSet<&str> = out.trace.of_kind("CREATE").filter_map(|e| e.get("item")).collect();
            let held: BTreeSet<&str> = out
                .trace
                .of_kind("STORE")
                .filter(|e| e.node == Some(student))
                .filter_map(|e| e.get("item"))
                .filter(|i| released.contains(i))
                .collect();
            let f = held.len() as f64 / released.len().max(1) as f64;
            let reported = out.report.asrq.first().and_then(|a| a.fraction());
            if reported.is_none_or(|r| (r - f).abs() > 1e-12) {
                return Err(format!("seed {seed}: report says {reported:?}, trace says {f}"));
            }
            fs.push(f);
        }
        fractions.insert(if loss == 0.0 { "lossless" } else { "loss" }, fs);
    }
    let lossless_min = fractions["lossless"].iter().copied().fold(1.0, f64::min);
    let lossy_mean = fractions["loss"].iter().sum::<f64>() / 20.0;
    let detail = format!("lossless min {:.3} over 20 seeds, loss 0.2 mean {:.3} over 20 seeds (target 0.70)", lossless_min, lossy_mean);
    if lossless_min == 1.0 && lossy_mean >= 0.70 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------------------

const FAKE_SCRIPT: &str = r#"
[[script]]
at = 5.0
op = "release"
staff = 0
course = "nets"
region = "room"
items = [{ label = "s1", kind = "slide", index = 1 }]

[[script]]
at = 10.0
op = "annotate"
node = 1
label = "junk"
target = "s1"
text = "buy cheap watches"

[[script]]
at = 12.0
op = "annotate"
node = 2
label = "fine"
target = "s1"
text = "see lecture 3"
"#;

fn fake_removal() -> Check {
    // Threshold arithmetic against the brute-force rule.
    let mut rng = ChaCha8Rng::seed_from_u64(9000);
    for trial in 0..500 {
        let mut it = InfoItem::new(ItemId { origin: NodeId(1), counter: 1 }, "annotation", Payload::default(), 0.0);
        let (mut ups, mut downs) = (0i64, 0i64);
        for voter in 0..rng.gen_range(0..12) {
            let up = rng.gen_bool(0.4);
            it.evaluate(NodeId(100 + voter), Evaluation { stamp: 1, rating: if up { Rating::Up } else { Rating::Down } });
            if up {
                ups += 1;
            } else {
                downs += 1;
            }
        }
        let brute = ups - downs <= -3 && ups + downs >= 5;
        if carla::is_fake(&it, 3, 5) != brute {
            return Err(format!("multiset {trial}: {ups} up / {downs} down misjudged"));
        }
    }

    // In a room of eight, five students vote an annotation down.
    let mut script = FAKE_SCRIPT.to_string();
    for (i, voter) in [3u32, 4, 5, 6, 7].iter().enumerate() {
        script.push_str(&format!(
            "\n[[script]]\nat = {}.0\nop = \"evaluate\"\nnode = {voter}\nitem = \"junk\"\nrating = -1\n",
            40 + i
        ));
    }
    script.push_str("\n[[script]]\nat = 41.0\nop = \"evaluate\"\nnode = 3\nitem = \"fine\"\nrating = 1\n");
    let text = format!(
        r#"format_version = 1
name = "fakes"
seed = 3

[world]
width = 100.0
height = 100.0
duration = 600.0

[[hotspots]]
name = "room"
x = 50.0
y = 50.0
radius = 30.0

[[groups]]
name = "lecturer"
role = "staff"
mobility = "static"
positions = [[50.0, 50.0]]

[[groups]]
name = "students"
role = "student"
mobility = "static"
positions = [[40.0, 40.0], [60.0, 40.0], [40.0, 60.0], [60.0, 60.0], [50.0, 35.0], [50.0, 65.0], [35.0, 50.0]]
{script}"#
    );
    let cfg = parse_scenario(&text).map_err(|e| e.to_string())?;
    let mut sim = Simulation::new(&cfg).map_err(|e| e.to_string())?;
    let junk = sim.label("junk").ok_or("label")?;
    let fine = sim.label("fine").ok_or("label")?;
    let everything = Selector::categories(ScenarioConfig::all_carla_categories().iter().map(String::as_str));
    let interests: BTreeSet<Category> = everything.categories.clone();
    let mut purged_at: BTreeMap<NodeId, f64> = BTreeMap::new();
    let mut violations = Vec::new();
    let mut t = 0.0;
    while t <= 600.0 {
        sim.run_until(t).map_err(|e| e.to_string())?;
        for node in sim.ads_nodes() {
            if node.store.is_hidden(&junk) {
                purged_at.entry(node.id).or_insert(t);
            }
            if !purged_at.contains_key(&node.id) {
                continue;
            }
            let leaks_query = node.store.query_local(&everything).iter().any(|i| i.id == junk);
            let leaks_exchange = plan_transfer(&node.store, &interests, &Default::default(), usize::MAX).iter().any(|i| i.id == junk);
            let unhidden = !node.store.is_hidden(&junk);
            if leaks_query || leaks_exchange || unhidden {
                violations.push(format!("node {} at {t}", node.id));
            }
        }
        t += 1.0;
    }
    let q = sim.query_sync(NodeId(0), everything.clone(), 2.0, 2).ok_or("query")?;
    sim.run_until(610.0).map_err(|e| e.to_string())?;
    let results = sim.sync_results(q).ok_or("sync not closed")?;
    if results.iter().any(|i| i.id == junk) {
        violations.push("neighborhood query returned the fake".into());
    }
    if !results.iter().any(|i| i.id == fine) {
        violations.push("legitimate annotation missing".into());
    }
    let purging = purged_at.len();
    if purging < 7 {
        violations.push(format!("only {purging} nodes purged"));
    }
    if violations.is_empty() {
        Ok(format!("500 multisets match the brute-force rule; fake hidden on {purging} nodes and never served again"))
    } else {
        Err(violations.join("; "))
    }
}

// ---------------------------------------------------------------------------

fn selection_oracle(wanted: &BTreeSet<Category>, at: Position, known: &[MarketDescriptor], w: SelectionWeights) -> MarketId {
    let dmax = known.iter().map(|d| at.distance(&d.region.center)).fold(0.0, f64::max);
    let score = |d: &MarketDescriptor| {
        let fit = if wanted.is_empty() {
            0.0
        } else {
            wanted.iter().filter(|c| d.categories.contains_key(*c)).count() as f64 / wanted.len() as f64
        };
        let dist = if dmax > 0.0 { at.distance(&d.region.center) / dmax } else { 0.0 };
        w.w_cat * fit - w.w_dist * dist
    };
    let best = known.iter().map(score).fold(f64::NEG_INFINITY, f64::max);
    known.iter().filter(|d| score(d) == best).map(|d| d.market_id).min().expect("nonempty")
}

fn market_selection() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(10_000);
    let cats = ["slide", "article", "annotation", "question", "link"];
    let mut ties = 0;
    for trial in 0..1000 {
        let n = rng.gen_range(1..=8);
        let mut known = Vec::new();
        for i in 0..n {
            // Coarse grid positions make exact ties common.
            let center = Position::new(rng.gen_range(0..5) as f64 * 100.0, rng.gen_range(0..5) as f64 * 100.0);
            let mut d = MarketDescriptor::new(MarketId(rng.gen_range(0..1000) * 10 + i), Region::new(center, 20.0), 0.0);
            for c in cats {
                if rng.gen_bool(0.4) {
                    d.categories.insert(Category::new(c), 1);
                }
            }
            known.push(d);
        }
        let wanted: BTreeSet<Category> = cats.iter().filter(|_| rng.gen_bool(0.5)).map(|c| Category::new(c)).collect();
        let at = Position::new(rng.gen_range(0..5) as f64 * 100.0, rng.gen_range(0..5) as f64 * 100.0);
        let w = SelectionWeights { w_cat: rng.gen_range(0..3) as f64 * 0.5, w_dist: rng.gen_range(0..3) as f64 * 0.25 };
        let want = selection_oracle(&wanted, at, &known, w);
        let got = select_market(&wanted, at, &known, w).map_err(|e| e.to_string())?.market_id;
        if got != want {
            return Err(format!("set {trial}: chose {got}, oracle {want}"));
        }
        let mut shuffled = known.clone();
        shuffled.shuffle(&mut rng);
        if select_market(&wanted, at, &shuffled, w).map_err(|e| e.to_string())?.market_id != want {
            return Err(format!("set {trial}: choice depends on input order"));
        }
        let scores = adsim::market::scores(&wanted, at, &known, w);
        let top = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        ties += usize::from(scores.iter().filter(|s| **s == top).count() > 1);
    }
    Ok(format!("1000 descriptor sets agree with the scoring oracle, {ties} with exact ties, order-independent"))
}

// ---------------------------------------------------------------------------

fn piggyback_dissemination() -> Check {
    let out = execute(&scenario("commuters.toml")).map_err(|e| e.to_string())?;
    let trace = &out.trace;
    let support: HashSet<NodeId> =
        trace.of_kind("NODE").filter(|e| e.get("role") == Some("support")).filter_map(|e| e.node).collect();
    let markets: Vec<String> = trace.of_kind("MARKET").filter_map(|e| e.get("market").map(str::to_string)).collect();
    let duration = out.report.duration;

    // Awareness fractions must never fall.
    for col in 0..out.report.awareness[0].len() {
        if out.report.awareness.windows(2).any(|w| w[1][col] < w[0][col]) {
            return Err(format!("awareness column {col} decreases"));
        }
    }

    let mut summary = Vec::new();
    for m in &markets {
        let knows_at: HashMap<NodeId, f64> = {
            let mut k = HashMap::new();
            for e in trace.of_kind("KNOW_MKT").filter(|e| e.get("market") == Some(m.as_str())) {
                k.entry(e.node.expect("node")).or_insert(e.time);
            }
            k
        };
        // Epidemic oracle: replay links tick by tick; any component holding
        // an informed node should end up informed.
        let mut adj: HashMap<NodeId, HashSet<NodeId>> = HashMap::new();
        let mut should: HashSet<NodeId> = HashSet::new();
        let mut events = trace.events.iter().peekable();
        let mut t = 0.0;
        while t < duration {
            while let Some(e) = events.next_if(|e| e.time <= t + 1e-6) {
                let (Some(a), Some(b)) = (e.node, e.parse_field::<u32>("peer").map(NodeId)) else { continue };
                if support.contains(&a) || support.contains(&b) {
                    continue;
                }
                match e.kind.as_str() {
                    "LINK_UP" => {
                        adj.entry(a).or_default().insert(b);
                        adj.entry(b).or_default().insert(a);
                    }
                    "LINK_DOWN" => {
                        adj.entry(a).or_default().remove(&b);
                        adj.entry(b).or_default().remove(&a);
                    }
                    _ => {}
                }
            }
            let mut seen: HashSet<NodeId> = HashSet::new();
            let nodes: Vec<NodeId> = adj.keys().copied().collect();
            for start in nodes {
                if !seen.insert(start) {
                    continue;
                }
                let mut comp = vec![start];
                let mut stack = vec![start];
                while let Some(u) = stack.pop() {
                    for v in adj.get(&u).into_iter().flatten() {
                        if seen.insert(*v) {
                            comp.push(*v);
                            stack.push(*v);
                        }
                    }
                }
                if comp.iter().any(|n| knows_at.get(n).is_some_and(|k| *k <= t) || should.contains(n)) {
                    should.extend(comp);
                }
            }
            t += 1.0;
        }
        let missing: Vec<NodeId> = should.iter().filter(|n| !knows_at.contains_key(n)).copied().collect();
        if !missing.is_empty() {
            return Err(format!("market {m}: {} nodes shared a component with informed nodes but never learned it", missing.len()));
        }
        summary.push(format!("{m}: {}/{}", knows_at.len(), should.len().max(knows_at.len())));
    }
    Ok(format!("awareness non-decreasing; every node reached by the epidemic oracle learned the descriptor ({})", summary.join(", ")))
}

// ---------------------------------------------------------------------------

fn main() {
    let checks: [(&str, fn() -> Check); 11] = [
        ("determinism", determinism),
        ("neighborhood query soundness", neighborhood_query),
        ("routing correctness", routing),
        ("en-passant convergence", en_passant),
        ("merge algebra", merge_algebra),
        ("replica invariant", replica_invariant),
        ("no information loss", no_information_loss),
        ("remote query end to end", asrq_end_to_end),
        ("fake removal", fake_removal),
        ("market selection", market_selection),
        ("descriptor dissemination", piggyback_dissemination),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        let started = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name:<30} {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name:<30} {detail} [{secs:.1}s]");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 11 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
