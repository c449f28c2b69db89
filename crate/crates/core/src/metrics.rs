//! Run metrics derived from a trace alone.
//!
//! Nothing here looks at simulator state, so a report can be recomputed
//! offline from any saved trace with [`MetricsReport::from_trace`].

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;

use thiserror::Error;

use crate::kernel::NodeId;
use crate::trace::{Trace, TraceEvent};

/// Coverage of one created item over the interested population.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemCoverage {
    pub item: String,
    pub category: String,
    pub creator: NodeId,
    pub created: f64,
    /// ADS nodes whose interests include the item's category.
    pub interested: usize,
    /// Value at the last sample; `None` when nobody is interested.
    pub final_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AsrqOutcome {
    pub query: String,
    pub node: NodeId,
    pub launched: f64,
    pub expires: f64,
    /// Items created before the horizon matching the query's selector.
    pub matching: usize,
    /// Of those, the ones the initiator held by the horizon.
    pub delivered: usize,
    pub first_chunk_latency: Option<f64>,
}

impl AsrqOutcome {
    pub fn fraction(&self) -> Option<f64> {
        (self.matching > 0).then(|| self.delivered as f64 / self.matching as f64)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DeliveryCount {
    pub routed: usize,
    pub delivered: usize,
}

impl DeliveryCount {
    pub fn ratio(&self) -> Option<f64> {
        (self.routed > 0).then(|| self.delivered as f64 / self.routed as f64)
    }
}

/// Replica-invariant checks of one market.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReplicationHealth {
    pub market: String,
    pub checks: usize,
    pub ok: usize,
    /// Checks on ticks without a membership change.
    pub stable: usize,
    pub stable_ok: usize,
}

impl ReplicationHealth {
    pub fn health(&self) -> Option<f64> {
        (self.stable > 0).then(|| self.stable_ok as f64 / self.stable as f64)
    }
}

/// Everything measured about one run.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub name: String,
    pub seed: u64,
    pub duration: f64,
    pub tick: f64,
    /// Sample times, one per tick from 0 to the duration.
    pub times: Vec<f64>,
    pub items: Vec<ItemCoverage>,
    /// `coverage[t][j]` is the fraction for the j-th item with a nonzero
    /// interested population.
    pub coverage: Vec<Vec<f64>>,
    pub asrq: Vec<AsrqOutcome>,
    pub delivery: BTreeMap<String, DeliveryCount>,
    pub replication: Vec<ReplicationHealth>,
    pub markets: Vec<String>,
    /// ADS nodes in the run (support nodes excluded).
    pub population: usize,
    /// `awareness[t]` holds the fraction knowing any market, then one
    /// column per market.
    pub awareness: Vec<Vec<f64>>,
}

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("trace has no SIM header")]
    MissingHeader,
    #[error("SIM header lacks a valid `{0}`")]
    BadHeader(&'static str),
}

fn header_field<T: std::str::FromStr>(ev: &TraceEvent, key: &'static str) -> Result<T, MetricsError> {
    ev.parse_field(key).ok_or(MetricsError::BadHeader(key))
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

struct Created {
    category: String,
    course: Option<String>,
    creator: NodeId,
    created: f64,
}

impl MetricsReport {
    pub fn from_trace(trace: &Trace) -> Result<Self, MetricsError> {
        let header = trace.of_kind("SIM").next().ok_or(MetricsError::MissingHeader)?;
        let name = header.get("name").unwrap_or("-").to_string();
        let seed: u64 = header_field(header, "seed")?;
        let duration: f64 = header_field(header, "duration")?;
        let tick: f64 = header_field(header, "tick")?;
        if !(tick > 0.0) || !(duration >= 0.0) {
            return Err(MetricsError::BadHeader("tick"));
        }
        let samples = (duration / tick + 1e-9).floor() as usize + 1;
        let times: Vec<f64> = (0..samples).map(|i| i as f64 * tick).collect();

        let mut interests: BTreeMap<NodeId, BTreeSet<String>> = BTreeMap::new();
        let mut markets: Vec<String> = Vec::new();
        let mut created: Vec<(String, Created)> = Vec::new();
        let mut seen_items: HashSet<String> = HashSet::new();
        for ev in &trace.events {
            match ev.kind.as_str() {
                "NODE" => {
                    let Some(n) = ev.node else { continue };
                    if ev.get("role") == Some("support") {
                        continue;
                    }
                    let cats = match ev.get("interests") {
                        None | Some("-") => BTreeSet::new(),
                        Some(s) => s.split(',').map(str::to_string).collect(),
                    };
                    interests.insert(n, cats);
                }
                "MARKET" => {
                    if let Some(m) = ev.get("market") {
                        markets.push(m.to_string());
                    }
                }
                "CREATE" => {
                    let (Some(item), Some(n)) = (ev.get("item"), ev.node) else { continue };
                    if seen_items.insert(item.to_string()) {
                        created.push((
                            item.to_string(),
                            Created {
                                category: ev.get("cat").unwrap_or_default().to_string(),
                                course: ev.get("course").map(str::to_string),
                                creator: n,
                                created: ev.time,
                            },
                        ));
                    }
                }
                _ => {}
            }
        }

        // Columns of the coverage table: items somebody is interested in.
        let mut items = Vec::new();
        let mut column: HashMap<String, usize> = HashMap::new();
        let mut audience: Vec<HashSet<NodeId>> = Vec::new();
        for (id, c) in &created {
            let who: HashSet<NodeId> =
                interests.iter().filter(|(_, cats)| cats.contains(&c.category)).map(|(n, _)| *n).collect();
            if !who.is_empty() {
                column.insert(id.clone(), audience.len());
                audience.push(who.clone());
            }
            items.push(ItemCoverage {
                item: id.clone(),
                category: c.category.clone(),
                creator: c.creator,
                created: c.created,
                interested: who.len(),
                final_fraction: None,
            });
        }
        let market_col: HashMap<&str, usize> = markets.iter().enumerate().map(|(i, m)| (m.as_str(), i)).collect();
        let population = interests.len();

        let mut holders: Vec<HashSet<NodeId>> = vec![HashSet::new(); audience.len()];
        let mut aware_any: HashSet<NodeId> = HashSet::new();
        let mut aware: Vec<HashSet<NodeId>> = vec![HashSet::new(); markets.len()];
        let mut coverage: Vec<Vec<f64>> = Vec::with_capacity(samples);
        let mut awareness: Vec<Vec<f64>> = Vec::with_capacity(samples);
        let mut events = trace.events.iter().peekable();
        for &t in &times {
            while let Some(ev) = events.next_if(|e| e.time <= t + 1e-6) {
                let Some(n) = ev.node else { continue };
                match ev.kind.as_str() {
                    "STORE" => {
                        if let Some(&j) = ev.get("item").and_then(|i| column.get(i)) {
                            if audience[j].contains(&n) {
                                holders[j].insert(n);
                            }
                        }
                    }
                    "KNOW_MKT" => {
                        if interests.contains_key(&n) {
                            aware_any.insert(n);
                            if let Some(&j) = ev.get("market").and_then(|m| market_col.get(m)) {
                                aware[j].insert(n);
                            }
                        }
                    }
                    _ => {}
                }
            }
            coverage.push(holders.iter().zip(&audience).map(|(h, a)| h.len() as f64 / a.len() as f64).collect());
            let frac = |k: usize| if population == 0 { 0.0 } else { k as f64 / population as f64 };
            let mut row = vec![frac(aware_any.len())];
            row.extend(aware.iter().map(|s| frac(s.len())));
            awareness.push(row);
        }
        if let Some(last) = coverage.last() {
            for it in &mut items {
                if let Some(&j) = column.get(&it.item) {
                    it.final_fraction = Some(last[j]);
                }
            }
        }

        let asrq = Self::asrq_outcomes(trace, &created, duration);
        let delivery = Self::delivery(trace);
        let replication = Self::replication(trace, &markets);

        Ok(Self {
            name,
            seed,
            duration,
            tick,
            times,
            items,
            coverage,
            asrq,
            delivery,
            replication,
            markets,
            population,
            awareness,
        })
    }

    fn asrq_outcomes(trace: &Trace, created: &[(String, Created)], duration: f64) -> Vec<AsrqOutcome> {
        let mut out = Vec::new();
        for ev in trace.of_kind("ASRQ_LAUNCH") {
            let (Some(node), Some(query)) = (ev.node, ev.get("query")) else { continue };
            let expires: f64 = ev.parse_field("expires").unwrap_or(duration);
            let horizon = expires.min(duration);
            let cats: BTreeSet<&str> = ev.get("cats").unwrap_or_default().split(',').filter(|c| !c.is_empty()).collect();
            let course = ev.get("course").filter(|c| !c.is_empty());
            let matching: BTreeSet<&str> = created
                .iter()
                .filter(|(_, c)| c.created <= horizon + 1e-6 && cats.contains(c.category.as_str()))
                .filter(|(_, c)| course.is_none() || c.course.as_deref() == course)
                .map(|(id, _)| id.as_str())
                .collect();
            let held: BTreeSet<&str> = trace
                .events
                .iter()
                .filter(|e| e.kind == "STORE" && e.node == Some(node) && e.time <= horizon + 1e-6)
                .filter_map(|e| e.get("item"))
                .filter(|i| matching.contains(i))
                .collect();
            let first = trace
                .events
                .iter()
                .find(|e| e.kind == "CHUNK_RX" && e.node == Some(node) && e.get("query") == Some(query))
                .map(|e| e.time - ev.time);
            out.push(AsrqOutcome {
                query: query.to_string(),
                node,
                launched: ev.time,
                expires,
                matching: matching.len(),
                delivered: held.len(),
                first_chunk_latency: first,
            });
        }
        out
    }

    fn delivery(trace: &Trace) -> BTreeMap<String, DeliveryCount> {
        let mut kind_of: HashMap<&str, &str> = HashMap::new();
        let mut out: BTreeMap<String, DeliveryCount> = BTreeMap::new();
        for ev in trace.of_kind("ROUTE") {
            let (Some(msg), Some(kind)) = (ev.get("msg"), ev.get("kind")) else { continue };
            kind_of.insert(msg, kind);
            out.entry(kind.to_string()).or_default().routed += 1;
        }
        let mut done: HashSet<&str> = HashSet::new();
        for ev in trace.of_kind("DELIVER") {
            let Some(msg) = ev.get("msg") else { continue };
            if let Some(kind) = kind_of.get(msg) {
                if done.insert(msg) {
                    out.get_mut(*kind).expect("routed kind").delivered += 1;
                }
            }
        }
        out
    }

    fn replication(trace: &Trace, markets: &[String]) -> Vec<ReplicationHealth> {
        let mut out: Vec<ReplicationHealth> =
            markets.iter().map(|m| ReplicationHealth { market: m.clone(), ..Default::default() }).collect();
        for ev in trace.of_kind("MKT_CHECK") {
            let Some(h) = out.iter_mut().find(|h| Some(h.market.as_str()) == ev.get("market")) else { continue };
            let ok = ev.get("ok") == Some("1");
            h.checks += 1;
            h.ok += usize::from(ok);
            if ev.get("stable") == Some("1") {
                h.stable += 1;
                h.stable_ok += usize::from(ok);
            }
        }
        out
    }

    /// Mean over items of the final coverage fraction.
    pub fn coverage_final_mean(&self) -> Option<f64> {
        mean(self.items.iter().filter_map(|i| i.final_fraction))
    }

    /// Mean delivered-item fraction over ASRQs with matching items.
    pub fn asrq_delivered_mean(&self) -> Option<f64> {
        mean(self.asrq.iter().filter_map(AsrqOutcome::fraction))
    }

    pub fn first_chunk_latency_mean(&self) -> Option<f64> {
        mean(self.asrq.iter().filter_map(|a| a.first_chunk_latency))
    }

    pub fn delivery_total(&self) -> DeliveryCount {
        self.delivery.values().fold(DeliveryCount::default(), |acc, d| DeliveryCount {
            routed: acc.routed + d.routed,
            delivered: acc.delivered + d.delivered,
        })
    }

    pub fn delivery_ratio(&self) -> Option<f64> {
        self.delivery_total().ratio()
    }

    /// Fraction of stable market ticks satisfying the replica invariant.
    pub fn replication_health(&self) -> Option<f64> {
        let stable: usize = self.replication.iter().map(|h| h.stable).sum();
        let ok: usize = self.replication.iter().map(|h| h.stable_ok).sum();
        (stable > 0).then(|| ok as f64 / stable as f64)
    }

    /// Fraction of ADS nodes knowing at least one market at the end.
    pub fn awareness_final(&self) -> Option<f64> {
        self.awareness.last().map(|r| r[0])
    }

    /// The one-line summary used by batch tables, in
    /// [`SUMMARY_METRICS`] order.
    pub fn summary(&self) -> Vec<(&'static str, Option<f64>)> {
        let values = [
            self.coverage_final_mean(),
            self.asrq_delivered_mean(),
            self.first_chunk_latency_mean(),
            self.delivery_ratio(),
            self.replication_health(),
            self.awareness_final(),
        ];
        SUMMARY_METRICS.into_iter().zip(values).collect()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# adsim metrics report");
        let _ = writeln!(
            out,
            "# scenario={} seed={} duration={:.3} tick={:.3}",
            self.name, self.seed, self.duration, self.tick
        );
        out.push('\n');

        section(&mut out, "summary", &["metric", "value"]);
        for (k, v) in self.summary() {
            row(&mut out, [k.to_string(), opt(v)]);
        }

        section(&mut out, "items", &["item", "category", "creator", "created", "interested", "final"]);
        for i in &self.items {
            row(
                &mut out,
                [
                    i.item.clone(),
                    i.category.clone(),
                    i.creator.to_string(),
                    format!("{:.3}", i.created),
                    i.interested.to_string(),
                    opt(i.final_fraction),
                ],
            );
        }

        let tracked: Vec<&ItemCoverage> = self.items.iter().filter(|i| i.interested > 0).collect();
        let mut cols = vec!["time".to_string(), "mean".to_string()];
        cols.extend(tracked.iter().map(|i| i.item.clone()));
        section(&mut out, "coverage", &cols);
        for (t, r) in self.times.iter().zip(&self.coverage) {
            let m = mean(r.iter().copied());
            let mut line = vec![format!("{t:.3}"), opt(m)];
            line.extend(r.iter().map(|x| format!("{x:.6}")));
            row(&mut out, line);
        }

        section(
            &mut out,
            "asrq",
            &["query", "node", "launched", "expires", "matching", "delivered", "fraction", "first_chunk_latency"],
        );
        for a in &self.asrq {
            row(
                &mut out,
                [
                    a.query.clone(),
                    a.node.to_string(),
                    format!("{:.3}", a.launched),
                    format!("{:.3}", a.expires),
                    a.matching.to_string(),
                    a.delivered.to_string(),
                    opt(a.fraction()),
                    opt(a.first_chunk_latency),
                ],
            );
        }

        section(&mut out, "delivery", &["kind", "routed", "delivered", "ratio"]);
        let total = self.delivery_total();
        for (k, d) in self.delivery.iter().chain(std::iter::once((&"ALL".to_string(), &total))) {
            row(&mut out, [k.clone(), d.routed.to_string(), d.delivered.to_string(), opt(d.ratio())]);
        }

        section(&mut out, "replication", &["market", "checks", "ok", "stable", "stable_ok", "health"]);
        for h in &self.replication {
            row(
                &mut out,
                [
                    h.market.clone(),
                    h.checks.to_string(),
                    h.ok.to_string(),
                    h.stable.to_string(),
                    h.stable_ok.to_string(),
                    opt(h.health()),
                ],
            );
        }

        let mut cols = vec!["time".to_string(), "any".to_string()];
        cols.extend(self.markets.iter().cloned());
        section(&mut out, "awareness", &cols);
        let _ = writeln!(out, "# population={}", self.population);
        for (t, r) in self.times.iter().zip(&self.awareness) {
            let mut line = vec![format!("{t:.3}")];
            line.extend(r.iter().map(|x| format!("{x:.6}")));
            row(&mut out, line);
        }
        out
    }
}

pub const SUMMARY_METRICS: [&str; 6] = [
    "coverage_final_mean",
    "asrq_delivered_mean",
    "first_chunk_latency_mean",
    "delivery_ratio",
    "replication_health",
    "awareness_final",
];

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.6}"))
}

fn section<S: AsRef<str>>(out: &mut String, name: &str, cols: &[S]) {
    if !out.ends_with("\n\n") {
        out.push('\n');
    }
    let _ = writeln!(out, "# section {name}");
    row(out, cols.iter().map(|c| c.as_ref().to_string()));
}

fn row(out: &mut String, cells: impl IntoIterator<Item = String>) {
    let cells: Vec<String> = cells.into_iter().collect();
    out.push_str(&cells.join("\t"));
    out.push('\n');
}

/// One table of a rendered report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportSection {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl ReportSection {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Cell `(row, col)` parsed as a number; `-` reads as `None`.
    pub fn number(&self, row: usize, col: &str) -> Option<f64> {
        let c = self.column(col)?;
        self.rows.get(row)?.get(c)?.parse().ok()
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ReportParseError {
    #[error("line {line}: row outside any section")]
    Orphan { line: usize },
    #[error("line {line}: {got} cells, header has {want}")]
    Width { line: usize, got: usize, want: usize },
}

/// Splits a rendered report back into its tables.
pub fn parse_report(text: &str) -> Result<Vec<ReportSection>, ReportParseError> {
    let mut out: Vec<ReportSection> = Vec::new();
    let mut need_header = false;
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix("# section ") {
            out.push(ReportSection { name: name.trim().to_string(), columns: Vec::new(), rows: Vec::new() });
            need_header = true;
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let cells: Vec<String> = line.split('\t').map(str::to_string).collect();
        let Some(sec) = out.last_mut() else { return Err(ReportParseError::Orphan { line: i + 1 }) };
        if need_header {
            sec.columns = cells;
            need_header = false;
        } else if cells.len() != sec.columns.len() {
            return Err(ReportParseError::Width { line: i + 1, got: cells.len(), want: sec.columns.len() });
        } else {
            sec.rows.push(cells);
        }
    }
    Ok(out)
}
