//! Scenario files: loading, validation and resolution into a runnable setup.

mod config;

pub use config::*;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use thiserror::Error;

use crate::ads::{Category, ItemId};
use crate::geometry::{Position, Region, World};
use crate::kernel::NodeId;
use crate::plan::{MovementPlan, PlanEntry};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationError {
    pub field: String,
    pub message: String,
}

impl ValidationError {
    fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self { field: field.into(), message: message.into() }
    }
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{} validation error(s): {}", .0.len(), join_errors(.0))]
    Invalid(Vec<ValidationError>),
}

fn join_errors(errs: &[ValidationError]) -> String {
    errs.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

impl ScenarioError {
    pub fn validation_errors(&self) -> &[ValidationError] {
        match self {
            ScenarioError::Invalid(v) => v,
            _ => &[],
        }
    }
}

/// Reads, parses and validates a scenario file.
pub fn load_scenario(path: &Path) -> Result<ScenarioConfig, ScenarioError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })?;
    parse_scenario(&text)
}

pub fn parse_scenario(text: &str) -> Result<ScenarioConfig, ScenarioError> {
    let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| {
        let line = e.span().map_or(0, |s| text[..s.start.min(text.len())].matches('\n').count() + 1);
        ScenarioError::Parse { line, message: e.message().to_string() }
    })?;
    cfg.resolve().map_err(ScenarioError::Invalid)?;
    Ok(cfg)
}

impl ScenarioConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario configs always serialize")
    }

    pub fn validate(&self) -> Result<(), Vec<ValidationError>> {
        self.resolve().map(|_| ())
    }

    /// Checks every constraint and, if all hold, expands groups into nodes
    /// and script labels into item ids.
    pub fn resolve(&self) -> Result<Resolved, Vec<ValidationError>> {
        Resolver::new(self).run()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum NodeRole {
    Student,
    Staff,
    Support,
}

impl fmt::Display for NodeRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NodeRole::Student => "student",
            NodeRole::Staff => "staff",
            NodeRole::Support => "support",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StartPlacement {
    At(Position),
    In(Region),
    Anywhere,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeSpec {
    pub id: NodeId,
    pub role: NodeRole,
    pub group: Option<usize>,
    pub interests: BTreeSet<Category>,
    pub budget: usize,
    pub start: StartPlacement,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarketSpec {
    pub name: String,
    pub region: Region,
}

/// A validated scenario with ids assigned.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub world: World,
    pub regions: BTreeMap<String, Region>,
    pub nodes: Vec<NodeSpec>,
    pub markets: Vec<MarketSpec>,
    /// Support node id and the hotspot it sits in.
    pub supports: Vec<(NodeId, String)>,
    pub plans: BTreeMap<NodeId, MovementPlan>,
    pub labels: BTreeMap<String, ItemId>,
    /// Script in execution order (stable by `at`).
    pub script: Vec<Directive>,
}

impl Resolved {
    pub fn role(&self, id: NodeId) -> Option<NodeRole> {
        self.nodes.get(id.0 as usize).map(|n| n.role)
    }
}

struct Resolver<'a> {
    cfg: &'a ScenarioConfig,
    errors: Vec<ValidationError>,
}

fn in_range(v: f64, lo: f64, hi: f64) -> bool {
    v.is_finite() && v >= lo && v <= hi
}

impl<'a> Resolver<'a> {
    fn new(cfg: &'a ScenarioConfig) -> Self {
        Self { cfg, errors: Vec::new() }
    }

    fn err(&mut self, field: impl Into<String>, msg: impl Into<String>) {
        self.errors.push(ValidationError::new(field, msg));
    }

    fn check(&mut self, ok: bool, field: &str, msg: &str) {
        if !ok {
            self.err(field, msg);
        }
    }

    fn run(mut self) -> Result<Resolved, Vec<ValidationError>> {
        let cfg = self.cfg;
        if cfg.format_version != FORMAT_VERSION {
            self.err("format_version", format!("unsupported version {} (expected {FORMAT_VERSION})", cfg.format_version));
        }
        let w = &cfg.world;
        self.check(w.width.is_finite() && w.width > 0.0, "world.width", "must be > 0");
        self.check(w.height.is_finite() && w.height > 0.0, "world.height", "must be > 0");
        self.check(w.duration.is_finite() && w.duration >= 0.0, "world.duration", "must be >= 0");
        self.check(w.tick.is_finite() && w.tick > 0.0, "world.tick", "must be > 0");
        let r = &cfg.radio;
        self.check(r.range.is_finite() && r.range > 0.0, "radio.range", "must be > 0");
        self.check(in_range(r.loss_prob, 0.0, 1.0), "radio.loss_prob", "must lie in [0, 1]");
        self.check(r.latency_per_hop.is_finite() && r.latency_per_hop > 0.0, "radio.latency_per_hop", "must be > 0");
        self.check_ads();
        let world = World { width: w.width, height: w.height };

        let mut regions = BTreeMap::new();
        for (i, h) in cfg.hotspots.iter().enumerate() {
            let field = format!("hotspots[{i}] ({})", h.name);
            if h.name.is_empty() {
                self.err(&field, "name must not be empty");
            }
            let region = Region::new(Position::new(h.x, h.y), h.radius);
            if !(h.radius.is_finite() && h.radius > 0.0) {
                self.err(&field, "radius must be > 0");
            } else if !world.contains_region(&region) {
                self.err(&field, format!("hotspot {:?} lies outside the world rectangle", h.name));
            }
            if regions.insert(h.name.clone(), region).is_some() {
                self.err(&field, format!("duplicate hotspot name {:?}", h.name));
            }
        }

        let mut nodes = Vec::new();
        for (gi, g) in cfg.groups.iter().enumerate() {
            let field = format!("groups[{gi}] ({})", g.name);
            let interests: Vec<String> = g.interests.clone().unwrap_or_else(ScenarioConfig::all_carla_categories);
            if interests.is_empty() {
                self.err(&field, "interests must not be empty");
            }
            if !(g.speed.is_finite() && g.speed >= 0.0) {
                self.err(&field, "speed must be >= 0");
            }
            if !(g.dwell.is_finite() && g.dwell >= 0.0) {
                self.err(&field, "dwell must be >= 0");
            }
            if g.budget == Some(0) {
                self.err(&field, "budget must be >= 1");
            }
            for a in &g.anchors {
                if !regions.contains_key(a) {
                    self.err(&field, format!("unknown anchor hotspot {a:?}"));
                }
            }
            if g.mobility == MobilityKind::Poi && g.anchors.is_empty() {
                self.err(&field, "poi mobility needs at least one anchor");
            }
            let start = match (&g.positions, &g.start) {
                (Some(_), _) => None,
                (None, Some(s)) => match regions.get(s) {
                    Some(r) => Some(StartPlacement::In(*r)),
                    None => {
                        self.err(&field, format!("unknown start hotspot {s:?}"));
                        Some(StartPlacement::Anywhere)
                    }
                },
                (None, None) => Some(StartPlacement::Anywhere),
            };
            if let Some(ps) = &g.positions {
                for (pi, p) in ps.iter().enumerate() {
                    if !world.contains(&Position::new(p[0], p[1])) {
                        self.err(&field, format!("position {pi} lies outside the world"));
                    }
                }
            }
            let role = match g.role {
                Role::Student => NodeRole::Student,
                Role::Staff => NodeRole::Staff,
            };
            for i in 0..g.size() {
                let start = match &g.positions {
                    Some(ps) => StartPlacement::At(Position::new(ps[i][0], ps[i][1])),
                    None => start.clone().unwrap_or(StartPlacement::Anywhere),
                };
                nodes.push(NodeSpec {
                    id: NodeId(nodes.len() as u32),
                    role,
                    group: Some(gi),
                    interests: interests.iter().map(|s| Category::new(s)).collect(),
                    budget: g.budget.unwrap_or(cfg.ads.exchange_budget),
                    start,
                });
            }
        }
        let ads_count = nodes.len();
        let mut supports = Vec::new();
        let mut markets = Vec::new();
        for h in &cfg.hotspots {
            let region = Region::new(Position::new(h.x, h.y), h.radius);
            if h.market {
                markets.push(MarketSpec { name: h.name.clone(), region });
            }
            if h.support {
                let id = NodeId(nodes.len() as u32);
                supports.push((id, h.name.clone()));
                nodes.push(NodeSpec {
                    id,
                    role: NodeRole::Support,
                    group: None,
                    interests: BTreeSet::new(),
                    budget: 0,
                    start: StartPlacement::At(region.center),
                });
            }
        }

        let mut plans = BTreeMap::new();
        for (pi, p) in cfg.plans.iter().enumerate() {
            let field = format!("plans[{pi}]");
            if p.node as usize >= ads_count {
                self.err(&field, format!("node {} is not a mobile node", p.node));
                continue;
            }
            let mut entries = Vec::new();
            for e in &p.entries {
                match regions.get(&e.region) {
                    Some(r) => entries.push(PlanEntry { from: e.from, to: e.to, region: *r }),
                    None => self.err(&field, format!("unknown region {:?}", e.region)),
                }
            }
            match MovementPlan::new(entries) {
                Ok(plan) => {
                    if plans.insert(NodeId(p.node), plan).is_some() {
                        self.err(&field, format!("node {} has two plans", p.node));
                    }
                }
                Err(e) => self.err(&field, e.to_string()),
            }
        }
        for (gi, g) in cfg.groups.iter().enumerate() {
            if g.mobility != MobilityKind::Plan {
                continue;
            }
            for n in nodes.iter().filter(|n| n.group == Some(gi)) {
                if !plans.contains_key(&n.id) {
                    self.err(format!("groups[{gi}] ({})", g.name), format!("node {} uses plan mobility but has no plan", n.id));
                }
            }
        }

        let mut script: Vec<Directive> = cfg.script.clone();
        script.sort_by(|a, b| a.at.total_cmp(&b.at));
        let labels = self.check_script(&script, &nodes, ads_count, &regions, &plans);

        if self.errors.is_empty() {
            Ok(Resolved { world, regions, nodes, markets, supports, plans, labels, script })
        } else {
            Err(self.errors)
        }
    }

    fn check_ads(&mut self) {
        let a = &self.cfg.ads;
        self.check(a.k >= 1, "ads.k", "must be >= 1");
        self.check(a.chunk_size >= 1, "ads.chunk_size", "must be >= 1");
        self.check(a.hop_radius >= 1, "ads.hop_radius", "must be >= 1");
        self.check(a.exchange_budget >= 1, "ads.exchange_budget", "must be >= 1");
        self.check(a.exchange_interval.is_finite() && a.exchange_interval > 0.0, "ads.exchange_interval", "must be > 0");
        self.check(a.hop_limit >= 1, "ads.hop_limit", "must be >= 1");
        self.check(a.descriptor_refresh.is_finite() && a.descriptor_refresh > 0.0, "ads.descriptor_refresh", "must be > 0");
        self.check(a.density_threshold >= 1, "ads.density_threshold", "must be >= 1");
        self.check(a.w_cat.is_finite() && a.w_cat >= 0.0, "ads.w_cat", "must be >= 0");
        self.check(a.w_dist.is_finite() && a.w_dist >= 0.0, "ads.w_dist", "must be >= 0");
        self.check(a.fake_threshold >= 1, "ads.fake_threshold", "must be >= 1");
        self.check(a.fake_min_evaluations >= 1, "ads.fake_min_evaluations", "must be >= 1");
        self.check(a.purge_interval.is_finite() && a.purge_interval > 0.0, "ads.purge_interval", "must be > 0");
        self.check(a.asrq_ttl.is_finite() && a.asrq_ttl > 0.0, "ads.asrq_ttl", "must be > 0");
        self.check(a.quiz_deadline.is_finite() && a.quiz_deadline >= 0.0, "ads.quiz_deadline", "must be >= 0");
    }

    fn check_script(
        &mut self,
        script: &[Directive],
        nodes: &[NodeSpec],
        ads_count: usize,
        regions: &BTreeMap<String, Region>,
        plans: &BTreeMap<NodeId, MovementPlan>,
    ) -> BTreeMap<String, ItemId> {
        let duration = self.cfg.world.duration;
        let mut labels: BTreeMap<String, ItemId> = BTreeMap::new();
        let mut versions: BTreeMap<String, u64> = BTreeMap::new();
        let mut questions: BTreeMap<String, usize> = BTreeMap::new();
        let mut counters: BTreeMap<u32, u64> = BTreeMap::new();
        let mut mint = |labels: &mut BTreeMap<String, ItemId>, node: u32, label: &str| -> ItemId {
            let c = counters.entry(node).or_insert(0);
            *c += 1;
            let id = ItemId::new(node, *c);
            labels.insert(label.to_string(), id);
            id
        };
        // First pass assigns ids so later references may point forward.
        for (i, d) in script.iter().enumerate() {
            let field = format!("script[{i}] ({})", d.action.name());
            match &d.action {
                Action::Release { staff, items, .. } => {
                    for m in items {
                        match labels.get(&m.label) {
                            Some(id) if id.origin.0 == *staff => {
                                let prev = versions[&m.label];
                                if m.version <= prev {
                                    self.err(&field, format!("label {:?} re-released without a higher version", m.label));
                                }
                                versions.insert(m.label.clone(), m.version.max(prev));
                            }
                            Some(_) => self.err(&field, format!("label {:?} already used by another node", m.label)),
                            None => {
                                mint(&mut labels, *staff, &m.label);
                                versions.insert(m.label.clone(), m.version);
                            }
                        }
                        if m.version == 0 {
                            self.err(&field, "version must be >= 1");
                        }
                    }
                }
                Action::Annotate { node, label, .. } | Action::Link { node, label, .. } | Action::Ask { node, label, .. } => {
                    if labels.contains_key(label) {
                        self.err(&field, format!("duplicate label {label:?}"));
                    } else {
                        mint(&mut labels, *node, label);
                    }
                    if let Action::Ask { choices, .. } = &d.action {
                        questions.insert(label.clone(), choices.len());
                    }
                }
                _ => {}
            }
        }
        for (i, d) in script.iter().enumerate() {
            let field = format!("script[{i}] ({})", d.action.name());
            if !in_range(d.at, 0.0, duration) {
                self.err(&field, format!("time {} outside [0, duration]", d.at));
            }
            let actor = d.action.actor();
            let role = if (actor as usize) < ads_count { Some(nodes[actor as usize].role) } else { None };
            if role.is_none() {
                self.err(&field, format!("node {actor} is not a mobile node"));
            }
            let need_label = |this: &mut Self, l: &str| {
                if !labels.contains_key(l) {
                    this.err(&field, format!("unknown item label {l:?}"));
                }
            };
            match &d.action {
                Action::Release { region, items, course, .. } => {
                    if role.is_some_and(|r| r != NodeRole::Staff) {
                        self.err(&field, format!("node {actor} is not staff"));
                    }
                    if !regions.contains_key(region) {
                        self.err(&field, format!("unknown region {region:?}"));
                    }
                    if items.is_empty() {
                        self.err(&field, "release needs at least one item");
                    }
                    if course.is_empty() {
                        self.err(&field, "course must not be empty");
                    }
                }
                Action::Attend { region, until, .. } => {
                    if !regions.contains_key(region) {
                        self.err(&field, format!("unknown region {region:?}"));
                    }
                    if !(*until > d.at) {
                        self.err(&field, "until must be after at");
                    }
                }
                Action::SkipLecture { ttl, expected_results, .. } => {
                    if !plans.contains_key(&NodeId(actor)) && role.is_some() {
                        self.err(&field, format!("node {actor} has no movement plan"));
                    }
                    if ttl.is_some_and(|t| !(t.is_finite() && t > 0.0)) {
                        self.err(&field, "ttl must be > 0");
                    }
                    if *expected_results == Some(0) {
                        self.err(&field, "expected_results must be >= 1");
                    }
                }
                Action::Annotate { target, .. } => need_label(self, target),
                Action::Ask { target, choices, correct, .. } => {
                    if let Some(t) = target {
                        need_label(self, t);
                    }
                    if choices.len() < 2 {
                        self.err(&field, "a question needs at least two choices");
                    }
                    if *correct >= choices.len() {
                        self.err(&field, "correct index out of range");
                    }
                }
                Action::Link { a, b, .. } => {
                    need_label(self, a);
                    need_label(self, b);
                }
                Action::Evaluate { item, rating, .. } => {
                    need_label(self, item);
                    if *rating != 1 && *rating != -1 {
                        self.err(&field, "rating must be +1 or -1");
                    }
                }
                Action::Answer { question, choice, .. } => match questions.get(question) {
                    Some(n) if choice >= n => self.err(&field, "choice out of range"),
                    Some(_) => {}
                    None => self.err(&field, format!("{question:?} is not a question label")),
                },
                Action::Joker { question, .. } => {
                    if !questions.contains_key(question) {
                        self.err(&field, format!("{question:?} is not a question label"));
                    }
                }
                Action::Rank { .. } => {}
                Action::SyncQuery { categories, timeout, hop_radius, .. } => {
                    if categories.is_empty() {
                        self.err(&field, "categories must not be empty");
                    }
                    if !(timeout.is_finite() && *timeout > 0.0) {
                        self.err(&field, "timeout must be > 0");
                    }
                    if *hop_radius == Some(0) {
                        self.err(&field, "hop_radius must be >= 1");
                    }
                }
            }
        }
        labels
    }
}
