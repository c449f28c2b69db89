use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::carla::{JokerKind, MaterialKind};

pub const FORMAT_VERSION: u32 = 1;

fn d_tick() -> f64 {
    1.0
}
fn d_range() -> f64 {
    50.0
}
fn d_latency() -> f64 {
    0.01
}
fn d_k() -> usize {
    3
}
fn d_chunk() -> usize {
    5
}
fn d_hop_radius() -> u32 {
    2
}
fn d_budget() -> usize {
    10
}
fn d_exchange_interval() -> f64 {
    30.0
}
fn d_hop_limit() -> u32 {
    32
}
fn d_refresh() -> f64 {
    300.0
}
fn d_density() -> usize {
    3
}
fn d_w_cat() -> f64 {
    1.0
}
fn d_w_dist() -> f64 {
    0.5
}
fn d_fake_threshold() -> i64 {
    3
}
fn d_fake_min() -> usize {
    5
}
fn d_purge() -> f64 {
    60.0
}
fn d_jokers() -> u32 {
    1
}
fn d_ttl() -> f64 {
    1800.0
}
fn d_true() -> bool {
    true
}
fn d_one() -> u64 {
    1
}
fn d_count() -> usize {
    1
}
fn d_sync_timeout() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldSection {
    pub width: f64,
    pub height: f64,
    pub duration: f64,
    #[serde(default = "d_tick")]
    pub tick: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadioSection {
    #[serde(default = "d_range")]
    pub range: f64,
    #[serde(default)]
    pub loss_prob: f64,
    #[serde(default = "d_latency")]
    pub latency_per_hop: f64,
}

impl Default for RadioSection {
    fn default() -> Self {
        Self { range: d_range(), loss_prob: 0.0, latency_per_hop: d_latency() }
    }
}

/// Middleware, market and workload parameters, all with documented defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdsSection {
    #[serde(default = "d_k")]
    pub k: usize,
    #[serde(default = "d_chunk")]
    pub chunk_size: usize,
    #[serde(default = "d_hop_radius")]
    pub hop_radius: u32,
    #[serde(default = "d_budget")]
    pub exchange_budget: usize,
    #[serde(default = "d_exchange_interval")]
    pub exchange_interval: f64,
    #[serde(default = "d_hop_limit")]
    pub hop_limit: u32,
    #[serde(default = "d_refresh")]
    pub descriptor_refresh: f64,
    #[serde(default = "d_density")]
    pub density_threshold: usize,
    #[serde(default = "d_w_cat")]
    pub w_cat: f64,
    #[serde(default = "d_w_dist")]
    pub w_dist: f64,
    #[serde(default = "d_fake_threshold")]
    pub fake_threshold: i64,
    #[serde(default = "d_fake_min")]
    pub fake_min_evaluations: usize,
    #[serde(default = "d_purge")]
    pub purge_interval: f64,
    #[serde(default = "d_jokers")]
    pub jokers_per_kind: u32,
    #[serde(default = "d_ttl")]
    pub asrq_ttl: f64,
    #[serde(default)]
    pub quiz_deadline: f64,
    /// Emit one `TX` trace line per radio transmission.
    #[serde(default = "d_true")]
    pub trace_tx: bool,
}

impl Default for AdsSection {
    fn default() -> Self {
        toml::from_str("").expect("all fields default")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HotspotSpec {
    pub name: String,
    pub x: f64,
    pub y: f64,
    pub radius: f64,
    #[serde(default)]
    pub market: bool,
    #[serde(default)]
    pub support: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Student,
    Staff,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MobilityKind {
    Static,
    RandomWaypoint,
    Poi,
    Plan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupSpec {
    pub name: String,
    pub role: Role,
    #[serde(default = "d_count")]
    pub count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interests: Option<Vec<String>>,
    pub mobility: MobilityKind,
    #[serde(default)]
    pub speed: f64,
    #[serde(default)]
    pub dwell: f64,
    /// Hotspot the group starts in; uniform over the world when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<String>,
    /// Exact start positions, one per node; overrides `count` and `start`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positions: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub anchors: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<usize>,
}

impl GroupSpec {
    pub fn size(&self) -> usize {
        self.positions.as_ref().map_or(self.count, Vec::len)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanEntrySpec {
    pub from: f64,
    pub to: f64,
    pub region: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanSpec {
    pub node: u32,
    pub entries: Vec<PlanEntrySpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialSpec {
    pub label: String,
    pub kind: MaterialKind,
    #[serde(default)]
    pub index: u32,
    #[serde(default = "d_one")]
    pub version: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum Action {
    Release {
        staff: u32,
        course: String,
        region: String,
        items: Vec<MaterialSpec>,
    },
    Attend {
        node: u32,
        region: String,
        until: f64,
    },
    SkipLecture {
        node: u32,
        course: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        ttl: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        expected_results: Option<usize>,
    },
    Annotate {
        node: u32,
        label: String,
        target: String,
        #[serde(default)]
        text: String,
    },
    Ask {
        node: u32,
        label: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        target: Option<String>,
        choices: Vec<String>,
        correct: usize,
    },
    Link {
        node: u32,
        label: String,
        a: String,
        b: String,
    },
    Evaluate {
        node: u32,
        item: String,
        rating: i32,
    },
    Answer {
        node: u32,
        question: String,
        choice: usize,
    },
    Joker {
        node: u32,
        kind: JokerKind,
        question: String,
    },
    Rank {
        node: u32,
    },
    /// Neighborhood query; results are traced when the timeout fires.
    SyncQuery {
        node: u32,
        categories: Vec<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        course: Option<String>,
        #[serde(default = "d_sync_timeout")]
        timeout: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        hop_radius: Option<u32>,
    },
}

impl Action {
    pub fn name(&self) -> &'static str {
        match self {
            Action::Release { .. } => "release",
            Action::Attend { .. } => "attend",
            Action::SkipLecture { .. } => "skip_lecture",
            Action::Annotate { .. } => "annotate",
            Action::Ask { .. } => "ask",
            Action::Link { .. } => "link",
            Action::Evaluate { .. } => "evaluate",
            Action::Answer { .. } => "answer",
            Action::Joker { .. } => "joker",
            Action::Rank { .. } => "rank",
            Action::SyncQuery { .. } => "sync_query",
        }
    }

    /// The node that performs the directive.
    pub fn actor(&self) -> u32 {
        match self {
            Action::Release { staff, .. } => *staff,
            Action::Attend { node, .. }
            | Action::SkipLecture { node, .. }
            | Action::Annotate { node, .. }
            | Action::Ask { node, .. }
            | Action::Link { node, .. }
            | Action::Evaluate { node, .. }
            | Action::Answer { node, .. }
            | Action::Joker { node, .. }
            | Action::Rank { node }
            | Action::SyncQuery { node, .. } => *node,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Directive {
    pub at: f64,
    #[serde(flatten)]
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub format_version: u32,
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub world: WorldSection,
    #[serde(default)]
    pub radio: RadioSection,
    #[serde(default)]
    pub ads: AdsSection,
    #[serde(default)]
    pub hotspots: Vec<HotspotSpec>,
    #[serde(default)]
    pub groups: Vec<GroupSpec>,
    #[serde(default)]
    pub plans: Vec<PlanSpec>,
    #[serde(default)]
    pub script: Vec<Directive>,
}

impl ScenarioConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn ads_node_count(&self) -> usize {
        self.groups.iter().map(GroupSpec::size).sum()
    }

    pub fn hotspot(&self, name: &str) -> Option<&HotspotSpec> {
        self.hotspots.iter().find(|h| h.name == name)
    }

    pub fn all_carla_categories() -> Vec<String> {
        ["slide", "article", "annotation", "question", "link", "answer"].iter().map(|s| s.to_string()).collect()
    }

    pub fn hotspot_names(&self) -> BTreeSet<&str> {
        self.hotspots.iter().map(|h| h.name.as_str()).collect()
    }
}
