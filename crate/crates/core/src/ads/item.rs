use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::kernel::NodeId;
use crate::rng::{fnv1a, hash_words};

/// Globally unique: the originating node plus that node's local counter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ItemId {
    pub origin: NodeId,
    pub counter: u64,
}

impl ItemId {
    pub const fn new(origin: u32, counter: u64) -> Self {
        Self { origin: NodeId(origin), counter }
    }
}

impl fmt::Display for ItemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.origin.0, self.counter)
    }
}

impl FromStr for ItemId {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (o, c) = s.split_once('.').ok_or_else(|| format!("bad item id {s:?}"))?;
        Ok(ItemId {
            origin: NodeId(o.parse().map_err(|_| format!("bad item id {s:?}"))?),
            counter: c.parse().map_err(|_| format!("bad item id {s:?}"))?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Category(pub String);

impl Category {
    pub fn new(s: &str) -> Self {
        Category(s.to_string())
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for Category {
    fn from(s: &str) -> Self {
        Category(s.to_string())
    }
}

/// Application data. Opaque to the middleware except for selector predicates.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Payload(pub BTreeMap<String, String>);

impl Payload {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    pub fn with(mut self, key: &str, value: impl fmt::Display) -> Self {
        self.0.insert(key.to_string(), value.to_string());
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Rating {
    Down,
    Up,
}

impl Rating {
    pub fn value(self) -> i32 {
        match self {
            Rating::Down => -1,
            Rating::Up => 1,
        }
    }

    pub fn from_value(v: i32) -> Option<Self> {
        match v {
            1 => Some(Rating::Up),
            -1 => Some(Rating::Down),
            _ => None,
        }
    }
}

/// One node's opinion on an item. `stamp` orders successive opinions of the
/// same evaluator; the later one replaces the earlier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Evaluation {
    pub stamp: u64,
    pub rating: Rating,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfoItem {
    pub id: ItemId,
    pub category: Category,
    pub payload: Payload,
    pub created_at: f64,
    pub version: u64,
    pub evaluations: BTreeMap<NodeId, Evaluation>,
}

impl InfoItem {
    pub fn new(id: ItemId, category: impl Into<Category>, payload: Payload, created_at: f64) -> Self {
        Self { id, category: category.into(), payload, created_at, version: 1, evaluations: BTreeMap::new() }
    }

    pub fn origin(&self) -> NodeId {
        self.id.origin
    }

    pub fn is_well_formed(&self) -> bool {
        self.created_at.is_finite() && !self.category.0.is_empty()
    }

    /// Records an evaluation, keeping only the newest per evaluator.
    pub fn evaluate(&mut self, by: NodeId, eval: Evaluation) {
        let slot = self.evaluations.entry(by).or_insert(eval);
        if eval > *slot {
            *slot = eval;
        }
    }

    pub fn eval_counts(&self) -> (usize, usize) {
        let neg = self.evaluations.values().filter(|e| e.rating == Rating::Down).count();
        (neg, self.evaluations.len() - neg)
    }

    fn content_cmp(&self, other: &Self) -> Ordering {
        self.category
            .cmp(&other.category)
            .then_with(|| self.payload.cmp(&other.payload))
            .then_with(|| self.created_at.total_cmp(&other.created_at))
    }

    fn content_fingerprint(&self) -> u64 {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(self.category.0.as_bytes());
        bytes.push(0);
        for (k, v) in &self.payload.0 {
            bytes.extend_from_slice(k.as_bytes());
            bytes.push(1);
            bytes.extend_from_slice(v.as_bytes());
            bytes.push(2);
        }
        bytes.extend_from_slice(&self.created_at.to_bits().to_le_bytes());
        fnv1a(&bytes)
    }

    /// Summarizes content and evaluations; equal copies have equal fingerprints.
    pub fn fingerprint(&self) -> u64 {
        let mut words = vec![self.content_fingerprint(), self.version];
        for (n, e) in &self.evaluations {
            words.extend([u64::from(n.0), e.stamp, e.rating as u64]);
        }
        hash_words(&words)
    }
}

/// Result of joining two copies of the same item.
#[derive(Debug, Clone, PartialEq)]
pub struct Joined {
    pub item: InfoItem,
    /// Equal versions carried different content.
    pub conflict: bool,
}

/// Joins two copies of one item. A higher version replaces the lower one
/// outright, evaluations included. Equal versions union their evaluations,
/// keeping the newest per evaluator; diverging content keeps the larger.
/// Commutative, associative and idempotent.
pub fn join(a: &InfoItem, b: &InfoItem) -> Joined {
    debug_assert_eq!(a.id, b.id);
    let mut conflict = false;
    let base = match a.version.cmp(&b.version) {
        Ordering::Greater => return Joined { item: a.clone(), conflict },
        Ordering::Less => return Joined { item: b.clone(), conflict },
        Ordering::Equal => match a.content_cmp(b) {
            Ordering::Less => {
                conflict = true;
                b
            }
            Ordering::Greater => {
                conflict = true;
                a
            }
            Ordering::Equal => a,
        },
    };
    let mut item = base.clone();
    let other = if std::ptr::eq(base, a) { b } else { a };
    for (n, e) in &other.evaluations {
        item.evaluate(*n, *e);
    }
    Joined { item, conflict }
}
