use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::item::{Category, InfoItem};
use crate::kernel::NodeId;

/// Exact-match filter on one payload attribute.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PayloadMatch {
    pub key: String,
    pub value: String,
}

/// Minimal query language: a category set, an optional payload filter and
/// an optional result cap.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selector {
    pub categories: BTreeSet<Category>,
    pub predicate: Option<PayloadMatch>,
    pub max_results: Option<usize>,
}

impl Selector {
    pub fn categories<I, C>(cats: I) -> Self
    where
        I: IntoIterator<Item = C>,
        C: Into<Category>,
    {
        Self { categories: cats.into_iter().map(Into::into).collect(), predicate: None, max_results: None }
    }

    pub fn with_predicate(mut self, key: &str, value: &str) -> Self {
        self.predicate = Some(PayloadMatch { key: key.to_string(), value: value.to_string() });
        self
    }

    pub fn with_max_results(mut self, n: usize) -> Self {
        self.max_results = Some(n.max(1));
        self
    }

    pub fn is_valid(&self) -> bool {
        !self.categories.is_empty() && self.max_results != Some(0)
    }

    pub fn matches(&self, item: &InfoItem) -> bool {
        self.categories.contains(&item.category)
            && self
                .predicate
                .as_ref()
                .is_none_or(|p| item.payload.get(&p.key) == Some(p.value.as_str()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Profile {
    pub node: NodeId,
    pub interests: BTreeSet<Category>,
    pub exchange_budget: usize,
}

impl Profile {
    pub fn new<I, C>(node: NodeId, interests: I, exchange_budget: usize) -> Self
    where
        I: IntoIterator<Item = C>,
        C: Into<Category>,
    {
        Self { node, interests: interests.into_iter().map(Into::into).collect(), exchange_budget: exchange_budget.max(1) }
    }

    pub fn wants(&self, item: &InfoItem) -> bool {
        self.interests.contains(&item.category)
    }
}
