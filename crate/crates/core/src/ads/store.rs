use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::item::{join, Category, InfoItem, ItemId};
use super::selector::Selector;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PutChange {
    Inserted,
    Updated,
    Unchanged,
    /// The id is tombstoned locally; the copy was not taken.
    Hidden,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PutOutcome {
    pub version: u64,
    pub change: PutChange,
    /// Equal versions with diverging content were joined.
    pub conflict: bool,
}

/// What a node advertises about one item during en-passant sync.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DigestEntry {
    Held { version: u64, fingerprint: u64 },
    Tombstone,
}

pub type Digest = BTreeMap<ItemId, DigestEntry>;

/// A node's local items plus tombstones of items it hid.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ItemStore {
    items: BTreeMap<ItemId, InfoItem>,
    hidden: BTreeSet<ItemId>,
}

impl ItemStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, id: &ItemId) -> Option<&InfoItem> {
        self.items.get(id)
    }

    pub fn get_mut(&mut self, id: &ItemId) -> Option<&mut InfoItem> {
        self.items.get_mut(id)
    }

    pub fn contains(&self, id: &ItemId) -> bool {
        self.items.contains_key(id)
    }

    pub fn is_hidden(&self, id: &ItemId) -> bool {
        self.hidden.contains(id)
    }

    pub fn hidden(&self) -> &BTreeSet<ItemId> {
        &self.hidden
    }

    /// All stored items including hidden ones, by id.
    pub fn iter(&self) -> impl Iterator<Item = &InfoItem> {
        self.items.values()
    }

    /// Items that may be shown to applications or peers.
    pub fn visible(&self) -> impl Iterator<Item = &InfoItem> {
        self.items.values().filter(|i| !self.hidden.contains(&i.id))
    }

    pub fn put_local(&mut self, item: InfoItem) -> PutOutcome {
        if self.hidden.contains(&item.id) {
            let version = self.items.get(&item.id).map_or(item.version, |i| i.version);
            return PutOutcome { version, change: PutChange::Hidden, conflict: false };
        }
        match self.items.get_mut(&item.id) {
            None => {
                let version = item.version;
                self.items.insert(item.id, item);
                PutOutcome { version, change: PutChange::Inserted, conflict: false }
            }
            Some(existing) => {
                let joined = join(existing, &item);
                let change = if joined.item == *existing { PutChange::Unchanged } else { PutChange::Updated };
                *existing = joined.item;
                PutOutcome { version: existing.version, change, conflict: joined.conflict }
            }
        }
    }

    /// Tombstones `id`: it stays stored but is excluded from queries and exchanges.
    pub fn hide(&mut self, id: ItemId) -> bool {
        self.hidden.insert(id)
    }

    /// Matching visible items ordered by `(created_at, item_id)`, truncated.
    pub fn query_local(&self, sel: &Selector) -> Vec<InfoItem> {
        let mut out: Vec<&InfoItem> = self.visible().filter(|i| sel.matches(i)).collect();
        out.sort_by(|a, b| a.created_at.total_cmp(&b.created_at).then_with(|| a.id.cmp(&b.id)));
        if let Some(n) = sel.max_results {
            out.truncate(n);
        }
        out.into_iter().cloned().collect()
    }

    /// Holdings in `categories`, plus every tombstone.
    pub fn digest(&self, categories: &BTreeSet<Category>) -> Digest {
        let mut d: Digest = self
            .visible()
            .filter(|i| categories.contains(&i.category))
            .map(|i| (i.id, DigestEntry::Held { version: i.version, fingerprint: i.fingerprint() }))
            .collect();
        for id in &self.hidden {
            d.insert(*id, DigestEntry::Tombstone);
        }
        d
    }

    /// `(item_id, version)` pairs currently known, for monotonicity checks.
    pub fn versions(&self) -> BTreeMap<ItemId, u64> {
        self.items.iter().map(|(k, v)| (*k, v.version)).collect()
    }
}

/// Items `store` would send to a peer: visible, in the peer's interests and
/// not already held by the peer in identical form, newest first, capped.
pub fn plan_transfer(store: &ItemStore, peer_interests: &BTreeSet<Category>, peer_digest: &Digest, budget: usize) -> Vec<InfoItem> {
    let mut candidates: Vec<&InfoItem> = store
        .visible()
        .filter(|i| peer_interests.contains(&i.category))
        .filter(|i| match peer_digest.get(&i.id) {
            None => true,
            Some(DigestEntry::Tombstone) => false,
            Some(DigestEntry::Held { version, fingerprint }) => {
                *version < i.version || (*version == i.version && *fingerprint != i.fingerprint())
            }
        })
        .collect();
    candidates.sort_by(|a, b| b.created_at.total_cmp(&a.created_at).then_with(|| b.id.cmp(&a.id)));
    candidates.truncate(budget);
    candidates.into_iter().cloned().collect()
}
