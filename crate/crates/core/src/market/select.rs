//! Choosing a market for a query or a publication.
//!
//! score = w_cat * |wanted ∩ offered| / |wanted| - w_dist * d / d_max
//!
//! where `d` is the distance from the reference point to the market center
//! and `d_max` the largest such distance among the candidates. Ties go to
//! the smallest market id.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::descriptor::MarketDescriptor;
use super::MarketError;
use crate::ads::Category;
use crate::geometry::Position;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionWeights {
    pub w_cat: f64,
    pub w_dist: f64,
}

impl Default for SelectionWeights {
    fn default() -> Self {
        Self { w_cat: 1.0, w_dist: 0.5 }
    }
}

pub fn category_overlap(wanted: &BTreeSet<Category>, d: &MarketDescriptor) -> f64 {
    if wanted.is_empty() {
        return 0.0;
    }
    let hit = wanted.iter().filter(|c| d.categories.contains_key(*c)).count();
    hit as f64 / wanted.len() as f64
}

/// Scores for every candidate, in input order.
pub fn scores(wanted: &BTreeSet<Category>, reference: Position, known: &[MarketDescriptor], w: SelectionWeights) -> Vec<f64> {
    let dists: Vec<f64> = known.iter().map(|d| reference.distance(&d.region.center)).collect();
    let dmax = dists.iter().copied().fold(0.0, f64::max);
    known
        .iter()
        .zip(&dists)
        .map(|(d, dist)| {
            let norm = if dmax > 0.0 { dist / dmax } else { 0.0 };
            w.w_cat * category_overlap(wanted, d) - w.w_dist * norm
        })
        .collect()
}

pub fn select_market<'a>(
    wanted: &BTreeSet<Category>,
    reference: Position,
    known: &'a [MarketDescriptor],
    w: SelectionWeights,
) -> Result<&'a MarketDescriptor, MarketError> {
    let s = scores(wanted, reference, known, w);
    let mut best: Option<(f64, &MarketDescriptor)> = None;
    for (score, d) in s.into_iter().zip(known) {
        best = match best {
            None => Some((score, d)),
            Some((bs, bd)) if score > bs || (score == bs && d.market_id < bd.market_id) => Some((score, d)),
            keep => keep,
        };
    }
    best.map(|(_, d)| d).ok_or(MarketError::NoKnownMarket)
}
