//! The CARLA m-learning workload: teaching material, student additions,
//! evaluations with fake removal, and the quiz with three joker kinds.
//!
//! Everything is an [`InfoItem`]; answers are items too, so the answer
//! tallies and scores spread with ordinary exchanges.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ads::{Evaluation, InfoItem, ItemId, ItemStore, Payload, Rating};
use crate::kernel::NodeId;

pub const SLIDE: &str = "slide";
pub const ARTICLE: &str = "article";
pub const ANNOTATION: &str = "annotation";
pub const QUESTION: &str = "question";
pub const LINK: &str = "link";
pub const ANSWER: &str = "answer";

pub const DEFAULT_FAKE_THRESHOLD: i64 = 3;
pub const DEFAULT_FAKE_MIN_EVALUATIONS: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CarlaError {
    #[error("node {0} may not evaluate its own item")]
    SelfEvaluation(NodeId),
    #[error("item {0} is not held locally")]
    NotHeld(ItemId),
    #[error("item {0} is not a question")]
    NotAQuestion(ItemId),
    #[error("question {0} was already answered")]
    AlreadyAnswered(ItemId),
    #[error("no {0} joker left")]
    NoJokerLeft(JokerKind),
    #[error("ranking requested before the quiz deadline")]
    BeforeDeadline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaterialKind {
    Slide,
    Article,
}

impl MaterialKind {
    pub fn category(self) -> &'static str {
        match self {
            MaterialKind::Slide => SLIDE,
            MaterialKind::Article => ARTICLE,
        }
    }
}

pub fn material(id: ItemId, kind: MaterialKind, course: &str, index: u32, created_at: f64) -> InfoItem {
    InfoItem::new(id, kind.category(), Payload::default().with("course", course).with("index", index), created_at)
}

pub fn annotation(id: ItemId, target: ItemId, text: &str, created_at: f64) -> InfoItem {
    InfoItem::new(id, ANNOTATION, Payload::default().with("target", target).with("text", text), created_at)
}

/// A multiple-choice question. `target`, when given, is the material it is about.
pub fn question(id: ItemId, target: Option<ItemId>, choices: &[String], correct: usize, created_at: f64) -> InfoItem {
    let mut p = Payload::default().with("choices", choices.join("|")).with("correct", correct);
    if let Some(t) = target {
        p = p.with("target", t);
    }
    InfoItem::new(id, QUESTION, p, created_at)
}

pub fn link(id: ItemId, a: ItemId, b: ItemId, created_at: f64) -> InfoItem {
    InfoItem::new(id, LINK, Payload::default().with("a", a).with("b", b), created_at)
}

/// Ids an addition points at (annotation target, question target, link ends).
pub fn references(item: &InfoItem) -> Vec<ItemId> {
    ["target", "a", "b"].iter().filter_map(|k| item.payload.get(k)).filter_map(|v| v.parse().ok()).collect()
}

fn correct_choice(q: &InfoItem) -> Option<usize> {
    q.payload.get("correct").and_then(|c| c.parse().ok())
}

/// Net-negative rule: `negatives - positives >= threshold` and at least
/// `min_total` evaluations.
pub fn is_fake(item: &InfoItem, threshold: i64, min_total: usize) -> bool {
    let (neg, pos) = item.eval_counts();
    neg + pos >= min_total && neg as i64 - pos as i64 >= threshold
}

/// Hides student-originated fakes; staff items are exempt. Returns newly hidden ids.
pub fn purge_fakes(store: &mut ItemStore, is_staff: impl Fn(NodeId) -> bool, threshold: i64, min_total: usize) -> Vec<ItemId> {
    let doomed: Vec<ItemId> = store
        .visible()
        .filter(|i| !is_staff(i.origin()) && is_fake(i, threshold, min_total))
        .map(|i| i.id)
        .collect();
    for id in &doomed {
        store.hide(*id);
    }
    doomed
}

pub fn evaluate_item(store: &mut ItemStore, student: NodeId, item: ItemId, rating: Rating, stamp: u64) -> Result<(), CarlaError> {
    if item.origin == student {
        return Err(CarlaError::SelfEvaluation(student));
    }
    let it = store.get_mut(&item).ok_or(CarlaError::NotHeld(item))?;
    it.evaluate(student, Evaluation { stamp, rating });
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JokerKind {
    Link,
    Annotation,
    Statistics,
}

impl JokerKind {
    pub const ALL: [JokerKind; 3] = [JokerKind::Link, JokerKind::Annotation, JokerKind::Statistics];
}

impl fmt::Display for JokerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            JokerKind::Link => "link",
            JokerKind::Annotation => "annotation",
            JokerKind::Statistics => "statistics",
        })
    }
}

impl FromStr for JokerKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "link" => Ok(JokerKind::Link),
            "annotation" => Ok(JokerKind::Annotation),
            "statistics" => Ok(JokerKind::Statistics),
            _ => Err(format!("unknown joker kind {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Hint {
    Links(Vec<ItemId>),
    Annotations(Vec<ItemId>),
    Statistics(BTreeMap<usize, u32>),
}

/// One player's quiz state on their own device.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuizState {
    pub player: NodeId,
    pub score: u32,
    pub answered: BTreeSet<ItemId>,
    pub jokers_remaining: BTreeMap<JokerKind, u32>,
}

impl QuizState {
    pub fn new(player: NodeId, jokers_per_kind: u32) -> Self {
        Self {
            player,
            score: 0,
            answered: BTreeSet::new(),
            jokers_remaining: JokerKind::ALL.iter().map(|k| (*k, jokers_per_kind)).collect(),
        }
    }

    /// Answers `question`, recording an answer item `answer_id` in `store`.
    pub fn answer(&mut self, store: &mut ItemStore, question_id: ItemId, choice: usize, answer_id: ItemId, now: f64) -> Result<bool, CarlaError> {
        let q = store.visible().find(|i| i.id == question_id).ok_or(CarlaError::NotHeld(question_id))?;
        if q.category.0 != QUESTION {
            return Err(CarlaError::NotAQuestion(question_id));
        }
        if self.answered.contains(&question_id) {
            return Err(CarlaError::AlreadyAnswered(question_id));
        }
        let correct = correct_choice(q) == Some(choice);
        self.answered.insert(question_id);
        if correct {
            self.score += 1;
        }
        let record = InfoItem::new(
            answer_id,
            ANSWER,
            Payload::default().with("question", question_id).with("choice", choice).with("correct", u8::from(correct)),
            now,
        );
        store.put_local(record);
        Ok(correct)
    }

    /// Reveals local knowledge only; the joker is consumed even if the hint is empty.
    pub fn use_joker(&mut self, store: &ItemStore, kind: JokerKind, question_id: ItemId) -> Result<Hint, CarlaError> {
        if !store.visible().any(|i| i.id == question_id) {
            return Err(CarlaError::NotHeld(question_id));
        }
        let left = self.jokers_remaining.entry(kind).or_insert(0);
        if *left == 0 {
            return Err(CarlaError::NoJokerLeft(kind));
        }
        *left -= 1;
        let q = question_id.to_string();
        let refers = |i: &&InfoItem| ["target", "a", "b"].iter().any(|k| i.payload.get(k) == Some(q.as_str()));
        Ok(match kind {
            JokerKind::Link => Hint::Links(store.visible().filter(|i| i.category.0 == LINK).filter(refers).map(|i| i.id).collect()),
            JokerKind::Annotation => {
                Hint::Annotations(store.visible().filter(|i| i.category.0 == ANNOTATION).filter(refers).map(|i| i.id).collect())
            }
            JokerKind::Statistics => Hint::Statistics(tally(store, question_id)),
        })
    }
}

fn answers(store: &ItemStore) -> impl Iterator<Item = &InfoItem> {
    store.visible().filter(|i| i.category.0 == ANSWER)
}

/// Locally known choice counts for `question`.
pub fn tally(store: &ItemStore, question: ItemId) -> BTreeMap<usize, u32> {
    let q = question.to_string();
    let mut t = BTreeMap::new();
    for a in answers(store).filter(|a| a.payload.get("question") == Some(q.as_str())) {
        if let Some(c) = a.payload.get("choice").and_then(|c| c.parse().ok()) {
            *t.entry(c).or_insert(0) += 1;
        }
    }
    t
}

/// Scores derivable from a set of answer items: distinct correctly answered
/// questions per player.
pub fn scores_from<'a>(answer_items: impl IntoIterator<Item = &'a InfoItem>) -> BTreeMap<NodeId, u32> {
    let mut correct: BTreeMap<NodeId, BTreeSet<String>> = BTreeMap::new();
    for a in answer_items.into_iter().filter(|i| i.category.0 == ANSWER) {
        let entry = correct.entry(a.origin()).or_default();
        if a.payload.get("correct") == Some("1") {
            if let Some(q) = a.payload.get("question") {
                entry.insert(q.to_string());
            }
        }
    }
    correct.into_iter().map(|(n, qs)| (n, qs.len() as u32)).collect()
}

pub fn local_scores(store: &ItemStore) -> BTreeMap<NodeId, u32> {
    scores_from(answers(store))
}

/// Players by score descending, then id ascending. Unknown players score 0.
pub fn rank(players: &BTreeSet<NodeId>, scores: &BTreeMap<NodeId, u32>) -> Vec<(NodeId, u32)> {
    let mut v: Vec<(NodeId, u32)> = players.iter().map(|p| (*p, scores.get(p).copied().unwrap_or(0))).collect();
    v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    v
}

pub fn quiz_rank(players: &BTreeSet<NodeId>, store: &ItemStore, at: f64, deadline: f64) -> Result<Vec<(NodeId, u32)>, CarlaError> {
    if at < deadline {
        return Err(CarlaError::BeforeDeadline);
    }
    Ok(rank(players, &local_scores(store)))
}
