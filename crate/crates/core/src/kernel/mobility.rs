//! Waypoint mobility.
//!
//! A node walks in straight lines toward the head of its waypoint queue,
//! dwells on arrival, then pops the next waypoint. When the queue runs dry
//! the node's model may refill it.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{Position, Region, World};
use crate::plan::MovementPlan;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub position: Position,
    pub dwell: f64,
}

/// How a node picks new waypoints once its queue is empty.
#[derive(Debug, Clone, PartialEq)]
pub enum MobilityModel {
    /// Never refills; the node only follows waypoints it was given.
    Static,
    /// Uniform random point anywhere in the world.
    RandomWaypoint { dwell: f64 },
    /// Random point inside a randomly chosen anchor region (hotspots, corridors).
    Poi { anchors: Vec<Region>, dwell: f64 },
    /// Follows a calendar; wanders inside the scheduled region, idles in gaps.
    Plan { plan: MovementPlan, dwell: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MobilityState {
    pub current: Position,
    pub waypoints: VecDeque<Waypoint>,
    pub speed: f64,
    pub model: MobilityModel,
    dwell_remaining: f64,
    /// Temporary "be in this region until" directive.
    hold: Option<(Region, f64)>,
    path_length: f64,
}

impl MobilityState {
    pub fn new(current: Position, speed: f64, model: MobilityModel) -> Self {
        Self {
            current,
            waypoints: VecDeque::new(),
            speed: speed.max(0.0),
            model,
            dwell_remaining: 0.0,
            hold: None,
            path_length: 0.0,
        }
    }

    pub fn stationary(current: Position) -> Self {
        Self::new(current, 0.0, MobilityModel::Static)
    }

    pub fn with_waypoints(mut self, wps: impl IntoIterator<Item = Waypoint>) -> Self {
        self.waypoints.extend(wps);
        self
    }

    /// Total distance travelled so far.
    pub fn path_length(&self) -> f64 {
        self.path_length
    }

    /// Keeps the node inside `region` until `until`, overriding its model.
    pub fn hold_in(&mut self, region: Region, until: f64) {
        self.hold = Some((region, until));
        self.waypoints.clear();
        self.dwell_remaining = 0.0;
    }

    fn target_region(&self, now: f64) -> Option<Region> {
        if let Some((r, until)) = self.hold {
            if now < until {
                return Some(r);
            }
        }
        match &self.model {
            MobilityModel::Plan { plan, .. } => plan.region_at(now),
            _ => None,
        }
    }

    fn model_dwell(&self) -> f64 {
        match &self.model {
            MobilityModel::Static => 0.0,
            MobilityModel::RandomWaypoint { dwell }
            | MobilityModel::Poi { dwell, .. }
            | MobilityModel::Plan { dwell, .. } => *dwell,
        }
    }

    fn refill<R: Rng>(&mut self, now: f64, world: &World, rng: &mut R) {
        if let Some(region) = self.target_region(now) {
            let p = random_point_in(&region, world, rng);
            let dwell = self.model_dwell();
            self.waypoints.push_back(Waypoint { position: p, dwell });
            return;
        }
        if self.hold.is_some() {
            self.hold = None;
        }
        match &self.model {
            MobilityModel::Static | MobilityModel::Plan { .. } => {}
            MobilityModel::RandomWaypoint { dwell } => {
                let p = Position::new(rng.gen_range(0.0..=world.width), rng.gen_range(0.0..=world.height));
                self.waypoints.push_back(Waypoint { position: p, dwell: *dwell });
            }
            MobilityModel::Poi { anchors, dwell } => {
                if anchors.is_empty() {
                    return;
                }
                let a = anchors[rng.gen_range(0..anchors.len())];
                let p = random_point_in(&a, world, rng);
                self.waypoints.push_back(Waypoint { position: p, dwell: *dwell });
            }
        }
    }

    /// Advances the node by `dt` seconds starting at virtual time `now`.
    pub fn step<R: Rng>(&mut self, dt: f64, now: f64, world: &World, rng: &mut R) {
        if dt <= 0.0 {
            return;
        }
        // A calendar or hold switch redirects a node that is heading elsewhere.
        if let Some(region) = self.target_region(now) {
            let heading_ok = self.waypoints.front().map(|w| region.contains(&w.position));
            let stray = match heading_ok {
                Some(ok) => !ok,
                None => !region.contains(&self.current),
            };
            if stray {
                self.waypoints.clear();
                self.dwell_remaining = 0.0;
            }
        }
        let mut budget = dt;
        for _ in 0..64 {
            if budget <= 0.0 {
                break;
            }
            if self.dwell_remaining > 0.0 {
                let c = budget.min(self.dwell_remaining);
                self.dwell_remaining -= c;
                budget -= c;
                continue;
            }
            if self.waypoints.is_empty() {
                self.refill(now + (dt - budget), world, rng);
            }
            let Some(head) = self.waypoints.front().copied() else { break };
            if self.speed <= 0.0 {
                break;
            }
            let d = self.current.distance(&head.position);
            let reach = self.speed * budget;
            if reach >= d {
                self.current = head.position;
                self.path_length += d;
                budget -= d / self.speed;
                self.dwell_remaining = head.dwell;
                self.waypoints.pop_front();
            } else {
                self.current = self.current.step_toward(&head.position, reach);
                self.path_length += reach;
                budget = 0.0;
            }
        }
        self.current = world.clamp(self.current);
    }
}

/// Uniform point in the disk, clamped to the world rectangle.
pub fn random_point_in<R: Rng>(region: &Region, world: &World, rng: &mut R) -> Position {
    let r = region.radius * rng.gen::<f64>().sqrt();
    let theta = rng.gen::<f64>() * std::f64::consts::TAU;
    world.clamp(Position::new(
        region.center.x + r * theta.cos(),
        region.center.y + r * theta.sin(),
    ))
}
