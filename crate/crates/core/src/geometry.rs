//! Planar positions and circular regions.

use serde::{Deserialize, Serialize};
use std::fmt;

/// A point in the simulated world, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    /// Moves up to `step` meters toward `target`, never overshooting.
    pub fn step_toward(&self, target: &Position, step: f64) -> Position {
        let d = self.distance(target);
        if d <= step || d == 0.0 {
            *target
        } else {
            let f = step / d;
            Position::new(self.x + (target.x - self.x) * f, self.y + (target.y - self.y) * f)
        }
    }
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.3},{:.3}", self.x, self.y)
    }
}

/// Axis-aligned world rectangle `[0,width] x [0,height]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub width: f64,
    pub height: f64,
}

impl World {
    pub fn contains(&self, p: &Position) -> bool {
        p.is_finite() && p.x >= 0.0 && p.y >= 0.0 && p.x <= self.width && p.y <= self.height
    }

    pub fn clamp(&self, p: Position) -> Position {
        Position::new(p.x.clamp(0.0, self.width), p.y.clamp(0.0, self.height))
    }

    /// True when the whole disk of `region` lies inside the rectangle.
    pub fn contains_region(&self, region: &Region) -> bool {
        let c = region.center;
        self.contains(&c)
            && c.x - region.radius >= 0.0
            && c.y - region.radius >= 0.0
            && c.x + region.radius <= self.width
            && c.y + region.radius <= self.height
    }
}

/// A disk-shaped area. Membership is `distance <= radius`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub center: Position,
    pub radius: f64,
}

impl Region {
    pub const fn new(center: Position, radius: f64) -> Self {
        Self { center, radius }
    }

    pub fn contains(&self, p: &Position) -> bool {
        self.center.distance(p) <= self.radius
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}r{:.3}", self.center, self.radius)
    }
}
