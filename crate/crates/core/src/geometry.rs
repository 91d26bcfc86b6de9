//! Voronoi partitions of the sensing domain and the shrunk movement regions
//! that keep robots apart.
//!
//! Every region is stored in half-plane form `normal · q <= offset` with a
//! unit normal, which is exactly what the trajectory solvers consume as
//! linear inequality rows.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = Vector2<f64>;

/// Minimum separation below which two generators are considered coincident.
pub const MIN_SEPARATION: f64 = 1e-9;

/// Smallest safety margin the epsilon-halving fallback will try.
pub const MIN_EPSILON: f64 = 1e-3;

/// Axis-aligned sensing domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Rect {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Result<Self> {
        if !(x_min < x_max && y_min < y_max) {
            return Err(Error::InvalidInput(format!("empty rectangle [{x_min}, {x_max}] x [{y_min}, {y_max}]")));
        }
        Ok(Self { x_min, x_max, y_min, y_max })
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn center(&self) -> Point {
        Point::new(0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max))
    }

    pub fn contains(&self, q: &Point, tol: f64) -> bool {
        q.x >= self.x_min - tol && q.x <= self.x_max + tol && q.y >= self.y_min - tol && q.y <= self.y_max + tol
    }

    /// Componentwise projection onto the rectangle.
    pub fn clamp(&self, q: &Point) -> Point {
        Point::new(q.x.clamp(self.x_min, self.x_max), q.y.clamp(self.y_min, self.y_max))
    }

    pub fn to_polytope(&self) -> Polytope {
        Polytope {
            halfplanes: vec![
                HalfPlane { normal: Point::new(-1.0, 0.0), offset: -self.x_min },
                HalfPlane { normal: Point::new(1.0, 0.0), offset: self.x_max },
                HalfPlane { normal: Point::new(0.0, -1.0), offset: -self.y_min },
                HalfPlane { normal: Point::new(0.0, 1.0), offset: self.y_max },
            ],
        }
    }
}

impl Default for Rect {
    fn default() -> Self {
        Self { x_min: 0.0, x_max: 40.0, y_min: 0.0, y_max: 30.0 }
    }
}

/// The closed half-plane `normal · q <= offset`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HalfPlane {
    normal: Point,
    offset: f64,
}

impl HalfPlane {
    /// Builds a half-plane, rescaling `normal` to unit length.
    pub fn new(normal: Point, offset: f64) -> Result<Self> {
        let norm = normal.norm();
        if !(norm > 0.0) || !norm.is_finite() || !offset.is_finite() {
            return Err(Error::InvalidInput("half-plane needs a finite nonzero normal".into()));
        }
        Ok(Self { normal: normal / norm, offset: offset / norm })
    }

    pub fn normal(&self) -> Point {
        self.normal
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    /// Signed violation `normal · q - offset`; nonpositive inside.
    pub fn violation(&self, q: &Point) -> f64 {
        self.normal.dot(q) - self.offset
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Polytope {
    pub halfplanes: Vec<HalfPlane>,
}

impl Polytope {
    pub fn len(&self) -> usize {
        self.halfplanes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.halfplanes.is_empty()
    }

    /// Largest facet violation at `q` (nonpositive iff `q` is inside).
    pub fn max_violation(&self, q: &Point) -> f64 {
        self.halfplanes.iter().map(|h| h.violation(q)).fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Voronoi cell of agent `i` clipped to `domain`.
///
/// The cell is the domain rectangle plus one bisector per other agent, with
/// the normal pointing from `positions[i]` toward the neighbor and the offset
/// placed at the midpoint.
pub fn voronoi_cell(i: usize, positions: &[Point], domain: &Rect) -> Result<Polytope> {
    let own = positions.get(i).ok_or_else(|| Error::InvalidInput(format!("agent index {i} out of range")))?;
    if !domain.contains(own, 0.0) {
        return Err(Error::OutOfDomain { x: own.x, y: own.y });
    }
    let mut cell = domain.to_polytope();
    for (j, other) in positions.iter().enumerate() {
        if j == i {
            continue;
        }
        let diff = other - own;
        let dist = diff.norm();
        if dist <= MIN_SEPARATION {
            return Err(Error::DegenerateConfiguration(format!("agents {i} and {j} are {dist:e} m apart")));
        }
        let normal = diff / dist;
        let mid = 0.5 * (own + other);
        cell.halfplanes.push(HalfPlane { normal, offset: normal.dot(&mid) });
    }
    Ok(cell)
}

/// Inward offset of every facet by `eps`.
pub fn shrink(p: &Polytope, eps: f64) -> Polytope {
    debug_assert!(eps >= 0.0);
    Polytope {
        halfplanes: p.halfplanes.iter().map(|h| HalfPlane { normal: h.normal, offset: h.offset - eps }).collect(),
    }
}

pub fn contains(p: &Polytope, q: &Point, tol: f64) -> bool {
    p.halfplanes.iter().all(|h| h.normal.dot(q) <= h.offset + tol)
}

/// Shrunk Voronoi region for agent `i` together with the margin actually used.
///
/// If the agent's own position falls outside the region shrunk by `eps`, the
/// margin is halved until it fits, down to [`MIN_EPSILON`].
pub fn movement_region(i: usize, positions: &[Point], domain: &Rect, eps: f64) -> Result<(Polytope, f64)> {
    let cell = voronoi_cell(i, positions, domain)?;
    let own = positions[i];
    let mut margin = eps;
    loop {
        let region = shrink(&cell, margin);
        if contains(&region, &own, 1e-9) {
            return Ok((region, margin));
        }
        if margin <= MIN_EPSILON {
            return Err(Error::DegenerateConfiguration(format!(
                "agent {i} lies within {MIN_EPSILON} m of its cell boundary"
            )));
        }
        margin = (0.5 * margin).max(MIN_EPSILON);
    }
}
