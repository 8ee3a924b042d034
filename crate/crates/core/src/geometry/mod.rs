//! Windows, the supremum metric, cylinders and the grid volume engine.
//!
//! Every Lebesgue-measure term of the model is a volume of the form
//! `l((C \ U) ∩ W)`, where `C` is a closed cylinder, `U` a union of cylinders
//! of the same size and `W` the observation window. These are evaluated by a
//! deterministic midpoint rule on a lattice of cells (see [`CellGrid`]), so
//! identical inputs always produce bit-identical volumes.

mod index;
mod volume;
mod window;

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

pub use index::{neighbor_query, BinIndex};
pub use volume::{
    clipped_cylinder_volume, cylinder_volume_on_grid, interior_cylinder_volume, shell_uncovered_counts, shell_volume,
    uncovered_count, uncovered_volume, volume_error_bound, CellGrid,
};
pub use window::{Polygon, SpatialWindow, Window, MAX_REJECTION_RETRIES};

/// A space-time event `(x, y, t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct STPoint {
    pub x: f64,
    pub y: f64,
    pub t: f64,
}

impl STPoint {
    pub const fn new(x: f64, y: f64, t: f64) -> Self {
        STPoint { x, y, t }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.t.is_finite()
    }

    pub fn spatial_distance(&self, other: &STPoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    /// Squared spatial distance; used for all closed-ball membership tests.
    #[inline]
    pub fn spatial_distance_sq(&self, other: &STPoint) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }

    /// Lexicographic total order on `(x, y, t)`.
    pub fn total_cmp(&self, other: &STPoint) -> std::cmp::Ordering {
        self.x.total_cmp(&other.x).then(self.y.total_cmp(&other.y)).then(self.t.total_cmp(&other.t))
    }
}

/// `max(|x - y|, |t - s|)`.
pub fn sup_distance(a: &STPoint, b: &STPoint) -> f64 {
    a.spatial_distance(b).max((a.t - b.t).abs())
}

/// Closed cylinder of spatial radius `r` and temporal half-height `h`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cylinder {
    pub center: STPoint,
    pub r: f64,
    pub h: f64,
}

impl Cylinder {
    pub const fn new(center: STPoint, r: f64, h: f64) -> Self {
        Cylinder { center, r, h }
    }

    #[inline]
    pub fn contains(&self, p: &STPoint) -> bool {
        self.contains_xy(p.x, p.y) && self.contains_t(p.t)
    }

    #[inline]
    pub fn contains_xy(&self, x: f64, y: f64) -> bool {
        let dx = x - self.center.x;
        let dy = y - self.center.y;
        dx * dx + dy * dy <= self.r * self.r
    }

    #[inline]
    pub fn contains_t(&self, t: f64) -> bool {
        (t - self.center.t).abs() <= self.h
    }

    /// `2 pi r^2 h`, the unclipped volume.
    pub fn volume(&self) -> f64 {
        2.0 * PI * self.r * self.r * self.h
    }

    /// Lateral surface plus both lids.
    pub fn surface_area(&self) -> f64 {
        2.0 * PI * self.r * (2.0 * self.h) + 2.0 * PI * self.r * self.r
    }

    /// Equal-size cylinders intersect iff their centres are within `2r` / `2h`.
    pub fn overlaps(&self, other: &Cylinder) -> bool {
        let reach_r = self.r + other.r;
        let reach_h = self.h + other.h;
        self.center.spatial_distance_sq(&other.center) <= reach_r * reach_r
            && (self.center.t - other.center.t).abs() <= reach_h
    }
}

/// Increasing radii `r_1 < ... < r_m` and half-heights `t_1 < ... < t_m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Scale>", into = "Vec<Scale>")]
pub struct ScaleLadder {
    radii: Vec<f64>,
    half_heights: Vec<f64>,
}

/// One `(r, t)` pair of a ladder; `t` is the temporal half-height.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scale {
    pub r: f64,
    pub t: f64,
}

impl ScaleLadder {
    pub fn new(radii: Vec<f64>, half_heights: Vec<f64>) -> Result<Self> {
        if radii.is_empty() {
            return Err(Error::InvalidLadder("at least one scale is required".into()));
        }
        if radii.len() != half_heights.len() {
            return Err(Error::InvalidLadder(format!("{} radii but {} half-heights", radii.len(), half_heights.len())));
        }
        for (name, seq) in [("radii", &radii), ("half-heights", &half_heights)] {
            let mut prev = 0.0;
            for &v in seq.iter() {
                if !v.is_finite() || v <= prev {
                    return Err(Error::InvalidLadder(format!("{name} must be positive and strictly increasing")));
                }
                prev = v;
            }
        }
        Ok(ScaleLadder { radii, half_heights })
    }

    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self> {
        ScaleLadder::new(pairs.iter().map(|p| p.0).collect(), pairs.iter().map(|p| p.1).collect())
    }

    pub fn m(&self) -> usize {
        self.radii.len()
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn half_heights(&self) -> &[f64] {
        &self.half_heights
    }

    /// Zero-based scale `j` as `(r_j, t_j)`.
    pub fn scale(&self, j: usize) -> (f64, f64) {
        (self.radii[j], self.half_heights[j])
    }

    pub fn cylinder(&self, j: usize, center: STPoint) -> Cylinder {
        Cylinder::new(center, self.radii[j], self.half_heights[j])
    }

    /// `2 pi r_j^2 t_j` for every scale.
    pub fn reference_volumes(&self) -> Vec<f64> {
        (0..self.m()).map(|j| 2.0 * PI * self.radii[j].powi(2) * self.half_heights[j]).collect()
    }

    pub fn max_radius(&self) -> f64 {
        self.radii[self.m() - 1]
    }

    pub fn max_half_height(&self) -> f64 {
        self.half_heights[self.m() - 1]
    }
}

impl TryFrom<Vec<Scale>> for ScaleLadder {
    type Error = Error;
    fn try_from(v: Vec<Scale>) -> Result<Self> {
        ScaleLadder::new(v.iter().map(|s| s.r).collect(), v.iter().map(|s| s.t).collect())
    }
}

impl From<ScaleLadder> for Vec<Scale> {
    fn from(l: ScaleLadder) -> Self {
        l.radii.iter().zip(&l.half_heights).map(|(&r, &t)| Scale { r, t }).collect()
    }
}

/// Cells per cylinder bounding box along each spatial axis and along time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawResolution")]
pub struct GridResolution {
    n_xy: usize,
    n_t: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawResolution {
    n_xy: usize,
    n_t: usize,
}

impl TryFrom<RawResolution> for GridResolution {
    type Error = Error;
    fn try_from(r: RawResolution) -> Result<Self> {
        GridResolution::new(r.n_xy, r.n_t)
    }
}

impl GridResolution {
    pub fn new(n_xy: usize, n_t: usize) -> Result<Self> {
        if n_xy < 2 || n_t < 2 {
            return Err(Error::InvalidResolution(format!("need at least 2 cells per axis, got ({n_xy}, {n_t})")));
        }
        Ok(GridResolution { n_xy, n_t })
    }

    pub fn n_xy(&self) -> usize {
        self.n_xy
    }

    pub fn n_t(&self) -> usize {
        self.n_t
    }
}

impl Default for GridResolution {
    fn default() -> Self {
        GridResolution { n_xy: 24, n_t: 24 }
    }
}
