//! The multi-scale area-interaction density and its conditional intensity.
//!
//! With `eta_j = log gamma_j`, the unnormalised log density of a configuration
//! `x` is
//!
//! ```text
//! sum_{p in x} log lambda(p) - sum_j eta_j * l( U_{p in x} C_j(p) ∩ W )
//! ```
//!
//! and the log conditional intensity of adding `u` is
//! `log lambda(u) - sum_j eta_j * S_j(u; x)`, where `S_j(u; x)` is the part of
//! `C_j(u) ∩ W` not covered by the scale-`j` cylinders of `x`. Only cylinders
//! whose centres lie within `2 r_j` / `2 t_j` of `u` can cover any of it.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    shell_uncovered_counts, uncovered_volume, BinIndex, Cylinder, GridResolution, STPoint, ScaleLadder, Window,
};
use crate::intensity::IntensitySurface;

/// Interaction parameters on the log scale, one per scale of the ladder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionParams {
    eta: Vec<f64>,
    ladder: ScaleLadder,
}

impl InteractionParams {
    pub fn new(eta: Vec<f64>, ladder: ScaleLadder) -> Result<Self> {
        if eta.len() != ladder.m() {
            return Err(Error::InvalidParameter(format!("{} interaction values for {} scales", eta.len(), ladder.m())));
        }
        if eta.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("interaction parameters must be finite".into()));
        }
        Ok(InteractionParams { eta, ladder })
    }

    /// From volume-scaled coefficients `theta_j = 2 pi r_j^2 t_j eta_j`.
    pub fn from_theta_scaled(theta: &[f64], ladder: ScaleLadder) -> Result<Self> {
        if theta.len() != ladder.m() {
            return Err(Error::InvalidParameter(format!(
                "{} interaction values for {} scales",
                theta.len(),
                ladder.m()
            )));
        }
        let eta = theta.iter().zip(ladder.reference_volumes()).map(|(th, v)| th / v).collect();
        InteractionParams::new(eta, ladder)
    }

    pub fn eta(&self) -> &[f64] {
        &self.eta
    }

    pub fn ladder(&self) -> &ScaleLadder {
        &self.ladder
    }

    pub fn gamma(&self) -> Vec<f64> {
        self.eta.iter().map(|e| e.exp()).collect()
    }

    pub fn theta_scaled(&self) -> Vec<f64> {
        self.eta.iter().zip(self.ladder.reference_volumes()).map(|(e, v)| e * v).collect()
    }

    /// True when every `gamma_j = 1`.
    pub fn is_poisson(&self) -> bool {
        self.eta.iter().all(|&e| e == 0.0)
    }
}

/// A finite configuration of distinct points inside a window.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PointPattern {
    points: Vec<STPoint>,
}

impl PointPattern {
    pub fn new(points: Vec<STPoint>, window: &Window) -> Result<Self> {
        for (index, p) in points.iter().enumerate() {
            if !p.is_finite() || !window.contains(p) {
                return Err(Error::OutsideWindow { index, x: p.x, y: p.y, t: p.t });
            }
        }
        let mut order: Vec<usize> = (0..points.len()).collect();
        order.sort_by(|&a, &b| points[a].total_cmp(&points[b]));
        for pair in order.windows(2) {
            if points[pair[0]] == points[pair[1]] {
                let (first, second) = (pair[0].min(pair[1]), pair[0].max(pair[1]));
                return Err(Error::DuplicatePoint { first, second });
            }
        }
        Ok(PointPattern { points })
    }

    pub fn empty() -> Self {
        PointPattern { points: Vec::new() }
    }

    pub(crate) fn from_trusted(points: Vec<STPoint>) -> Self {
        PointPattern { points }
    }

    pub fn points(&self) -> &[STPoint] {
        &self.points
    }

    pub fn into_points(self) -> Vec<STPoint> {
        self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn contains(&self, p: &STPoint) -> bool {
        self.points.iter().any(|q| q == p)
    }

    /// Copy with `p` appended; `p` must be distinct from every point.
    pub fn with_point(&self, p: STPoint) -> Result<Self> {
        if self.contains(&p) {
            return Err(Error::DuplicatePoint {
                first: self.points.iter().position(|q| *q == p).unwrap(),
                second: self.len(),
            });
        }
        let mut points = self.points.clone();
        points.push(p);
        Ok(PointPattern { points })
    }

    /// Copy without the point at `index`.
    pub fn without(&self, index: usize) -> Self {
        let mut points = self.points.clone();
        points.remove(index);
        PointPattern { points }
    }
}

/// A fully specified model: interactions, first-order intensity, window and grid.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    params: InteractionParams,
    intensity: IntensitySurface,
    window: Window,
    resolution: GridResolution,
    intensity_bound: f64,
}

impl ModelSpec {
    pub fn new(
        params: InteractionParams,
        intensity: IntensitySurface,
        window: Window,
        resolution: GridResolution,
    ) -> Result<Self> {
        intensity.validate()?;
        let intensity_bound = intensity.upper_bound(&window);
        if !intensity_bound.is_finite() {
            return Err(Error::UnboundedIntensity);
        }
        Ok(ModelSpec { params, intensity, window, resolution, intensity_bound })
    }

    pub fn params(&self) -> &InteractionParams {
        &self.params
    }

    pub fn ladder(&self) -> &ScaleLadder {
        self.params.ladder()
    }

    pub fn intensity(&self) -> &IntensitySurface {
        &self.intensity
    }

    pub fn window(&self) -> &Window {
        &self.window
    }

    pub fn resolution(&self) -> GridResolution {
        self.resolution
    }

    /// Finite upper bound of `lambda` over the window.
    pub fn intensity_bound(&self) -> f64 {
        self.intensity_bound
    }

    pub fn intensity_at(&self, p: &STPoint) -> f64 {
        self.intensity.value_at(p)
    }

    /// Bin index sized for this ladder's interaction range.
    pub fn index_for(&self, points: &[STPoint]) -> BinIndex {
        let l = self.ladder();
        BinIndex::from_points(points, 2.0 * l.max_radius(), 2.0 * l.max_half_height())
    }
}

/// `S_j(u; x)` for every scale `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SuffStats(pub Vec<f64>);

/// Source of candidate covering points for a query location.
pub trait CoverSource {
    /// Appends points within spatial distance `reach_xy` and time distance `reach_t` of `p`.
    fn collect(&self, p: &STPoint, reach_xy: f64, reach_t: f64, out: &mut Vec<STPoint>);
}

impl CoverSource for BinIndex {
    fn collect(&self, p: &STPoint, reach_xy: f64, reach_t: f64, out: &mut Vec<STPoint>) {
        self.within(p, reach_xy, reach_t, out);
    }
}

/// Linear scan over every point; the reference the bin index must reproduce.
#[derive(Debug, Clone, Copy)]
pub struct FullScan<'a>(pub &'a [STPoint]);

impl CoverSource for FullScan<'_> {
    fn collect(&self, p: &STPoint, reach_xy: f64, reach_t: f64, out: &mut Vec<STPoint>) {
        let r2 = reach_xy * reach_xy;
        out.extend(self.0.iter().filter(|q| p.spatial_distance_sq(q) <= r2 && (p.t - q.t).abs() <= reach_t));
    }
}

/// Per-scale covering cylinders around `p`, with `p` itself left out.
fn covers_by_scale<S: CoverSource + ?Sized>(p: &STPoint, source: &S, ladder: &ScaleLadder) -> Vec<Vec<Cylinder>> {
    let mut near = Vec::new();
    source.collect(p, 2.0 * ladder.max_radius(), 2.0 * ladder.max_half_height(), &mut near);
    near.retain(|q| q != p);
    (0..ladder.m())
        .map(|j| {
            let (r, h) = ladder.scale(j);
            let reach2 = 4.0 * r * r;
            near.iter()
                .filter(|q| p.spatial_distance_sq(q) <= reach2 && (p.t - q.t).abs() <= 2.0 * h)
                .map(|q| Cylinder::new(*q, r, h))
                .collect()
        })
        .collect()
}

/// Sufficient statistics of `p` against the points reachable through `source`.
pub fn suff_stats_with<S: CoverSource + ?Sized>(p: &STPoint, source: &S, spec: &ModelSpec) -> SuffStats {
    let ladder = spec.ladder();
    let covers = covers_by_scale(p, source, ladder);
    SuffStats(
        covers
            .iter()
            .enumerate()
            .map(|(j, cv)| uncovered_volume(&ladder.cylinder(j, *p), cv, spec.window(), spec.resolution()))
            .collect(),
    )
}

/// Sufficient statistics of `p` given `pattern` (a copy of `p` in the pattern is ignored).
pub fn suff_stats(p: &STPoint, pattern: &PointPattern, spec: &ModelSpec) -> SuffStats {
    suff_stats_with(p, &spec.index_for(pattern.points()), spec)
}

/// `log lambda(p; x)` through an arbitrary neighbour source.
pub fn log_papangelou_with<S: CoverSource + ?Sized>(p: &STPoint, source: &S, spec: &ModelSpec) -> f64 {
    let lam = spec.intensity_at(p);
    if lam <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let eta = spec.params().eta();
    if spec.params().is_poisson() {
        return lam.ln();
    }
    let s = suff_stats_with(p, source, spec);
    lam.ln() - eta.iter().zip(&s.0).map(|(e, v)| e * v).sum::<f64>()
}

/// Log Papangelou conditional intensity `log lambda(p; pattern)`.
pub fn log_papangelou(p: &STPoint, pattern: &PointPattern, spec: &ModelSpec) -> f64 {
    log_papangelou_with(p, &spec.index_for(pattern.points()), spec)
}

/// Same quantity as [`log_papangelou`], evaluated by decomposing `C_m(p)` into
/// the shells `C_j \ C_{j-1}`: a cell of shell `j` contributes
/// `sum_{i >= j} eta_i` for each scale `i` at which it is uncovered.
pub fn log_papangelou_shell_form(p: &STPoint, pattern: &PointPattern, spec: &ModelSpec) -> f64 {
    let lam = spec.intensity_at(p);
    if lam <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let ladder = spec.ladder();
    let covers = covers_by_scale(p, &spec.index_for(pattern.points()), ladder);
    let (counts, cell) = shell_uncovered_counts(*p, ladder, &covers, spec.window(), spec.resolution());
    let eta = spec.params().eta();
    let mut energy = 0.0;
    for (j, row) in counts.iter().enumerate() {
        for i in j..ladder.m() {
            energy += eta[i] * row[i] as f64 * cell;
        }
    }
    lam.ln() - energy
}

/// `log p(x ∪ {add}) - log p(x)`.
pub fn log_density_ratio(pattern: &PointPattern, add: &STPoint, spec: &ModelSpec) -> f64 {
    log_papangelou(add, pattern, spec)
}

/// Midpoint-rule volume of `U C_{r,h}(p) ∩ W` on one lattice spanning the union.
///
/// Cells have the same size as a single cylinder's grid at `res`, but the
/// lattice is anchored at the union's bounding box.
pub fn union_volume(points: &[STPoint], r: f64, h: f64, window: &Window, res: GridResolution) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let dx = 2.0 * r / res.n_xy() as f64;
    let dt = 2.0 * h / res.n_t() as f64;
    let x0 = points.iter().map(|p| p.x).fold(f64::INFINITY, f64::min) - r;
    let y0 = points.iter().map(|p| p.y).fold(f64::INFINITY, f64::min) - r;
    let t0 = points.iter().map(|p| p.t).fold(f64::INFINITY, f64::min) - h;
    let t1 = points.iter().map(|p| p.t).fold(f64::NEG_INFINITY, f64::max) + h;
    let nt = ((t1 - t0) / dt).ceil() as usize + 1;
    let words = nt.div_ceil(64);
    let mut columns: HashMap<(i64, i64), Vec<u64>> = HashMap::new();
    for p in points {
        let c = Cylinder::new(*p, r, h);
        let mut bits = vec![0u64; words];
        let lo = (((p.t - h - t0) / dt - 0.5).floor() - 1.0).max(0.0) as usize;
        let hi = ((((p.t + h - t0) / dt - 0.5).ceil() + 1.0) as usize).min(nt - 1);
        for it in lo..=hi {
            let t = t0 + (it as f64 + 0.5) * dt;
            if c.contains_t(t) && window.contains_time(t) {
                bits[it / 64] |= 1u64 << (it % 64);
            }
        }
        let ix_lo = ((p.x - r - x0) / dx - 0.5).floor() as i64 - 1;
        let ix_hi = ((p.x + r - x0) / dx - 0.5).ceil() as i64 + 1;
        let iy_lo = ((p.y - r - y0) / dx - 0.5).floor() as i64 - 1;
        let iy_hi = ((p.y + r - y0) / dx - 0.5).ceil() as i64 + 1;
        for iy in iy_lo..=iy_hi {
            let y = y0 + (iy as f64 + 0.5) * dx;
            for ix in ix_lo..=ix_hi {
                let x = x0 + (ix as f64 + 0.5) * dx;
                if c.contains_xy(x, y) && window.spatial().contains(x, y) {
                    let col = columns.entry((ix, iy)).or_insert_with(|| vec![0u64; words]);
                    for (a, b) in col.iter_mut().zip(&bits) {
                        *a |= b;
                    }
                }
            }
        }
    }
    let cells: u64 = columns.values().flatten().map(|w| w.count_ones() as u64).sum();
    cells as f64 * dx * dx * dt
}

/// `log p(x) - log alpha`; zero for the empty configuration.
pub fn log_unnormalized_density(pattern: &PointPattern, spec: &ModelSpec) -> f64 {
    if pattern.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for p in pattern.points() {
        let lam = spec.intensity_at(p);
        if lam <= 0.0 {
            return f64::NEG_INFINITY;
        }
        total += lam.ln();
    }
    let ladder = spec.ladder();
    for (j, &eta) in spec.params().eta().iter().enumerate() {
        if eta != 0.0 {
            let (r, h) = ladder.scale(j);
            total -= eta * union_volume(pattern.points(), r, h, spec.window(), spec.resolution());
        }
    }
    total
}
