//! Exploratory summaries used to bound the interaction scales: the spatial
//! pair correlation function, the autocorrelation of binned counts, and
//! jittering of coarsened coordinates.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{STPoint, SpatialWindow, Window, MAX_REJECTION_RETRIES};
use crate::model::PointPattern;

/// Coefficient of the default Epanechnikov half-width `c / sqrt(n / area)`.
pub const STOYAN_COEFFICIENT: f64 = 0.15;

/// Lattice side used to approximate translated-window overlaps on polygons.
const OVERLAP_LATTICE: usize = 48;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemporalJitter {
    #[default]
    None,
    /// Integer time `k` becomes a uniform draw from `[k, k + 1)`.
    UniformWithinWeek,
}

/// Separates coincident locations and spreads integer time stamps.
///
/// Every member of a group of points sharing the same `(x, y)` is moved
/// uniformly within a disc of radius `max_spatial`. Draws landing outside the
/// window are repeated.
pub fn jitter(
    points: &[STPoint],
    window: &Window,
    max_spatial: f64,
    temporal: TemporalJitter,
    seed: u64,
) -> Result<PointPattern> {
    if !(max_spatial.is_finite() && max_spatial >= 0.0) {
        return Err(Error::InvalidParameter(format!("jitter radius must be >= 0, got {max_spatial}")));
    }
    let mut groups: HashMap<(u64, u64), usize> = HashMap::new();
    for p in points {
        if !p.is_finite() {
            return Err(Error::InvalidParameter("non-finite coordinate".into()));
        }
        *groups.entry((p.x.to_bits(), p.y.to_bits())).or_default() += 1;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(points.len());
    for p in points {
        let shared = groups[&(p.x.to_bits(), p.y.to_bits())] > 1 && max_spatial > 0.0;
        let week = p.t.floor();
        let mut tries = 0;
        let q = loop {
            let mut q = *p;
            if shared {
                let rad = max_spatial * rng.random::<f64>().sqrt();
                let ang = std::f64::consts::TAU * rng.random::<f64>();
                q.x += rad * ang.cos();
                q.y += rad * ang.sin();
            }
            if temporal == TemporalJitter::UniformWithinWeek {
                q.t = week + rng.random::<f64>();
            }
            let moved = shared || temporal != TemporalJitter::None;
            if window.contains(&q) || !moved {
                break q;
            }
            tries += 1;
            if tries >= MAX_REJECTION_RETRIES {
                return Err(Error::RetryExhausted(tries));
            }
        };
        out.push(q);
    }
    PointPattern::new(out, window)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcfEstimate {
    pub distances: Vec<f64>,
    pub g: Vec<f64>,
    /// Epanechnikov half-width.
    pub bandwidth: f64,
    pub correction: String,
}

/// Default Epanechnikov half-width for `n` points on `area`.
pub fn stoyan_bandwidth(n: usize, area: f64) -> f64 {
    STOYAN_COEFFICIENT / (n as f64 / area).sqrt()
}

/// Area of `W ∩ (W + (dx, dy))`.
struct OverlapArea<'a> {
    window: &'a SpatialWindow,
    lattice: Vec<(f64, f64)>,
    cell: f64,
}

impl<'a> OverlapArea<'a> {
    fn new(window: &'a SpatialWindow) -> Self {
        let mut lattice = Vec::new();
        let mut cell = 0.0;
        if !window.is_rectangle() {
            let [x0, x1, y0, y1] = window.bounds();
            let (dx, dy) = ((x1 - x0) / OVERLAP_LATTICE as f64, (y1 - y0) / OVERLAP_LATTICE as f64);
            cell = dx * dy;
            for i in 0..OVERLAP_LATTICE {
                for j in 0..OVERLAP_LATTICE {
                    let (x, y) = (x0 + (i as f64 + 0.5) * dx, y0 + (j as f64 + 0.5) * dy);
                    if window.contains(x, y) {
                        lattice.push((x, y));
                    }
                }
            }
        }
        OverlapArea { window, lattice, cell }
    }

    fn area(&self, dx: f64, dy: f64) -> f64 {
        match self.window {
            SpatialWindow::Rectangle { xmin, xmax, ymin, ymax } => {
                ((xmax - xmin) - dx.abs()).max(0.0) * ((ymax - ymin) - dy.abs()).max(0.0)
            }
            SpatialWindow::Polygon(_) => {
                self.lattice.iter().filter(|(x, y)| self.window.contains(x - dx, y - dy)).count() as f64 * self.cell
            }
        }
    }
}

/// Kernel estimate of the pair correlation function with translation correction.
///
/// `g(r) = A^2 / (n^2 2 pi r) sum_{i != j} k(r - d_ij) / |W ∩ (W + x_i - x_j)|`
/// with the Epanechnikov kernel `k` of half-width `bandwidth`.
pub fn pcf(points: &[[f64; 2]], window: &SpatialWindow, bandwidth: Option<f64>, r_grid: &[f64]) -> Result<PcfEstimate> {
    window.validate()?;
    let area = window.area();
    if !(area.is_finite() && area > 0.0) {
        return Err(Error::Degenerate("window has no area".into()));
    }
    let n = points.len();
    if n < 2 {
        return Err(Error::EmptyInput(format!("pair correlation needs at least 2 points, got {n}")));
    }
    if r_grid.iter().any(|&r| !(r.is_finite() && r > 0.0)) {
        return Err(Error::InvalidParameter("distances must be positive".into()));
    }
    let h = bandwidth.unwrap_or_else(|| stoyan_bandwidth(n, area));
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::InvalidParameter(format!("bandwidth must be positive, got {h}")));
    }
    let reach = r_grid.iter().copied().fold(0.0, f64::max) + h;
    let overlap = OverlapArea::new(window);
    // per-point rows summed in index order, so the result does not depend on thread scheduling
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut acc = vec![0.0; r_grid.len()];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let dx = points[i][0] - points[j][0];
                let dy = points[i][1] - points[j][1];
                let d = dx.hypot(dy);
                if d > reach {
                    continue;
                }
                let a = overlap.area(dx, dy);
                if a <= 0.0 {
                    continue;
                }
                for (k, &r) in r_grid.iter().enumerate() {
                    let u = (r - d) / h;
                    if u.abs() <= 1.0 {
                        acc[k] += 0.75 / h * (1.0 - u * u) / a;
                    }
                }
            }
            acc
        })
        .collect();
    let mut sums = vec![0.0; r_grid.len()];
    for row in &rows {
        for (s, v) in sums.iter_mut().zip(row) {
            *s += v;
        }
    }
    let lambda = n as f64 / area;
    let g = r_grid.iter().zip(&sums).map(|(&r, &s)| s / (std::f64::consts::TAU * r * lambda * lambda)).collect();
    Ok(PcfEstimate { distances: r_grid.to_vec(), g, bandwidth: h, correction: "translation".into() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcfEstimate {
    pub lags: Vec<usize>,
    pub acf: Vec<f64>,
    /// Half-width of the approximate 95% band under white noise.
    pub band: f64,
}

/// Sample autocorrelation for lags `0..=max_lag`.
pub fn acf(series: &[f64], max_lag: usize) -> Result<AcfEstimate> {
    let t = series.len();
    if t < 2 {
        return Err(Error::EmptyInput(format!("series needs at least 2 values, got {t}")));
    }
    if max_lag >= t {
        return Err(Error::InvalidParameter(format!("max lag {max_lag} must be below the series length {t}")));
    }
    let mean = series.iter().sum::<f64>() / t as f64;
    let c0: f64 = series.iter().map(|v| (v - mean).powi(2)).sum();
    if c0 <= 0.0 {
        return Err(Error::Degenerate("constant series".into()));
    }
    let acf = (0..=max_lag)
        .map(|k| {
            let ck: f64 = (0..t - k).map(|i| (series[i] - mean) * (series[i + k] - mean)).sum();
            if k == 0 {
                1.0
            } else {
                ck / c0
            }
        })
        .collect();
    Ok(AcfEstimate { lags: (0..=max_lag).collect(), acf, band: 1.96 / (t as f64).sqrt() })
}

/// Counts of `times` in consecutive bins of `width` starting at `start`.
pub fn binned_counts(times: &[f64], start: f64, end: f64, width: f64) -> Result<Vec<f64>> {
    if !(width > 0.0 && end > start) {
        return Err(Error::InvalidParameter("bins need a positive width and a non-empty range".into()));
    }
    let n = ((end - start) / width).ceil() as usize;
    let mut counts = vec![0.0; n];
    for &t in times {
        if t >= start && t <= end {
            let k = (((t - start) / width) as usize).min(n - 1);
            counts[k] += 1.0;
        }
    }
    Ok(counts)
}

/// Interaction ranges read off the summaries; advisory only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeReport {
    /// First distance at which the estimated pcf crosses 1.
    pub pcf_range: Option<f64>,
    /// Number of consecutive lags from 1 whose ACF exceeds the band.
    pub acf_range: Option<usize>,
    pub suggested_max_radius: Option<f64>,
    /// Half the correlated lag span, since cylinders of half-height `t`
    /// interact up to a time distance of `2t`.
    pub suggested_max_half_height: Option<f64>,
}

pub fn range_report(pcf: &PcfEstimate, acf: &AcfEstimate, lag_unit: f64) -> RangeReport {
    let mut pcf_range = None;
    if let Some(first) = pcf.g.first() {
        let above = *first > 1.0;
        pcf_range = pcf.g.iter().zip(&pcf.distances).find(|(g, _)| (**g > 1.0) != above).map(|(_, r)| *r);
    }
    let significant = acf.acf.iter().skip(1).take_while(|v| **v > acf.band).count();
    let acf_range = (significant > 0).then_some(significant);
    RangeReport {
        pcf_range,
        acf_range,
        suggested_max_radius: pcf_range,
        suggested_max_half_height: acf_range.map(|k| k as f64 * lag_unit / 2.0),
    }
}
