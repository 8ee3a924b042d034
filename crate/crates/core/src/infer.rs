//! Maximum pseudolikelihood through the Berman-Turner quadrature device.
//!
//! Data and dummy points are given counting weights `w = v / n_cell`, so that
//! the log pseudolikelihood becomes the weighted Poisson log-likelihood
//! `sum_j w_j (y_j log lambda_j - lambda_j)` with responses `y = z / w`. The
//! model is log-linear in `(intercept, theta_scaled)` with covariates
//! `-S_j / (2 pi r_j^2 t_j)`, which is fitted by IRLS.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{GridResolution, STPoint, ScaleLadder, SpatialWindow, Window};
use crate::intensity::IntensitySurface;
use crate::model::{suff_stats_with, CoverSource, InteractionParams, ModelSpec, PointPattern};

/// Two-sided 95% normal quantile.
pub const Z_95: f64 = 1.959964;

const MAX_IRLS_ITERATIONS: usize = 50;
const DEVIANCE_TOL: f64 = 1e-9;

/// Sub-samples per axis when clipping a cell to a polygon.
const CLIP_SUBGRID: usize = 4;

/// Number of quadrature cubes along x, y and t.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadratureCells {
    pub nx: usize,
    pub ny: usize,
    pub nt: usize,
}

impl QuadratureCells {
    pub fn new(nx: usize, ny: usize, nt: usize) -> Result<Self> {
        if nx == 0 || ny == 0 || nt == 0 {
            return Err(Error::InvalidParameter(format!(
                "quadrature needs at least one cell per axis, got {nx}x{ny}x{nt}"
            )));
        }
        Ok(QuadratureCells { nx, ny, nt })
    }

    pub fn count(&self) -> usize {
        self.nx * self.ny * self.nt
    }
}

/// Data and dummy points with counting weights and sufficient statistics.
///
/// Data points come first, in pattern order, followed by the dummies in cell
/// order (x fastest, then y, then t).
#[derive(Debug, Clone)]
pub struct QuadratureScheme {
    pub points: Vec<STPoint>,
    pub z: Vec<bool>,
    pub w: Vec<f64>,
    pub y: Vec<f64>,
    /// Row-major `points.len() x m` matrix of `S_j`.
    pub s: Vec<f64>,
    pub ladder: ScaleLadder,
    pub cells: QuadratureCells,
    pub n_data: usize,
    pub n_dummy: usize,
}

impl QuadratureScheme {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn m(&self) -> usize {
        self.ladder.m()
    }

    pub fn s_row(&self, i: usize) -> &[f64] {
        let m = self.m();
        &self.s[i * m..(i + 1) * m]
    }

    pub fn total_weight(&self) -> f64 {
        self.w.iter().sum()
    }

    /// `log lambda` of `intensity` at every quadrature point.
    pub fn offset_from(&self, intensity: &IntensitySurface) -> Vec<f64> {
        self.points.iter().map(|p| intensity.value_at(p).ln()).collect()
    }
}

struct CellLayout {
    bounds: [f64; 4],
    tmin: f64,
    d: [f64; 3],
    cells: QuadratureCells,
}

impl CellLayout {
    fn new(window: &Window, cells: QuadratureCells) -> Self {
        let bounds = window.spatial().bounds();
        let d = [
            (bounds[1] - bounds[0]) / cells.nx as f64,
            (bounds[3] - bounds[2]) / cells.ny as f64,
            window.duration() / cells.nt as f64,
        ];
        CellLayout { bounds, tmin: window.tmin(), d, cells }
    }

    fn axis(v: f64, lo: f64, d: f64, n: usize) -> usize {
        (((v - lo) / d).floor().max(0.0) as usize).min(n - 1)
    }

    fn cell_of(&self, p: &STPoint) -> usize {
        let c = &self.cells;
        let ix = Self::axis(p.x, self.bounds[0], self.d[0], c.nx);
        let iy = Self::axis(p.y, self.bounds[2], self.d[1], c.ny);
        let it = Self::axis(p.t, self.tmin, self.d[2], c.nt);
        (it * c.ny + iy) * c.nx + ix
    }

    fn center(&self, k: usize) -> STPoint {
        let c = &self.cells;
        let ix = k % c.nx;
        let iy = (k / c.nx) % c.ny;
        let it = k / (c.nx * c.ny);
        STPoint::new(
            self.bounds[0] + (ix as f64 + 0.5) * self.d[0],
            self.bounds[2] + (iy as f64 + 0.5) * self.d[1],
            self.tmin + (it as f64 + 0.5) * self.d[2],
        )
    }

    fn volume(&self) -> f64 {
        self.d[0] * self.d[1] * self.d[2]
    }

    /// Fraction of the spatial footprint of cell `k` inside a polygon.
    fn inside_fraction(&self, k: usize, spatial: &SpatialWindow) -> f64 {
        let c = self.center(k);
        let n = CLIP_SUBGRID;
        let mut hits = 0;
        for a in 0..n {
            for b in 0..n {
                let x = c.x + ((a as f64 + 0.5) / n as f64 - 0.5) * self.d[0];
                let y = c.y + ((b as f64 + 0.5) / n as f64 - 0.5) * self.d[1];
                if spatial.contains(x, y) {
                    hits += 1;
                }
            }
        }
        hits as f64 / (n * n) as f64
    }
}

/// Builds the quadrature scheme and evaluates `S` at every point.
///
/// Data rows leave the point itself out of the covering union; dummy rows use
/// the whole pattern. On polygon windows, cells whose centre is outside get no
/// dummy and each kept cell's volume is its clipped volume on a 4x4 subgrid.
pub fn build_quadrature(
    pattern: &PointPattern,
    window: &Window,
    cells: QuadratureCells,
    ladder: &ScaleLadder,
    resolution: GridResolution,
) -> Result<QuadratureScheme> {
    QuadratureCells::new(cells.nx, cells.ny, cells.nt)?;
    for (index, p) in pattern.points().iter().enumerate() {
        if !window.contains(p) {
            return Err(Error::OutsideWindow { index, x: p.x, y: p.y, t: p.t });
        }
    }
    let layout = CellLayout::new(window, cells);
    let n_cells = cells.count();
    let spatial = window.spatial();
    let rectangle = spatial.is_rectangle();

    let data_cell: Vec<usize> = pattern.points().iter().map(|p| layout.cell_of(p)).collect();
    let mut data_in_cell = vec![0usize; n_cells];
    for &k in &data_cell {
        data_in_cell[k] += 1;
    }

    let full = layout.volume();
    let mut volume = vec![full; n_cells];
    let mut has_dummy = vec![true; n_cells];
    if !rectangle {
        for k in 0..n_cells {
            has_dummy[k] = spatial.contains(layout.center(k).x, layout.center(k).y);
            if has_dummy[k] || data_in_cell[k] > 0 {
                // a cell holding data always keeps some volume, even if the subgrid misses the polygon
                let frac = layout.inside_fraction(k, spatial).max(if data_in_cell[k] > 0 { 0.5 / 16.0 } else { 0.0 });
                volume[k] = full * frac;
            }
        }
    }

    let per_cell = |k: usize| data_in_cell[k] + usize::from(has_dummy[k]);
    let mut points = pattern.points().to_vec();
    let mut z = vec![true; points.len()];
    let mut w: Vec<f64> = data_cell.iter().map(|&k| volume[k] / per_cell(k) as f64).collect();
    for k in 0..n_cells {
        if has_dummy[k] {
            points.push(layout.center(k));
            z.push(false);
            w.push(volume[k] / per_cell(k) as f64);
        }
    }
    let n_data = pattern.len();
    let n_dummy = points.len() - n_data;
    let y = z.iter().zip(&w).map(|(&zi, &wi)| if zi { 1.0 / wi } else { 0.0 }).collect();

    let s = statistics_matrix(&points, n_data, pattern, window, ladder, resolution)?;
    Ok(QuadratureScheme { points, z, w, y, s, ladder: ladder.clone(), cells, n_data, n_dummy })
}

/// Row-major `S` for every quadrature point, rows computed in parallel.
fn statistics_matrix(
    points: &[STPoint],
    n_data: usize,
    pattern: &PointPattern,
    window: &Window,
    ladder: &ScaleLadder,
    resolution: GridResolution,
) -> Result<Vec<f64>> {
    let m = ladder.m();
    // only the geometry of the spec matters here
    let spec = ModelSpec::new(
        InteractionParams::new(vec![0.0; m], ladder.clone())?,
        IntensitySurface::constant(1.0)?,
        window.clone(),
        resolution,
    )?;
    let index = spec.index_for(pattern.points());
    let rows: Vec<Vec<f64>> = points
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            if i >= n_data && dummy_on_data(&index, p) {
                // the coincident data cylinder covers everything
                return vec![0.0; m];
            }
            suff_stats_with(p, &index, &spec).0
        })
        .collect();
    Ok(rows.concat())
}

fn dummy_on_data<S: CoverSource>(index: &S, p: &STPoint) -> bool {
    let mut hit = Vec::new();
    index.collect(p, 0.0, 0.0, &mut hit);
    hit.iter().any(|q| q == p)
}

/// Linear predictor `offset_j - sum_k eta_k S_jk`.
fn log_lambda(scheme: &QuadratureScheme, offset: &[f64], eta: &[f64], i: usize) -> f64 {
    offset[i] - scheme.s_row(i).iter().zip(eta).map(|(s, e)| s * e).sum::<f64>()
}

/// `sum_j w_j (y_j log lambda_j - lambda_j)`, with `y log lambda = 0` when `y = 0`.
pub fn log_pseudolikelihood(scheme: &QuadratureScheme, offset: &[f64], eta: &[f64]) -> f64 {
    assert_eq!(offset.len(), scheme.len(), "offset length must match the scheme");
    (0..scheme.len())
        .map(|i| {
            let ll = log_lambda(scheme, offset, eta, i);
            let lam = ll.exp();
            let data = if scheme.y[i] > 0.0 { scheme.y[i] * ll } else { 0.0 };
            scheme.w[i] * (data - lam)
        })
        .sum()
}

/// The same quantity as a sum over data points minus a weighted sum over all points.
pub fn log_pseudolikelihood_split(scheme: &QuadratureScheme, offset: &[f64], eta: &[f64]) -> f64 {
    let data: f64 = (0..scheme.len()).filter(|&i| scheme.z[i]).map(|i| log_lambda(scheme, offset, eta, i)).sum();
    let integral: f64 = (0..scheme.len()).map(|i| scheme.w[i] * log_lambda(scheme, offset, eta, i).exp()).sum();
    data - integral
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub scales: ScaleLadder,
    pub intercept: f64,
    pub theta_scaled: Vec<f64>,
    /// `log gamma`, finite even where `gamma` overflows.
    pub eta: Vec<f64>,
    #[serde(deserialize_with = "overflowed")]
    pub gamma: Vec<f64>,
    /// Wald 95% limits; intercept first, then one per scale.
    pub ci_low: Vec<f64>,
    pub ci_high: Vec<f64>,
    /// Wald limits mapped to the `gamma` scale.
    #[serde(deserialize_with = "overflowed")]
    pub gamma_ci_low: Vec<f64>,
    #[serde(deserialize_with = "overflowed")]
    pub gamma_ci_high: Vec<f64>,
    pub fisher_information: Vec<Vec<f64>>,
    #[serde(rename = "logPL")]
    pub log_pl: f64,
    pub deviance: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// JSON has no infinity; an overflowed `exp` is written as `null` and read back here.
fn overflowed<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Vec<f64>, D::Error> {
    let v: Vec<Option<f64>> = Deserialize::deserialize(d)?;
    Ok(v.into_iter().map(|x| x.unwrap_or(f64::INFINITY)).collect())
}

impl FitResult {
    /// Coefficients as `[intercept, theta_scaled...]`.
    pub fn coefficients(&self) -> Vec<f64> {
        std::iter::once(self.intercept).chain(self.theta_scaled.iter().copied()).collect()
    }

    pub fn params(&self) -> Result<InteractionParams> {
        InteractionParams::from_theta_scaled(&self.theta_scaled, self.scales.clone())
    }
}

/// Rows of the GLM after dropping dummies with zero intensity.
struct Design {
    x: DMatrix<f64>,
    offset: DVector<f64>,
    w: DVector<f64>,
    y: DVector<f64>,
}

fn design(scheme: &QuadratureScheme, offset: &[f64]) -> Result<Design> {
    if offset.len() != scheme.len() {
        return Err(Error::InvalidParameter(format!(
            "{} offsets for {} quadrature points",
            offset.len(),
            scheme.len()
        )));
    }
    if scheme.n_data == 0 {
        return Err(Error::EmptyInput("no data points in the quadrature scheme".into()));
    }
    let m = scheme.m();
    let refs = scheme.ladder.reference_volumes();
    let mut keep = Vec::with_capacity(scheme.len());
    for i in 0..scheme.len() {
        if offset[i] == f64::NEG_INFINITY {
            if scheme.z[i] {
                return Err(Error::Degenerate(format!("data point {i} has zero intensity")));
            }
            continue;
        }
        if !offset[i].is_finite() {
            return Err(Error::InvalidParameter(format!("offset {i} is not finite")));
        }
        keep.push(i);
    }
    let x = DMatrix::from_fn(
        keep.len(),
        m + 1,
        |r, c| if c == 0 { 1.0 } else { -scheme.s_row(keep[r])[c - 1] / refs[c - 1] },
    );
    for j in 0..m {
        if x.column(j + 1).iter().all(|&v| v == 0.0) {
            let (r, t) = scheme.ladder.scale(j);
            return Err(Error::RankDeficient(format!(
                "statistic of scale {} (r={r}, t={t}) is identically zero",
                j + 1
            )));
        }
    }
    Ok(Design {
        x,
        offset: DVector::from_iterator(keep.len(), keep.iter().map(|&i| offset[i])),
        w: DVector::from_iterator(keep.len(), keep.iter().map(|&i| scheme.w[i])),
        y: DVector::from_iterator(keep.len(), keep.iter().map(|&i| scheme.y[i])),
    })
}

fn deviance(d: &Design, mu: &DVector<f64>) -> f64 {
    2.0 * (0..mu.len())
        .map(|i| {
            let y = d.y[i];
            let term = if y > 0.0 { y * (y / mu[i]).ln() } else { 0.0 };
            d.w[i] * (term - (y - mu[i]))
        })
        .sum::<f64>()
}

fn means(d: &Design, beta: &DVector<f64>) -> DVector<f64> {
    (&d.x * beta + &d.offset).map(f64::exp)
}

/// `X' diag(w mu) X`.
fn information(d: &Design, mu: &DVector<f64>) -> DMatrix<f64> {
    let mut xw = d.x.clone();
    for (i, mut row) in xw.row_iter_mut().enumerate() {
        row *= d.w[i] * mu[i];
    }
    d.x.transpose() * xw
}

/// Gradient of the log pseudolikelihood with respect to `[intercept, theta_scaled...]`.
pub fn pseudolikelihood_score(scheme: &QuadratureScheme, offset: &[f64], coefficients: &[f64]) -> Result<Vec<f64>> {
    let d = design(scheme, offset)?;
    let beta = DVector::from_column_slice(coefficients);
    let mu = means(&d, &beta);
    let resid = DVector::from_fn(mu.len(), |i, _| d.w[i] * (d.y[i] - mu[i]));
    Ok((d.x.transpose() * resid).iter().copied().collect())
}

/// Weighted Poisson IRLS with log link.
pub fn fit_mple(scheme: &QuadratureScheme, offset: &[f64]) -> Result<FitResult> {
    let d = design(scheme, offset)?;
    let p = d.x.ncols();
    let n = d.x.nrows();

    let mut mu = DVector::from_fn(n, |i, _| d.y[i] + 0.1);
    let mut beta = DVector::zeros(p);
    let mut dev_old = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_IRLS_ITERATIONS {
        iterations += 1;
        let eta = mu.map(f64::ln);
        let work = DVector::from_fn(n, |i, _| eta[i] - d.offset[i] + (d.y[i] - mu[i]) / mu[i]);
        let info = information(&d, &mu);
        let mut rhs = DVector::zeros(p);
        for i in 0..n {
            rhs += d.x.row(i).transpose() * (d.w[i] * mu[i] * work[i]);
        }
        let chol = info
            .cholesky()
            .ok_or_else(|| Error::RankDeficient("weighted design matrix is not positive definite".into()))?;
        let proposal = chol.solve(&rhs);
        // a non-finite step means the optimum lies at infinity; report what we have
        if proposal.iter().any(|v| !v.is_finite()) {
            break;
        }
        let mut step = 1.0;
        let (new_beta, new_mu, dev) = loop {
            let b = &beta + (&proposal - &beta) * step;
            let m = means(&d, &b);
            let dev = deviance(&d, &m);
            if dev.is_finite() && (dev <= dev_old || dev_old.is_infinite() || step < 1e-3) {
                break (b, m, dev);
            }
            step *= 0.5;
            if step < 1e-10 {
                return Err(Error::NonConvergence("deviance is not finite".into()));
            }
        };
        beta = new_beta;
        mu = new_mu;
        if (dev - dev_old).abs() / (dev.abs() + 0.1) < DEVIANCE_TOL {
            converged = true;
            dev_old = dev;
            break;
        }
        dev_old = dev;
    }
    if beta.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonConvergence("coefficients are not finite".into()));
    }

    let info = information(&d, &mu);
    let cov =
        info.clone().try_inverse().ok_or_else(|| Error::RankDeficient("Fisher information is singular".into()))?;
    let refs = scheme.ladder.reference_volumes();
    let se: Vec<f64> = (0..p).map(|k| cov[(k, k)].max(0.0).sqrt()).collect();
    let ci_low: Vec<f64> = (0..p).map(|k| beta[k] - Z_95 * se[k]).collect();
    let ci_high: Vec<f64> = (0..p).map(|k| beta[k] + Z_95 * se[k]).collect();
    let theta_scaled: Vec<f64> = beta.iter().skip(1).copied().collect();
    let to_gamma = |v: &[f64]| v.iter().skip(1).zip(&refs).map(|(t, r)| (t / r).exp()).collect::<Vec<f64>>();

    let shifted: Vec<f64> = offset.iter().map(|o| o + beta[0]).collect();
    let eta: Vec<f64> = theta_scaled.iter().zip(&refs).map(|(t, r)| t / r).collect();
    let log_pl = log_pseudolikelihood(scheme, &shifted, &eta);

    Ok(FitResult {
        scales: scheme.ladder.clone(),
        intercept: beta[0],
        gamma: eta.iter().map(|e| e.exp()).collect(),
        eta,
        theta_scaled,
        gamma_ci_low: to_gamma(&ci_low),
        gamma_ci_high: to_gamma(&ci_high),
        ci_low,
        ci_high,
        fisher_information: (0..p).map(|r| (0..p).map(|c| info[(r, c)]).collect()).collect(),
        log_pl,
        deviance: dev_old,
        converged,
        iterations,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProfileEntry {
    pub ladder: ScaleLadder,
    pub log_pl: f64,
    pub fit: FitResult,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProfileFailure {
    pub ladder: ScaleLadder,
    pub error: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProfileResult {
    /// Best first.
    pub ranked: Vec<ProfileEntry>,
    pub failures: Vec<ProfileFailure>,
}

fn ladder_order(a: &ScaleLadder, b: &ScaleLadder) -> std::cmp::Ordering {
    a.m().cmp(&b.m()).then_with(|| {
        let key =
            |l: &ScaleLadder| l.radii().iter().zip(l.half_heights()).flat_map(|(r, t)| [*r, *t]).collect::<Vec<_>>();
        let (ka, kb) = (key(a), key(b));
        ka.iter().zip(&kb).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
    })
}

/// Fits every candidate ladder on the same quadrature cells and ranks them by
/// maximised log pseudolikelihood; ties go to fewer scales, then the
/// lexicographically smaller ladder.
pub fn profile_scales(
    pattern: &PointPattern,
    window: &Window,
    cells: QuadratureCells,
    candidates: &[ScaleLadder],
    intensity: &IntensitySurface,
    resolution: GridResolution,
) -> Result<ProfileResult> {
    if candidates.is_empty() {
        return Err(Error::EmptyInput("no candidate ladders".into()));
    }
    let outcomes: Vec<(ScaleLadder, Result<FitResult>)> = candidates
        .par_iter()
        .map(|ladder| {
            let fit = build_quadrature(pattern, window, cells, ladder, resolution).and_then(|scheme| {
                let offset = scheme.offset_from(intensity);
                fit_mple(&scheme, &offset)
            });
            (ladder.clone(), fit)
        })
        .collect();
    let mut ranked = Vec::new();
    let mut failures = Vec::new();
    for (ladder, fit) in outcomes {
        match fit {
            Ok(fit) => ranked.push(ProfileEntry { ladder, log_pl: fit.log_pl, fit }),
            Err(e) => failures.push(ProfileFailure { ladder, error: e.to_string() }),
        }
    }
    ranked.sort_by(|a, b| b.log_pl.total_cmp(&a.log_pl).then_with(|| ladder_order(&a.ladder, &b.ladder)));
    Ok(ProfileResult { ranked, failures })
}
