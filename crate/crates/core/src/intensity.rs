//! First-order inhomogeneity `lambda(x, t)`.
//!
//! Three surfaces are supported: a constant, the separable product of a
//! Gaussian kernel estimate of a population sample with a clamped harmonic
//! curve in time, and a user-supplied lattice with trilinear interpolation.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{STPoint, SpatialWindow, Window};

/// Weeks per year, the period of the seasonal harmonics.
pub const HARMONIC_PERIOD: f64 = 52.0;

/// Default divisor applied to the product surface.
pub const DEFAULT_RESCALE: f64 = 100.0;

/// Kernel contributions beyond this many bandwidths are dropped (relative size < e^-32).
const KDE_CUTOFF_BW: f64 = 8.0;

/// Safety factor on numerically located maxima of the product surface.
const PRODUCT_BOUND_SLACK: f64 = 1.05;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntensitySurface {
    Constant { value: f64 },
    Product { spatial: KdeSurface, temporal: HarmonicCurve, rescale: f64 },
    Grid(GridSurface),
}

impl IntensitySurface {
    pub fn constant(value: f64) -> Result<Self> {
        let s = IntensitySurface::Constant { value };
        s.validate()?;
        Ok(s)
    }

    pub fn product(spatial: KdeSurface, temporal: HarmonicCurve, rescale: f64) -> Result<Self> {
        let s = IntensitySurface::Product { spatial, temporal, rescale };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            IntensitySurface::Constant { value } => {
                if !value.is_finite() || *value < 0.0 {
                    return Err(Error::InvalidParameter(format!(
                        "constant intensity must be finite and >= 0, got {value}"
                    )));
                }
            }
            IntensitySurface::Product { spatial, rescale, .. } => {
                spatial.validate()?;
                if !rescale.is_finite() || *rescale <= 0.0 {
                    return Err(Error::InvalidParameter(format!("rescale must be positive, got {rescale}")));
                }
            }
            IntensitySurface::Grid(g) => g.validate()?,
        }
        Ok(())
    }

    /// Unchecked evaluation; callers guarantee `p` is in the window.
    pub fn value_at(&self, p: &STPoint) -> f64 {
        match self {
            IntensitySurface::Constant { value } => *value,
            IntensitySurface::Product { spatial, temporal, rescale } => {
                spatial.eval(p.x, p.y) * temporal.eval_clamped(p.t) / rescale
            }
            IntensitySurface::Grid(g) => g.eval(p),
        }
    }

    /// Finite upper bound of the surface over `window`, or `INFINITY` if none exists.
    pub fn upper_bound(&self, window: &Window) -> f64 {
        match self {
            IntensitySurface::Constant { value } => *value,
            IntensitySurface::Grid(g) => g.values.iter().copied().fold(0.0, f64::max),
            IntensitySurface::Product { spatial, temporal, rescale } => {
                let s = spatial.max_on(window.spatial());
                let z = temporal.max_on(window.tmin(), window.tmax());
                PRODUCT_BOUND_SLACK * s * z / rescale
            }
        }
    }
}

impl IntensitySurface {
    /// `∫_W lambda`, exact for constants and by a 48^3 midpoint rule otherwise.
    pub fn integrate(&self, window: &Window) -> f64 {
        if let IntensitySurface::Constant { value } = self {
            return value * window.volume();
        }
        const N: usize = 48;
        let [x0, x1, y0, y1] = window.spatial().bounds();
        let (dx, dy, dt) = ((x1 - x0) / N as f64, (y1 - y0) / N as f64, window.duration() / N as f64);
        let mut total = 0.0;
        for i in 0..N {
            let x = x0 + (i as f64 + 0.5) * dx;
            for j in 0..N {
                let y = y0 + (j as f64 + 0.5) * dy;
                if !window.spatial().contains(x, y) {
                    continue;
                }
                for k in 0..N {
                    total += self.value_at(&STPoint::new(x, y, window.tmin() + (k as f64 + 0.5) * dt));
                }
            }
        }
        total * dx * dy * dt
    }
}

/// Evaluates `surface` at `p`, rejecting points outside `window`.
pub fn eval_intensity(surface: &IntensitySurface, window: &Window, p: &STPoint) -> Result<f64> {
    if !window.contains(p) {
        return Err(Error::OutsideWindow { index: 0, x: p.x, y: p.y, t: p.t });
    }
    Ok(surface.value_at(p))
}

/// Isotropic Gaussian kernel estimate on the intensity scale (sums kernel masses).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KdeSurface {
    sample: Vec<[f64; 2]>,
    bandwidth: f64,
    edge_correction: bool,
    window: SpatialWindow,
    #[serde(skip)]
    bins: OnceLock<HashMap<(i64, i64), Vec<[f64; 2]>>>,
}

/// Fits a Gaussian kernel estimate; with `edge_correction` the value at `x` is
/// divided by the kernel mass at `x` that falls inside `window`.
pub fn fit_kde(
    sample: &[[f64; 2]],
    bandwidth: f64,
    window: &SpatialWindow,
    edge_correction: bool,
) -> Result<KdeSurface> {
    if sample.is_empty() {
        return Err(Error::EmptyInput("kernel estimate needs a non-empty sample".into()));
    }
    let kde = KdeSurface {
        sample: sample.to_vec(),
        bandwidth,
        edge_correction,
        window: window.clone(),
        bins: OnceLock::new(),
    };
    kde.validate()?;
    Ok(kde)
}

/// Scott's rule for a 2-D isotropic kernel: `sigma * n^(-1/6)`.
pub fn scott_bandwidth(sample: &[[f64; 2]]) -> Result<f64> {
    if sample.len() < 2 {
        return Err(Error::EmptyInput("bandwidth rule needs at least two points".into()));
    }
    let n = sample.len() as f64;
    let var = |k: usize| {
        let mean = sample.iter().map(|p| p[k]).sum::<f64>() / n;
        sample.iter().map(|p| (p[k] - mean).powi(2)).sum::<f64>() / (n - 1.0)
    };
    let sigma = (0.5 * (var(0) + var(1))).sqrt();
    if sigma <= 0.0 {
        return Err(Error::Degenerate("sample has zero spread".into()));
    }
    Ok(sigma * n.powf(-1.0 / 6.0))
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + statrs::function::erf::erf(z / std::f64::consts::SQRT_2))
}

impl KdeSurface {
    pub fn sample(&self) -> &[[f64; 2]] {
        &self.sample
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn edge_correction(&self) -> bool {
        self.edge_correction
    }

    fn validate(&self) -> Result<()> {
        if !self.bandwidth.is_finite() || self.bandwidth <= 0.0 {
            return Err(Error::InvalidParameter(format!("bandwidth must be positive, got {}", self.bandwidth)));
        }
        if self.sample.is_empty() {
            return Err(Error::EmptyInput("kernel estimate needs a non-empty sample".into()));
        }
        if self.sample.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite sample coordinate".into()));
        }
        self.window.validate()
    }

    fn bin_size(&self) -> f64 {
        0.5 * KDE_CUTOFF_BW * self.bandwidth
    }

    fn bins(&self) -> &HashMap<(i64, i64), Vec<[f64; 2]>> {
        self.bins.get_or_init(|| {
            let s = self.bin_size();
            let mut bins: HashMap<(i64, i64), Vec<[f64; 2]>> = HashMap::new();
            for p in &self.sample {
                bins.entry(((p[0] / s).floor() as i64, (p[1] / s).floor() as i64)).or_default().push(*p);
            }
            bins
        })
    }

    /// Kernel sum without edge correction.
    pub fn eval_raw(&self, x: f64, y: f64) -> f64 {
        let bw2 = self.bandwidth * self.bandwidth;
        let cut = KDE_CUTOFF_BW * self.bandwidth;
        let s = self.bin_size();
        let bins = self.bins();
        let (bx0, bx1) = (((x - cut) / s).floor() as i64, ((x + cut) / s).floor() as i64);
        let (by0, by1) = (((y - cut) / s).floor() as i64, ((y + cut) / s).floor() as i64);
        let mut acc = 0.0;
        for bx in bx0..=bx1 {
            for by in by0..=by1 {
                if let Some(bin) = bins.get(&(bx, by)) {
                    for p in bin {
                        let d2 = (p[0] - x).powi(2) + (p[1] - y).powi(2);
                        if d2 <= cut * cut {
                            acc += (-0.5 * d2 / bw2).exp();
                        }
                    }
                }
            }
        }
        acc / (2.0 * PI * bw2)
    }

    /// Mass of the kernel centred at `(x, y)` inside the window.
    pub fn window_mass(&self, x: f64, y: f64) -> f64 {
        let bw = self.bandwidth;
        match &self.window {
            SpatialWindow::Rectangle { xmin, xmax, ymin, ymax } => {
                (normal_cdf((xmax - x) / bw) - normal_cdf((xmin - x) / bw))
                    * (normal_cdf((ymax - y) / bw) - normal_cdf((ymin - y) / bw))
            }
            SpatialWindow::Polygon(poly) => {
                const N: usize = 32;
                let half = 4.0 * bw;
                let step = 2.0 * half / N as f64;
                let (mut inside, mut total) = (0.0, 0.0);
                for i in 0..N {
                    for j in 0..N {
                        let u = -half + (i as f64 + 0.5) * step;
                        let v = -half + (j as f64 + 0.5) * step;
                        let k = (-0.5 * (u * u + v * v) / (bw * bw)).exp();
                        total += k;
                        if poly.contains(x + u, y + v) {
                            inside += k;
                        }
                    }
                }
                inside / total
            }
        }
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let raw = self.eval_raw(x, y);
        if !self.edge_correction {
            return raw;
        }
        let mass = self.window_mass(x, y);
        if mass > 1e-12 {
            raw / mass
        } else {
            raw
        }
    }

    /// Largest value found on a 128 x 128 lattice of the window and at the sample points.
    fn max_on(&self, window: &SpatialWindow) -> f64 {
        const N: usize = 128;
        let [xmin, xmax, ymin, ymax] = window.bounds();
        let mut best: f64 = 0.0;
        for i in 0..=N {
            for j in 0..=N {
                let x = xmin + (xmax - xmin) * i as f64 / N as f64;
                let y = ymin + (ymax - ymin) * j as f64 / N as f64;
                if window.contains(x, y) {
                    best = best.max(self.eval(x, y));
                }
            }
        }
        for p in &self.sample {
            if window.contains(p[0], p[1]) {
                best = best.max(self.eval(p[0], p[1]));
            }
        }
        best
    }
}

/// Seasonal curve `c0 + sum_j (c_j cos(2 pi j t / P) + d_j sin(2 pi j t / P)) + e1 + e2 t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarmonicCurve {
    pub c0: f64,
    pub e1: f64,
    pub e2: f64,
    pub c: [f64; 3],
    pub d: [f64; 3],
    pub period: f64,
}

impl HarmonicCurve {
    pub fn flat(level: f64) -> Self {
        HarmonicCurve { c0: level, e1: 0.0, e2: 0.0, c: [0.0; 3], d: [0.0; 3], period: HARMONIC_PERIOD }
    }

    pub fn eval(&self, t: f64) -> f64 {
        let mut z = self.c0 + self.e1 + self.e2 * t;
        for j in 0..3 {
            let a = 2.0 * PI * (j + 1) as f64 * t / self.period;
            z += self.c[j] * a.cos() + self.d[j] * a.sin();
        }
        z
    }

    pub fn eval_clamped(&self, t: f64) -> f64 {
        self.eval(t).max(0.0)
    }

    pub fn derivative(&self, t: f64) -> f64 {
        let mut dz = self.e2;
        for j in 0..3 {
            let w = 2.0 * PI * (j + 1) as f64 / self.period;
            let a = w * t;
            dz += w * (-self.c[j] * a.sin() + self.d[j] * a.cos());
        }
        dz
    }

    fn max_on(&self, tmin: f64, tmax: f64) -> f64 {
        (0..=4096).map(|i| self.eval_clamped(tmin + (tmax - tmin) * i as f64 / 4096.0)).fold(0.0, f64::max)
    }
}

/// Least-squares harmonic fit with its coefficient of determination.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HarmonicFit {
    pub curve: HarmonicCurve,
    pub r_squared: f64,
    pub residual_sd: f64,
    pub n: usize,
}

/// Ordinary least squares on `[1, cos_j, sin_j (j = 1..3), t]`.
///
/// The trend intercept `e1` is not separately identifiable from `c0` and is
/// reported as 0.
pub fn fit_harmonic(counts: &[(f64, f64)]) -> Result<HarmonicFit> {
    const P: usize = 8;
    if counts.len() < 9 {
        return Err(Error::EmptyInput(format!(
            "harmonic regression needs at least 9 observations, got {}",
            counts.len()
        )));
    }
    let n = counts.len();
    let mut x = DMatrix::<f64>::zeros(n, P);
    let y = DVector::from_iterator(n, counts.iter().map(|c| c.1));
    for (i, &(t, _)) in counts.iter().enumerate() {
        x[(i, 0)] = 1.0;
        for j in 0..3 {
            let a = 2.0 * PI * (j + 1) as f64 * t / HARMONIC_PERIOD;
            x[(i, 1 + j)] = a.cos();
            x[(i, 4 + j)] = a.sin();
        }
        x[(i, 7)] = t;
    }
    // equilibrate columns so the rank test is scale free
    let norms: Vec<f64> = (0..P).map(|k| x.column(k).norm()).collect();
    if let Some(k) = norms.iter().position(|&v| v == 0.0) {
        return Err(Error::RankDeficient(format!("design column {k} is identically zero")));
    }
    let mut xs = x.clone();
    for (k, nk) in norms.iter().enumerate() {
        xs.column_mut(k).unscale_mut(*nk);
    }
    let svd = xs.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smin <= 1e-10 * smax {
        return Err(Error::RankDeficient("harmonic design is collinear (is t constant?)".into()));
    }
    let beta_s = svd.solve(&y, 0.0).map_err(|e| Error::RankDeficient(e.to_string()))?;
    let beta: Vec<f64> = (0..P).map(|k| beta_s[k] / norms[k]).collect();
    let fitted = &x * DVector::from_vec(beta.clone());
    let resid = &y - &fitted;
    let ssr = resid.norm_squared();
    let mean = y.mean();
    let sst: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let r_squared = if sst > 0.0 { 1.0 - ssr / sst } else { 1.0 };
    let dof = (n - P).max(1) as f64;
    Ok(HarmonicFit {
        curve: HarmonicCurve {
            c0: beta[0],
            e1: 0.0,
            e2: beta[7],
            c: [beta[1], beta[2], beta[3]],
            d: [beta[4], beta[5], beta[6]],
            period: HARMONIC_PERIOD,
        },
        r_squared,
        residual_sd: (ssr / dof).sqrt(),
        n,
    })
}

/// Intensity values on a regular lattice whose corner nodes sit on the box corners.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSurface {
    /// `[xmin, xmax, ymin, ymax, tmin, tmax]`.
    pub bounds: [f64; 6],
    pub nx: usize,
    pub ny: usize,
    pub nt: usize,
    /// Node values, `x` fastest, then `y`, then `t`.
    pub values: Vec<f64>,
}

impl GridSurface {
    pub fn new(bounds: [f64; 6], nx: usize, ny: usize, nt: usize, values: Vec<f64>) -> Result<Self> {
        let g = GridSurface { bounds, nx, ny, nt, values };
        g.validate()?;
        Ok(g)
    }

    fn validate(&self) -> Result<()> {
        if self.nx < 2 || self.ny < 2 || self.nt < 2 {
            return Err(Error::InvalidParameter("grid surface needs at least 2 nodes per axis".into()));
        }
        if self.values.len() != self.nx * self.ny * self.nt {
            return Err(Error::InvalidParameter(format!(
                "grid surface expects {} values, got {}",
                self.nx * self.ny * self.nt,
                self.values.len()
            )));
        }
        let b = self.bounds;
        if !b.iter().all(|v| v.is_finite()) || b[1] <= b[0] || b[3] <= b[2] || b[5] <= b[4] {
            return Err(Error::InvalidParameter("grid surface bounds are degenerate".into()));
        }
        if self.values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidParameter("grid surface values must be finite and >= 0".into()));
        }
        Ok(())
    }

    fn value(&self, ix: usize, iy: usize, it: usize) -> f64 {
        self.values[(it * self.ny + iy) * self.nx + ix]
    }

    pub fn eval(&self, p: &STPoint) -> f64 {
        let locate = |v: f64, lo: f64, hi: f64, n: usize| {
            let u = ((v - lo) / (hi - lo) * (n - 1) as f64).clamp(0.0, (n - 1) as f64);
            let i = (u.floor() as usize).min(n - 2);
            (i, u - i as f64)
        };
        let b = self.bounds;
        let (ix, fx) = locate(p.x, b[0], b[1], self.nx);
        let (iy, fy) = locate(p.y, b[2], b[3], self.ny);
        let (it, ft) = locate(p.t, b[4], b[5], self.nt);
        let mut acc = 0.0;
        for (dt, wt) in [(0, 1.0 - ft), (1, ft)] {
            for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
                for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
                    acc += wt * wy * wx * self.value(ix + dx, iy + dy, it + dt);
                }
            }
        }
        acc
    }
}

/// Uniform points inside each section, `count` per section: a stand-in
/// population sample when only per-area census counts are available.
pub fn synthetic_population(sections: &[(SpatialWindow, usize)], seed: u64) -> Result<Vec<[f64; 2]>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(sections.iter().map(|s| s.1).sum());
    for (area, count) in sections {
        for _ in 0..*count {
            let (x, y) = area.sample_uniform(&mut rng)?;
            out.push([x, y]);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn big_square() -> SpatialWindow {
        SpatialWindow::rectangle(0.0, 9.0, 0.0, 9.0).unwrap()
    }

    #[test]
    fn constant_surface() {
        let w = Window::unit_cube();
        let s = IntensitySurface::constant(50.0).unwrap();
        assert_eq!(eval_intensity(&s, &w, &STPoint::new(0.3, 0.9, 0.1)).unwrap(), 50.0);
        assert!(eval_intensity(&s, &w, &STPoint::new(1.3, 0.9, 0.1)).is_err());
        assert!(IntensitySurface::constant(-1.0).is_err());
        assert_eq!(s.upper_bound(&w), 50.0);
        assert_eq!(s.integrate(&w), 50.0);
    }

    #[test]
    fn product_integral_is_kde_mass_times_curve() {
        // interior kernels with edge correction integrate to the sample size
        let kde = fit_kde(&[[3.0, 3.0], [6.0, 5.0]], 0.5, &big_square(), true).unwrap();
        let s = IntensitySurface::product(kde, HarmonicCurve::flat(300.0), 100.0).unwrap();
        let w = Window::new(big_square(), 0.0, 4.0).unwrap();
        assert!((s.integrate(&w) - 2.0 * 3.0 * 4.0).abs() < 0.02 * 24.0, "{}", s.integrate(&w));
    }

    #[test]
    fn single_kernel_peak_and_product_value() {
        let kde = fit_kde(&[[4.0, 5.0]], 0.3, &big_square(), false).unwrap();
        let peak = 1.0 / (2.0 * PI * 0.09);
        assert!((kde.eval(4.0, 5.0) - peak).abs() < 1e-12);
        let off = kde.eval(4.3, 5.4);
        assert!((off - peak * (-0.5 * 0.25 / 0.09f64).exp()).abs() < 1e-12);
        let s = IntensitySurface::product(kde, HarmonicCurve::flat(200.0), 100.0).unwrap();
        let p = STPoint::new(4.3, 5.4, 17.0);
        assert!((s.value_at(&p) - 2.0 * off).abs() < 1e-12);
    }

    #[test]
    fn distant_kernels_do_not_interact() {
        let bw = 0.1;
        let kde = fit_kde(&[[1.0, 1.0], [1.0 + 12.5 * bw, 1.0]], bw, &big_square(), false).unwrap();
        let single = fit_kde(&[[1.0, 1.0]], bw, &big_square(), false).unwrap();
        assert!((kde.eval(1.0, 1.0) - single.eval(1.0, 1.0)).abs() < 1e-12);
    }

    #[test]
    fn kde_integrates_to_sample_size() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let sample: Vec<[f64; 2]> =
            (0..200).map(|_| [rng.random_range(2.0..7.0), rng.random_range(2.0..7.0)]).collect();
        let kde = fit_kde(&sample, 0.25, &big_square(), true).unwrap();
        let n = 450;
        let h = 9.0 / n as f64;
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                total += kde.eval((i as f64 + 0.5) * h, (j as f64 + 0.5) * h);
            }
        }
        total *= h * h;
        assert!((total - 200.0).abs() / 200.0 < 0.01, "{total}");
    }

    #[test]
    fn kde_is_linear_in_the_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a: Vec<[f64; 2]> = (0..50).map(|_| [rng.random_range(0.0..9.0), rng.random_range(0.0..9.0)]).collect();
        let b: Vec<[f64; 2]> = (0..70).map(|_| [rng.random_range(0.0..9.0), rng.random_range(0.0..9.0)]).collect();
        let ab: Vec<[f64; 2]> = a.iter().chain(&b).copied().collect();
        for edge in [false, true] {
            let (ka, kb, kab) = (
                fit_kde(&a, 0.4, &big_square(), edge).unwrap(),
                fit_kde(&b, 0.4, &big_square(), edge).unwrap(),
                fit_kde(&ab, 0.4, &big_square(), edge).unwrap(),
            );
            for _ in 0..50 {
                let (x, y) = (rng.random_range(0.0..9.0), rng.random_range(0.0..9.0));
                let sum = ka.eval(x, y) + kb.eval(x, y);
                assert!((kab.eval(x, y) - sum).abs() <= 1e-12 * sum.max(1e-300));
            }
        }
    }

    #[test]
    fn edge_correction_mass() {
        let kde = fit_kde(&[[0.0, 0.0]], 0.2, &big_square(), true).unwrap();
        assert!((kde.window_mass(0.0, 0.0) - 0.25).abs() < 1e-12);
        assert!((kde.window_mass(4.5, 4.5) - 1.0).abs() < 1e-12);
        let poly = SpatialWindow::polygon(vec![[0.0, 0.0], [9.0, 0.0], [9.0, 9.0], [0.0, 9.0]]).unwrap();
        let kp = fit_kde(&[[0.0, 0.0]], 0.2, &poly, true).unwrap();
        assert!((kp.window_mass(0.0, 4.5) - 0.5).abs() < 0.01);
        assert!(fit_kde(&[], 0.2, &poly, true).is_err());
        assert!(fit_kde(&[[1.0, 1.0]], 0.0, &poly, true).is_err());
    }

    #[test]
    fn product_separability() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let sample: Vec<[f64; 2]> = (0..80).map(|_| [rng.random_range(0.0..9.0), rng.random_range(0.0..9.0)]).collect();
        let curve =
            HarmonicCurve { c0: 20.0, e1: 0.0, e2: -0.1, c: [5.0, 1.0, 0.5], d: [2.0, -1.0, 0.2], period: 52.0 };
        let s = IntensitySurface::product(fit_kde(&sample, 0.5, &big_square(), true).unwrap(), curve, 100.0).unwrap();
        let (t1, t2) = (3.0, 30.0);
        let mut ratios = Vec::new();
        for _ in 0..20 {
            let (x, y) = (rng.random_range(0.0..9.0), rng.random_range(0.0..9.0));
            ratios.push(s.value_at(&STPoint::new(x, y, t1)) / s.value_at(&STPoint::new(x, y, t2)));
        }
        for r in &ratios {
            assert!((r - ratios[0]).abs() < 1e-12 * ratios[0]);
        }
    }

    #[test]
    fn product_bound_dominates_lattice_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let sample: Vec<[f64; 2]> =
            (0..300).map(|_| [rng.random_range(0.0..9.0), rng.random_range(0.0..9.0)]).collect();
        let curve = HarmonicCurve { c0: 20.0, e1: 0.0, e2: 0.0, c: [5.0, 1.0, 0.0], d: [2.0, 0.0, 0.0], period: 52.0 };
        let s = IntensitySurface::product(fit_kde(&sample, 0.3, &big_square(), true).unwrap(), curve, 100.0).unwrap();
        let w = Window::cuboid(0.0, 9.0, 0.0, 9.0, 0.0, 52.0).unwrap();
        let bound = s.upper_bound(&w);
        assert!(bound.is_finite());
        let mut best: f64 = 0.0;
        for i in 0..64 {
            for j in 0..64 {
                for k in 0..64 {
                    let p = STPoint::new(
                        9.0 * (i as f64 + 0.5) / 64.0,
                        9.0 * (j as f64 + 0.5) / 64.0,
                        52.0 * (k as f64 + 0.5) / 64.0,
                    );
                    best = best.max(s.value_at(&p));
                }
            }
        }
        assert!(best <= bound);
    }

    #[test]
    fn grid_surface_interpolates() {
        let g = GridSurface::new([0.0, 1.0, 0.0, 1.0, 0.0, 1.0], 3, 4, 5, vec![7.0; 60]).unwrap();
        for p in [STPoint::new(0.0, 0.0, 0.0), STPoint::new(1.0, 1.0, 1.0), STPoint::new(0.25, 0.5, 0.125)] {
            assert!((g.eval(&p) - 7.0).abs() < 1e-14);
        }
        // linear field is reproduced exactly
        let (nx, ny, nt) = (3, 3, 3);
        let mut vals = Vec::new();
        for it in 0..nt {
            for iy in 0..ny {
                for ix in 0..nx {
                    vals.push(1.0 + ix as f64 + 2.0 * iy as f64 + 3.0 * it as f64);
                }
            }
        }
        let g = GridSurface::new([0.0, 2.0, 0.0, 2.0, 0.0, 2.0], nx, ny, nt, vals).unwrap();
        let p = STPoint::new(0.3, 1.7, 0.9);
        assert!((g.eval(&p) - (1.0 + 0.3 + 3.4 + 2.7)).abs() < 1e-12);
        assert!(GridSurface::new([0.0, 1.0, 0.0, 1.0, 0.0, 1.0], 2, 2, 2, vec![1.0; 7]).is_err());
        assert!(GridSurface::new([0.0, 1.0, 0.0, 1.0, 0.0, 1.0], 2, 2, 2, vec![-1.0; 8]).is_err());
    }

    fn weekly(curve: &HarmonicCurve) -> Vec<(f64, f64)> {
        (0..52).map(|t| (t as f64, curve.eval(t as f64))).collect()
    }

    #[test]
    fn harmonic_recovers_noiseless_curve() {
        let truth =
            HarmonicCurve { c0: 17.0, e1: 0.0, e2: -0.15, c: [6.0, -2.0, 1.0], d: [3.0, 0.5, -0.7], period: 52.0 };
        let fit = fit_harmonic(&weekly(&truth)).unwrap();
        let f = &fit.curve;
        assert!((f.c0 - truth.c0).abs() < 1e-8);
        assert!((f.e2 - truth.e2).abs() < 1e-8);
        for j in 0..3 {
            assert!((f.c[j] - truth.c[j]).abs() < 1e-8);
            assert!((f.d[j] - truth.d[j]).abs() < 1e-8);
        }
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn harmonic_pure_intercept() {
        let data: Vec<(f64, f64)> = (0..52).map(|t| (t as f64, 10.0)).collect();
        let f = fit_harmonic(&data).unwrap().curve;
        assert!((f.c0 - 10.0).abs() < 1e-8);
        assert!(f.e2.abs() < 1e-8 && f.c.iter().chain(&f.d).all(|v| v.abs() < 1e-8));
    }

    #[test]
    fn harmonic_errors() {
        let few: Vec<(f64, f64)> = (0..8).map(|t| (t as f64, 1.0)).collect();
        assert!(matches!(fit_harmonic(&few), Err(Error::EmptyInput(_))));
        let constant_t: Vec<(f64, f64)> = (0..20).map(|i| (3.0, i as f64)).collect();
        assert!(matches!(fit_harmonic(&constant_t), Err(Error::RankDeficient(_))));
    }

    #[test]
    fn harmonic_tracks_summer_dip() {
        // school-term template: high until week 25, low through week 38, recovering after
        let template = |t: f64| {
            if t < 26.0 {
                30.0 - 0.2 * t
            } else if t < 39.0 {
                6.0
            } else {
                6.0 + 1.5 * (t - 39.0)
            }
        };
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let data: Vec<(f64, f64)> =
            (0..52).map(|t| (t as f64, template(t as f64) + rng.random_range(-1.0..1.0))).collect();
        let f = fit_harmonic(&data).unwrap().curve;
        // falls into the dip, rises out of it
        assert!(f.derivative(24.0) < 0.0, "{}", f.derivative(24.0));
        assert!(f.derivative(44.0) > 0.0, "{}", f.derivative(44.0));
        let lowest = (0..52).min_by(|a, b| f.eval(*a as f64).total_cmp(&f.eval(*b as f64))).unwrap();
        assert!((26..=39).contains(&lowest), "{lowest}");
    }

    #[test]
    fn synthetic_population_respects_sections() {
        let a = SpatialWindow::rectangle(0.0, 1.0, 0.0, 1.0).unwrap();
        let b = SpatialWindow::polygon(vec![[5.0, 5.0], [6.0, 5.0], [5.0, 6.0]]).unwrap();
        let pop = synthetic_population(&[(a.clone(), 30), (b.clone(), 10)], 1).unwrap();
        assert_eq!(pop.len(), 40);
        assert!(pop[..30].iter().all(|p| a.contains(p[0], p[1])));
        assert!(pop[30..].iter().all(|p| b.contains(p[0], p[1])));
        assert_eq!(pop, synthetic_population(&[(a, 30), (b, 10)], 1).unwrap());
    }

    #[test]
    fn surface_json_round_trip() {
        let kde = fit_kde(&[[1.0, 2.0], [3.0, 4.0]], 0.5, &big_square(), true).unwrap();
        let s = IntensitySurface::product(kde, HarmonicCurve::flat(3.0), 100.0).unwrap();
        let js = serde_json::to_string(&s).unwrap();
        let back: IntensitySurface = serde_json::from_str(&js).unwrap();
        let p = STPoint::new(2.0, 3.0, 1.0);
        assert_eq!(s.value_at(&p), back.value_at(&p));
        let c: IntensitySurface = serde_json::from_str(r#"{"constant":{"value":50}}"#).unwrap();
        assert_eq!(c.value_at(&p), 50.0);
    }
}
