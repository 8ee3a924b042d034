//! Samplers: Metropolis-Hastings birth/death, a continuous-time birth-and-death
//! jump chain with a constant rejection envelope, and inhomogeneous Poisson
//! thinning.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{interior_cylinder_volume, BinIndex, STPoint, Window};
use crate::intensity::IntensitySurface;
use crate::model::{log_papangelou, log_papangelou_with, log_unnormalized_density, FullScan, ModelSpec, PointPattern};

/// How a sampler finds the points that can interact with a proposal.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeighborSearch {
    #[default]
    Indexed,
    FullScan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MhConfig {
    pub iterations: usize,
    pub seed: u64,
    pub initial: PointPattern,
    /// Record every `trace_every` iterations; 0 disables the trace.
    pub trace_every: usize,
    pub neighbor_search: NeighborSearch,
}

impl Default for MhConfig {
    fn default() -> Self {
        MhConfig {
            iterations: 20_000,
            seed: 0,
            initial: PointPattern::empty(),
            trace_every: 0,
            neighbor_search: NeighborSearch::Indexed,
        }
    }
}

impl MhConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidParameter("iterations must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BdConfig {
    /// Stop after this many realised jumps (births or deaths).
    pub max_events: Option<usize>,
    /// Stop once the accumulated sojourn time would exceed this.
    pub time_budget: Option<f64>,
    pub seed: u64,
    pub initial: PointPattern,
    pub trace_every: usize,
}

impl BdConfig {
    pub fn validate(&self) -> Result<()> {
        match (self.max_events, self.time_budget) {
            (None, None) => Err(Error::InvalidParameter("set max_events, time_budget or both".into())),
            (Some(0), _) => Err(Error::InvalidParameter("max_events must be positive".into())),
            (_, Some(t)) if !(t.is_finite() && t > 0.0) => {
                Err(Error::InvalidParameter("time_budget must be positive and finite".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Move {
    Start,
    Birth,
    Death,
    /// Death proposed on the empty configuration.
    Idle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: u64,
    pub n: usize,
    pub log_density: f64,
    pub proposal: Move,
    pub accepted: bool,
    /// Sojourn time preceding this event; birth-death chain only.
    pub sojourn: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChainTrace {
    pub records: Vec<TraceRecord>,
    /// Total sojourn time of the birth-death chain.
    pub elapsed_time: Option<f64>,
    pub accepted_births: u64,
    pub accepted_deaths: u64,
}

/// Per-replicate seed for the `i`-th of several independent chains.
pub fn replicate_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_add(i as u64)
}

/// Inhomogeneous Poisson process on `window` by thinning a homogeneous one.
pub fn sample_poisson(intensity: &IntensitySurface, window: &Window, seed: u64) -> Result<PointPattern> {
    sample_poisson_with(intensity, window, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn sample_poisson_with<R: Rng + ?Sized>(
    intensity: &IntensitySurface,
    window: &Window,
    rng: &mut R,
) -> Result<PointPattern> {
    intensity.validate()?;
    let bound = intensity.upper_bound(window);
    if !bound.is_finite() {
        return Err(Error::UnboundedIntensity);
    }
    if bound <= 0.0 {
        return Ok(PointPattern::empty());
    }
    let n = Poisson::new(bound * window.volume()).map_err(|e| Error::InvalidParameter(e.to_string()))?.sample(rng);
    let mut points = Vec::with_capacity(n as usize);
    for _ in 0..n as usize {
        let p = window.sample_uniform(rng)?;
        if rng.random::<f64>() * bound < intensity.value_at(&p) {
            points.push(p);
        }
    }
    Ok(PointPattern::new(points, window).expect("uniform draws are distinct and inside the window"))
}

/// Exactly `n` i.i.d. points with density proportional to `intensity` on `window`.
pub fn sample_fixed_count(intensity: &IntensitySurface, window: &Window, n: usize, seed: u64) -> Result<PointPattern> {
    intensity.validate()?;
    let bound = intensity.upper_bound(window);
    if !bound.is_finite() {
        return Err(Error::UnboundedIntensity);
    }
    if n > 0 && bound <= 0.0 {
        return Err(Error::Degenerate("intensity is zero on the whole window".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n);
    let mut tries = 0usize;
    while points.len() < n {
        let p = window.sample_uniform(&mut rng)?;
        if rng.random::<f64>() * bound < intensity.value_at(&p) {
            points.push(p);
            tries = 0;
        } else {
            tries += 1;
            if tries >= crate::geometry::MAX_REJECTION_RETRIES {
                return Err(Error::RetryExhausted(tries));
            }
        }
    }
    PointPattern::new(points, window)
}

/// Hastings ratio `r(x, u) = |W| / (n(x) + 1) * lambda(u; x)`.
pub fn mh_ratio(pattern: &PointPattern, candidate: &STPoint, spec: &ModelSpec) -> f64 {
    let lp = log_papangelou(candidate, pattern, spec);
    ratio_from_log(lp, spec.window().volume(), pattern.len() + 1)
}

fn ratio_from_log(log_papangelou: f64, volume: f64, n_after: usize) -> f64 {
    volume / n_after as f64 * log_papangelou.exp()
}

/// Acceptance probability of adding `candidate` to `pattern`.
pub fn birth_acceptance(pattern: &PointPattern, candidate: &STPoint, spec: &ModelSpec) -> f64 {
    mh_ratio(pattern, candidate, spec).min(1.0)
}

/// Acceptance probability of removing the point at `index` from `pattern`.
pub fn death_acceptance(pattern: &PointPattern, index: usize, spec: &ModelSpec) -> f64 {
    let victim = pattern.points()[index];
    let rest = pattern.without(index);
    (1.0 / mh_ratio(&rest, &victim, spec)).min(1.0)
}

/// Mutable configuration plus whichever neighbour structure the sampler uses.
struct State {
    points: Vec<STPoint>,
    index: Option<BinIndex>,
}

impl State {
    fn new(spec: &ModelSpec, initial: &PointPattern, search: NeighborSearch) -> Result<Self> {
        for (index, p) in initial.points().iter().enumerate() {
            if !spec.window().contains(p) {
                return Err(Error::OutsideWindow { index, x: p.x, y: p.y, t: p.t });
            }
        }
        let points = initial.points().to_vec();
        let index = match search {
            NeighborSearch::Indexed => Some(spec.index_for(&points)),
            NeighborSearch::FullScan => None,
        };
        Ok(State { points, index })
    }

    /// `log lambda(p; x \ {p})`; a copy of `p` in the state is ignored.
    fn log_papangelou(&self, p: &STPoint, spec: &ModelSpec) -> f64 {
        match &self.index {
            Some(idx) => log_papangelou_with(p, idx, spec),
            None => log_papangelou_with(p, &FullScan(&self.points), spec),
        }
    }

    fn insert(&mut self, p: STPoint) {
        self.points.push(p);
        if let Some(idx) = &mut self.index {
            idx.insert(p);
        }
    }

    fn remove(&mut self, i: usize) {
        let p = self.points.swap_remove(i);
        if let Some(idx) = &mut self.index {
            idx.remove(&p);
        }
    }

    fn contains(&self, p: &STPoint) -> bool {
        match &self.index {
            Some(idx) => {
                let mut near = Vec::new();
                idx.within(p, 0.0, 0.0, &mut near);
                !near.is_empty()
            }
            None => self.points.contains(p),
        }
    }
}

/// Metropolis-Hastings birth/death sampler with `q = 1/2` and uniform births.
pub fn run_mh(spec: &ModelSpec, cfg: &MhConfig) -> Result<(PointPattern, ChainTrace)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = State::new(spec, &cfg.initial, cfg.neighbor_search)?;
    let volume = spec.window().volume();
    let tracing = cfg.trace_every > 0;
    let mut trace = ChainTrace::default();
    let mut log_density = if tracing { log_unnormalized_density(&cfg.initial, spec) } else { 0.0 };
    if tracing {
        trace.records.push(TraceRecord {
            iteration: 0,
            n: state.points.len(),
            log_density,
            proposal: Move::Start,
            accepted: false,
            sojourn: None,
        });
    }

    for it in 1..=cfg.iterations {
        let (proposal, accepted) = if rng.random::<f64>() < 0.5 {
            let u = spec.window().sample_uniform(&mut rng)?;
            let lp = state.log_papangelou(&u, spec);
            let r = ratio_from_log(lp, volume, state.points.len() + 1);
            let ok = rng.random::<f64>() < r && !state.contains(&u);
            if ok {
                state.insert(u);
                log_density += lp;
                trace.accepted_births += 1;
            }
            (Move::Birth, ok)
        } else if state.points.is_empty() {
            (Move::Idle, false)
        } else {
            let n = state.points.len();
            let i = rng.random_range(0..n);
            let lp = state.log_papangelou(&state.points[i], spec);
            let r = ratio_from_log(lp, volume, n);
            let ok = rng.random::<f64>() * r < 1.0;
            if ok {
                state.remove(i);
                log_density -= lp;
                trace.accepted_deaths += 1;
            }
            (Move::Death, ok)
        };
        if tracing && it.is_multiple_of(cfg.trace_every) {
            trace.records.push(TraceRecord {
                iteration: it as u64,
                n: state.points.len(),
                log_density,
                proposal,
                accepted,
                sojourn: None,
            });
        }
    }
    Ok((PointPattern::from_trusted(state.points), trace))
}

/// Independent MH chains in parallel, chain `i` seeded with [`replicate_seed`].
pub fn run_mh_replicates(spec: &ModelSpec, cfg: &MhConfig, replicates: usize) -> Result<Vec<PointPattern>> {
    (0..replicates)
        .into_par_iter()
        .map(|i| {
            let cfg = MhConfig { seed: replicate_seed(cfg.seed, i), ..cfg.clone() };
            run_mh(spec, &cfg).map(|r| r.0)
        })
        .collect()
}

/// Constant upper bound `w` on the birth rate `lambda(u; x)`.
///
/// Attractive scales (`eta_j >= 0`) contribute a factor at most 1. An
/// inhibitory scale contributes at most `exp(-eta_j * V_j)`, where `V_j` is the
/// larger of the analytic cylinder volume and the volume the grid can count,
/// so the bound holds for the discretised statistics as well.
pub fn birth_envelope(spec: &ModelSpec) -> Result<f64> {
    let bound = spec.intensity_bound();
    if !bound.is_finite() {
        return Err(Error::UnboundedIntensity);
    }
    if bound <= 0.0 {
        return Ok(0.0);
    }
    let ladder = spec.ladder();
    let mut log_w = bound.ln();
    for (j, &eta) in spec.params().eta().iter().enumerate() {
        if eta < 0.0 {
            let (r, h) = ladder.scale(j);
            let v = (2.0 * std::f64::consts::PI * r * r * h).max(interior_cylinder_volume(r, h, spec.resolution()));
            log_w -= eta * v;
        }
    }
    let w = log_w.exp();
    if !w.is_finite() {
        return Err(Error::UnboundedIntensity);
    }
    Ok(w)
}

/// Continuous-time birth-and-death jump chain with unit death rate per point.
///
/// Births are proposed uniformly at total rate `G = w |W|` and thinned with
/// probability `lambda(u; x) / w`. The returned state is the one current when
/// a stopping rule fires.
pub fn run_bd(spec: &ModelSpec, cfg: &BdConfig) -> Result<(PointPattern, ChainTrace)> {
    cfg.validate()?;
    let w = birth_envelope(spec)?;
    let g = w * spec.window().volume();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = State::new(spec, &cfg.initial, NeighborSearch::Indexed)?;
    let tracing = cfg.trace_every > 0;
    let mut trace = ChainTrace::default();
    let mut log_density = if tracing { log_unnormalized_density(&cfg.initial, spec) } else { 0.0 };
    if tracing {
        trace.records.push(TraceRecord {
            iteration: 0,
            n: state.points.len(),
            log_density,
            proposal: Move::Start,
            accepted: false,
            sojourn: None,
        });
    }

    let mut clock = 0.0;
    let mut jumps = 0usize;
    let mut it = 0u64;
    loop {
        if cfg.max_events.is_some_and(|m| jumps >= m) {
            break;
        }
        let d = state.points.len() as f64;
        let total = d + g;
        if total <= 0.0 {
            break;
        }
        let sojourn = Exp::new(total).expect("positive rate").sample(&mut rng);
        if cfg.time_budget.is_some_and(|b| clock + sojourn > b) {
            break;
        }
        clock += sojourn;
        it += 1;
        let (proposal, accepted) = if rng.random::<f64>() * total < d {
            let i = rng.random_range(0..state.points.len());
            if tracing {
                log_density -= state.log_papangelou(&state.points[i], spec);
            }
            state.remove(i);
            trace.accepted_deaths += 1;
            (Move::Death, true)
        } else {
            let u = spec.window().sample_uniform(&mut rng)?;
            let lp = state.log_papangelou(&u, spec);
            let ok = rng.random::<f64>() * w < lp.exp() && !state.contains(&u);
            if ok {
                state.insert(u);
                log_density += lp;
                trace.accepted_births += 1;
            }
            (Move::Birth, ok)
        };
        if accepted {
            jumps += 1;
        }
        if tracing && it.is_multiple_of(cfg.trace_every as u64) {
            trace.records.push(TraceRecord {
                iteration: it,
                n: state.points.len(),
                log_density,
                proposal,
                accepted,
                sojourn: Some(sojourn),
            });
        }
    }
    trace.elapsed_time = Some(clock);
    Ok((PointPattern::from_trusted(state.points), trace))
}
