use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Result;
use msarea_core::infer::{build_quadrature, fit_mple, profile_scales, ProfileFailure};
use msarea_core::intensity::{fit_harmonic, fit_kde, scott_bandwidth, synthetic_population, HarmonicCurve};
use msarea_core::sim::{run_bd, run_mh, BdConfig, ChainTrace, MhConfig};
use msarea_core::summaries::{acf, binned_counts, jitter, pcf, range_report, TemporalJitter};
use msarea_core::{
    FitResult, GridResolution, IntensitySurface, ModelSpec, PointPattern, QuadratureCells, QuadratureScheme, STPoint,
    ScaleLadder, SpatialWindow, Window,
};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::config::{RunConfig, SamplerConfig, Units};
use crate::io::{self, Rescale};
use crate::{FitArgs, IntensityArgs, Invalid, SimulateArgs, SuffstatsArgs, SummaryArgs};

pub const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (", env!("MSAREA_GIT_DESCRIBE"), ")");

/// Options shared by every subcommand.
#[derive(Debug, Clone)]
pub struct Context {
    pub seed: Option<u64>,
    pub rescale: Option<Rescale>,
    pub timing: bool,
    pub threads: Option<usize>,
}

#[derive(Debug, Serialize)]
struct Metadata {
    command: &'static str,
    version: &'static str,
    seed: Option<u64>,
    resolution: Option<GridResolution>,
    threads: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    elapsed_seconds: Option<f64>,
    #[serde(flatten)]
    details: Map<String, Value>,
}

struct Run<'a> {
    ctx: &'a Context,
    command: &'static str,
    start: Instant,
}

impl<'a> Run<'a> {
    fn new(ctx: &'a Context, command: &'static str) -> Self {
        Run { ctx, command, start: Instant::now() }
    }

    fn finish(
        &self,
        path: Option<&Path>,
        seed: Option<u64>,
        resolution: Option<GridResolution>,
        details: Value,
    ) -> Result<()> {
        let Some(path) = path else { return Ok(()) };
        let meta = Metadata {
            command: self.command,
            version: VERSION,
            seed,
            resolution,
            threads: self.ctx.threads,
            elapsed_seconds: self.ctx.timing.then(|| self.start.elapsed().as_secs_f64()),
            details: match details {
                Value::Object(m) => m,
                _ => Map::new(),
            },
        };
        io::write_json(Some(path), &meta)
    }
}

fn pick<'a>(flag: &'a Option<PathBuf>, config: &'a Option<PathBuf>) -> Option<&'a Path> {
    flag.as_deref().or(config.as_deref())
}

fn initial_state(path: &Option<PathBuf>, window: &Window, rescale: Option<Rescale>) -> Result<PointPattern> {
    match path {
        Some(p) => io::read_pattern(p, window, rescale),
        None => Ok(PointPattern::empty()),
    }
}

fn write_trace(path: &Path, trace: &ChainTrace) -> Result<()> {
    let header = ["iteration", "n", "logdens", "accepted", "proposal", "sojourn"].map(String::from);
    io::write_table(
        Some(path),
        &header,
        trace.records.iter().map(|r| {
            vec![
                r.iteration.to_string(),
                r.n.to_string(),
                r.log_density.to_string(),
                u8::from(r.accepted).to_string(),
                serde_json::to_value(r.proposal).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default(),
                r.sojourn.map(|s| s.to_string()).unwrap_or_default(),
            ]
        }),
    )
}

pub fn simulate(ctx: &Context, a: &SimulateArgs) -> Result<()> {
    let run = Run::new(ctx, "simulate");
    let cfg = RunConfig::load(&a.config)?;
    let seed = ctx.seed.unwrap_or(cfg.seed);
    let spec = ModelSpec::new(cfg.interaction()?, cfg.require_intensity()?, cfg.window.clone(), cfg.resolution)?;
    let sampler = cfg.sampler.clone().unwrap_or_default();
    let (pattern, trace, name) = match &sampler {
        SamplerConfig::Mh(m) => {
            let mh = MhConfig {
                iterations: m.iterations,
                seed,
                initial: initial_state(&m.initial, &cfg.window, ctx.rescale)?,
                trace_every: m.trace_every,
                neighbor_search: m.neighbor_search,
            };
            let (x, t) = run_mh(&spec, &mh)?;
            (x, t, "metropolis_hastings")
        }
        SamplerConfig::Bd(b) => {
            let bd = BdConfig {
                max_events: b.max_events,
                time_budget: b.time_budget,
                seed,
                initial: initial_state(&b.initial, &cfg.window, ctx.rescale)?,
                trace_every: b.trace_every,
            };
            let (x, t) = run_bd(&spec, &bd)?;
            (x, t, "birth_death")
        }
    };
    io::write_points(pick(&a.out, &cfg.outputs.pattern), pattern.points())?;
    if let Some(p) = pick(&a.trace, &cfg.outputs.trace) {
        write_trace(p, &trace)?;
    }
    let mut details = json!({
        "config": a.config,
        "units": cfg.units,
        "sampler": name,
        "sampler_settings": sampler,
        "n_points": pattern.len(),
        "accepted_births": trace.accepted_births,
        "accepted_deaths": trace.accepted_deaths,
        "chain_time": trace.elapsed_time,
    });
    if spec.params().is_poisson() {
        let expected = spec.intensity().integrate(spec.window());
        let z = if expected > 0.0 { (pattern.len() as f64 - expected) / expected.sqrt() } else { 0.0 };
        details["poisson_check"] = json!({
            "expected_count": expected,
            "observed_count": pattern.len(),
            "z_score": z,
            "plausible": z.abs() < 4.0,
        });
    }
    run.finish(pick(&a.meta, &cfg.outputs.metadata), Some(seed), Some(cfg.resolution), details)
}

#[derive(Debug, Serialize)]
struct QuadratureInfo {
    cells: QuadratureCells,
    n_data: usize,
    n_dummy: usize,
    n_rows: usize,
    total_weight: f64,
}

impl QuadratureInfo {
    fn of(q: &QuadratureScheme) -> Self {
        QuadratureInfo {
            cells: q.cells,
            n_data: q.n_data,
            n_dummy: q.n_dummy,
            n_rows: q.len(),
            total_weight: q.total_weight(),
        }
    }
}

#[derive(Debug, Serialize)]
struct FitOutput {
    #[serde(flatten)]
    fit: FitResult,
    quadrature: QuadratureInfo,
    resolution: GridResolution,
    seed: u64,
    units: Units,
}

#[derive(Debug, Serialize)]
struct RankedFit {
    ladder: ScaleLadder,
    #[serde(rename = "logPL")]
    log_pl: f64,
    fit: FitResult,
}

#[derive(Debug, Serialize)]
struct ProfileOutput {
    best: Option<FitOutput>,
    ranked: Vec<RankedFit>,
    failures: Vec<ProfileFailure>,
}

fn write_scheme(path: Option<&Path>, q: &QuadratureScheme) -> Result<()> {
    let mut header: Vec<String> = ["x", "y", "t", "z", "w"].map(String::from).to_vec();
    header.extend((1..=q.m()).map(|j| format!("S{j}")));
    io::write_table(
        path,
        &header,
        (0..q.len()).map(|i| {
            let p = q.points[i];
            let mut row = vec![
                p.x.to_string(),
                p.y.to_string(),
                p.t.to_string(),
                u8::from(q.z[i]).to_string(),
                q.w[i].to_string(),
            ];
            row.extend(q.s_row(i).iter().map(|v| v.to_string()));
            row
        }),
    )
}

pub fn fit(ctx: &Context, a: &FitArgs) -> Result<()> {
    let run = Run::new(ctx, "fit");
    let cfg = RunConfig::load(&a.config)?;
    let seed = ctx.seed.unwrap_or(cfg.seed);
    let pattern = io::read_pattern(&a.pattern, &cfg.window, ctx.rescale)?;
    if pattern.is_empty() {
        return Err(Invalid(format!("{}: no data rows", a.pattern.display())).into());
    }
    let cells = cfg.require_quadrature()?;
    let intensity = match cfg.intensity_surface()? {
        Some(s) => s,
        None => IntensitySurface::constant(1.0)?,
    };
    let out = pick(&a.out, &cfg.outputs.fit);
    let fit_one = |ladder: &ScaleLadder| -> Result<(FitOutput, QuadratureScheme)> {
        let q = build_quadrature(&pattern, &cfg.window, cells, ladder, cfg.resolution)?;
        let fit = fit_mple(&q, &q.offset_from(&intensity))?;
        let output = FitOutput {
            fit,
            quadrature: QuadratureInfo::of(&q),
            resolution: cfg.resolution,
            seed,
            units: cfg.units.clone(),
        };
        Ok((output, q))
    };

    let details;
    if a.profile {
        if cfg.candidates.is_empty() {
            return Err(Invalid("--profile needs a non-empty `candidates` list in the config".into()).into());
        }
        let prof = profile_scales(&pattern, &cfg.window, cells, &cfg.candidates, &intensity, cfg.resolution)?;
        let best = match prof.ranked.first() {
            Some(e) => {
                let (o, q) = fit_one(&e.ladder)?;
                if let Some(p) = pick(&a.quadrature_csv, &cfg.outputs.quadrature) {
                    write_scheme(Some(p), &q)?;
                }
                Some(o)
            }
            None => None,
        };
        details = json!({
            "config": a.config,
            "pattern": a.pattern,
            "n_candidates": cfg.candidates.len(),
            "n_failed": prof.failures.len(),
            "n_points": pattern.len(),
        });
        let output = ProfileOutput {
            best,
            ranked: prof
                .ranked
                .into_iter()
                .map(|e| RankedFit { ladder: e.ladder, log_pl: e.log_pl, fit: e.fit })
                .collect(),
            failures: prof.failures,
        };
        io::write_json(out, &output)?;
    } else {
        let (output, q) = fit_one(cfg.require_ladder()?)?;
        if let Some(p) = pick(&a.quadrature_csv, &cfg.outputs.quadrature) {
            write_scheme(Some(p), &q)?;
        }
        details = json!({
            "config": a.config,
            "pattern": a.pattern,
            "n_points": pattern.len(),
            "quadrature": output.quadrature,
            "converged": output.fit.converged,
            "iterations": output.fit.iterations,
        });
        io::write_json(out, &output)?;
    }
    run.finish(pick(&a.meta, &cfg.outputs.metadata), Some(seed), Some(cfg.resolution), details)
}

pub fn suffstats(ctx: &Context, a: &SuffstatsArgs) -> Result<()> {
    let run = Run::new(ctx, "suffstats");
    let cfg = RunConfig::load(&a.config)?;
    let pattern = io::read_pattern(&a.pattern, &cfg.window, ctx.rescale)?;
    let q = build_quadrature(&pattern, &cfg.window, cfg.require_quadrature()?, cfg.require_ladder()?, cfg.resolution)?;
    write_scheme(pick(&a.out, &cfg.outputs.suffstats), &q)?;
    let details = json!({ "config": a.config, "pattern": a.pattern, "quadrature": QuadratureInfo::of(&q) });
    run.finish(pick(&a.meta, &cfg.outputs.metadata), None, Some(cfg.resolution), details)
}

pub fn summary(ctx: &Context, a: &SummaryArgs) -> Result<()> {
    let run = Run::new(ctx, "summary");
    let cfg = RunConfig::load(&a.config)?;
    let seed = ctx.seed.unwrap_or(cfg.seed);
    let w = &cfg.window;
    let rows = io::read_points(&a.pattern, ctx.rescale)?;
    let outside: Vec<String> = rows.iter().filter(|(_, p)| !w.contains(p)).map(|(l, _)| l.to_string()).collect();
    if !outside.is_empty() {
        return Err(Invalid(format!(
            "{}: points outside the window at lines {}",
            a.pattern.display(),
            outside.join(", ")
        ))
        .into());
    }
    let raw: Vec<STPoint> = rows.into_iter().map(|r| r.1).collect();
    let jittered = a.jitter_radius > 0.0 || a.jitter_weeks;
    let points = if jittered {
        let mode = if a.jitter_weeks { TemporalJitter::UniformWithinWeek } else { TemporalJitter::None };
        let x = jitter(&raw, w, a.jitter_radius, mode, seed)?;
        if let Some(p) = &a.jittered_out {
            io::write_points(Some(p), x.points())?;
        }
        x.into_points()
    } else {
        raw
    };

    let [x0, x1, y0, y1] = w.spatial().bounds();
    let r_max = a.r_max.unwrap_or(0.25 * (x1 - x0).min(y1 - y0));
    if a.n_r == 0 || !(r_max.is_finite() && r_max > 0.0) {
        return Err(Invalid("the pcf grid needs n_r >= 1 and a positive r_max".into()).into());
    }
    let r_grid: Vec<f64> = (1..=a.n_r).map(|k| r_max * k as f64 / a.n_r as f64).collect();
    let xy: Vec<[f64; 2]> = points.iter().map(|p| [p.x, p.y]).collect();
    let g = pcf(&xy, w.spatial(), a.bandwidth, &r_grid)?;

    let times: Vec<f64> = points.iter().map(|p| p.t).collect();
    let counts = binned_counts(&times, w.tmin(), w.tmax(), a.bin_width)?;
    let max_lag = a.max_lag.unwrap_or(30.min(counts.len().saturating_sub(1)));
    let c = acf(&counts, max_lag)?;
    let report = range_report(&g, &c, a.bin_width);

    if let Some(p) = pick(&a.pcf, &cfg.outputs.pcf) {
        let header = ["r", "g"].map(String::from);
        io::write_table(
            Some(p),
            &header,
            g.distances.iter().zip(&g.g).map(|(r, v)| vec![r.to_string(), v.to_string()]),
        )?;
    }
    if let Some(p) = pick(&a.acf, &cfg.outputs.acf) {
        let header = ["lag", "acf", "band"].map(String::from);
        io::write_table(
            Some(p),
            &header,
            c.lags.iter().zip(&c.acf).map(|(k, v)| vec![k.to_string(), v.to_string(), c.band.to_string()]),
        )?;
    }
    let full = json!({
        "report": report,
        "n_points": points.len(),
        "pcf_bandwidth": g.bandwidth,
        "pcf_correction": g.correction,
        "bin_width": a.bin_width,
        "n_bins": counts.len(),
        "acf_band": c.band,
        "units": cfg.units,
        "notes": [
            "ranges are advisory; candidate ladders are chosen by hand",
            "the suggested half-height halves the correlated lag span because cylinders of half-height t interact up to 2t apart"
        ],
    });
    io::write_json(pick(&a.report, &cfg.outputs.report), &full)?;
    let details = json!({ "config": a.config, "pattern": a.pattern, "jittered": jittered, "n_points": points.len() });
    run.finish(pick(&a.meta, &cfg.outputs.metadata), jittered.then_some(seed), None, details)
}

/// One census section of the synthetic population.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Section {
    window: SpatialWindow,
    count: usize,
}

pub fn intensity(ctx: &Context, a: &IntensityArgs) -> Result<()> {
    let run = Run::new(ctx, "intensity");
    let cfg = RunConfig::load(&a.config)?;
    let seed = ctx.seed.unwrap_or(cfg.seed);
    let w = &cfg.window;
    let sample = match (&a.population, &a.sections) {
        (Some(p), None) => io::read_xy(p, ctx.rescale)?,
        (None, Some(s)) => {
            let sections: Vec<Section> = io::read_json(s)?;
            let pairs: Vec<(SpatialWindow, usize)> = sections.into_iter().map(|s| (s.window, s.count)).collect();
            synthetic_population(&pairs, seed)?
        }
        _ => return Err(Invalid("give one of --population or --sections".into()).into()),
    };
    let (bandwidth, rule) = match a.bandwidth {
        Some(b) => (b, "user"),
        None => (scott_bandwidth(&sample)?, "scott"),
    };
    let kde = fit_kde(&sample, bandwidth, w.spatial(), !a.no_edge_correction)?;

    let series = match (&a.counts, &a.pattern) {
        (Some(p), _) => Some(io::read_counts(p)?),
        (None, Some(p)) => {
            let times: Vec<f64> = io::read_points(p, ctx.rescale)?.into_iter().map(|r| r.1.t).collect();
            let counts = binned_counts(&times, w.tmin(), w.tmax(), 1.0)?;
            Some(counts.into_iter().enumerate().map(|(k, c)| (w.tmin() + k as f64, c)).collect())
        }
        (None, None) => None,
    };
    let (curve, harmonic) = match &series {
        Some(s) => {
            let f = fit_harmonic(s)?;
            let summary = json!({ "r_squared": f.r_squared, "residual_sd": f.residual_sd, "n": f.n });
            (f.curve, summary)
        }
        // a flat curve at the rescale level leaves the spatial estimate unscaled
        None => (HarmonicCurve::flat(a.z_rescale), Value::Null),
    };
    let surface = IntensitySurface::product(kde, curve, a.z_rescale)?;
    io::write_json(pick(&a.out, &cfg.outputs.surface), &surface)?;
    let details = json!({
        "config": a.config,
        "sample_size": sample.len(),
        "kernel": "gaussian",
        "bandwidth": bandwidth,
        "bandwidth_rule": rule,
        "edge_correction": !a.no_edge_correction,
        "z_rescale": a.z_rescale,
        "harmonic_fit": harmonic,
        "integral": surface.integrate(w),
        "notes": ["kernel, bandwidth rule and edge correction are defaults of this tool, not estimates"],
    });
    run.finish(pick(&a.meta, &cfg.outputs.metadata), Some(seed), None, details)
}
