//! The `msarea` command-line tool.
//!
//! Exit codes: 0 on success, 2 when the input or configuration is invalid,
//! 1 when a computation fails.

pub mod commands;
pub mod config;
pub mod io;

use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

/// An input or configuration problem, as opposed to a failed computation.
#[derive(Debug)]
pub struct Invalid(pub String);

impl fmt::Display for Invalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

/// Process exit code for an error.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<std::io::Error>() {
            if matches!(e.kind(), std::io::ErrorKind::NotFound | std::io::ErrorKind::PermissionDenied) {
                return 2;
            }
        }
        if cause.is::<Invalid>() || cause.is::<serde_json::Error>() || cause.is::<csv::Error>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<msarea_core::Error>() {
            return if e.is_validation() { 2 } else { 1 };
        }
    }
    1
}

#[derive(Debug, Parser)]
#[command(name = "msarea", version = commands::VERSION, about = "Multi-scale area-interaction point processes in space and time")]
pub struct Cli {
    /// Cap on worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Overrides the seed in the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Multiply input coordinates by SX, SY and ST.
    #[arg(long, global = true, num_args = 3, value_names = ["SX", "SY", "ST"], allow_negative_numbers = true)]
    pub rescale: Option<Vec<f64>>,

    /// Leave elapsed time out of the metadata so repeated runs are byte-identical.
    #[arg(long, global = true)]
    pub no_timing: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a pattern from the configured model.
    Simulate(SimulateArgs),
    /// Fit interaction parameters by maximum pseudolikelihood.
    Fit(FitArgs),
    /// Write the quadrature points and their sufficient statistics.
    Suffstats(SuffstatsArgs),
    /// Pair correlation, count autocorrelation and a range report.
    Summary(SummaryArgs),
    /// Build a product intensity surface from a population sample and weekly counts.
    Intensity(IntensityArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Pattern CSV; stdout if omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long)]
    pub meta: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub pattern: PathBuf,
    /// Fit JSON; stdout if omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Rank the config's candidate ladders instead of fitting `ladder`.
    #[arg(long)]
    pub profile: bool,
    /// Also export the quadrature scheme as CSV.
    #[arg(long)]
    pub quadrature_csv: Option<PathBuf>,
    #[arg(long)]
    pub meta: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SuffstatsArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub pattern: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub meta: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SummaryArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub pattern: PathBuf,
    #[arg(long)]
    pub pcf: Option<PathBuf>,
    #[arg(long)]
    pub acf: Option<PathBuf>,
    /// Range report JSON; stdout if omitted.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Epanechnikov half-width; Stoyan's rule if omitted.
    #[arg(long)]
    pub bandwidth: Option<f64>,
    /// Largest pcf distance; a quarter of the shorter window side if omitted.
    #[arg(long)]
    pub r_max: Option<f64>,
    #[arg(long, default_value_t = 50)]
    pub n_r: usize,
    /// Width of the time bins for the count series.
    #[arg(long, default_value_t = 1.0)]
    pub bin_width: f64,
    #[arg(long)]
    pub max_lag: Option<usize>,
    /// Displace coincident locations within this radius first.
    #[arg(long, default_value_t = 0.0)]
    pub jitter_radius: f64,
    /// Replace integer week stamps by uniform times within the week first.
    #[arg(long)]
    pub jitter_weeks: bool,
    /// Where to write the jittered pattern.
    #[arg(long)]
    pub jittered_out: Option<PathBuf>,
    #[arg(long)]
    pub meta: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct IntensityArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// `x,y` population sample for the spatial kernel estimate.
    #[arg(long, conflicts_with = "sections")]
    pub population: Option<PathBuf>,
    /// JSON list of `{"window": ..., "count": n}` census sections to populate uniformly.
    #[arg(long)]
    pub sections: Option<PathBuf>,
    /// `t,count` series for the seasonal curve.
    #[arg(long, conflicts_with = "pattern")]
    pub counts: Option<PathBuf>,
    /// Derive the count series from a pattern by binning times into unit bins.
    #[arg(long)]
    pub pattern: Option<PathBuf>,
    /// Kernel standard deviation; Scott's rule if omitted.
    #[arg(long)]
    pub bandwidth: Option<f64>,
    /// Divisor applied to the seasonal curve.
    #[arg(long, default_value_t = msarea_core::intensity::DEFAULT_RESCALE)]
    pub z_rescale: f64,
    #[arg(long)]
    pub no_edge_correction: bool,
    /// Surface JSON; stdout if omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub meta: Option<PathBuf>,
}

/// True when the error only reports that stdout was closed early, as in `msarea ... | head`.
pub fn is_broken_pipe(err: &anyhow::Error) -> bool {
    let broken = |e: &std::io::Error| e.kind() == std::io::ErrorKind::BrokenPipe;
    err.chain().any(|c| {
        c.downcast_ref::<std::io::Error>().is_some_and(broken)
            || c.downcast_ref::<csv::Error>().is_some_and(|e| matches!(e.kind(), csv::ErrorKind::Io(io) if broken(io)))
    })
}

pub fn run(cli: &Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Invalid("--threads must be at least 1".into()).into());
        }
        // a second call in the same process keeps the first pool, which is fine
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let rescale = match &cli.rescale {
        Some(v) if v.iter().all(|s| s.is_finite() && *s != 0.0) => Some(io::Rescale([v[0], v[1], v[2]])),
        Some(_) => return Err(Invalid("--rescale factors must be finite and non-zero".into()).into()),
        None => None,
    };
    let ctx = commands::Context { seed: cli.seed, rescale, timing: !cli.no_timing, threads: cli.threads };
    match &cli.command {
        Command::Simulate(a) => commands::simulate(&ctx, a),
        Command::Fit(a) => commands::fit(&ctx, a),
        Command::Suffstats(a) => commands::suffstats(&ctx, a),
        Command::Summary(a) => commands::summary(&ctx, a),
        Command::Intensity(a) => commands::intensity(&ctx, a),
    }
}
