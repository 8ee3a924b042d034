use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use msarea_core::sim::NeighborSearch;
use msarea_core::{GridResolution, IntensitySurface, InteractionParams, QuadratureCells, ScaleLadder, Window};
use serde::{Deserialize, Serialize};

use crate::Invalid;

/// The single JSON document driving a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub units: Units,
    pub window: Window,
    #[serde(default)]
    pub intensity: Option<IntensitySurface>,
    /// JSON file holding an intensity surface, as written by `msarea intensity`.
    #[serde(default)]
    pub intensity_file: Option<PathBuf>,
    #[serde(default)]
    pub ladder: Option<ScaleLadder>,
    #[serde(default)]
    pub eta: Option<Vec<f64>>,
    #[serde(default)]
    pub theta_scaled: Option<Vec<f64>>,
    #[serde(default)]
    pub sampler: Option<SamplerConfig>,
    #[serde(default)]
    pub quadrature: Option<QuadratureCells>,
    #[serde(default)]
    pub resolution: GridResolution,
    #[serde(default)]
    pub seed: u64,
    /// Ladders compared by `fit --profile`.
    #[serde(default)]
    pub candidates: Vec<ScaleLadder>,
    #[serde(default)]
    pub outputs: Outputs,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Units {
    pub length: String,
    pub time: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SamplerConfig {
    Mh(MhSettings),
    Bd(BdSettings),
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig::Mh(MhSettings::default())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MhSettings {
    pub iterations: usize,
    pub trace_every: usize,
    pub neighbor_search: NeighborSearch,
    /// Point-pattern CSV used as the starting state.
    pub initial: Option<PathBuf>,
}

impl Default for MhSettings {
    fn default() -> Self {
        MhSettings { iterations: 20_000, trace_every: 0, neighbor_search: NeighborSearch::Indexed, initial: None }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BdSettings {
    pub max_events: Option<usize>,
    pub time_budget: Option<f64>,
    pub trace_every: usize,
    pub initial: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Outputs {
    pub pattern: Option<PathBuf>,
    pub trace: Option<PathBuf>,
    pub metadata: Option<PathBuf>,
    pub fit: Option<PathBuf>,
    pub suffstats: Option<PathBuf>,
    pub quadrature: Option<PathBuf>,
    pub pcf: Option<PathBuf>,
    pub acf: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub surface: Option<PathBuf>,
}

impl RunConfig {
    /// Parses and validates a config file; relative paths inside it are taken
    /// relative to the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| Invalid(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.rebase(base);
        cfg.validate()?;
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(q) = p {
                if q.is_relative() {
                    *q = base.join(&*q);
                }
            }
        };
        fix(&mut self.intensity_file);
        match &mut self.sampler {
            Some(SamplerConfig::Mh(m)) => fix(&mut m.initial),
            Some(SamplerConfig::Bd(b)) => fix(&mut b.initial),
            None => {}
        }
        let o = &mut self.outputs;
        for p in [
            &mut o.pattern,
            &mut o.trace,
            &mut o.metadata,
            &mut o.fit,
            &mut o.suffstats,
            &mut o.quadrature,
            &mut o.pcf,
            &mut o.acf,
            &mut o.report,
            &mut o.surface,
        ] {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.units.length.trim().is_empty() || self.units.time.trim().is_empty() {
            return Err(Invalid("units.length and units.time must be named".into()).into());
        }
        if self.intensity.is_some() && self.intensity_file.is_some() {
            return Err(Invalid("give either `intensity` or `intensity_file`, not both".into()).into());
        }
        if self.eta.is_some() && self.theta_scaled.is_some() {
            return Err(Invalid("give either `eta` or `theta_scaled`, not both".into()).into());
        }
        if let Some(i) = &self.intensity {
            i.validate()?;
        }
        Ok(())
    }

    /// The configured surface; `None` if neither form is present.
    pub fn intensity_surface(&self) -> Result<Option<IntensitySurface>> {
        if let Some(i) = &self.intensity {
            return Ok(Some(i.clone()));
        }
        let Some(path) = &self.intensity_file else {
            return Ok(None);
        };
        let text = fs::read_to_string(path).with_context(|| format!("reading intensity {}", path.display()))?;
        let s: IntensitySurface =
            serde_json::from_str(&text).map_err(|e| Invalid(format!("intensity {}: {e}", path.display())))?;
        s.validate()?;
        Ok(Some(s))
    }

    pub fn require_intensity(&self) -> Result<IntensitySurface> {
        self.intensity_surface()?.ok_or_else(|| Invalid("`intensity` or `intensity_file` is required".into()).into())
    }

    pub fn require_ladder(&self) -> Result<&ScaleLadder> {
        self.ladder.as_ref().ok_or_else(|| Invalid("`ladder` is required".into()).into())
    }

    pub fn require_quadrature(&self) -> Result<QuadratureCells> {
        let q = self.quadrature.ok_or_else(|| Invalid("`quadrature` cells are required".into()))?;
        Ok(QuadratureCells::new(q.nx, q.ny, q.nt)?)
    }

    /// Interaction parameters for simulation: exactly one of `eta` and `theta_scaled`.
    pub fn interaction(&self) -> Result<InteractionParams> {
        let ladder = self.require_ladder()?.clone();
        match (&self.eta, &self.theta_scaled) {
            (Some(e), None) => Ok(InteractionParams::new(e.clone(), ladder)?),
            (None, Some(t)) => Ok(InteractionParams::from_theta_scaled(t, ladder)?),
            _ => Err(Invalid("exactly one of `eta` and `theta_scaled` is required".into()).into()),
        }
    }
}
