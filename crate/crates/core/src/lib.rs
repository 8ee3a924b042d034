//! Multi-scale area-interaction point processes on space-time windows.
//!
//! The crate covers the geometry and volume engine, the model density and its
//! conditional intensity, first-order intensity surfaces, simulation by
//! Metropolis-Hastings and by a birth-and-death jump chain, maximum
//! pseudolikelihood fitting with scale profiling, and exploratory summaries.

pub mod error;
pub mod geometry;
pub mod infer;
pub mod intensity;
pub mod model;
pub mod sim;
pub mod summaries;

pub use error::{Error, Result};
pub use geometry::{sup_distance, Cylinder, GridResolution, STPoint, Scale, ScaleLadder, SpatialWindow, Window};
pub use infer::{FitResult, QuadratureCells, QuadratureScheme};
pub use intensity::{HarmonicCurve, IntensitySurface, KdeSurface};
pub use model::{InteractionParams, ModelSpec, PointPattern, SuffStats};
pub use sim::{BdConfig, ChainTrace, MhConfig};
