//! Shared fixtures for the criterion benchmarks.

use msarea_core::{GridResolution, IntensitySurface, InteractionParams, ModelSpec, ScaleLadder, Window};

/// Two-scale model on the unit cube with constant intensity.
pub fn two_scale_model(lambda: f64, theta: [f64; 2]) -> ModelSpec {
    let ladder = ScaleLadder::from_pairs(&[(0.03, 0.03), (0.05, 0.05)]).expect("valid ladder");
    ModelSpec::new(
        InteractionParams::from_theta_scaled(&theta, ladder).expect("valid parameters"),
        IntensitySurface::constant(lambda).expect("valid intensity"),
        Window::unit_cube(),
        GridResolution::default(),
    )
    .expect("valid model")
}
