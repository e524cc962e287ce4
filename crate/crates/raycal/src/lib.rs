//! Differentiable radio-frequency ray tracing and gradient-based scene
//! calibration: traces propagation paths through a triangle-mesh scene,
//! computes channel frequency/impulse responses as a differentiable
//! function of material, antenna and scattering parameters, and recovers
//! those parameters from channel data by gradient descent.

pub mod ad;
pub mod calib;
pub mod field;
pub mod geom;
pub mod params;
pub mod plot;
pub mod quad;
pub mod synth;
pub mod tracer;
