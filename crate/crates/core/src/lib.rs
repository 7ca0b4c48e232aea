//! Estimation of load vertical location during manual lifting from a wrist
//! barometer/pitch stream and insole plantar-pressure streams.
//!
//! The pipeline detects calibration anchors at instants where the wrist
//! height is known from anthropometry (arms hanging while standing, or mid
//! foot-flat while walking), converts barometric pressure to height through
//! an affine model re-anchored at every such instant, and retrospectively
//! removes sensor drift between anchors. A deterministic simulator
//! generates sessions with ground truth for verification.

pub mod eval;
pub mod gait;
pub mod ingest;
pub mod kvlu;
pub mod lvl;
pub mod model;
pub mod pipeline;
pub mod sim;
mod stats;
