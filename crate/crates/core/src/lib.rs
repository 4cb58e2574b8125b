//! Coefficient-level conformance monitoring for control systems.
//!
//! Traces are mapped to sequences of mined physics coefficients, and a
//! split-conformal calibration on error-free data decides when a window's
//! coefficients have drifted too far from the reference.

pub mod baseline;
pub mod cases;
pub mod conformal;
pub mod dihrnn;
pub mod error;
pub mod io;
pub mod ode;
pub mod report;
pub mod stl;

pub use dihrnn::{
    continuous_mine, forward_pass, induce_structure, mine_coefficients, step_bound, CoefficientSequence,
    CoefficientVector, MiningConfig, ModelTemplate, RnnStructure,
};
pub use error::{Error, Result};
pub use ode::{
    simulate_euler, simulate_rk4, trajectory_distance, InputSignal, LinearOdeSystem, Segment, Trace, Trajectory,
};
pub use stl::{deviation_residue, robustness, StlFormula};
