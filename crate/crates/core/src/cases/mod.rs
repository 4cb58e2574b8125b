//! Case studies: plants, controllers, fault injectors and the experiment
//! drivers that produce the detection tables.

pub mod control;
pub mod experiments;
pub mod fault;
pub mod plants;
pub mod scenario;

pub use control::{dlqr, Pid, PidGains, SetpointStep};
pub use fault::{inject_fault, wrap_signed, FaultSpec};
pub use plants::{BmmParams, BrakeParams, LqrWeights, PitchParams};
pub use scenario::{run_scenario, Bolus, ControllerConfig, Integrator, Meal, PlantConfig, Scenario, ScenarioRun};
