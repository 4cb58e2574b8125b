//! Recurrent estimator whose topology mirrors the sparsity of an ODE template,
//! trained by backpropagation through the unrolled Euler recurrence.

mod grad;
mod mine;
mod optim;
mod structure;
mod surrogate;

pub use grad::loss_and_gradient;
pub use mine::{
    continuous_mine, forward_pass, mine_coefficients, mine_segments, mine_windows, step_bound, CoefficientSequence,
    FitReport, ForwardPass, InitPolicy, MinedCoefficients, MiningConfig, WindowCoefficients,
};
pub use optim::OptimizerKind;
pub use structure::{
    induce_structure, CoefficientVector, Edge, InputEdge, ModelTemplate, ParamSlot, RnnNode, RnnStructure,
};
pub use surrogate::{
    clopper_pearson_lower, validate_surrogate, InputBox, Plant, SurrogateCheck, SurrogateEstimate, SurrogateVerdict,
};
