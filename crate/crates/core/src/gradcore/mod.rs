//! Minimal reverse-mode automatic differentiation for the diarization network.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod ops;
pub mod params;
pub mod tensor;

pub use adam::{adam_step, adam_step_masked, AdamState};
pub use checkpoint::Container;
pub use gradcheck::{check_params, relative_error, GradCheckReport};
pub use graph::{bce_value, Graph, Var, PROB_EPS};
pub use params::{BoundParams, ParamSet};
pub use tensor::{matmul_values, Tensor};
