//! Dense-tensor arithmetic with reverse-mode differentiation and a
//! finite-difference gradient oracle. Every model layer is built from
//! these operations.

pub mod gradcheck;
pub mod graph;
pub mod params;
pub mod tensor;

pub use gradcheck::{gradcheck, GradcheckOptions, GradcheckReport};
pub use graph::{Graph, Pointwise, ValueId};
pub use params::{ParamId, ParameterSet};
pub use tensor::{split_channels, Tensor};
