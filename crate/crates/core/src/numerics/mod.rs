//! Dense tensors with reverse-mode automatic differentiation.
//!
//! The engine supports exactly what the forecasting network needs: batched
//! matmul, suffix-broadcast elementwise ops, axis permutations, concat/slice,
//! softmax, layer norm and table lookups. Everything is generic over
//! [`Scalar`], so gradient checks run in `f64` while training may use `f32`.

mod gradcheck;
mod graph;
mod params;
mod scalar;
mod tensor;

pub use gradcheck::{grad_check, relative_error, GradReport, ParamCheck, FD_STEP};
pub use graph::{Activation, GradFault, Graph, Var};
pub use params::{BoundParams, ParamStore};
pub use scalar::Scalar;
pub use tensor::{Shape, Tensor};

#[cfg(test)]
mod tests;
