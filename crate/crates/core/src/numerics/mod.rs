//! Dense f64 tensors, a reverse-mode tape, Adam, and checkpoint IO.

mod adam;
pub mod gradcheck;
mod gemm;
mod graph;
mod params;
mod tensor;

pub use adam::AdamState;
pub use gemm::gemm;
pub use graph::{sigmoid, Gradients, Graph, Var};
pub use params::ParamSet;
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
