//! Minimal reverse-mode automatic differentiation.
//!
//! A [`Graph`] is a tape: every op evaluates eagerly when it is recorded,
//! caches its value, and remembers its parents. [`Graph::backward`] walks
//! the tape in reverse and accumulates `d root / d param` into the
//! [`ParamStore`]. Graphs are cheap and are rebuilt for every forward pass.

mod check;
mod graph;
mod kernels;
mod params;
mod tensor;

pub use check::grad_check;
pub use graph::{Graph, NodeId};
pub use params::{ParamId, ParamStore, Parameter};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
