//! Minimal reverse-mode differentiation for the reconstruction networks:
//! `(N, C, H, W)` tensors, 2-D convolutions, recurrence plumbing, and a
//! differentiable k-space data-consistency node.

mod conv;
mod graph;
mod optim;
mod params;
mod tensor;

pub(crate) use graph::dc_forward;
pub use graph::{DcTarget, Gradients, Graph, Var};
pub use optim::{clip_grad_norm, Adam};
pub use params::{init_conv, BoundParams, NamedParam, ParamId, ParamSet};
pub use tensor::Tensor;
