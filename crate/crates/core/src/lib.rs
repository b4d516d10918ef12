//! CPU inference engine, graph optimizer and static cost analyzer for the
//! ENet real-time semantic segmentation network.

// `!(x >= 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analyzer;
pub mod cli;
pub mod enwt;
pub mod error;
pub mod graph;
pub mod kernels;
pub mod passes;
pub mod pnm;
pub mod runtime;
pub mod tensor;
pub mod weights;

pub use error::{Error, Result};
pub use graph::{build_enet, init_weights, Graph, NodeId, NodeKind};
pub use tensor::{DType, Shape, Tensor};
pub use weights::WeightStore;
