//! ConViViT: a 3D-CNN spatial stem feeding a factorized spatiotemporal
//! attention transformer, built on a small self-contained autodiff engine.

pub mod config;
pub mod data;
pub mod error;
pub mod graph;
mod io;
mod kernels;
pub mod model;
pub mod nn;
pub mod params;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use graph::{BatchStats, Conv3dSpec, Gradients, Graph, NormMode, Var};
pub use model::{ConViViT, ModelConfig, TokenGrid, Variant};
pub use params::{Ctx, ParamId, ParamStore};
pub use config::RunConfig;
pub use tensor::Tensor;
