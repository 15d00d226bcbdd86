//! Dense tensors, a reverse-mode tape, Adam and seeded initialization.

mod adam;
pub mod gradcheck;
mod graph;
mod init;
mod params;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use graph::{Gradients, Graph, Var};
pub use init::{glorot_scale, init_glorot, init_uniform, seeded_rng, Rng64};
pub use params::{ParamId, Params};
pub use tensor::{Real, Tensor};
