//! Minimal f64 neural-network engine: tensors, a reverse-mode tape, the
//! convolution/pooling kernels behind it, layer containers and Adam.
//!
//! Deliberately small: only the operations the detection networks need,
//! every reduction in a fixed order so seeded runs are bit-reproducible,
//! and everything in 64-bit so gradients can be checked against central
//! finite differences at tight tolerances.

pub mod adam;
pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod layers;
pub mod tensor;

pub use adam::Adam;
pub use graph::{BnMode, Graph, Var};
pub use kernels::ConvCfg;
pub use tensor::Tensor;
