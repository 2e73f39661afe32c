//! Statistical texture operators with reverse-mode gradients, plus a small
//! segmentation harness built on them.

pub mod autograd;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod gradsuite;
pub mod hist;
pub mod nn;
pub mod ptfem;
pub mod qco;
pub mod stlnet;
pub mod tem;
pub mod tensor;
pub mod tsr;

pub use autograd::{Graph, Var};
pub use error::{Error, Result};
pub use tensor::Tensor;
