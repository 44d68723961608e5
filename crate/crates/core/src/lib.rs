//! Full projector compensation for high-resolution inputs.

pub mod ablation;
pub mod config;
pub mod error;
pub mod gradsuite;
pub mod io;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod panet;
pub mod sim;
pub mod tensor;
pub mod train;
pub mod warp;

pub use error::{Error, Result};
pub use tensor::{Param, Tensor};
