pub mod adapter;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod flow;
pub mod gradcheck;
pub mod guidance;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod params;
pub mod rollout;
pub mod selftest;
pub mod tensor;
pub mod train;
pub mod window;

pub use error::{Error, Result};
pub use tensor::Tensor;
