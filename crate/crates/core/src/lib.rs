pub mod autodiff;
pub mod cli;
pub mod codec;
pub mod conditioning;
pub mod error;
pub mod generator;
pub mod head;
pub mod metrics;
pub mod nn;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
