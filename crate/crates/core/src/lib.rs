pub mod error;
pub mod cli;
pub mod cluster;
pub mod encoder;
pub mod interpret;
pub mod journey;
pub mod nn;
pub mod train;

pub use error::{Error, Result};
