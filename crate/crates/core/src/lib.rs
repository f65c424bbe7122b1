pub mod cli;
pub mod config;
pub mod error;
pub mod eval;
pub mod graph;
pub mod kb;
pub mod model;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
