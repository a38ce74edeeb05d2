pub mod error;
pub mod matcore;
pub mod model;
pub mod step_real;
pub mod step_complex;
pub mod solver;
pub mod bench;
pub mod cli;

pub use error::{Error, Result};
