pub mod acpf;
pub mod cli;
pub mod control;
pub mod dlpf;
pub mod gmm;
pub mod netcase;
pub mod plf;
pub mod windgen;

mod error;
mod linalg;

pub use error::{Error, Result};
