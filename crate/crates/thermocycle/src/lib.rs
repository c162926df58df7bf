pub mod cli;
pub mod cocycle;
pub mod ergodic;
pub mod error;
pub mod potential;
pub mod pressure;
pub mod projective;
pub mod report;
pub mod sft;
pub mod transfer;
pub mod typicality;

pub use error::{Error, Result};
