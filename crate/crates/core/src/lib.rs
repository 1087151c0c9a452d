pub mod cmt;
pub mod data;
pub mod diw;
pub mod erm;
pub mod error;
pub mod harness;
pub mod kernels;
pub mod nnet;
pub mod numerics;
pub mod onestep;
pub mod ratio;

pub use error::{Error, Result};
