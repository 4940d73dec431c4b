pub mod cli;
pub mod config;
pub mod demos;
pub mod doorkey;
pub mod env;
pub mod error;
pub mod eval;
pub mod infer;
pub mod masking;
pub mod maze;
pub mod model;
pub mod rng;
pub mod train;
pub mod traj;

pub use error::{Error, Result};
