pub mod autodiff;
pub mod cheat;
pub mod config;
pub mod container;
pub mod evalviz;
mod error;
pub mod expert;
mod nn;
pub mod pipeline;
pub mod policy;
pub mod rng;
pub mod vae;
pub mod worldsim;

pub use error::{Error, Result};
