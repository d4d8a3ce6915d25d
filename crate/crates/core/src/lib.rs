//! Limited-data GAN training lab.

pub mod augment;
pub mod data;
pub mod harness;
pub mod cli;
mod error;
pub mod metrics;
pub mod networks;
pub mod params;
pub mod sampling;
pub mod training;

pub use error::{Error, Result};
