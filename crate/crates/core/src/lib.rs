pub mod biasstudy;
pub mod choice;
pub mod econtools;
pub mod error;
pub mod estimate;
pub mod metrics;
pub mod policy;
pub mod pool;
pub mod rng;
pub mod runner;

pub use error::{Error, Result};
