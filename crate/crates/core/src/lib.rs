pub mod corpus;
pub mod encoders;
pub mod error;
pub mod graphs;
pub mod harness;
pub mod model;
pub mod numerics;
mod parallel;
pub mod readout;

pub use error::{Error, Result};
