pub mod controller;
pub mod convex;
pub mod decomposition;
pub mod error;
pub mod expohedron;
pub mod harness;
pub mod model;
pub mod pareto;

pub use error::{Error, Result};
