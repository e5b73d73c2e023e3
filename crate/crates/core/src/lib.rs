pub mod activity;
pub mod cli;
pub mod corpus;
mod error;
pub mod eval;
pub mod gradcheck;
pub mod loss;
pub mod model;
pub mod numerics;
pub mod synthgen;
pub mod train;

pub use error::{Error, Result};
