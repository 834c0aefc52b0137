pub mod cli;
pub mod data;
pub mod fisher;
pub mod linalg;
pub mod network;
pub mod parallel;
mod real;
pub mod training;

pub use linalg::{LinalgError, Mat};
pub use real::Real;
