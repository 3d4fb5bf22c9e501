pub mod config;
pub mod env;
pub mod error;
pub mod game;
pub mod heuristic;
pub mod learn;
pub mod nn;
pub mod play;
pub mod rating;
pub mod report;
pub mod train;

pub use error::{Error, Result};
