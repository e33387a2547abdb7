pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod inference;
pub mod losses;
pub mod commands;
pub mod model;
pub mod sweep;
pub mod train;

pub use error::{Error, Result};
