//! IO companion for the `lgfed-core` simulator: dataset loaders, the model
//! binary format, result emission, a thread pool, and the experiment runner
//! the CLI drives.

pub mod commands;
pub mod config;
pub mod emit;
pub mod error;
pub mod idx;
pub mod model_io;
pub mod pool;
pub mod presets;
pub mod tabular;

pub use error::{Error, Result};
