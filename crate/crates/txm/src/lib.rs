//! File formats, configuration, the experiment pipeline and command
//! implementations for the `txm` tool, on top of `txm-core`.

pub mod checkpoint;
pub mod commands;
pub mod config;
mod error;
pub mod export;
pub mod images;
pub mod io;
pub mod pipeline;

pub use error::{Error, Result};

/// Environment variable that sets the worker thread count.
pub const THREADS_ENV: &str = "TXM_THREADS";
