pub use swae_core as core;

pub mod checkpoint;
pub mod cli;
pub mod commands;
pub mod config;
pub mod container;
pub mod dataset_io;
pub mod error;
pub mod eval;
pub mod output;

pub use error::{Error, Result};
