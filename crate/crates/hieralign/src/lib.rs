//! File formats, configuration, checkpoints and commands around
//! `hieralign-core`.

#![allow(clippy::too_many_arguments, clippy::type_complexity)]

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod formats;
pub mod hash;
pub mod manifest;
pub mod report;

pub use config::{Preset, RunConfig};
pub use error::{Error, Result};
