//! File formats, scene directories and the `tilewarp` command line on top of
//! `tilewarp-core`.
//!
//! Exit codes are part of the interface: 0 success, 1 malformed arguments,
//! configuration or files, 2 I/O failure, 3 invalid scene or mismatched
//! shapes, 4 non-finite loss during fitting, 5 gradient check failure.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod kitti;
pub mod nfv;
pub mod raster;
pub mod scene_dir;

pub use cli::run;
pub use error::{Error, Result};
