//! Scene and raster file formats, remote clients, and the pipeline behind
//! the `pg` command.

pub mod cli;
pub mod config;
pub mod error;
pub mod pipeline;
pub mod raster;
pub mod remote;
pub mod scene_io;

pub use config::Config;
pub use error::{PgError, Result};
