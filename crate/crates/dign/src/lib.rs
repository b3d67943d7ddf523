//! File formats, experiment orchestration and the command line around
//! [`dign_core`].
//!
//! * [`idx`]: MNIST-style IDX files and the dataset cache.
//! * [`model_io`]: bit-exact text container for trained models.
//! * [`config`]: the JSON experiment schema.
//! * [`commands`]: `train`, `eval`, `verify`, `sweep`, `report`.

pub mod commands;
pub mod config;
pub mod error;
pub mod idx;
pub mod model_io;
pub mod records;
pub mod verify;

pub use error::{CliError, Result};
