//! Configuration, dataset loading and experiment drivers for the `qdec`
//! command-line tool.

pub mod config;
pub mod data;
pub mod drivers;
pub mod error;
pub mod pipeline;
pub mod schema;

pub use config::{DecoderKind, EncoderKind, ExperimentConfig};
pub use data::{load_dataset, Dataset};
pub use error::{CliError, Result};
