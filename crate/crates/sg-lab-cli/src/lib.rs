//! Command-line laboratory around the gradient-identification library:
//! experiment configuration, the run pipeline, regime comparisons, the
//! randomized verification sweep, and a small JSON-shape validator used to
//! keep `summary.json` honest in tests.
//!
//! The binary is a thin argument layer over these modules; everything is
//! callable in-process so integration tests can drive full experiments
//! without shelling out.

pub mod compare;
pub mod config;
pub mod experiment;
pub mod schema;
pub mod verify;

pub use config::{CliError, CliResult};
