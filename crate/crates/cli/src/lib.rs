//! Configuration, run orchestration and figure reproduction for `wentropy`.

pub mod commands;
pub mod config;
pub mod error;
pub mod figures;
pub mod io;

pub use error::{CliError, CliResult};
