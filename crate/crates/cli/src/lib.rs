//! File formats and the batch command-line front end for `deocc-core`.
//!
//! - [`png`]: 8/16-bit PNG in, 8-bit PNG out, intensities in `[0, 1]`.
//! - [`lfdir`]: light-field directories (`manifest.json` + one PNG per view).
//! - [`masks`]: mask libraries.
//! - [`dataset`]: synthesized sample folders.
//! - [`weights`]: weights and checkpoint files.
//! - [`commands`]: the subcommands as library functions.
//! - [`cli`]: argument grammar.

pub mod cli;
pub mod commands;
pub mod dataset;
pub mod error;
pub mod lfdir;
pub mod masks;
pub mod png;
pub mod weights;

pub use error::{CliError, ErrorReport, Result};
