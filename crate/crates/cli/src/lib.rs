//! Command-line pipeline: run configuration, file formats and subcommands.

pub mod commands;
pub mod config;
pub mod formats;
pub mod state;

use vndm_core::Error;

/// Process exit code for an error: 1 configuration, 2 data, 3 numerical.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Domain(_) => 1,
        Error::Data(_) | Error::Dimension(_) | Error::Format(_) | Error::Io(_) => 2,
        Error::Numerical(_) => 3,
    }
}
