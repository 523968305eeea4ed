//! Library side of the `d2oc` command-line tool: config parsing, run
//! directories and the subcommands.

pub mod artifacts;
pub mod commands;
pub mod config;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Unreadable, malformed or inconsistent input.
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] d2oc::Error),
}

impl CliError {
    /// 2 for config and contract errors, 3 for numerical failures at runtime.
    pub fn exit_code(&self) -> i32 {
        use d2oc::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Core(e) => match e {
                E::DegenerateDensity { .. }
                | E::InsufficientMass { .. }
                | E::Conditioning { .. }
                | E::PivotLimit(_)
                | E::Bookkeeping { .. } => 3,
                E::OutsideDomain { .. }
                | E::Parse { .. }
                | E::Validation(_)
                | E::Parameter(_)
                | E::Dimension { .. }
                | E::Contract(_)
                | E::SizeLimit { .. }
                | E::NoData(_)
                | E::Io(_)
                | E::Csv(_) => 2,
            },
        }
    }
}
