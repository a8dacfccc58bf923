//! Command implementations behind the `dncc` binary.
//!
//! Four subcommands: `train` (one experiment, stoppable and resumable),
//! `verify` (identity sweeps and a full-model gradient check), `diversity`
//! (pairwise comparison of two checkpoints), and `ablate` (ensemble-size,
//! lambda, and split-position sweeps). Every command writes a manifest with
//! its fully resolved configuration and dataset fingerprint before doing any
//! work, and all emitted metrics files are bitwise reproducible given the
//! same flags.

pub mod args;
pub mod commands;
pub mod manifest;

/// Failures carry the exit code contract: usage and configuration problems
/// exit 2, runtime failures (training aborts, identity violations) exit 1.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Runtime(m) => m,
        }
    }
}

/// Setup-phase errors (bad flags, unloadable inputs) are usage failures.
pub fn usage(e: impl std::fmt::Display) -> Failure {
    Failure::Usage(e.to_string())
}

/// Errors after setup (training, verification) are runtime failures.
pub fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

pub type CmdResult = Result<(), Failure>;
