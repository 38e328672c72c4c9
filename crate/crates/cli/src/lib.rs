//! Library surface of the `refugesim` binary: config resolution, the
//! subcommand implementations, and the PGM renderer. Kept as a lib so the
//! integration tests can drive commands without spawning processes.

pub mod commands;
pub mod config;
pub mod pgm;

use refugesim::error::Error;

/// Process exit code for an error: 1 for configuration and input problems,
/// 2 for solver failures, 3 for a monitor abort.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::SolverDidNotConverge(_) => 2,
        Error::MonitorAbort(_) => 3,
        _ => 1,
    }
}
