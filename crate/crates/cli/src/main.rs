//! `emoproj` command-line frontend.
//!
//! Every subcommand reads its inputs, runs one library composition and writes
//! outputs through temp-file-and-rename. A JSON object passed with `--config`
//! may supply any long flag of the chosen subcommand; flags on the command
//! line win. `EMOPROJ_OUT_DIR`, when set, relocates every output into that
//! directory (file names are kept).

mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;
use emoproj::ErrorKind;

use crate::args::Cli;

/// Exit status per failure category. Usage errors keep clap's status 2.
fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Io => 3,
        ErrorKind::Format => 4,
        ErrorKind::Parameter => 5,
        ErrorKind::Validation => 6,
        ErrorKind::Config => 7,
        ErrorKind::External => 8,
    }
}

fn category(kind: ErrorKind) -> &'static str {
    match kind {
        ErrorKind::Io => "io",
        ErrorKind::Format => "format",
        ErrorKind::Parameter => "parameter",
        ErrorKind::Validation => "validation",
        ErrorKind::Config => "config",
        ErrorKind::External => "external",
    }
}

fn main() -> ExitCode {
    let argv = match args::merge_config(std::env::args_os().collect()) {
        Ok(argv) => argv,
        Err(e) => {
            eprintln!("emoproj: config error: {e}");
            return ExitCode::from(exit_code(e.kind()));
        }
    };
    let cli = Cli::parse_from(argv);
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("emoproj: {} error: {e}", category(e.kind()));
            if let emoproj::Error::InvalidRows(rows) = &e {
                for row in rows {
                    eprintln!("  row {}: {}", row.index, row.reason);
                }
            }
            ExitCode::from(exit_code(e.kind()))
        }
    }
}
