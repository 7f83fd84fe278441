//! Command-line surface: argument parsing, config files and the subcommands.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;
pub mod pipeline;

use std::ffi::OsString;
use std::io::Write;

use clap::Parser;

pub use error::{CliError, CliResult, EXIT_IO, EXIT_NUMERIC, EXIT_VALIDATION};

use args::{Cli, Command};

fn configure_threads() -> CliResult<()> {
    let Ok(v) = std::env::var("MEF_THREADS") else {
        return Ok(());
    };
    let n: usize = v.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        CliError::validation(format!("MEF_THREADS must be a positive integer, got {v:?}"))
    })?;
    // a second call in the same process keeps the first pool
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global();
    Ok(())
}

/// Parses `args` (program name first) and runs the selected subcommand.
pub fn run<I, T>(args: I) -> CliResult<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args = config::expand_config(args.into_iter().map(Into::into).collect())?;
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // A closed pipe (`mefsfi --help | head`) is not an error.
            let _ = write!(std::io::stdout(), "{e}");
            return Ok(());
        }
        Err(e) => return Err(CliError::validation(e.render().to_string())),
    };
    configure_threads()?;
    match &cli.command {
        Command::Fuse(a) => commands::fuse(a),
        Command::Swap(a) => commands::swap(a),
        Command::Train(a) => commands::train_cmd(a),
        Command::Eval(a) => commands::eval(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::DumpFeatures(a) => commands::dump_features(a),
    }
}
