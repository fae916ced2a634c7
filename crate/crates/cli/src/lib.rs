//! Subcommands of the `bottomup` binary. Each writes its artifacts under the
//! output directory with fixed file names.

pub mod ablate;
pub mod args;
pub mod bench;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod svg;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::Parser;

use args::{Cli, Command, ConfigFile, Overlay};
pub use error::{CliError, CliResult, EXIT_FAILURE, EXIT_OK, EXIT_USAGE};

pub const DEFAULT_OUT: &str = "out";

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> CliResult<()> {
    let file = match &cli.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    let out = cli.out.or(file.out).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    match cli.command {
        Command::Gradcheck(a) => gradcheck::run(a.overlay(file.gradcheck), &out),
        Command::Bench(a) => bench::run(a.overlay(file.bench), &out),
        Command::Ablate(a) => ablate::run(a.overlay(file.ablate), &out),
        Command::Eval(a) => eval::run(a.overlay(file.eval), &out),
    }
}

pub(crate) fn write_artifact(dir: &Path, name: &str, contents: &str) -> CliResult<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| CliError::io(&path, e))?;
    Ok(path)
}

pub(crate) fn parse_sizes(sizes: &[String]) -> CliResult<Vec<bottomup::gradsuite::MapSize>> {
    if sizes.is_empty() {
        return Err(CliError::Usage("--sizes needs at least one size".into()));
    }
    sizes
        .iter()
        .map(|s| s.parse().map_err(|e: bottomup::Error| CliError::Usage(e.to_string())))
        .collect()
}
