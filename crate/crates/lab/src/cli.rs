//! Argument parsing and exit codes.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::Parser;

use crate::commands::{run, Command, Overrides};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_USAGE: i32 = 64;

#[derive(Debug, Parser)]
#[command(
    name = "impulse-lab",
    version,
    about = "Solve, simulate and check impulse-control games"
)]
pub struct Args {
    #[arg(value_enum)]
    pub command: Command,
    /// TOML run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Root seed; overrides the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Impulse budget (at most q - 1 impulses).
    #[arg(long)]
    pub q: Option<usize>,
    /// Discount: the scheme's for `solve`, the checked one for `verify`.
    #[arg(long)]
    pub rho: Option<f64>,
    /// Single strict-supersolution weight for `verify`.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Worker threads.
    #[arg(long)]
    pub workers: Option<usize>,
}

/// Runs one command and returns the process exit code. Diagnostics go to `err`.
pub fn run_command<I, T>(argv: I, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = match Args::try_parse_from(argv) {
        Ok(a) => a,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{}", e.render());
                    EXIT_USAGE
                }
            };
        }
    };
    let overrides = Overrides {
        seed: args.seed,
        q: args.q,
        rho: args.rho,
        lambda: args.lambda,
        workers: args.workers,
    };
    match run(args.command, &args.config, &args.out, &overrides) {
        Ok(report) if report.manifest.passed => EXIT_OK,
        Ok(report) => {
            let _ = writeln!(
                err,
                "{} checks failed; see {}",
                report.manifest.command,
                report.out.display()
            );
            EXIT_INVALID
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
