//! `mullw`: mutation testing for WebAssembly modules.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mullw_core::{generate_html, parse_config, run_session, Error, SessionConfig};

const DEFAULT_DB: &str = "mullw-results.sqlite";

const EXIT_CODES: &str = "\
Exit codes:
  0  session completed (surviving mutants are findings, not failures)
  1  internal error (analysis, rewrite, compilation or instantiation)
  2  invalid configuration file
  3  no tests found
  4  missing or invalid input module
  5  I/O or database error

Environment:
  MULLW_CACHE_DIR  overrides cache_directory from the config
  RUST_LOG         log filter for diagnostics (default: warn)";

#[derive(Parser)]
#[command(name = "mullw", version, about = "Mutation testing for WebAssembly modules", after_help = EXIT_CODES)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a full session and write the results database.
    Run {
        /// Session config (YAML).
        config: PathBuf,
        /// Results database to write.
        #[arg(short, long, default_value = DEFAULT_DB)]
        output: PathBuf,
    },
    /// Enumerate tests and mutants and estimate the worst-case run time
    /// without executing any mutant.
    Dryrun {
        config: PathBuf,
        #[arg(short, long, default_value = DEFAULT_DB)]
        output: PathBuf,
    },
    /// Render a results database as a static HTML report.
    Report {
        /// Results database written by `run` or `dryrun`.
        db: PathBuf,
        #[arg(short, long, default_value = "mullw-report.html")]
        output: PathBuf,
    },
}

enum Stage {
    Config,
    Session,
    Report,
}

fn exit_code(stage: Stage, err: &Error) -> u8 {
    match (stage, err) {
        (_, Error::Io(_) | Error::Database(_)) => 5,
        (Stage::Config, _) => 2,
        (Stage::Report, _) => 5,
        (Stage::Session, Error::NoTestsFound) => 3,
        (
            Stage::Session,
            Error::FileNotFound(_) | Error::InvalidModule { .. } | Error::DuplicateModule { .. },
        ) => 4,
        (Stage::Session, Error::ParseError { .. } | Error::ValidationError { .. }) => 2,
        (Stage::Session, _) => 1,
    }
}

fn fail(stage: Stage, err: Error) -> ExitCode {
    eprintln!("error:{}:{err}", stage_name(&stage));
    ExitCode::from(exit_code(stage, &err))
}

fn stage_name(stage: &Stage) -> &'static str {
    match stage {
        Stage::Config => "config",
        Stage::Session => "session",
        Stage::Report => "report",
    }
}

fn load_config(path: &Path, dry_run: bool) -> Result<SessionConfig, Error> {
    let mut config = parse_config(path)?;
    if let Some(dir) = std::env::var_os("MULLW_CACHE_DIR").filter(|d| !d.is_empty()) {
        config.cache_directory = Some(PathBuf::from(dir));
    }
    config.dry_run |= dry_run;
    Ok(config)
}

fn session(config: &Path, output: &Path, dry_run: bool) -> ExitCode {
    let config = match load_config(config, dry_run) {
        Ok(c) => c,
        Err(e) => return fail(Stage::Config, e),
    };
    match run_session(&config, output, true) {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => fail(Stage::Session, e),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Run { config, output } => session(&config, &output, false),
        Command::Dryrun { config, output } => session(&config, &output, true),
        Command::Report { db, output } => match generate_html(&db, &output) {
            Ok(()) => {
                eprintln!("report:done:{}", output.display());
                ExitCode::SUCCESS
            }
            Err(e) => fail(Stage::Report, e),
        },
    }
}
