//! `dld`: train shape models, register point sets, and run the synthetic
//! studies. Exit codes: 0 success, 2 usage, 3 data, 4 numerical failure.

mod commands;
mod params;

use std::process::ExitCode;

use clap::{Arg, Command};

/// Default worker thread count when `--threads` is not given.
const THREADS_ENV: &str = "DLD_THREADS";

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(dld_core::Error),
    /// A core error tied to a file.
    Context(String, dld_core::Error),
}

impl From<dld_core::Error> for CliError {
    fn from(e: dld_core::Error) -> Self {
        CliError::Core(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Context(file, e) => write!(f, "{file}: {e}"),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        use dld_core::Error as E;
        let core = match self {
            CliError::Usage(_) => return 2,
            CliError::Core(e) | CliError::Context(_, e) => e,
        };
        match core {
            E::Domain(_) => 2,
            E::Parse { .. }
            | E::EmptyInput(_)
            | E::UnsupportedFormat(_)
            | E::DimensionMismatch { .. }
            | E::CountMismatch { .. }
            | E::DegenerateExtent { .. }
            | E::InsufficientData(_)
            | E::ModelFormat(_)
            | E::Checksum { .. }
            | E::Io(_) => 3,
            E::DegenerateConfiguration(_)
            | E::ApproximationFailure(_)
            | E::AllOutliers(_)
            | E::SingularSystem(_)
            | E::Consistency(_)
            | E::NonFinite { .. } => 4,
        }
    }
}

fn cli(specs: &[commands::Spec]) -> Command {
    let mut cmd = Command::new("dld")
        .about("Shape-model point set registration")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .arg(
            Arg::new("threads")
                .long("threads")
                .global(true)
                .value_name("N")
                .value_parser(clap::value_parser!(usize))
                .help(format!("worker threads [default: ${THREADS_ENV} or all cores]")),
        );
    for s in specs {
        cmd = cmd.subcommand(params::declare(Command::new(s.name).about(s.about), &s.keys));
    }
    cmd
}

fn init_threads(flag: Option<usize>) -> Result<(), CliError> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var(THREADS_ENV) {
            Ok(v) => Some(
                v.trim()
                    .parse::<usize>()
                    .map_err(|_| CliError::Usage(format!("{THREADS_ENV}='{v}' is not a thread count")))?,
            ),
            Err(_) => None,
        },
    };
    if let Some(n) = n {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| CliError::Usage(e.to_string()))?;
    }
    Ok(())
}

fn run() -> Result<(), CliError> {
    let specs = commands::all();
    let matches = cli(&specs).get_matches();
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    init_threads(sub.get_one::<usize>("threads").copied())?;
    let spec = specs.iter().find(|s| s.name == name).expect("declared subcommand");
    let p = params::Params::resolve(name, &spec.keys, sub)?;
    (spec.run)(&p)
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dld: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn declared_keys_are_unique_per_command() {
        for s in commands::all() {
            let mut names: Vec<_> = s.keys.iter().map(|k| k.name).collect();
            names.sort_unstable();
            let before = names.len();
            names.dedup();
            assert_eq!(before, names.len(), "duplicate key in {}", s.name);
        }
        cli(&commands::all()).debug_assert();
    }

    #[test]
    fn error_classes_map_to_exit_codes() {
        assert_eq!(CliError::Usage("x".into()).exit_code(), 2);
        assert_eq!(CliError::Core(dld_core::Error::EmptyInput("x".into())).exit_code(), 3);
        assert_eq!(CliError::Core(dld_core::Error::AllOutliers(0.0)).exit_code(), 4);
    }
}
