//! `bos-tomo` command-line front end.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{CommandFactory, Parser};

use commands::Command;

#[derive(Parser, Debug)]
#[command(name = "bos-tomo", version, about = "Single-view BOS tomography: render, trace, reconstruct, evaluate")]
#[command(subcommand_required = false, arg_required_else_help = true)]
struct Cli {
    /// Worker threads; falls back to BOS_TOMO_THREADS, then to all cores. Results do not
    /// depend on it.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    /// Re-run the command recorded in a manifest.json.
    #[arg(long, value_name = "MANIFEST")]
    from_manifest: Option<PathBuf>,

    /// Output directory for --from-manifest (defaults to the recorded one).
    #[arg(long, requires = "from_manifest", value_name = "DIR")]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Option<Command>,
}

/// Failure classes mapped to exit codes 1 and 2.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<bos_tomo::Error> for Failure {
    fn from(e: bos_tomo::Error) -> Self {
        match &e {
            bos_tomo::Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => Failure::Usage(e.to_string()),
            _ if e.is_validation() => Failure::Usage(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        bos_tomo::Error::Io(e).into()
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Usage(format!("parse error: {e}"))
    }
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>, Failure> {
    if let Some(n) = flag {
        return if n == 0 {
            Err(Failure::Usage("--threads must be >= 1".into()))
        } else {
            Ok(Some(n))
        };
    }
    match std::env::var("BOS_TOMO_THREADS") {
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Failure::Usage(format!("BOS_TOMO_THREADS must be a positive integer, got '{s}'"))),
        },
        Err(_) => Ok(None),
    }
}

fn run(cli: Cli, name: &mut Option<&'static str>) -> Result<(), Failure> {
    if let Some(n) = thread_count(cli.threads)? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Runtime(format!("thread pool: {e}")))?;
    }
    match (cli.from_manifest, cli.command) {
        (Some(m), None) => {
            let man = manifest::Manifest::load(&m)?;
            *name = Some(man.command.name());
            commands::execute(man.into_invocation(cli.out)?)
        }
        (None, Some(cmd)) => {
            *name = Some(cmd.name());
            commands::execute(cmd.resolve()?)
        }
        _ => Err(Failure::Usage("give either a subcommand or --from-manifest, not both".into())),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let mut name = None;
    match run(cli, &mut name) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            let mut cmd = Cli::command();
            let usage = match name.and_then(|n| cmd.find_subcommand_mut(n)) {
                Some(sub) => sub.render_usage(),
                None => cmd.render_usage(),
            };
            eprintln!("error: {msg}\n\n{usage}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
