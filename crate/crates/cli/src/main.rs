use std::path::PathBuf;
use std::process::ExitCode;

use chase_escape_cli::manifest::{self, Kind, Overrides, RawManifest};
use chase_escape_cli::output::write_bundle;
use chase_escape_cli::run::RunError;
use clap::{Parser, Subcommand};

const EXIT_RUNTIME: u8 = 1;
const EXIT_VALIDATION: u8 = 2;
const EXIT_REFUSAL: u8 = 3;

/// Monte Carlo experiments on chase-escape and birth-and-assassination
/// processes.
///
/// Settings are resolved as built-in defaults, then the manifest, then
/// command-line flags.
#[derive(Parser)]
#[command(name = "chase-escape", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Master seed; replicate r uses stream (seed, r).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Experiment manifest (TOML, or JSON if it starts with `{`).
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    /// Validate the manifest and print its hash without running it.
    #[arg(long, global = true)]
    check: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Closed-form constants for the given parameters.
    Analytics,
    /// Direct event-driven chase-escape simulation.
    CeSim,
    /// Direct birth-and-assassination simulation.
    BaSim,
    /// Killed branching random walk.
    KbrwSim,
    /// Law of Z from the direct simulator against the coupling.
    CoupleCheck,
    /// First passages and renewal counts of the tilted walk.
    Qwalk,
    /// Additive martingale of the unkilled walk.
    Biggins,
    /// Tail fit of counts from a simulation CSV.
    TailFit,
}

impl Command {
    fn kind(self) -> Kind {
        match self {
            Command::Analytics => Kind::Analytics,
            Command::CeSim => Kind::CeSim,
            Command::BaSim => Kind::BaSim,
            Command::KbrwSim => Kind::KbrwSim,
            Command::CoupleCheck => Kind::CoupleCheck,
            Command::Qwalk => Kind::Qwalk,
            Command::Biggins => Kind::Biggins,
            Command::TailFit => Kind::TailFit,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let raw = match &cli.manifest {
        None => RawManifest::default(),
        Some(path) => {
            let parsed = std::fs::read_to_string(path)
                .map_err(|e| vec![format!("manifest: {}: {e}", path.display())])
                .and_then(|text| {
                    manifest::parse(&text)
                        .map_err(|errs| errs.iter().map(ToString::to_string).collect())
                });
            match parsed {
                Ok(raw) => raw,
                Err(errs) => return report_invalid(&errs),
            }
        }
    };
    let overrides = Overrides {
        kind: Some(cli.command.kind()),
        seed: cli.seed,
        workers: cli.workers,
        out: cli.out.clone(),
    };
    let m = match manifest::resolve(raw, &overrides) {
        Ok(m) => m,
        Err(errs) => {
            return report_invalid(&errs.iter().map(ToString::to_string).collect::<Vec<_>>())
        }
    };
    if cli.check {
        println!("ok {}", m.hash());
        return ExitCode::SUCCESS;
    }

    let bundle = match chase_escape_cli::execute(&m) {
        Ok(b) => b,
        Err(e @ RunError::Refusal(_)) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_REFUSAL);
        }
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_RUNTIME);
        }
    };
    match write_bundle(&m, &bundle) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: writing results: {e}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}

fn report_invalid(errors: &[String]) -> ExitCode {
    for e in errors {
        eprintln!("error: {e}");
    }
    ExitCode::from(EXIT_VALIDATION)
}
