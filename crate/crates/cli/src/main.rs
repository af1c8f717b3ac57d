use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand, ValueEnum};
use spincat::config::{Experiment, RunConfig};
use spincat::experiment::{execute, plot_script};
use spincat::protocol::ProtocolMode;
use spincat::Error;

const EXIT_CODES: &str = "\
Exit codes:
  0  success
  2  configuration error (syntax, unknown key, bad value, missing file)
  3  physics or dimension error (invalid system, non-Hermitian operator,
     irreversible sequence, cluster too large for the requested path)
  4  fit failure (non-positive samples or residual above the limit)

Failures print one line on stderr:
  error code=<n> kind=<kind> message=\"<text>\"

Flags override the corresponding config keys.";

#[derive(Parser)]
#[command(name = "spincat", version, about = "Dipolar spin-cluster simulator", after_help = EXIT_CODES)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Ideal,
    Dq,
    Train,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `output`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Protocol mode (overrides `mode`).
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Omit the metadata line from report.txt (overrides `header`).
    #[arg(long)]
    no_header: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Apply the configured sequence and record the trajectory.
    #[command(after_help = EXIT_CODES)]
    Run(RunArgs),
    /// Small-angle spectrum of the configured state.
    #[command(after_help = EXIT_CODES)]
    Spectrum(RunArgs),
    /// Build the cat state, verify it by reversal and record spectra.
    #[command(after_help = EXIT_CODES)]
    Catdemo(RunArgs),
    /// Coherence-order scan by phase-incremented round trips.
    #[command(after_help = EXIT_CODES)]
    Mqscan(RunArgs),
    /// Decay of a cat observable under the relaxation model.
    #[command(after_help = EXIT_CODES)]
    Lifetime(RunArgs),
    /// Convergence of the DQ cycles to their average Hamiltonian.
    #[command(after_help = EXIT_CODES)]
    Ahtcheck(RunArgs),
    /// Print a gnuplot script for the config's output files.
    Plot {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn fail(e: &Error) -> ExitCode {
    let msg = e.to_string().replace('\\', "\\\\").replace('"', "\\\"");
    eprintln!("error code={} kind={} message=\"{msg}\"", e.exit_code(), e.kind());
    ExitCode::from(e.exit_code() as u8)
}

fn configure(experiment: Experiment, args: &RunArgs) -> Result<RunConfig, Error> {
    let mut cfg = RunConfig::load(&args.config)?;
    cfg.experiment = experiment;
    if let Some(out) = &args.out {
        cfg.output = out.clone();
    }
    if let Some(m) = args.mode {
        cfg.protocol.mode = match m {
            Mode::Ideal => ProtocolMode::Ideal,
            Mode::Dq => ProtocolMode::EffectiveDq,
            Mode::Train => ProtocolMode::PulseTrain,
        };
    }
    if args.no_header {
        cfg.header = false;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (experiment, args) = match &cli.command {
        Command::Run(a) => (Experiment::Run, a),
        Command::Spectrum(a) => (Experiment::Spectrum, a),
        Command::Catdemo(a) => (Experiment::CatDemo, a),
        Command::Mqscan(a) => (Experiment::MqScan, a),
        Command::Lifetime(a) => (Experiment::Lifetime, a),
        Command::Ahtcheck(a) => (Experiment::AhtCheck, a),
        Command::Plot { config, out } => {
            return match RunConfig::load(config) {
                Ok(mut cfg) => {
                    if let Some(o) = out {
                        cfg.output = o.clone();
                    }
                    print!("{}", plot_script(&cfg));
                    ExitCode::SUCCESS
                }
                Err(e) => fail(&e),
            };
        }
    };
    let cfg = match configure(experiment, args) {
        Ok(c) => c,
        Err(e) => return fail(&e),
    };
    let stamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let meta = format!("spincat {} generated_unix={stamp}", env!("CARGO_PKG_VERSION"));
    match execute(&cfg, Some(&meta)) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => fail(&e),
    }
}
