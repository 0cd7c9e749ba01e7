//! `rydsim` command-line interface.
//!
//! Exit codes: 0 on success, 1 on configuration errors (unreadable or
//! invalid `.ryx` input, bad `--set`/`--scan` arguments, unmet recipe
//! preconditions), 2 on runtime errors (propagation, sampling or fit
//! failures, output I/O). Argument-syntax errors exit with clap's usage
//! code (2).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rydsim::recipes::{
    detection_transform, experiment_blockade_rabi, experiment_evolve, experiment_phase_oscillation,
    experiment_spectroscopy, RecipeError, RunMode,
};
use rydsim::scan::{apply_set_arg, parse_list, parse_range, parse_scan_arg};
use rydsim_core::model::DEFAULT_MAX_ATOMS;
use rydsim_core::sequence::{parse_with, ExperimentDocument, ParseOptions, ScanBlock, Strictness};

#[derive(Parser)]
#[command(
    name = "rydsim",
    version,
    about = "Few-atom Rydberg pulse-sequence experiments as data tables"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and lint an experiment description, reporting diagnostics.
    Validate {
        /// Path to the `.ryx` experiment description.
        #[arg(long)]
        config: PathBuf,
        /// Demote unknown keys to warnings.
        #[arg(long)]
        lenient: bool,
    },
    /// Two-atom blockade Rabi scan: populations versus pulse duration.
    Rabi {
        #[command(flatten)]
        run: RunArgs,
        /// Keep the addressing beam on the targeted atom during the pulse.
        #[arg(long)]
        addressed: bool,
        /// Post-process the ideal table through the detection-error channel
        /// (the "expected measured populations" construction).
        #[arg(long)]
        detection: bool,
    },
    /// Dark-state phase manipulation: P_gg versus addressing window length.
    Phase {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated addressing light shifts in MHz (one curve each);
        /// defaults to the [address] block's peak shift.
        #[arg(long)]
        shifts: Option<String>,
    },
    /// Addressing-beam profilometry via shifted Rydberg resonances.
    Spectroscopy {
        #[command(flatten)]
        run: RunArgs,
        /// Inner detuning grid as start:stop:step in MHz (default spans the
        /// beam's peak shift with 2 MHz margins at 0.25 MHz steps).
        #[arg(long, allow_hyphen_values = true)]
        detuning_scan: Option<String>,
    },
    /// Run the declared schedule as-is, sampling populations in time.
    Evolve {
        #[command(flatten)]
        run: RunArgs,
        /// Sample times as start:stop:step in us.
        #[arg(long, allow_hyphen_values = true)]
        samples: String,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Path to the `.ryx` experiment description.
    #[arg(long)]
    config: PathBuf,
    /// Override a numeric parameter, e.g. `--set drive.rabi_mhz=2`.
    #[arg(long = "set", value_name = "PATH=VALUE")]
    sets: Vec<String>,
    /// Override the scan block, e.g. `--scan drive.duration_us=0:2:0.02`.
    #[arg(long, value_name = "PATH=START:STOP:STEP")]
    scan: Option<String>,
    /// Override the shot count of the noise block.
    #[arg(long)]
    shots: Option<u64>,
    /// Override the RNG seed of the noise block.
    #[arg(long)]
    seed: Option<u64>,
    /// Exact populations: no sampling, no detection errors, no RNG.
    #[arg(long)]
    ideal: bool,
    /// Output CSV path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

enum CliError {
    Config(String),
    Runtime(String),
}

impl From<RecipeError> for CliError {
    fn from(error: RecipeError) -> Self {
        match error {
            RecipeError::WrongAtomCount { .. }
            | RecipeError::MissingDrive
            | RecipeError::MissingAddress
            | RecipeError::ZeroRabi
            | RecipeError::ScanPathMismatch { .. }
            | RecipeError::DetectionRequiresIdeal => CliError::Config(error.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

fn max_atoms_from_env() -> Result<usize, CliError> {
    match std::env::var("RYDSIM_MAX_ATOMS") {
        Ok(value) => value.trim().parse().map_err(|_| {
            CliError::Config(format!(
                "RYDSIM_MAX_ATOMS must be an integer, got {value:?}"
            ))
        }),
        Err(_) => Ok(DEFAULT_MAX_ATOMS),
    }
}

fn load_document(run: &RunArgs) -> Result<ExperimentDocument, CliError> {
    let text = fs::read_to_string(&run.config)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", run.config.display())))?;
    let options = ParseOptions {
        strictness: Strictness::Strict,
        max_atoms: max_atoms_from_env()?,
    };
    let (mut document, _) =
        parse_with(&text, options).map_err(|diag| CliError::Config(diag.to_string()))?;

    for set in &run.sets {
        apply_set_arg(&mut document, set).map_err(CliError::Config)?;
    }
    if let Some(scan_arg) = &run.scan {
        let block = parse_scan_arg(scan_arg).map_err(CliError::Config)?;
        document
            .get_path(&block.parameter)
            .map_err(|e| CliError::Config(e.to_string()))?;
        document.scan = Some(block);
    }
    if let Some(shots) = run.shots {
        if shots == 0 {
            return Err(CliError::Config("--shots must be >= 1".into()));
        }
        document.noise.shots = shots;
    }
    if let Some(seed) = run.seed {
        document.noise.rng_seed = seed;
    }
    Ok(document)
}

fn mode_of(run: &RunArgs) -> RunMode {
    if run.ideal {
        RunMode::Ideal
    } else {
        RunMode::Sampled
    }
}

/// Writes `text` to `--out` or stdout. Summary lines go to stderr when the
/// data itself is going to stdout.
fn emit(run: &RunArgs, text: &str) -> Result<(), CliError> {
    match &run.out {
        Some(path) => fs::write(path, text)
            .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn summary(run: &RunArgs, line: &str) {
    if run.out.is_some() {
        println!("{line}");
    } else {
        eprintln!("{line}");
    }
}

fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    let ext = path.extension().and_then(|s| s.to_str()).unwrap_or("csv");
    path.with_file_name(format!("{stem}{suffix}.{ext}"))
}

fn run_command(command: Command) -> Result<(), CliError> {
    match command {
        Command::Validate { config, lenient } => {
            let text = fs::read_to_string(&config)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", config.display())))?;
            let options = ParseOptions {
                strictness: if lenient {
                    Strictness::Lenient
                } else {
                    Strictness::Strict
                },
                max_atoms: max_atoms_from_env()?,
            };
            let (document, warnings) =
                parse_with(&text, options).map_err(|diag| CliError::Config(diag.to_string()))?;
            for warning in warnings {
                eprintln!("warning: {warning}");
            }
            let sequence = document
                .declared_sequence()
                .map_err(|e| CliError::Config(e.to_string()))?;
            println!(
                "ok: {} atom(s), {} drive block(s), {} address block(s), declared schedule {} us{}",
                document.model.atom_count(),
                document.drives.len(),
                document.addresses.len(),
                sequence.total_duration(),
                match &document.scan {
                    Some(scan) => format!(", scan {} ({} points)", scan.parameter, scan.len()),
                    None => String::new(),
                }
            );
            Ok(())
        }
        Command::Rabi {
            run,
            addressed,
            detection,
        } => {
            let document = load_document(&run)?;
            let mode = mode_of(&run);
            let mut table = experiment_blockade_rabi(&document, addressed, mode)?;
            if detection {
                table = detection_transform(
                    &table,
                    document.noise.eps_g_to_r,
                    document.noise.eps_r_to_g,
                )?;
            }
            emit(&run, &table.to_csv())
        }
        Command::Phase { run, shifts } => {
            let document = load_document(&run)?;
            let mode = mode_of(&run);
            let shifts = match &shifts {
                Some(arg) => parse_list(arg).map_err(CliError::Config)?,
                None => Vec::new(),
            };
            let result = experiment_phase_oscillation(&document, &shifts, mode)?;
            let multiple = result.curves.len() > 1;
            for curve in &result.curves {
                let fit = &curve.fit;
                summary(
                    &run,
                    &format!(
                        "shift {} MHz: f = {:.6} MHz (+- {:.6}), gamma = {:.6} /us, A = {:.4}, B = {:.4}, converged = {}",
                        curve.shift,
                        fit.params[3].abs(),
                        fit.uncertainties[3],
                        fit.params[2],
                        fit.params[0],
                        fit.params[1],
                        fit.converged
                    ),
                );
                match (&run.out, multiple) {
                    (Some(path), true) => {
                        let target = suffixed(path, &format!("_shift{}", curve.shift));
                        fs::write(&target, curve.table.to_csv()).map_err(|e| {
                            CliError::Runtime(format!("cannot write {}: {e}", target.display()))
                        })?;
                    }
                    _ => emit(&run, &curve.table.to_csv())?,
                }
            }
            if let Some(law) = &result.frequency_law {
                summary(
                    &run,
                    &format!(
                        "frequency law: f = {:.6} * shift + {:.6} MHz (slope se {:.6}, intercept se {:.6})",
                        law.slope, law.intercept, law.slope_se, law.intercept_se
                    ),
                );
            }
            Ok(())
        }
        Command::Spectroscopy { run, detuning_scan } => {
            let document = load_document(&run)?;
            let mode = mode_of(&run);
            let inner = match &detuning_scan {
                Some(arg) => {
                    let (start, stop, step) = parse_range(arg).map_err(CliError::Config)?;
                    if step <= 0.0 || stop < start {
                        return Err(CliError::Config(format!("bad detuning scan {arg:?}")));
                    }
                    Some(ScanBlock {
                        parameter: "drive.detuning_mhz".into(),
                        start,
                        stop,
                        step,
                    })
                }
                None => None,
            };
            let result = experiment_spectroscopy(&document, mode, inner)?;
            summary(
                &run,
                &format!(
                    "gaussian fit: peak = {:.6} MHz, center = {:.6} um, w0 = {:.6} um, offset = {:.6} MHz, converged = {}",
                    result.fit.params[0],
                    result.fit.params[1],
                    result.fit.params[2].abs(),
                    result.fit.params[3],
                    result.fit.converged
                ),
            );
            emit(&run, &result.to_csv())
        }
        Command::Evolve { run, samples } => {
            let document = load_document(&run)?;
            let (start, stop, step) = parse_range(&samples).map_err(CliError::Config)?;
            if step <= 0.0 || stop < start {
                return Err(CliError::Config(format!("bad sample range {samples:?}")));
            }
            let times = ScanBlock {
                parameter: "time_us".into(),
                start,
                stop,
                step,
            }
            .values();
            let table = experiment_evolve(&document, &times, mode_of(&run))?;
            emit(&run, &table.to_csv())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run_command(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(2)
        }
    }
}
