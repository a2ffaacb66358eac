use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use vbjed::error::{Error, Result};
use vbjed::harness::{emit_results, manifest_path, run_experiment_with, ExecutionMode, Method, RunOptions, SimConfig};

#[derive(Parser)]
#[command(name = "vbjed", version, about = "Variational joint channel estimation and detection simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte-Carlo experiment and write CSV results plus a manifest.
    Run(RunArgs),
    /// Print the default configuration as TOML.
    DefaultConfig,
}

#[derive(clap::Args)]
struct RunArgs {
    /// TOML scenario file; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// SNR grid in dB as `start:stop:step` or a comma-separated list.
    #[arg(long)]
    snr: Option<String>,
    /// Method to run; repeat to compare several.
    #[arg(long = "method")]
    methods: Vec<Method>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Give the variational receivers the true time correlation.
    #[arg(long)]
    known_eta: bool,
    #[arg(long, default_value = "results.csv")]
    out: PathBuf,
    /// Write every generated frame to this directory.
    #[arg(long)]
    dump_frames: Option<PathBuf>,
    /// Record per-method wall time (makes the CSV non-reproducible).
    #[arg(long)]
    timing: bool,
    /// Run trials on the calling thread only.
    #[arg(long)]
    sequential: bool,
}

fn parse_snr(spec: &str) -> Result<Vec<f64>> {
    let bad = || Error::Config(format!("bad SNR grid '{spec}'"));
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad());
    let parts: Vec<&str> = spec.split(':').collect();
    match parts.as_slice() {
        [start, stop, step] => {
            let (start, stop, step) = (num(start)?, num(stop)?, num(step)?);
            if !(step > 0.0) || stop < start {
                return Err(bad());
            }
            let n = ((stop - start) / step + 1e-9).floor() as usize;
            Ok((0..=n).map(|i| start + i as f64 * step).collect())
        }
        [list] => list.split(',').map(num).collect(),
        _ => Err(bad()),
    }
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var("VBJED_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .parse()
        .map_err(|_| Error::Config(format!("VBJED_THREADS must be a positive integer, got '{value}'")))?;
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::Config(e.to_string()))?;
    #[cfg(not(feature = "parallel"))]
    let _ = threads;
    Ok(())
}

fn run(args: RunArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(path) => SimConfig::load(path)?,
        None => SimConfig::default(),
    };
    if let Some(snr) = &args.snr {
        cfg.snr_db = parse_snr(snr)?;
    }
    if !args.methods.is_empty() {
        cfg.methods = args.methods.clone();
    }
    if let Some(trials) = args.trials {
        cfg.trials = trials;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.known_eta |= args.known_eta;
    cfg.validate()?;
    configure_threads()?;

    let opts = RunOptions {
        mode: if args.sequential {
            ExecutionMode::Sequential
        } else {
            ExecutionMode::default()
        },
        timing: args.timing,
        dump_dir: args.dump_frames.clone(),
    };
    let report = run_experiment_with(&cfg, &opts)?;
    emit_results(&report.rows, &args.out, Some(&cfg))?;
    for row in &report.rows {
        eprintln!(
            "{:<28} snr {:>6.2} dB  ser {:.4e} (±{:.1e})  nmse {:>8.2} dB",
            row.method, row.snr_db, row.ser, row.ser_stderr, row.nmse_db
        );
    }
    eprintln!("wrote {} and {}", args.out.display(), manifest_path(&args.out).display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::DefaultConfig => SimConfig::default().to_toml_string().map(|s| print!("{s}")),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
