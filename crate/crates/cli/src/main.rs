use clap::{Args, Parser, Subcommand};
use hutamp_cli::{run_command, CliError, Config, EXIT_VALIDATION};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "hutamp", version, about = "Hyperspectral unmixing with turbo bilinear AMP")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Unmix a cube into a fixed number of materials, or select it with --mos.
    Unmix {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        mos: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Select the number of materials and unmix.
    Mos {
        #[arg(long)]
        input: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Generate a synthetic scene with its truth.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Monte-Carlo sweep over a sparsity/purity/SNR grid.
    Sweep {
        #[command(flatten)]
        common: Common,
    },
    /// Score an estimate against the truth.
    Metrics {
        #[arg(long)]
        truth_s: Option<PathBuf>,
        #[arg(long)]
        truth_a: Option<PathBuf>,
        /// Result directory holding S.csv and A.csv.
        #[arg(long)]
        est: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    /// key = value file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra key=value setting, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long = "snr-db")]
    snr_db: Option<String>,
    #[arg(long = "max-turbo")]
    max_turbo: Option<usize>,
    #[arg(long)]
    quiet: bool,
}

fn build(common: &Common, extra: &[(&str, Option<String>)]) -> Result<Config, CliError> {
    let mut cfg = match &common.config {
        Some(p) => Config::from_file(p)?,
        None => Config::default(),
    };
    for pair in &common.set {
        cfg.set_pair(pair)?;
    }
    let flags = [
        ("seed", common.seed.map(|v| v.to_string())),
        ("out", common.out.as_ref().map(|p| p.display().to_string())),
        ("trials", common.trials.map(|v| v.to_string())),
        ("n", common.n.map(|v| v.to_string())),
        ("snr_db", common.snr_db.clone()),
        ("max_turbo", common.max_turbo.map(|v| v.to_string())),
    ];
    for (k, v) in flags.iter().chain(extra) {
        if let Some(v) = v {
            cfg.set(k, v.clone());
        }
    }
    if common.quiet {
        cfg.set("quiet", "true");
    }
    Ok(cfg)
}

fn path(p: &Option<PathBuf>) -> Option<String> {
    p.as_ref().map(|p| p.display().to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, cfg) = match &cli.command {
        Command::Unmix { input, mos, common } => {
            let m = mos.then(|| "true".to_string());
            ("unmix", build(common, &[("input", path(input)), ("mos", m)]))
        }
        Command::Mos { input, common } => ("mos", build(common, &[("input", path(input))])),
        Command::Synth { common } => ("synth", build(common, &[])),
        Command::Sweep { common } => ("sweep", build(common, &[])),
        Command::Metrics { truth_s, truth_a, est, common } => (
            "metrics",
            build(common, &[("truth_s", path(truth_s)), ("truth_a", path(truth_a)), ("est", path(est))]),
        ),
    };
    let cfg = match cfg {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_VALIDATION as u8);
        }
    };
    let quiet = cfg.bool("quiet", false).unwrap_or(false);
    match run_command(name, &cfg) {
        Ok(outcome) => {
            if !quiet {
                println!("{}", outcome.summary);
            }
            ExitCode::from(outcome.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
