use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{error, info};

use japa::analysis::{complexity_counts, ComplexityAlgorithm};
use japa::harness::{
    apply_config_file, apply_key, run_experiment, snr_range, write_csv, write_results, ExperimentKind, ExperimentSpec,
};
use japa::Error;

#[derive(Parser)]
#[command(name = "japa", version, about = "Adaptive power allocation for cooperative relaying: Monte Carlo experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// BER versus SNR
    Ber(Common),
    /// BER versus SNR with quantized allocation feedback
    Feedback {
        #[command(flatten)]
        common: Common,
        /// Feedback bit widths, comma separated
        #[arg(long)]
        bits: Option<String>,
    },
    /// Sum rate versus SNR
    Sumrate(Common),
    /// Per-symbol BER from a cold start
    Convergence {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        symbols: Option<usize>,
        #[arg(long)]
        snr_db: Option<f64>,
    },
    /// Per-symbol operation counts
    Complexity {
        #[arg(long, default_value_t = 2)]
        n: u64,
        #[arg(long, default_value_t = 2)]
        t: u64,
        /// Training-block length of the minimum-BER update
        #[arg(long, default_value_t = 10)]
        m: u64,
        /// Single algorithm (all when omitted)
        #[arg(long)]
        algorithm: Option<String>,
    },
}

#[derive(Args)]
struct Common {
    /// key = value file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Algorithm names, comma separated
    #[arg(long)]
    algorithms: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    snr_min: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    snr_max: Option<f64>,
    #[arg(long)]
    snr_step: Option<f64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV path
    #[arg(long)]
    out: Option<PathBuf>,
    /// Extra settings, `key=value`
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

fn build_spec(kind: ExperimentKind, c: &Common) -> japa::Result<ExperimentSpec> {
    let mut spec = ExperimentSpec::new(kind);
    if let Some(path) = &c.config {
        apply_config_file(&mut spec, path)?;
        spec.experiment = kind;
    }
    for kv in &c.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::InvalidConfig(format!("--set expects key=value, got '{kv}'")))?;
        apply_key(&mut spec, k, v)?;
    }
    if let Some(a) = &c.algorithms {
        apply_key(&mut spec, "algorithms", a)?;
    }
    match (c.snr_min, c.snr_max, c.snr_step) {
        (None, None, None) => {}
        (min, max, step) => {
            let first = spec.snr_grid_db.first().copied().unwrap_or(0.0);
            let last = spec.snr_grid_db.last().copied().unwrap_or(first);
            let default_step = match spec.snr_grid_db.as_slice() {
                [a, b, ..] => b - a,
                _ => 1.0,
            };
            let (min, max, step) = (min.unwrap_or(first), max.unwrap_or(last), step.unwrap_or(default_step));
            spec.snr_grid_db = snr_range(min, max, step)?;
        }
    }
    if let Some(t) = c.trials {
        spec.trials = t;
    }
    if let Some(s) = c.seed {
        spec.cfg.seed = s;
    }
    if let Some(o) = &c.out {
        spec.output_path = Some(o.clone());
    }
    Ok(spec)
}

fn run(cli: Cli) -> japa::Result<()> {
    let spec = match &cli.command {
        Command::Complexity { n, t, m, algorithm } => {
            let algs = match algorithm {
                Some(a) => vec![a.parse::<ComplexityAlgorithm>()?],
                None => ComplexityAlgorithm::ALL.to_vec(),
            };
            println!("algorithm,multiplications,additions,n,t,m");
            for a in algs {
                let r = complexity_counts(a, *n, *t, *m)?;
                println!("{},{},{},{},{},{}", a, r.multiplications, r.additions, r.n, r.t, r.m);
            }
            return Ok(());
        }
        Command::Ber(c) => build_spec(ExperimentKind::BerVsSnr, c)?,
        Command::Sumrate(c) => build_spec(ExperimentKind::SumRate, c)?,
        Command::Feedback { common, bits } => {
            let mut spec = build_spec(ExperimentKind::FeedbackBits, common)?;
            if let Some(b) = bits {
                apply_key(&mut spec, "feedback_bits", b)?;
            }
            spec
        }
        Command::Convergence { common, symbols, snr_db } => {
            let mut spec = build_spec(ExperimentKind::Convergence, common)?;
            if let Some(s) = symbols {
                spec.symbols = *s;
            }
            if let Some(x) = snr_db {
                spec.snr_db = *x;
            }
            spec
        }
    };
    spec.validate()?;
    let table = run_experiment(&spec)?;
    match &spec.output_path {
        Some(path) => {
            write_results(&table, path)?;
            info!("wrote {} rows to {}", table.points.len(), path.display());
        }
        None => {
            let stdout = std::io::stdout();
            write_csv(&table, &mut stdout.lock()).map_err(|e| Error::Io {
                path: "<stdout>".into(),
                message: e.to_string(),
            })?;
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Divergence { .. } => 3,
        Error::Io { .. } => 1,
        Error::InvalidConfig(_)
        | Error::Dimension(_)
        | Error::UnsupportedScheme(_)
        | Error::UnsupportedScenario(_)
        | Error::EnumerationCap { .. }
        | Error::Domain(_) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
