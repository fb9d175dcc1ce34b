use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use imprint_lab::config::{Precision, ScenarioConfig};
use imprint_lab::runner::{self, Sizing, SweepAxis};

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;
const EXIT_CHECK: u8 = 4;

#[derive(Parser)]
#[command(name = "imprint-lab", version, about = "Imprint-module data recovery laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Scenario configuration (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (defaults to the config's output_dir, then the current directory).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run in 64-bit precision.
    #[arg(long = "f64")]
    f64: bool,
    /// Worker threads.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its report.
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// Run a scenario over a list of values for one axis and write a CSV.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        axis: SweepAxis,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Print expected recovery, one-shot success and parameter overhead.
    Plan {
        #[arg(long)]
        n: usize,
        #[arg(long, conflicts_with = "p", required_unless_present = "p")]
        k: Option<usize>,
        #[arg(long)]
        p: Option<f64>,
        /// Input length of the imprint layer.
        #[arg(long, default_value_t = 3072)]
        m: usize,
        /// Parameter count of the model being extended.
        #[arg(long, default_value_t = 0)]
        base: usize,
        #[arg(long, default_value_t = 0)]
        decoys: usize,
    },
    /// Run the bundled scenarios against their thresholds.
    Check {
        #[command(flatten)]
        common: Common,
        /// Restrict to these bundled scenarios.
        #[arg(long = "scenario")]
        scenarios: Vec<String>,
    },
}

enum Failure {
    Config(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Self::Runtime(e)
    }
}

fn load_config(common: &Common) -> Result<ScenarioConfig, Failure> {
    let path = common
        .config
        .as_ref()
        .ok_or_else(|| Failure::Config("--config is required".into()))?;
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    let mut cfg = ScenarioConfig::from_json(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if common.f64 {
        cfg.precision = Precision::F64;
    }
    Ok(cfg)
}

fn out_dir(common: &Common, cfg: Option<&ScenarioConfig>) -> PathBuf {
    common
        .out
        .clone()
        .or_else(|| cfg.and_then(|c| c.output_dir.clone()))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, text).map_err(|e| anyhow::anyhow!("writing {}: {e}", path.display()))
}

fn execute(cli: Cli) -> Result<bool, Failure> {
    match cli.command {
        Command::Run { common } => {
            let cfg = load_config(&common)?;
            let result = runner::run(&cfg, common.jobs)?;
            let dir = out_dir(&common, Some(&cfg));
            runner::write_outputs(&result, &dir)?;
            let s = &result.summary;
            println!(
                "{}: {} trials, exact fraction {:.4}, singleton fraction {:.4}, mean PSNR {:.2} dB, IIP {:.4}",
                cfg.scenario, s.trials, s.mean_exact_fraction, s.mean_singleton_fraction, s.mean_psnr, s.mean_iip
            );
            println!("report written to {}", dir.join(format!("{}.report.json", cfg.scenario)).display());
            Ok(true)
        }
        Command::Sweep { common, axis, values } => {
            let cfg = load_config(&common)?;
            for &v in &values {
                runner::sweep_point(&cfg, axis, v).map_err(|e| Failure::Config(e.to_string()))?;
            }
            let rows = runner::sweep(&cfg, axis, &values, common.jobs)?;
            let text = runner::sweep_csv(axis, &rows)?;
            let path = out_dir(&common, Some(&cfg)).join(format!("{}.sweep_{axis}.csv", cfg.scenario));
            write_text(&path, &text)?;
            print!("{text}");
            Ok(true)
        }
        Command::Plan {
            n,
            k,
            p,
            m,
            base,
            decoys,
        } => {
            let sizing = match (k, p) {
                (Some(k), _) => Sizing::Bins(k),
                (None, Some(p)) => Sizing::Mass(p),
                (None, None) => return Err(Failure::Config("one of --k or --p is required".into())),
            };
            print!("{}", runner::plan(n, sizing, m, base, decoys));
            Ok(true)
        }
        Command::Check { common, scenarios } => {
            let lines = runner::check(&scenarios, common.f64, common.jobs)?;
            for l in &lines {
                println!("[{}] {}: {}", if l.pass { "PASS" } else { "FAIL" }, l.scenario, l.what);
            }
            Ok(lines.iter().all(|l| l.pass))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_CHECK),
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
