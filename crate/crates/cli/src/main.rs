//! `roast` command-line interface.
//!
//! Exit codes: 0 success, 2 configuration error, 3 stage failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use roast_core::pipeline::{RunConfig, Runner, Stage, StageStatus};

#[derive(Parser)]
#[command(name = "roast", version, about = "Adversarial risk analysis and selective anomaly-detector training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every stage, reusing cached artifacts.
    Run(Common),
    /// Load or synthesize the cohort.
    Cohort(Common),
    /// Train the forecasting victim.
    Victim(Common),
    /// Simulate attacks on the training and test parts.
    Attack(Common),
    /// Fit severity coefficients and build risk profiles.
    Risk(Common),
    /// Cluster risk profiles and label vulnerability.
    Cluster(Common),
    /// Fit every detector on every training strategy.
    Train(Common),
    /// Evaluate fitted detectors and write the report.
    Evaluate(Common),
    /// Jaccard sweep over severity coefficients and the cut threshold.
    Sensitivity(Common),
    /// Per-patient outlier fractions.
    OutlierStats(Common),
    /// Print the reference configuration as TOML.
    ReferenceConfig {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Artifact directory; overrides `out_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Recompute even when cached artifacts are current.
    #[arg(long)]
    force: bool,
    /// Worker threads (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// Fit detectors sequentially and report wall-clock fit times.
    #[arg(long)]
    timing_strict: bool,
}

const EXIT_CONFIG: u8 = 2;
const EXIT_STAGE: u8 = 3;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let (stages, common) = match cli.command {
        Command::ReferenceConfig { seed } => {
            return match RunConfig::reference(seed).to_toml() {
                Ok(t) => {
                    print!("{t}");
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(EXIT_CONFIG)
                }
            };
        }
        Command::Run(c) => (Stage::ALL.to_vec(), c),
        Command::Cohort(c) => (vec![Stage::Cohort], c),
        Command::Victim(c) => (vec![Stage::Victim], c),
        Command::Attack(c) => (vec![Stage::Attack], c),
        Command::Risk(c) => (vec![Stage::Risk], c),
        Command::Cluster(c) => (vec![Stage::Cluster], c),
        Command::Train(c) => (vec![Stage::Train], c),
        Command::Evaluate(c) => (vec![Stage::Evaluate], c),
        Command::Sensitivity(c) => (vec![Stage::Sensitivity], c),
        Command::OutlierStats(c) => (vec![Stage::OutlierStats], c),
    };

    let runner = match RunConfig::load(&common.config).and_then(|cfg| Runner::new(cfg, common.out)) {
        Ok(r) => r.force(common.force).timing_strict(common.timing_strict),
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    if let Some(n) = common.jobs {
        if n == 0 {
            eprintln!("config error: --jobs must be >= 1");
            return ExitCode::from(EXIT_CONFIG);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot size the worker pool: {e}");
            return ExitCode::from(EXIT_STAGE);
        }
    }

    for stage in stages {
        match runner.run_stage(stage) {
            Ok(StageStatus::Cached) => eprintln!("{stage}: up to date"),
            Ok(StageStatus::Computed) => eprintln!("{stage}: done"),
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(EXIT_STAGE);
            }
        }
    }
    eprintln!("artifacts in {}", runner.out_dir().display());
    ExitCode::SUCCESS
}
