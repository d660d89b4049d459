use anyhow::Context;
use clap::Parser;
use sqe::harness::{exit_code, run_experiment, write_artifacts, Experiment, ExperimentConfig, ExitCode};
use std::path::PathBuf;

#[derive(Parser, Debug)]
#[command(name = "sqe", about = "Run a stochastic quantization experiment and write its report")]
struct Cli {
    /// One of: wick-covariance, restart-consistency, dissipation, moments, linearization, bel,
    /// tv, gibbs-compare, mixing, control, support-probe, besov-suite, kernel-bounds.
    experiment: String,
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replicas: Option<usize>,
    /// Artifact directory (default `out/<experiment>`).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn setup(cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    let experiment: Experiment = cli.experiment.parse()?;
    let text = std::fs::read_to_string(&cli.config).with_context(|| format!("reading {}", cli.config.display()))?;
    let mut cfg = ExperimentConfig::parse(experiment, &text)?;
    if let Some(s) = cli.seed {
        cfg = cfg.with_seed(s);
    }
    if let Some(r) = cli.replicas {
        cfg = cfg.with_replicas(r)?;
    }
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("out").join(experiment.name()));
    Ok(cfg.with_out(out))
}

fn threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("SQE_THREADS") {
        let n: usize = v.trim().parse().with_context(|| format!("SQE_THREADS must be a positive integer, got `{v}`"))?;
        anyhow::ensure!(n > 0, "SQE_THREADS must be a positive integer, got `{v}`");
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    let cfg = match threads().and_then(|_| setup(&cli)) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e:#}");
            std::process::exit(ExitCode::ConfigError as i32);
        }
    };
    print!("{}", cfg.echo());
    let outcome = run_experiment(&cfg);
    let code = exit_code(&outcome);
    match &outcome {
        Ok(report) => {
            let dir = cfg.out.clone().expect("output directory set");
            if let Err(e) = write_artifacts(&dir, &cfg, report) {
                eprintln!("failed to write artifacts: {e:#}");
                std::process::exit(ExitCode::ConfigError as i32);
            }
            print!("{}", report.summary());
            println!("artifacts in {}", dir.display());
        }
        Err(e) => eprintln!("error: {e}"),
    }
    std::process::exit(code as i32);
}
