use std::path::PathBuf;
use std::process::ExitCode;

use adsubtype::pipeline::{all_stages, plan, Pipeline, PipelineConfig, Stage, SynthConfig};
use clap::{Parser, Subcommand};

/// Temporal subtyping of Alzheimer's disease cohorts.
#[derive(Parser, Debug)]
#[command(name = "adsubtype", version, about)]
struct Cli {
    /// Pipeline config (JSON). Without one, a 2,000-patient synthetic run.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel stages; outputs do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Overrides `out_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Print the stages with their inputs and outputs, then exit.
    #[arg(long, global = true)]
    dry_run: bool,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Generate synthetic input tables with planted subtypes.
    Synth,
    /// Select the cohort and fix the phenotype vocabulary.
    Ingest,
    /// Build temporal and aggregate feature matrices.
    Features,
    /// K-Means SSE curve and elbow choice.
    Elbow,
    /// Spectral clustering.
    Cluster,
    /// Pairwise and omnibus chi-square grid.
    Stats,
    /// Multinomial logistic regression on demographics.
    Mlr,
    /// Drug-class prevalence per cluster.
    Drugs,
    /// Prevalence and demographic tables.
    Report,
    /// Every stage in order.
    All,
}

impl Command {
    fn stages(self, config: &PipelineConfig) -> Vec<Stage> {
        match self {
            Command::Synth => vec![Stage::Synth],
            Command::Ingest => vec![Stage::Ingest],
            Command::Features => vec![Stage::Features],
            Command::Elbow => vec![Stage::Elbow],
            Command::Cluster => vec![Stage::Cluster],
            Command::Stats => vec![Stage::Stats],
            Command::Mlr => vec![Stage::Mlr],
            Command::Drugs => vec![Stage::Drugs],
            Command::Report => vec![Stage::Report],
            Command::All => all_stages(config),
        }
    }
}

const EXIT_STAGE: u8 = 1;
const EXIT_USAGE: u8 = 2;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    let mut config = match &cli.config {
        Some(path) => match PipelineConfig::load(path) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("adsubtype: cannot load config: {e}");
                return ExitCode::from(EXIT_USAGE);
            }
        },
        None => PipelineConfig {
            synth: Some(SynthConfig::default()),
            ..Default::default()
        },
    };
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    if let Some(t) = cli.threads {
        config.threads = Some(t);
    }
    if let Some(o) = &cli.out {
        config.out_dir = o.clone();
    }
    let stages = cli.command.stages(&config);
    let pipeline = match Pipeline::new(config) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("adsubtype: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    };

    if cli.dry_run {
        println!("out_dir: {}", pipeline.out_dir().display());
        println!("config hash: {}", pipeline.provenance().config_hash);
        for s in &stages {
            let p = plan(&pipeline.config, *s);
            println!("{}", s.name());
            println!("  reads:  {}", if p.inputs.is_empty() { "-".to_string() } else { p.inputs.join(", ") });
            println!("  writes: {}", p.outputs.join(", "));
        }
        return ExitCode::SUCCESS;
    }

    if let Some(n) = pipeline.config.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("adsubtype: cannot configure {n} threads: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    }
    for s in stages {
        if let Err(e) = pipeline.run(s) {
            eprintln!("adsubtype: stage {} failed: {e}", s.name());
            return ExitCode::from(EXIT_STAGE);
        }
    }
    ExitCode::SUCCESS
}
