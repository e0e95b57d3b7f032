use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use segtraj::pipeline::{self, PipelineConfig, PipelineError, Stage};

#[derive(Parser)]
#[command(name = "segtraj", version, about = "Segmentation and trajectory analysis of labour-market panels")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Fail on unobserved transition rows instead of staying in place.
    #[arg(long, global = true)]
    strict: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic panel with planted segments.
    Generate,
    /// Validate the input panel and keep individuals with enough consecutive years.
    Ingest,
    /// Multiple correspondence analysis of the active variables.
    Mca,
    /// Train the self-organizing map on the factor coordinates.
    SomTrain,
    /// Ward clustering of the map units, segment labels and profiles.
    Segment,
    /// Year-by-year transition matrices.
    Estimate,
    /// Likelihood-ratio test of time homogeneity.
    TestHomogeneity,
    /// Simulate trajectories from the estimated chain.
    Simulate,
    /// Pooled transition matrix of the simulated paths.
    MeanChain,
    /// Limit distribution of the mean chain, or of a matrix given as CSV.
    Limit {
        /// CSV matrix with a header row; rows are rescaled to sum to one.
        #[arg(long)]
        matrix: Option<PathBuf>,
    },
    /// Classify simulated trajectories by initial segment.
    Classify,
    /// Render SVG figures and a summary.
    Report,
    /// Run every stage in order.
    Pipeline,
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, PipelineError> {
    let Some(path) = &cli.config else {
        return Err(PipelineError::ConfigInvalid {
            field: "--config".into(),
            reason: "a configuration file is required".into(),
        });
    };
    let mut cfg = PipelineConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &cli.out_dir {
        cfg.out_dir = dir.clone();
    }
    cfg.strict |= cli.strict;
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), PipelineError> {
    let stage = match &cli.command {
        Command::Limit { matrix: Some(path) } => {
            let dist = pipeline::limit_from_matrix_file(path)?;
            for (s, p) in dist.pi.iter().enumerate() {
                println!("C{}\t{:.4}", s + 1, 100.0 * p);
            }
            log::info!("method {:?}, residual {:.2e}", dist.method, dist.residual);
            return Ok(());
        }
        Command::Pipeline => {
            let cfg = load_config(cli)?;
            for outcome in pipeline::run_pipeline(&cfg)? {
                println!("{:<17} {}", outcome.stage.name(), outcome.summary);
            }
            return Ok(());
        }
        Command::Generate => Stage::Generate,
        Command::Ingest => Stage::Ingest,
        Command::Mca => Stage::Mca,
        Command::SomTrain => Stage::SomTrain,
        Command::Segment => Stage::Segment,
        Command::Estimate => Stage::Estimate,
        Command::TestHomogeneity => Stage::TestHomogeneity,
        Command::Simulate => Stage::Simulate,
        Command::MeanChain => Stage::MeanChain,
        Command::Limit { matrix: None } => Stage::Limit,
        Command::Classify => Stage::Classify,
        Command::Report => Stage::Report,
    };
    let cfg = load_config(cli)?;
    let outcome = pipeline::run_stage(stage, &cfg)?;
    println!("{:<17} {}", outcome.stage.name(), outcome.summary);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
