use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use patternforge_cli::{schema, synth, CliError, CliResult, Pipeline, PipelineConfig, Stage};

#[derive(Debug, Parser)]
#[command(name = "patternforge", version, about = "Mine multivariate price patterns and backtest them")]
struct Cli {
    /// TOML file of dotted keys; defaults apply to omitted keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// With `run`, execute only this stage.
    #[arg(long, global = true)]
    stage: Option<String>,
    /// Overrides `run.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Artifact directory (for `synth`, the dataset directory).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Confidence levels in percent, comma separated.
    #[arg(long = "top-x", global = true, value_delimiter = ',')]
    top_x: Option<Vec<f64>>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse the series and cut the date splits.
    Ingest,
    /// Build chart-pattern prototypes from the seed directory.
    Prototypes,
    /// Smooth the training series and cluster it into patterns.
    Extract,
    /// Train the subsequence encoder on the clustered patterns.
    TrainEncoder,
    /// Learn shapelets from the encoder's latent space.
    Shapelets,
    /// Fit the classifier and its label filter.
    TrainClassifier,
    /// Trade the test period at each confidence level.
    Backtest,
    /// Summarize results and export trades and equity curves.
    Report,
    /// Every stage in order, or only `--stage`.
    Run,
    /// Write the synthetic dataset.
    Synth,
    /// Print the effective configuration as flat keys.
    Config,
    /// Check every artifact in the output directory against its schema.
    Validate,
}

fn load_config(cli: &Cli) -> CliResult<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.run.seed = seed;
    }
    if let Some(t) = cli.threads {
        cfg.run.threads = t;
    }
    if let Some(out) = &cli.out {
        cfg.run.out_dir = out.to_string_lossy().into_owned();
    }
    if let Some(x) = &cli.top_x {
        cfg.backtest.top_x = x.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cli: &Cli) -> CliResult<()> {
    let cfg = load_config(cli)?;
    if cfg.run.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.run.threads)
            .build_global()
            .map_err(|e| CliError::Config(format!("run.threads: {e}")))?;
    }
    let stages: Vec<Stage> = match cli.command {
        Command::Synth => {
            let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("data/synthetic"));
            for p in synth::write_dataset(&dir, cfg.run.seed)? {
                println!("{}", p.display());
            }
            return Ok(());
        }
        Command::Config => {
            print!("{}", cfg.to_flat_toml()?);
            return Ok(());
        }
        Command::Validate => {
            schema::validate_dir(&PathBuf::from(&cfg.run.out_dir))?;
            println!("all artifacts valid");
            return Ok(());
        }
        Command::Ingest => vec![Stage::Ingest],
        Command::Prototypes => vec![Stage::Prototypes],
        Command::Extract => vec![Stage::Smooth, Stage::Simpc],
        Command::TrainEncoder => vec![Stage::TrainEncoder],
        Command::Shapelets => vec![Stage::Shapelets],
        Command::TrainClassifier => vec![Stage::TrainClassifier, Stage::KsFilter],
        Command::Backtest => vec![Stage::Backtest],
        Command::Report => vec![Stage::Report],
        Command::Run => match &cli.stage {
            Some(name) => vec![Stage::parse(name)?],
            None => Stage::ALL.to_vec(),
        },
    };
    if cli.stage.is_some() && !matches!(cli.command, Command::Run) {
        return Err(CliError::Config("--stage only applies to `run`".into()));
    }
    let pipeline = Pipeline::new(cfg.clone(), &PathBuf::from(&cfg.run.out_dir))?;
    for s in stages {
        pipeline.run_stage(s)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PATTERNFORGE_LOG", "info"))
        .format_timestamp(None)
        .init();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
