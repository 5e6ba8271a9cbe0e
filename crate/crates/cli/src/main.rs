use std::path::PathBuf;
use std::process::ExitCode;

use bugloc_cli::{compare, run, CliError, ExperimentManifest, Metric, Overrides, Stage, Unit};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "bugloc", version, about = "Bug-localization experiment pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment manifest (TOML).
    #[arg(long)]
    manifest: PathBuf,
    /// Replaces the global seed and every stage seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Replaces the manifest's artifact_dir.
    #[arg(long)]
    artifact_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum StageArg {
    Mine,
    Build,
    Vocab,
    Pretrain,
    #[value(alias = "train_head")]
    TrainHead,
    Evaluate,
    Analyze,
}

impl From<StageArg> for Stage {
    fn from(s: StageArg) -> Self {
        match s {
            StageArg::Mine => Stage::Mine,
            StageArg::Build => Stage::Build,
            StageArg::Vocab => Stage::Vocab,
            StageArg::Pretrain => Stage::Pretrain,
            StageArg::TrainHead => Stage::TrainHead,
            StageArg::Evaluate => Stage::Evaluate,
            StageArg::Analyze => Stage::Analyze,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Link bug reports to fixing commits and filter them.
    Mine(Common),
    /// Assemble labelled examples and the chronological split.
    Build(Common),
    /// Train the vocabulary on the training split.
    Vocab(Common),
    /// Pre-train the encoder.
    Pretrain(Common),
    /// Train the match head on the frozen encoder.
    TrainHead(Common),
    /// Rank candidate files for the test bugs and score the rankings.
    Evaluate(Common),
    /// Divergence and easy/hard bug reports.
    Analyze(Common),
    /// Run every manifest stage in order, or one with --stage.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        stage: Option<StageArg>,
    },
    /// Pairwise significance between evaluated experiments.
    Compare {
        /// Manifests of the experiments; repeat the flag for each.
        #[arg(long = "manifest", required = true)]
        manifests: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "mrr")]
        metric: Metric,
        #[arg(long, value_enum, default_value = "project")]
        unit: Unit,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        artifact_dir: Option<PathBuf>,
    },
}

fn load(common: &Common) -> Result<ExperimentManifest, CliError> {
    let overrides = Overrides {
        seed: common.seed,
        artifact_dir: common.artifact_dir.clone(),
    };
    ExperimentManifest::load(&common.manifest, &overrides)
}

fn dispatch(command: Command) -> Result<(), CliError> {
    let single = |common: Common, stage: Stage| -> Result<(), CliError> {
        run(&load(&common)?, Some(stage)).map(drop)
    };
    match command {
        Command::Mine(c) => single(c, Stage::Mine),
        Command::Build(c) => single(c, Stage::Build),
        Command::Vocab(c) => single(c, Stage::Vocab),
        Command::Pretrain(c) => single(c, Stage::Pretrain),
        Command::TrainHead(c) => single(c, Stage::TrainHead),
        Command::Evaluate(c) => single(c, Stage::Evaluate),
        Command::Analyze(c) => single(c, Stage::Analyze),
        Command::Run { common, stage } => run(&load(&common)?, stage.map(Stage::from)).map(drop),
        Command::Compare {
            manifests,
            metric,
            unit,
            alpha,
            seed,
            artifact_dir,
        } => {
            let loaded = manifests
                .into_iter()
                .map(|manifest| {
                    load(&Common {
                        manifest,
                        seed,
                        artifact_dir: artifact_dir.clone(),
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            let table = compare(&loaded, metric, unit, alpha)?;
            println!("{}", serde_json::to_string_pretty(&table).expect("table serializes"));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
