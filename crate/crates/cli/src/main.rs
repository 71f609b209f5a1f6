use std::path::PathBuf;
use std::process::ExitCode;

use clap::builder::PossibleValuesParser;
use clap::{Args, Parser, Subcommand, ValueEnum};
use cyberseer::experiments::{Grouping, SampleControl};
use cyberseer::models::Architecture;

mod commands;
mod config;

use config::RunConfig;

/// Cybersickness prediction pipeline: synthetic data, features, models,
/// cross-validated sweeps and the statistics behind them.
#[derive(Debug, Parser)]
#[command(name = "cyberseer", version)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// TOML or JSON run config; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory of session directories.
    #[arg(long, global = true)]
    data_root: Option<PathBuf>,
    /// Output directory for stores, checkpoints and reports.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Feature store path.
    #[arg(long, global = true)]
    store: Option<PathBuf>,
    /// Checkpoint path.
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    /// Segment length in seconds.
    #[arg(long, global = true)]
    ts: Option<usize>,
    /// Number of folds.
    #[arg(long, global = true)]
    k: Option<usize>,
    #[arg(long, global = true, value_parser = PossibleValuesParser::new(["segment", "session"]))]
    grouping: Option<String>,
    #[arg(long, global = true, value_parser = PossibleValuesParser::new(["eda", "kinematic", "fusion", "enhanced"]))]
    preset: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Maximum worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Sample-size control for time-span sweeps.
    #[arg(long, global = true, value_parser = PossibleValuesParser::new(["none", "downsample"]))]
    control: Option<String>,
    /// Comma-separated segment lengths for the time-span sweep.
    #[arg(long, global = true, value_delimiter = ',')]
    spans: Option<Vec<usize>>,
    /// Comma-separated counts of leading segments to drop.
    #[arg(long, global = true, value_delimiter = ',')]
    exposure_n: Option<Vec<usize>>,
    /// Random-search trials.
    #[arg(long, global = true)]
    budget: Option<usize>,
    /// Training epochs.
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    batch_size: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SweepKind {
    /// Vary the segment length.
    Span,
    /// Drop leading segments at a fixed length.
    Exposure,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write synthetic session directories under the data root.
    Generate {
        #[arg(long)]
        sessions: Option<usize>,
    },
    /// Check every session under the data root.
    Validate,
    /// Build the feature store from the data root.
    Featurize {
        /// Also export the segments as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Train the preset on every segment and save a checkpoint.
    Train,
    /// Score the checkpoint on the feature store, or cross-validate the preset.
    Eval {
        #[arg(long)]
        cv: bool,
    },
    /// Time-span or exposure sweep with per-fold and aggregate reports.
    Sweep {
        #[arg(long, value_enum, default_value = "span")]
        kind: SweepKind,
        /// Comma-separated architectures.
        #[arg(long, value_delimiter = ',', value_parser = PossibleValuesParser::new(["eda", "kinematic", "fusion", "enhanced"]))]
        models: Option<Vec<String>>,
    },
    /// Random search around the preset's architecture.
    Tune {
        /// Score the preset as trial 0.
        #[arg(long)]
        include_preset: bool,
    },
    /// Statistical tests over CSV columns.
    Stats {
        #[command(subcommand)]
        test: StatsTest,
    },
}

#[derive(Debug, Subcommand)]
enum StatsTest {
    /// Pooled two-sample t-test between the two groups of a column.
    Ttest {
        #[arg(long)]
        file: PathBuf,
        #[arg(long)]
        group_col: String,
        /// Defaults to the only other column.
        #[arg(long)]
        value_col: Option<String>,
    },
    /// Pearson correlation of two columns.
    Pearson {
        #[arg(long)]
        file: PathBuf,
        #[arg(long)]
        x: String,
        #[arg(long)]
        y: String,
    },
    /// Chi-square independence test on a cross-tab of two columns or a literal table.
    Chi2 {
        #[arg(long, requires_all = ["row_col", "col_col"], conflicts_with = "table")]
        file: Option<PathBuf>,
        #[arg(long)]
        row_col: Option<String>,
        #[arg(long)]
        col_col: Option<String>,
        /// Rows separated by `;`, cells by `,`, e.g. `20,5;5,20`.
        #[arg(long, required_unless_present = "file")]
        table: Option<String>,
    },
}

fn resolve(global: &GlobalArgs) -> anyhow::Result<RunConfig> {
    let mut cfg = match &global.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    macro_rules! set {
        ($($field:ident),*) => {$(
            if let Some(v) = &global.$field {
                cfg.$field = v.clone();
            }
        )*};
    }
    set!(data_root, out, ts, k, seed, jobs, spans, exposure_n, budget);
    if let Some(v) = &global.store {
        cfg.store = Some(v.clone());
    }
    if let Some(v) = &global.checkpoint {
        cfg.checkpoint = Some(v.clone());
    }
    if let Some(v) = &global.grouping {
        cfg.grouping = v.parse::<Grouping>()?;
    }
    if let Some(v) = &global.preset {
        cfg.preset = v.parse::<Architecture>()?;
    }
    if let Some(v) = &global.control {
        cfg.control = v.parse::<SampleControl>()?;
    }
    if let Some(v) = global.epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = global.batch_size {
        cfg.train.batch_size = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = resolve(&cli.global)?;
    log::debug!("run config: {cfg:?}");
    match cli.command {
        Command::Generate { sessions } => commands::generate(&cfg, sessions),
        Command::Validate => commands::validate(&cfg),
        Command::Featurize { csv } => commands::featurize(&cfg, csv.as_deref()),
        Command::Train => commands::train(&cfg),
        Command::Eval { cv } => commands::eval(&cfg, cv),
        Command::Sweep { kind, models } => {
            let models = models
                .map(|m| m.iter().map(|s| s.parse::<Architecture>()).collect::<Result<Vec<_>, _>>())
                .transpose()?;
            match kind {
                SweepKind::Span => commands::sweep_spans(&cfg, models),
                SweepKind::Exposure => commands::sweep_exposure(&cfg, models),
            }
        }
        Command::Tune { include_preset } => commands::tune(&cfg, include_preset),
        Command::Stats { test } => match test {
            StatsTest::Ttest {
                file,
                group_col,
                value_col,
            } => commands::stats_ttest(&file, &group_col, value_col.as_deref()),
            StatsTest::Pearson { file, x, y } => commands::stats_pearson(&file, &x, &y),
            StatsTest::Chi2 {
                file,
                row_col,
                col_col,
                table,
            } => commands::stats_chi2(file.as_deref(), row_col.as_deref(), col_col.as_deref(), table.as_deref()),
        },
    }
}

fn error_line(kind: &str, message: &str) {
    eprintln!("{}", serde_json::json!({ "error": kind, "message": message }));
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CYBERSEER_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            error_line("usage", e.render().to_string().trim());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error_line("failed", &format!("{e:#}"));
            ExitCode::FAILURE
        }
    }
}
