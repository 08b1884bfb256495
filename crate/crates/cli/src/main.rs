use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use polyview_core::pipeline::{self, PipelineConfig};
use polyview_core::profile_ingest::CorpusFormat;

#[derive(Debug, Parser)]
#[command(
    name = "polyview",
    version,
    about = "Segmented-regression analysis of cumulative view profiles"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every stage in order.
    Run(Options),
    /// Fit segmented regressions to the input corpus.
    Fit(Options),
    /// Gate fits by RMSE and extract segment features.
    Features(Options),
    /// Cluster the features of each segment-count group.
    Cluster(Options),
    /// Fit the generative models.
    Model(Options),
    /// Score the models against the real features.
    Score(Options),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Debug, Args)]
struct Options {
    /// Corpus file (CSV or JSON).
    #[arg(long)]
    input: Option<PathBuf>,
    /// Corpus format; inferred from the extension by default.
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Output directory.
    #[arg(long, default_value = "polyview-out")]
    out: PathBuf,
    #[arg(long)]
    rmse_threshold: Option<f64>,
    #[arg(long)]
    max_breakpoints: Option<usize>,
    /// Clusters per segment-count group.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    bins_alpha: Option<usize>,
    #[arg(long)]
    bins_l: Option<usize>,
    /// Histogram cells per axis for the adherence score.
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Also fit the uniform-views control corpus.
    #[arg(long)]
    control: bool,
    /// TOML file whose keys override the flags.
    #[arg(long)]
    config: Option<PathBuf>,
}

/// Later stages start from the configuration recorded by earlier ones.
fn base_config(out: &Path, fresh: bool) -> anyhow::Result<PipelineConfig> {
    if fresh || !out.join("manifest.json").exists() {
        return Ok(PipelineConfig::default());
    }
    let manifest = pipeline::read_manifest(out).with_context(|| format!("reading manifest in {}", out.display()))?;
    Ok(manifest.config.unwrap_or_default())
}

fn merge(base: &mut toml::Table, overrides: toml::Table) {
    for (key, value) in overrides {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, value) => {
                base.insert(key, value);
            }
        }
    }
}

fn build_config(opts: &Options, fresh: bool) -> anyhow::Result<PipelineConfig> {
    let mut config = base_config(&opts.out, fresh)?;
    config.out = opts.out.clone();
    if let Some(input) = &opts.input {
        config.input = input.clone();
    }
    if let Some(format) = opts.format {
        config.format = Some(match format {
            Format::Csv => CorpusFormat::Csv,
            Format::Json => CorpusFormat::Json,
        });
    }
    if let Some(v) = opts.rmse_threshold {
        config.rmse_threshold = v;
    }
    if let Some(v) = opts.max_breakpoints {
        config.fit.max_breakpoints = v;
    }
    if let Some(v) = opts.k {
        config.k = v;
    }
    if let Some(v) = opts.bins_alpha {
        config.models.bins_alpha = v;
    }
    if let Some(v) = opts.bins_l {
        config.models.bins_l = v;
    }
    if let Some(v) = opts.grid {
        config.grid = v;
    }
    if let Some(v) = opts.seed {
        config.seed = v;
    }
    config.control |= opts.control;

    if let Some(path) = &opts.config {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let overrides: toml::Table = text.parse().with_context(|| format!("parsing {}", path.display()))?;
        let mut table = toml::Table::try_from(&config)?;
        merge(&mut table, overrides);
        config = table
            .try_into()
            .with_context(|| format!("applying {}", path.display()))?;
    }
    config.validate()?;
    Ok(config)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let (opts, fresh) = match &cli.command {
        Command::Run(o) | Command::Fit(o) => (o, true),
        Command::Features(o) | Command::Cluster(o) | Command::Model(o) | Command::Score(o) => (o, false),
    };
    let config = build_config(opts, fresh)?;
    let needs_input = matches!(cli.command, Command::Run(_) | Command::Fit(_)) || config.control;
    if needs_input && config.input.as_os_str().is_empty() {
        bail!("--input is required");
    }
    match cli.command {
        Command::Run(_) => {
            let manifest = pipeline::run_pipeline(&config)?;
            if manifest.partial {
                log::warn!(
                    "some groups were skipped; see {}",
                    config.out.join("manifest.json").display()
                );
            }
        }
        Command::Fit(_) => {
            pipeline::run_fit(&config)?;
            if config.control {
                pipeline::run_control(&config)?;
            }
        }
        Command::Features(_) => {
            pipeline::run_features(&config)?;
        }
        Command::Cluster(_) => {
            pipeline::run_cluster(&config)?;
        }
        Command::Model(_) => {
            pipeline::run_model(&config)?;
        }
        Command::Score(_) => {
            pipeline::run_score(&config)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
