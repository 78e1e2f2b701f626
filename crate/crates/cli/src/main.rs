use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use asaerc::analysis::{contribution_trace, correlation_distributions, query_histogram};
use asaerc::config::ExperimentConfig;
use asaerc::hashing;
use asaerc::models::{ModelCheckpoint, ModelKind, ModelSpec};
use asaerc::pipeline::{self, InStage, RunLayout, RunOptions, Stage, StageError};
use asaerc::reservoir::SnapshotStore;
use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "asaerc", version, about = "Attention readouts over a diffusion reservoir")]
struct Cli {
    #[command(flatten)]
    global: Global,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Global {
    /// Experiment config (JSON); built-in defaults when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Root of the run's artifacts; overrides the config's output directory.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,

    /// Overrides the config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for sweep cells.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    /// Regenerate artifacts even when cached ones match.
    #[arg(long, global = true)]
    force: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the benchmark series and their manifest.
    GenData {
        /// Output directory; defaults to `<out-dir>/data`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Roll the reservoir out over a generated dataset.
    RunReservoir {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model and write its checkpoint and history.
    Train {
        /// linear, aerc, asaerc or delay-mlp; defaults to the config's model.
        #[arg(long)]
        model: Option<ModelKind>,
        #[arg(long)]
        data: PathBuf,
        /// Snapshot store; required by every model except delay-mlp.
        #[arg(long)]
        store: Option<PathBuf>,
        /// Checkpoint path; the history goes next to it as history.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on both splits.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        store: Option<PathBuf>,
        /// JSON report; printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Correlation histograms, query histograms or a sensor-count sweep.
    Analyze {
        #[command(subcommand)]
        what: Analyze,
    },
    /// Sensor-count sweep over the config's sweep section.
    Sweep(SweepArgs),
    /// Every stage from data generation to analysis, with caching.
    Pipeline,
    /// Print the JSON Schema of the config file.
    Schema,
    /// Print the fully resolved config.
    ShowConfig,
}

#[derive(Subcommand, Debug)]
enum Analyze {
    Correlations(AnalyzeArgs),
    Queries(AnalyzeArgs),
    Sweep(SweepArgs),
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    store: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    store: PathBuf,
    /// Output directory; defaults to `<out-dir>/sweep`.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load_config(global: &Global) -> anyhow::Result<ExperimentConfig> {
    let mut config = match &global.config {
        Some(path) => ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = global.seed {
        config.seed = seed;
    }
    if let Some(dir) = &global.out_dir {
        config.output.dir = dir.clone();
    }
    if global.threads == 0 {
        bail!("--threads must be at least 1");
    }
    config.sweep.threads = global.threads;
    config.validate()?;
    Ok(config)
}

/// Writes one line to stdout; a closed pipe (`| head`) is not an error.
fn emit(text: &str) -> anyhow::Result<()> {
    match writeln!(io::stdout().lock(), "{text}") {
        Err(e) if e.kind() == io::ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other?),
    }
}

fn load_store(path: &Path) -> asaerc::Result<SnapshotStore> {
    let hash = SnapshotStore::peek_hash(path)?;
    SnapshotStore::load(path, Some(&hash))
}

/// Loads a checkpoint after checking it was trained on exactly these inputs.
fn load_checkpoint(
    path: &Path,
    data: &pipeline::DataOutcome,
    store: Option<&SnapshotStore>,
) -> asaerc::Result<ModelCheckpoint> {
    let kind = ModelCheckpoint::load(path)?.model.kind();
    let input = pipeline::input_hash(kind, &data.key, store)?;
    pipeline::load_model(path, &input)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let g = &cli.global;
    if let Command::Schema = cli.command {
        emit(&serde_json::to_string_pretty(&ExperimentConfig::schema())?)?;
        return Ok(());
    }
    let config = load_config(g).map_err(|e| match e.downcast::<asaerc::Error>() {
        Ok(source) => StageError {
            stage: Stage::Config,
            source,
        }
        .into(),
        Err(e) => e,
    })?;
    let layout = RunLayout::new(&config.output.dir);

    match cli.command {
        Command::Schema => unreachable!("handled above"),
        Command::ShowConfig => emit(&config.to_json())?,
        Command::GenData { out } => {
            let dir = out.unwrap_or_else(|| layout.data_dir());
            let data = pipeline::gen_data(&config, &dir, g.force).in_stage(Stage::Data)?;
            log::info!(
                "{} systems, {} samples -> {} ({})",
                data.series.len(),
                data.dataset.len(),
                dir.display(),
                if data.cache_hit { "cached" } else { "generated" }
            );
        }
        Command::RunReservoir { data, out } => {
            let data = pipeline::load_data(&data).in_stage(Stage::Data)?;
            let (store, hit) =
                pipeline::run_reservoir(&config, &data.dataset, &out, g.force).in_stage(Stage::Reservoir)?;
            log::info!(
                "{} frames -> {} ({})",
                store.len(),
                out.display(),
                if hit { "cached" } else { "computed" }
            );
        }
        Command::Train {
            model,
            data,
            store,
            out,
        } => {
            let data = pipeline::load_data(&data).in_stage(Stage::Data)?;
            let spec = match model {
                Some(kind) if kind != config.model.kind => spec_for(kind, &config.model),
                _ => config.model.clone(),
            };
            let store = store.as_deref().map(load_store).transpose().in_stage(Stage::Reservoir)?;
            let input = pipeline::input_hash(spec.kind, &data.key, store.as_ref()).in_stage(Stage::Train)?;
            let outcome = pipeline::train_model(
                &spec,
                &config.train_config(),
                &data.dataset,
                store.as_ref(),
                &input,
                &out,
                g.force,
            )
            .in_stage(Stage::Train)?;
            if let Some(last) = outcome.history.as_ref().and_then(|h| h.last()) {
                log::info!(
                    "{} trained: train mse {:.4e}, test mse {}",
                    spec.kind,
                    last.train_mse,
                    last.test_mse.map_or("n/a".into(), |v| format!("{v:.4e}"))
                );
            }
            log::info!(
                "checkpoint -> {} ({})",
                out.display(),
                if outcome.cache_hit { "cached" } else { "trained" }
            );
        }
        Command::Evaluate {
            checkpoint,
            data,
            store,
            out,
        } => {
            let data = pipeline::load_data(&data).in_stage(Stage::Data)?;
            let store = store.as_deref().map(load_store).transpose().in_stage(Stage::Reservoir)?;
            let ck = load_checkpoint(&checkpoint, &data, store.as_ref()).in_stage(Stage::Evaluate)?;
            let key = hashing::hash_json(&"evaluate", &[&ck.config_hash.unwrap_or_default()]);
            let eval =
                pipeline::evaluate_model(&ck.model, &data.dataset, store.as_ref(), &key).in_stage(Stage::Evaluate)?;
            let text = serde_json::to_string_pretty(&eval)?;
            match out {
                Some(path) => {
                    if let Some(parent) = path.parent() {
                        fs::create_dir_all(parent)?;
                    }
                    fs::write(&path, text + "\n")?;
                }
                None => emit(&text)?,
            }
        }
        Command::Analyze { what } => match what {
            Analyze::Correlations(a) => analyze(&config, &a, false)?,
            Analyze::Queries(a) => analyze(&config, &a, true)?,
            Analyze::Sweep(s) => sweep(&config, &layout, &s, g.force)?,
        },
        Command::Sweep(s) => sweep(&config, &layout, &s, g.force)?,
        Command::Pipeline => {
            let manifest = pipeline::run_pipeline(
                &config,
                RunOptions {
                    force: g.force,
                    threads: g.threads,
                },
            )?;
            for s in &manifest.stages {
                log::info!(
                    "{:<10} {} {:>8.2} s",
                    s.stage.name(),
                    if s.cache_hit { "cached  " } else { "computed" },
                    s.seconds
                );
            }
            emit(&layout.run_manifest().display().to_string())?;
        }
    }
    Ok(())
}

/// The config's model section with another kind substituted; the delay MLP
/// keeps only the hidden width.
fn spec_for(kind: ModelKind, base: &ModelSpec) -> ModelSpec {
    match kind {
        ModelKind::DelayMlp => ModelSpec::delay_mlp(base.delay, base.hidden),
        _ => ModelSpec { kind, ..base.clone() },
    }
}

fn analyze(config: &ExperimentConfig, a: &AnalyzeArgs, queries: bool) -> anyhow::Result<()> {
    let data = pipeline::load_data(&a.data).in_stage(Stage::Data)?;
    let store = load_store(&a.store).in_stage(Stage::Reservoir)?;
    let ck = load_checkpoint(&a.checkpoint, &data, Some(&store)).in_stage(Stage::Analyze)?;
    let key = hashing::hash_json(&("analyze", &config.analysis), &[&ck.config_hash.unwrap_or_default()]);
    let result: asaerc::Result<()> = (|| {
        let features = ck.model.features(&data.dataset, Some(&store))?;
        if queries {
            let bins = config.analysis.query_bins;
            let hist = query_histogram(&ck.model, &data.dataset, &features, bins, bins)?;
            pipeline::write_queries(&a.out, &hist, &key)
        } else {
            let trace = contribution_trace(&ck.model, &data.dataset, &features)?;
            let report = correlation_distributions(&trace, config.analysis.correlation_bins)?;
            pipeline::write_correlations(&a.out, &report, &key)
        }
    })();
    result.in_stage(Stage::Analyze)?;
    log::info!("analysis -> {}", a.out.display());
    Ok(())
}

fn sweep(config: &ExperimentConfig, layout: &RunLayout, s: &SweepArgs, force: bool) -> anyhow::Result<()> {
    let data = pipeline::load_data(&s.data).in_stage(Stage::Data)?;
    let store = load_store(&s.store).in_stage(Stage::Reservoir)?;
    let dir = s.out.clone().unwrap_or_else(|| layout.sweep_dir());
    let (result, hit) = pipeline::sweep(config, &data.dataset, &store, &dir, force).in_stage(Stage::Sweep)?;
    let failed = result.rows.iter().filter(|r| r.error.is_some()).count();
    log::info!(
        "{} cells, {} failed -> {} ({})",
        result.rows.len(),
        failed,
        dir.display(),
        if hit { "cached" } else { "computed" }
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<StageError>().map_or(1, |s| s.stage.exit_code());
            ExitCode::from(code as u8)
        }
    }
}
