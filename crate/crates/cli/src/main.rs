#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use csi_recomp::metrics::{baseline_rmse, export_element_series, series_csv, test_rmse};
use csi_recomp::model::ModelKind;
use csi_recomp::report::{build_report, render_series_svg, render_table, RunScore};
use csi_recomp::sim::generate_dataset;
use csi_recomp::store::{
    self, import_external_csi, read_dataset, read_run_dir, read_split, write_dataset, write_run_dir, Dataset,
    ImportStub, RunEvaluation,
};
use csi_recomp::train::{prepare_dataset, run_protocol, split_dataset, PreparedDataset, Split};

use config::{load_config, ResolvedConfig};

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Run(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Run(_) => 3,
        }
    }
}

fn data_err(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

#[derive(Parser)]
#[command(
    name = "csi-recomp",
    version,
    about = "CSI amplitude recomposition from BFMs and camera images"
)]
struct Cli {
    /// Log progress (per-epoch losses while training).
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic (CSI, image) dataset with emulated BFMs.
    Simulate(SimulateArgs),
    /// Recompute the stored BFMs of a dataset from its CSI.
    EmulateBfm(EmulateArgs),
    /// Import a raw complex64 csi.bin as a CSI-only dataset.
    Import(ImportArgs),
    /// Train model kinds over seeds on a shared split.
    Train(TrainArgs),
    /// Re-evaluate a run on the test split.
    Eval(EvalArgs),
    /// Export per-element frequency series (CSV and SVG) for one sample.
    Plot(PlotArgs),
    /// Tabulate mean ± std test RMSE per model kind.
    Report(ReportArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// TOML config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    samples: usize,
    /// Overrides `scene.rng_seed`.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EmulateArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Output directory; defaults to rewriting the dataset in place.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ImportArgs {
    /// File of complex64 little-endian values, layout [sample][k][n][m].
    #[arg(long)]
    csi: PathBuf,
    #[arg(long)]
    k: usize,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    m: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Comma-separated model kinds (mmi, smi-bfm, smi-image) or `all`.
    #[arg(long, default_value = "all")]
    model: String,
    /// Comma-separated seeds; overrides `train.seeds`.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// TOML config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run independent (model, seed) pairs concurrently.
    #[arg(long)]
    parallel: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// Sample index; defaults to the first test sample.
    #[arg(long)]
    sample: Option<usize>,
    /// 1-based `n,m` element; repeatable. Defaults to (1,1), (1,2), (1,3).
    #[arg(long = "element")]
    elements: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directories, or directories containing run directories.
    #[arg(long, num_args = 1.., required = true)]
    runs: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    env_logger::Builder::new()
        .filter_level(if cli.verbose {
            log::LevelFilter::Info
        } else {
            log::LevelFilter::Warn
        })
        .format_timestamp(None)
        .init();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::EmulateBfm(a) => emulate(a),
        Command::Import(a) => import(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Plot(a) => plot(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn simulate(args: SimulateArgs) -> Result<(), CliError> {
    if args.samples == 0 {
        return Err(CliError::Usage("--samples must be at least 1".into()));
    }
    let mut config = load_config(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        config.scene.rng_seed = seed;
    }
    config.scene.validate().map_err(data_err)?;
    let pairs = generate_dataset(&config.scene, args.samples).map_err(data_err)?;
    let dataset = Dataset::from_simulation(&config.scene, pairs).map_err(data_err)?;
    let manifest = write_dataset(&args.out, &dataset).map_err(data_err)?;
    println!(
        "wrote {} samples (K={}, N={}, M={}) to {}",
        manifest.sample_count,
        manifest.k,
        manifest.n,
        manifest.m,
        args.out.display()
    );
    Ok(())
}

fn emulate(args: EmulateArgs) -> Result<(), CliError> {
    let mut dataset = read_dataset(&args.dataset).map_err(data_err)?;
    dataset.bfm = None;
    dataset.bfm = Some(dataset.bfm_or_emulate().map_err(data_err)?);
    let out = args.out.unwrap_or(args.dataset);
    let manifest = write_dataset(&out, &dataset).map_err(data_err)?;
    println!(
        "emulated BFMs for {} samples in {}",
        manifest.sample_count,
        out.display()
    );
    Ok(())
}

fn import(args: ImportArgs) -> Result<(), CliError> {
    let stub = ImportStub {
        k: args.k,
        n: args.n,
        m: args.m,
    };
    let manifest = import_external_csi(&args.csi, stub, &args.out).map_err(data_err)?;
    println!(
        "imported {} CSI samples into {}",
        manifest.sample_count,
        args.out.display()
    );
    Ok(())
}

fn parse_kinds(list: &str) -> Result<Vec<ModelKind>, CliError> {
    if list.trim() == "all" {
        return Ok(ModelKind::ALL.to_vec());
    }
    list.split(',')
        .map(|s| {
            s.trim()
                .parse::<ModelKind>()
                .map_err(|e| CliError::Usage(e.to_string()))
        })
        .collect()
}

/// Loads a dataset and prepares it with the given split and image size.
fn prepare(dataset_dir: &Path, split: Split, config: &ResolvedConfig) -> Result<(Dataset, PreparedDataset), CliError> {
    let dataset = read_dataset(dataset_dir).map_err(data_err)?;
    let bfm = dataset.bfm_or_emulate().map_err(data_err)?;
    let prepared = prepare_dataset(
        &dataset.csi,
        &bfm,
        dataset.images.as_deref(),
        split,
        config.preprocess.image_hw,
    )
    .map_err(data_err)?;
    Ok((dataset, prepared))
}

fn train(args: TrainArgs) -> Result<(), CliError> {
    let kinds = parse_kinds(&args.model)?;
    let mut config = load_config(args.config.as_deref())?;
    if let Some(seeds) = args.seeds {
        config.train.seeds = seeds;
    }
    if args.parallel {
        config.train.deterministic = false;
    }
    config.train.validate().map_err(|e| CliError::Usage(e.to_string()))?;

    let manifest = store::read_manifest(&args.dataset).map_err(data_err)?;
    for &kind in &kinds {
        if kind.uses_image() && !manifest.has_images {
            return Err(CliError::Data(format!(
                "modality missing: {kind} needs images, which {} does not contain",
                args.dataset.display()
            )));
        }
    }
    let split =
        split_dataset(manifest.sample_count, config.train.split_ratio, config.train.split_seed).map_err(data_err)?;
    let (mut dataset, prepared) = prepare(&args.dataset, split.clone(), &config)?;
    dataset.manifest.split = Some(split.clone());
    dataset.manifest.norm_stats = Some(prepared.norm.clone());
    store::update_manifest(&args.dataset, &dataset.manifest).map_err(data_err)?;

    let baseline = baseline_rmse(&prepared);
    info!("train-mean baseline test RMSE {baseline:.5}");
    let outcomes =
        run_protocol(&prepared, &kinds, &config.train, &config.model).map_err(|e| CliError::Usage(e.to_string()))?;
    create_dir(&args.out)?;
    let mut scores = Vec::new();
    let mut failures = Vec::new();
    for outcome in outcomes {
        let dir = args.out.join(format!("{}-seed{}", outcome.kind.slug(), outcome.seed));
        match outcome.result {
            Ok(run) => {
                let rmse =
                    test_rmse(&run, &prepared, config.train.batch_size).map_err(|e| CliError::Run(e.to_string()))?;
                let evaluation = RunEvaluation {
                    test_rmse: rmse,
                    baseline_rmse: baseline,
                    test_samples: prepared.split.test.len(),
                };
                let snapshot = config.snapshot(&args.dataset, outcome.kind, outcome.seed);
                write_run_dir(&dir, &snapshot, &split, &run, &evaluation).map_err(data_err)?;
                println!(
                    "{} seed {}: {} epochs (best {}), test RMSE {rmse:.5} -> {}",
                    outcome.kind,
                    outcome.seed,
                    run.stop_epoch,
                    run.best_epoch,
                    dir.display()
                );
                scores.push(RunScore {
                    kind: outcome.kind,
                    seed: outcome.seed,
                    test_rmse: rmse,
                    test_samples: evaluation.test_samples,
                });
            }
            Err(e) => {
                eprintln!("{} seed {} failed: {e}", outcome.kind, outcome.seed);
                failures.push(e.to_string());
            }
        }
    }
    if !scores.is_empty() {
        let report = build_report(&scores).map_err(|e| CliError::Run(e.to_string()))?;
        print!("{}", render_table(&report));
        println!("train-mean baseline: {baseline:.4}");
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Run(format!(
            "{} of {} runs failed",
            failures.len(),
            failures.len() + scores.len()
        )))
    }
}

fn load_run(run_dir: &Path, dataset_dir: &Path) -> Result<(csi_recomp::train::RunRecord, PreparedDataset), CliError> {
    let (run, _) = read_run_dir(run_dir).map_err(data_err)?;
    let split = read_split(run_dir).map_err(data_err)?;
    let config = config::load_snapshot(run_dir)?;
    let (_, prepared) = prepare(dataset_dir, split, &config)?;
    prepared.check_modalities(run.kind).map_err(data_err)?;
    Ok((run, prepared))
}

fn eval(args: EvalArgs) -> Result<(), CliError> {
    let (run, prepared) = load_run(&args.run, &args.dataset)?;
    let rmse = test_rmse(&run, &prepared, 64).map_err(|e| CliError::Run(e.to_string()))?;
    let baseline = baseline_rmse(&prepared);
    println!(
        "{} seed {}: test RMSE {rmse:.6} over {} samples (train-mean baseline {baseline:.6})",
        run.kind,
        run.seed,
        prepared.split.test.len()
    );
    Ok(())
}

fn parse_element(s: &str) -> Result<(usize, usize), CliError> {
    let bad = || CliError::Usage(format!("element must be `n,m`, got `{s}`"));
    let (n, m) = s.split_once(',').ok_or_else(bad)?;
    Ok((
        n.trim().parse().map_err(|_| bad())?,
        m.trim().parse().map_err(|_| bad())?,
    ))
}

fn plot(args: PlotArgs) -> Result<(), CliError> {
    let elements = if args.elements.is_empty() {
        vec![(1, 1), (1, 2), (1, 3)]
    } else {
        args.elements
            .iter()
            .map(|s| parse_element(s))
            .collect::<Result<_, _>>()?
    };
    let (run, prepared) = load_run(&args.run, &args.dataset)?;
    let sample = args.sample.unwrap_or(prepared.split.test[0]);
    create_dir(&args.out)?;
    for (n, m) in elements {
        let rows = export_element_series(&run, &prepared, sample, (n, m)).map_err(|e| match e {
            csi_recomp::metrics::MetricsError::ElementOutOfRange { .. }
            | csi_recomp::metrics::MetricsError::SampleOutOfRange { .. } => CliError::Usage(e.to_string()),
            other => CliError::Run(other.to_string()),
        })?;
        let stem = args.out.join(format!("element_{n}_{m}"));
        write_text(&stem.with_extension("csv"), &series_csv(&rows))?;
        let title = format!("{} seed {}: element ({n}, {m}), sample {sample}", run.kind, run.seed);
        write_text(&stem.with_extension("svg"), &render_series_svg(&rows, &title))?;
        println!("wrote {}.{{csv,svg}}", stem.display());
    }
    Ok(())
}

/// Expands each path to the run directories it denotes.
fn collect_run_dirs(paths: &[PathBuf]) -> Result<Vec<PathBuf>, CliError> {
    let mut dirs = Vec::new();
    for p in paths {
        if p.join(store::RUN_CONFIG).exists() || p.join(store::RUN_RECORD).exists() {
            dirs.push(p.clone());
            continue;
        }
        let entries = fs::read_dir(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
        let mut children: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|c| c.is_dir())
            .collect();
        children.sort();
        dirs.extend(children);
    }
    Ok(dirs)
}

fn report(args: ReportArgs) -> Result<(), CliError> {
    let mut scores = Vec::new();
    for dir in collect_run_dirs(&args.runs)? {
        match store::read_run_dir(&dir) {
            Ok((run, evaluation)) => scores.push(RunScore {
                kind: run.kind,
                seed: run.seed,
                test_rmse: evaluation.test_rmse,
                test_samples: evaluation.test_samples,
            }),
            Err(e) => warn!("skipping incomplete run {}: {e}", dir.display()),
        }
    }
    if scores.is_empty() {
        return Err(CliError::Data("no completed runs found".into()));
    }
    let report = build_report(&scores).map_err(|e| CliError::Run(e.to_string()))?;
    let table = render_table(&report);
    print!("{table}");
    if let Some(out) = args.out {
        create_dir(&out)?;
        write_text(&out.join("report.txt"), &table)?;
        let json = serde_json::to_string_pretty(&report).expect("report serializes");
        write_text(&out.join("report.json"), &(json + "\n"))?;
    }
    Ok(())
}
