//! Command-line surface. All user-facing failures exit nonzero with a
//! one-line message; panics would indicate a bug, not bad input.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lsinet::checkpoint;
use lsinet::config::RunConfig;
use lsinet::data::{borders, load_csv, split, synthetic_series, Scaler, SeriesTable, WindowDataset};
use lsinet::error::{Error, Result};
use lsinet::gradcheck::MODEL_TOLERANCE;
use lsinet::heatmap::{scatter_and_block_pattern, write_heatmap, HeatmapKind};
use lsinet::metrics::{format_mean_std, MetricsRow, MetricsTable};
use lsinet::model::{reference_gradcheck, Model};
use lsinet::rng::Streams;
use lsinet::train::{fit, evaluate, TrainReport};

#[derive(Parser)]
#[command(
    name = "lsinet",
    about = "Linear sparse-interaction networks for long-horizon forecasting",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train across the configured seeds; writes metrics, checkpoints,
    /// reports, heatmaps, and the resolved config into the output directory
    Train(RunArgs),
    /// Score a checkpoint on its dataset's test split
    Eval(EvalArgs),
    /// Train the full model and each flagged ablation side by side
    Ablate(AblateArgs),
    /// Write a checkpoint's connection matrices as text
    #[command(name = "export-heatmap")]
    ExportHeatmap(HeatmapArgs),
    /// Finite-difference the reference tiny model and report the worst error
    Gradcheck,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Config file of `key = value` lines; flags override it
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset name (etth1, etth2, ettm1, ettm2, weather, electricity,
    /// synthetic, or a custom name with --data)
    #[arg(long)]
    dataset: Option<String>,
    /// CSV path; defaults to <data-dir>/<Dataset>.csv
    #[arg(long)]
    data: Option<PathBuf>,
    /// Directory searched for dataset CSVs (env LSINET_DATA_DIR also works)
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// History length
    #[arg(long)]
    n: Option<usize>,
    /// Forecast horizon
    #[arg(long)]
    pred_len: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Regularization cadence (epochs)
    #[arg(long)]
    eta: Option<usize>,
    /// Target fraction of active connections
    #[arg(long)]
    delta: Option<f64>,
    /// Sparsity-loss weight
    #[arg(long)]
    lambda: Option<f64>,
    /// Gumbel-Softmax temperature
    #[arg(long)]
    tau: Option<f64>,
    /// Use seeds 0..count
    #[arg(long)]
    seeds: Option<u64>,
    /// Explicit comma-separated seed list; wins over --seeds
    #[arg(long)]
    seed_list: Option<String>,
    /// Ablation: identity gates (no learned interactions)
    #[arg(long)]
    no_msim: bool,
    /// Ablation: dense probability gates, no sampling
    #[arg(long)]
    use_dense_gates: bool,
    /// Ablation: drop the sparsity regularizer
    #[arg(long)]
    no_asrl: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint written by train
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Which variants to run next to the full model
    #[arg(long, value_delimiter = ',', default_value = "no_msim,no_asrl")]
    variants: Vec<String>,
}

#[derive(Args)]
struct HeatmapArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Head index; omit to export every head
    #[arg(long)]
    head: Option<usize>,
    /// Block index
    #[arg(long, default_value_t = 0)]
    block: usize,
    /// probs (connection probabilities) or hard (binary gates)
    #[arg(long, default_value = "hard")]
    what: String,
    /// Output directory; defaults next to the checkpoint
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Ablate(args) => cmd_ablate(args),
        Command::ExportHeatmap(args) => cmd_export_heatmap(args),
        Command::Gradcheck => cmd_gradcheck(),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn resolve_config(args: &RunArgs) -> Result<RunConfig> {
    let mut cfg = match (&args.config, &args.dataset) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, Some(name)) => RunConfig::for_dataset(name),
        (None, None) => {
            return Err(Error::Config(
                "pass --dataset <name> or --config <file>".into(),
            ))
        }
    };
    if let Some(name) = &args.dataset {
        if args.config.is_some() {
            cfg.set("dataset", name)?;
        }
    }
    if let Some(v) = &args.data {
        cfg.data = v.clone();
    }
    if let Some(v) = &args.out {
        cfg.out = v.clone();
    }
    if let Some(v) = args.n {
        cfg.n = v;
    }
    if let Some(v) = args.pred_len {
        cfg.pred_len = v;
    }
    if let Some(v) = args.epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = args.lr {
        cfg.train.lr = v;
    }
    if let Some(v) = args.batch_size {
        cfg.train.batch_size = v;
    }
    if let Some(v) = args.eta {
        cfg.train.eta = v;
    }
    if let Some(v) = args.delta {
        cfg.train.delta = v;
    }
    if let Some(v) = args.lambda {
        cfg.train.lambda = v;
    }
    if let Some(v) = args.tau {
        cfg.train.tau = v;
    }
    if let Some(count) = args.seeds {
        cfg.train.seeds = (0..count).collect();
    }
    if let Some(list) = &args.seed_list {
        cfg.set("seeds", list)?;
    }
    cfg.no_msim |= args.no_msim;
    cfg.use_dense_gates |= args.use_dense_gates;
    cfg.no_asrl |= args.no_asrl;
    cfg.validate()?;
    Ok(cfg)
}

fn data_dir(flag: &Option<PathBuf>) -> PathBuf {
    flag.clone()
        .or_else(|| std::env::var_os("LSINET_DATA_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("data"))
}

/// Loads (or generates) the dataset and standardizes it on train-split
/// statistics.
fn load_table(cfg: &RunConfig, dir: &Path) -> Result<SeriesTable> {
    let table = if cfg.dataset == "synthetic" {
        // fixed generator seed: the dataset is part of the experiment, not
        // of any one training run
        synthetic_series(2000, 3, &mut Streams::new(7).misc(0))
    } else {
        let path = cfg.resolve_data_path(dir);
        if !path.exists() {
            return Err(Error::Data(format!(
                "dataset file {} not found; pass --data or set LSINET_DATA_DIR",
                path.display()
            )));
        }
        load_csv(&path)?
    };
    let (train_end, _, _) = borders(table.rows, cfg.split_spec())?;
    let scaler = Scaler::fit(&table, train_end)?;
    Ok(scaler.transform(&table))
}

struct Splits<'a> {
    train: WindowDataset<'a>,
    val: WindowDataset<'a>,
    test: WindowDataset<'a>,
}

fn make_splits<'a>(cfg: &RunConfig, table: &'a SeriesTable) -> Result<Splits<'a>> {
    let [tr, va, te] = split(table, cfg.split_spec(), cfg.n, cfg.pred_len)?;
    Ok(Splits {
        train: WindowDataset::new(table, tr, cfg.n, cfg.pred_len),
        val: WindowDataset::new(table, va, cfg.n, cfg.pred_len),
        test: WindowDataset::new(table, te, cfg.n, cfg.pred_len),
    })
}

/// Trains one seed and writes its checkpoint + report; returns the report.
fn run_seed(cfg: &RunConfig, splits: &Splits<'_>, seed: u64, out: &Path) -> Result<TrainReport> {
    let model = Model::<f32>::new(cfg.model_config()?, &mut Streams::new(seed).init())?
        .with_ablations(cfg.no_msim, cfg.use_dense_gates);
    let mut train_cfg = cfg.train.clone();
    if cfg.no_asrl || cfg.no_msim {
        train_cfg.lambda = 0.0;
    }
    let report = fit(&train_cfg, &model, &splits.train, &splits.val, &splits.test, seed)?;
    checkpoint::save(&out.join(format!("seed{seed}.lsin")), cfg, &model.params())?;
    std::fs::write(out.join(format!("seed{seed}.report.jsonl")), report.to_jsonl())?;
    let heatmap_dir = out.join(format!("seed{seed}.heatmaps"));
    for b in 0..model.blocks.len() {
        for h in 0..model.blocks[b].heads.len() {
            let cm = model.connection_snapshot(b, h)?;
            write_heatmap(&heatmap_dir, b, h, HeatmapKind::Hard, &cm)?;
            write_heatmap(&heatmap_dir, b, h, HeatmapKind::Probs, &cm)?;
        }
    }
    Ok(report)
}

fn cmd_train(args: RunArgs) -> Result<ExitCode> {
    let cfg = resolve_config(&args)?;
    let dir = data_dir(&args.data_dir);
    std::fs::create_dir_all(&cfg.out)?;
    std::fs::write(cfg.out.join("config.txt"), cfg.to_text())?;
    let table = load_table(&cfg, &dir)?;
    let splits = make_splits(&cfg, &table)?;

    let mut metrics = MetricsTable::new();
    for &seed in &cfg.train.seeds {
        log::info!("training seed {seed}");
        let report = run_seed(&cfg, &splits, seed, &cfg.out)?;
        log::info!(
            "seed {seed}: best epoch {}, test mse {:.6}, mae {:.6}",
            report.best_epoch,
            report.test.mse,
            report.test.mae
        );
        metrics.push(MetricsRow {
            dataset: cfg.dataset.clone(),
            pred_len: cfg.pred_len,
            seed,
            mse: report.test.mse,
            mae: report.test.mae,
        })?;
    }
    std::fs::write(cfg.out.join("metrics.tsv"), metrics.to_tsv())?;
    for a in metrics.aggregates() {
        println!(
            "{} P={}: mse {}  mae {}  ({} seeds)",
            a.dataset,
            a.pred_len,
            format_mean_std(a.mse_mean, a.mse_std),
            format_mean_std(a.mae_mean, a.mae_std),
            a.seeds
        );
    }
    println!("outputs in {}", cfg.out.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_eval(args: EvalArgs) -> Result<ExitCode> {
    let ckpt = checkpoint::load(&args.checkpoint)?;
    let mut cfg = ckpt.config.clone();
    if let Some(data) = &args.data {
        cfg.data = data.clone();
    }
    let dtype = ckpt
        .entries
        .first()
        .map(|e| e.dtype.clone())
        .ok_or_else(|| Error::Data("checkpoint holds no parameters".into()))?;
    if dtype != "f32" {
        return Err(Error::Data(format!(
            "checkpoint computes at {dtype}; this command evaluates f32 checkpoints"
        )));
    }
    let table = load_table(&cfg, &data_dir(&args.data_dir))?;
    let splits = make_splits(&cfg, &table)?;
    let model = Model::<f32>::new(cfg.model_config()?, &mut Streams::new(0).init())?
        .with_ablations(cfg.no_msim, cfg.use_dense_gates);
    ckpt.restore(&model.params())?;
    let m = evaluate(&model, &splits.test, cfg.train.batch_size)?;
    println!("test mse {:.6}", m.mse);
    println!("test mae {:.6}", m.mae);
    println!("test mse (normalized) {:.6}", m.mse_norm);
    println!("test mae (normalized) {:.6}", m.mae_norm);
    Ok(ExitCode::SUCCESS)
}

fn cmd_ablate(args: AblateArgs) -> Result<ExitCode> {
    let base = resolve_config(&args.run)?;
    let dir = data_dir(&args.run.data_dir);
    std::fs::create_dir_all(&base.out)?;
    let table = load_table(&base, &dir)?;

    let mut variants: Vec<(String, RunConfig)> = vec![("full".into(), base.clone())];
    for v in &args.variants {
        let mut cfg = base.clone();
        match v.as_str() {
            "no_msim" => cfg.no_msim = true,
            "use_dense_gates" => cfg.use_dense_gates = true,
            "no_asrl" => cfg.no_asrl = true,
            other => {
                return Err(Error::Config(format!(
                    "unknown ablation '{other}' (no_msim, use_dense_gates, no_asrl)"
                )))
            }
        }
        variants.push((v.clone(), cfg));
    }

    let mut metrics = MetricsTable::new();
    for (label, cfg) in &variants {
        let out = base.out.join(label);
        std::fs::create_dir_all(&out)?;
        std::fs::write(out.join("config.txt"), cfg.to_text())?;
        let splits = make_splits(cfg, &table)?;
        for &seed in &cfg.train.seeds {
            log::info!("ablation '{label}', seed {seed}");
            let report = run_seed(cfg, &splits, seed, &out)?;
            metrics.push(MetricsRow {
                dataset: format!("{}[{label}]", cfg.dataset),
                pred_len: cfg.pred_len,
                seed,
                mse: report.test.mse,
                mae: report.test.mae,
            })?;
        }
    }
    std::fs::write(base.out.join("ablation.tsv"), metrics.to_tsv())?;
    for a in metrics.aggregates() {
        println!(
            "{} P={}: mse {}  mae {}",
            a.dataset,
            a.pred_len,
            format_mean_std(a.mse_mean, a.mse_std),
            format_mean_std(a.mae_mean, a.mae_std)
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_export_heatmap(args: HeatmapArgs) -> Result<ExitCode> {
    let kind: HeatmapKind = args.what.parse()?;
    let ckpt = checkpoint::load(&args.checkpoint)?;
    let cfg = &ckpt.config;
    let model = Model::<f32>::new(cfg.model_config()?, &mut Streams::new(0).init())?;
    ckpt.restore(&model.params())?;
    let out = args.out.clone().unwrap_or_else(|| {
        args.checkpoint
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."))
    });
    let heads = match args.head {
        Some(h) => vec![h],
        None => (0..cfg.heads).collect(),
    };
    for &h in &heads {
        let cm = model.connection_snapshot(args.block, h)?;
        let (matrix, meta) = write_heatmap(&out, args.block, h, kind, &cm)?;
        let (block, isolated) = scatter_and_block_pattern(&cm);
        println!(
            "block {} head {h}: sparsity {:.4}, 2x2 block {}, isolated point {} -> {}",
            args.block,
            cm.sparsity(),
            if block { "yes" } else { "no" },
            if isolated { "yes" } else { "no" },
            matrix.display()
        );
        let _ = meta;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_gradcheck() -> Result<ExitCode> {
    let report = reference_gradcheck()?;
    println!(
        "checked {} coordinates, max relative error {:.3e}",
        report.coords_checked, report.max_rel_err
    );
    println!("worst: {}", report.worst);
    if report.passes(MODEL_TOLERANCE) {
        println!("PASS (tolerance {MODEL_TOLERANCE:.0e})");
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("FAIL (tolerance {MODEL_TOLERANCE:.0e})");
        Ok(ExitCode::FAILURE)
    }
}
