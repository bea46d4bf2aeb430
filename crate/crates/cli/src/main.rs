//! Command-line entry point: `train`, `eval`, and `diagnose`.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 training divergence.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cbnn_core::boost::{BoostConfig, BoostError, EnsembleModel};
use cbnn_core::data::{self, DataError, Dataset};
use cbnn_core::engine::{self, EngineError, Method, RunRecord};
use cbnn_core::learner::LearnerError;
use cbnn_core::metrics::{self, MetricsError};
use cbnn_core::persist::{self, PersistError};

use config::{DatasetSpec, RunConfigDocument};

const OUTPUT_ROOT_ENV: &str = "CBNN_OUTPUT_ROOT";

#[derive(Parser)]
#[command(
    name = "cbnn",
    about = "Checkpoint-boosted neural network training, evaluation, and diagnostics",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write a run directory.
    Train(Box<TrainArgs>),
    /// Evaluate a saved run on a dataset.
    Eval(EvalArgs),
    /// Emit diagnostic CSV files for a saved run.
    Diagnose(DiagnoseArgs),
}

#[derive(Args, Clone, Default)]
struct DatasetArgs {
    /// Dataset kind: blobs | csv | idx. Overrides the config file.
    #[arg(long)]
    dataset: Option<String>,
    /// CSV file path (kind csv).
    #[arg(long)]
    csv_path: Option<PathBuf>,
    /// Label column index; defaults to the last column.
    #[arg(long)]
    label_col: Option<usize>,
    /// IDX image file (kind idx).
    #[arg(long)]
    idx_images: Option<PathBuf>,
    /// IDX label file (kind idx).
    #[arg(long)]
    idx_labels: Option<PathBuf>,
    /// Samples per class (kind blobs).
    #[arg(long)]
    blobs_per_class: Option<usize>,
    /// Class count (kind blobs).
    #[arg(long)]
    blobs_k: Option<usize>,
    /// Feature dimension (kind blobs).
    #[arg(long)]
    blobs_dim: Option<usize>,
    /// Cluster spread (kind blobs).
    #[arg(long)]
    blobs_spread: Option<f64>,
    /// Generation seed (kind blobs).
    #[arg(long)]
    blobs_seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    /// JSON run-configuration document; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    data: DatasetArgs,
    /// Training method: cbnn | single | horizontal.
    #[arg(long)]
    method: Option<String>,
    /// Deviation rate.
    #[arg(long)]
    eta: Option<f64>,
    /// Training iterations per checkpoint.
    #[arg(long, value_name = "T_PER_CKPT")]
    t: Option<usize>,
    /// Total training iterations.
    #[arg(long)]
    total_iters: Option<usize>,
    /// Final-model weight estimate.
    #[arg(long)]
    lambda0: Option<f64>,
    /// Error-rate clamp in (0, 0.5).
    #[arg(long)]
    error_floor: Option<f64>,
    /// Hidden layer widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    /// L2 penalty coefficient.
    #[arg(long)]
    l2: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    base_rate: Option<f64>,
    #[arg(long)]
    decay_factor: Option<f64>,
    #[arg(long)]
    decay_every_epochs: Option<usize>,
    #[arg(long)]
    warmup_epochs: Option<usize>,
    #[arg(long)]
    test_fraction: Option<f64>,
    /// Disable stratified splitting.
    #[arg(long)]
    no_stratify: bool,
    /// Minority class fraction for step imbalance.
    #[arg(long)]
    imbalance_mu: Option<f64>,
    /// Majority/minority ratio for step imbalance.
    #[arg(long)]
    imbalance_rho: Option<f64>,
    /// Seed of the imbalance transform (defaults to the run seed).
    #[arg(long)]
    imbalance_seed: Option<u64>,
    /// Rebalance the training split by minority oversampling.
    #[arg(long)]
    oversample: bool,
    #[arg(long)]
    seed: Option<u64>,
    /// Output run directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Run directory produced by `train`.
    run_dir: PathBuf,
    #[command(flatten)]
    data: DatasetArgs,
    /// Evaluate on this side of the recorded split: train | test | full.
    #[arg(long, default_value = "test")]
    on: String,
    /// Keep only this many checkpoints, evenly spaced, final model included.
    #[arg(long)]
    select: Option<usize>,
    /// Rescale predictions by inverse training-set class priors.
    #[arg(long)]
    threshold_priors: bool,
    /// Also print a per-class error breakdown.
    #[arg(long)]
    per_class: bool,
}

#[derive(Args)]
struct DiagnoseArgs {
    /// Run directory produced by `train`.
    run_dir: PathBuf,
    #[command(flatten)]
    data: DatasetArgs,
    /// Side of the recorded split used for correlation: train | test | full.
    #[arg(long, default_value = "test")]
    on: String,
    /// Emit the member-correlation matrix (correlation.csv).
    #[arg(long)]
    correlation: bool,
    /// Emit per-class average final sample weights (class_weights.csv).
    #[arg(long)]
    class_weights: bool,
    /// Emit a loss-surface grid (surface.csv) spanned by three member
    /// indices.
    #[arg(long, num_args = 3, value_names = ["P1", "P2", "P3"])]
    surface: Option<Vec<usize>>,
    /// Grid resolution per axis for --surface.
    #[arg(long, default_value_t = 25)]
    grid_res: usize,
    /// Padding around the anchors for --surface, as a fraction of the span.
    #[arg(long, default_value_t = 0.25)]
    grid_pad: f64,
    /// Output directory for the CSV files; defaults to the run directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(String),
    Divergence(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Divergence(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Divergence(m) => f.write_str(m),
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::InvalidArgument(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Diverged { .. } | EngineError::FinalModelRejected { .. } => {
                CliError::Divergence(e.to_string())
            }
            EngineError::Data(d) => d.into(),
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl From<BoostError> for CliError {
    fn from(e: BoostError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<LearnerError> for CliError {
    fn from(e: LearnerError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<PersistError> for CliError {
    fn from(e: PersistError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::InvalidArgument(_) | MetricsError::ShapeMismatch(_) => {
                CliError::Usage(e.to_string())
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Train(args) => cmd_train(*args),
        Command::Eval(args) => cmd_eval(args),
        Command::Diagnose(args) => cmd_diagnose(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

fn dataset_spec_from_args(args: &DatasetArgs) -> Result<Option<DatasetSpec>, CliError> {
    let Some(kind) = args.dataset.as_deref() else {
        return Ok(None);
    };
    let spec = match kind {
        "blobs" => DatasetSpec::Blobs {
            per_class: args.blobs_per_class.unwrap_or(200),
            k: args.blobs_k.unwrap_or(3),
            dim: args.blobs_dim.unwrap_or(2),
            spread: args.blobs_spread.unwrap_or(1.6),
            seed: args.blobs_seed.unwrap_or(0),
        },
        "csv" => DatasetSpec::Csv {
            path: args
                .csv_path
                .clone()
                .ok_or_else(|| CliError::Usage("--csv-path is required for --dataset csv".into()))?,
            label_col: args.label_col,
        },
        "idx" => DatasetSpec::Idx {
            images: args.idx_images.clone().ok_or_else(|| {
                CliError::Usage("--idx-images is required for --dataset idx".into())
            })?,
            labels: args.idx_labels.clone().ok_or_else(|| {
                CliError::Usage("--idx-labels is required for --dataset idx".into())
            })?,
        },
        other => {
            return Err(CliError::Usage(format!(
                "unknown dataset kind '{other}' (expected blobs, csv, or idx)"
            )))
        }
    };
    Ok(Some(spec))
}

fn load_source(spec: &DatasetSpec) -> Result<Dataset, CliError> {
    let ds = match spec {
        DatasetSpec::Csv { path, label_col } => data::load_csv(path, *label_col)?,
        DatasetSpec::Idx { images, labels } => data::load_idx(images, labels)?,
        DatasetSpec::Blobs {
            per_class,
            k,
            dim,
            spread,
            seed,
        } => data::make_blobs(*per_class, *k, *dim, *spread, *seed)?,
    };
    Ok(ds)
}

/// Train/test material, with the training split already imbalance-adjusted.
struct PreparedData {
    train: Dataset,
    test: Dataset,
    full: Dataset,
}

fn prepare_data(doc: &RunConfigDocument) -> Result<PreparedData, CliError> {
    let source = load_source(&doc.dataset)?;
    let (mut train, test) = data::split(&source, doc.test_fraction, doc.seed, doc.stratified)?;
    if let Some(spec) = &doc.imbalance {
        train = data::step_imbalance(&train, spec)?;
        if doc.oversample {
            train = data::oversample_minority(&train, spec.seed.wrapping_add(1))?;
        }
    }
    Ok(PreparedData {
        train,
        test,
        full: source,
    })
}

fn resolve_train_config(args: &TrainArgs) -> Result<RunConfigDocument, CliError> {
    let mut doc: RunConfigDocument = if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Data(format!("failed to read {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("bad config {}: {e}", path.display())))?
    } else {
        let spec = dataset_spec_from_args(&args.data)?.ok_or_else(|| {
            CliError::Usage("a dataset is required: pass --dataset or --config".into())
        })?;
        RunConfigDocument::with_dataset(spec)
    };

    // Flags win over the document.
    if let Some(spec) = dataset_spec_from_args(&args.data)? {
        doc.dataset = spec;
    }
    if let Some(method) = &args.method {
        doc.method = match method.as_str() {
            "cbnn" => Method::Cbnn,
            "single" => Method::Single,
            "horizontal" => Method::Horizontal,
            other => {
                return Err(CliError::Usage(format!(
                    "unknown method '{other}' (expected cbnn, single, or horizontal)"
                )))
            }
        };
    }
    if let Some(v) = args.eta {
        doc.eta = v;
    }
    if let Some(v) = args.t {
        doc.iters_per_checkpoint = v;
    }
    if let Some(v) = args.total_iters {
        doc.total_iters = v;
    }
    if args.lambda0.is_some() {
        doc.lambda0 = args.lambda0;
    }
    if args.error_floor.is_some() {
        doc.error_floor = args.error_floor;
    }
    if let Some(v) = &args.hidden {
        doc.hidden = v.clone();
    }
    if let Some(v) = args.l2 {
        doc.l2 = v;
    }
    if let Some(v) = args.batch_size {
        doc.batch_size = v;
    }
    if let Some(v) = args.base_rate {
        doc.base_rate = v;
    }
    if let Some(v) = args.decay_factor {
        doc.decay_factor = v;
    }
    if let Some(v) = args.decay_every_epochs {
        doc.decay_every_epochs = v;
    }
    if let Some(v) = args.warmup_epochs {
        doc.warmup_epochs = v;
    }
    if let Some(v) = args.test_fraction {
        doc.test_fraction = v;
    }
    if args.no_stratify {
        doc.stratified = false;
    }
    if args.imbalance_mu.is_some() || args.imbalance_rho.is_some() {
        let mu = args
            .imbalance_mu
            .or(doc.imbalance.as_ref().map(|s| s.mu))
            .ok_or_else(|| CliError::Usage("--imbalance-mu is required".into()))?;
        let rho = args
            .imbalance_rho
            .or(doc.imbalance.as_ref().map(|s| s.rho))
            .ok_or_else(|| CliError::Usage("--imbalance-rho is required".into()))?;
        let seed = args
            .imbalance_seed
            .or(doc.imbalance.as_ref().map(|s| s.seed))
            .unwrap_or(args.seed.unwrap_or(doc.seed));
        doc.imbalance = Some(cbnn_core::ImbalanceSpec { mu, rho, seed });
    }
    if args.oversample {
        doc.oversample = true;
    }
    if let Some(v) = args.seed {
        doc.seed = v;
    }
    if args.out.is_some() {
        doc.out_dir = args.out.clone();
    }
    Ok(doc)
}

fn default_out_dir(doc: &RunConfigDocument) -> PathBuf {
    let root = std::env::var_os(OUTPUT_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"));
    root.join(format!("{}-seed{}", doc.method, doc.seed))
}

fn boost_config(doc: &RunConfigDocument, k: usize) -> Result<BoostConfig, CliError> {
    let mut cfg = BoostConfig::new(doc.eta, doc.iters_per_checkpoint, doc.total_iters, k)?;
    if let Some(lambda0) = doc.lambda0 {
        cfg.lambda0 = lambda0;
    }
    cfg.error_floor = doc.error_floor;
    cfg.validate()?;
    Ok(cfg)
}

// Seven significant digits everywhere, so downstream tolerance checks have
// enough precision to work with.
fn print_checkpoint_table(record: &RunRecord) {
    println!(
        "{:>6} {:>13} {:>13} {:>13} {:>13} {:>13} {:>13} {:>13} {:>13}",
        "step", "error", "lambda", "z", "sum_lambda", "train_err", "test_err", "bound", "exp_loss"
    );
    for meta in &record.checkpoints {
        let test = meta
            .test_error
            .map(|e| format!("{e:>13.6e}"))
            .unwrap_or_else(|| format!("{:>13}", "-"));
        println!(
            "{:>6} {:>13.6e} {:>13.6e} {:>13.6e} {:>13.6e} {:>13.6e} {test} {:>13.6e} {:>13.6e}",
            meta.step,
            meta.error,
            meta.lambda,
            meta.z,
            meta.budget_before,
            meta.train_error,
            meta.bound,
            meta.ensemble_exp_loss,
        );
    }
    if !record.rejected_steps.is_empty() {
        println!("rejected checkpoints at steps {:?}", record.rejected_steps);
    }
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let doc = resolve_train_config(&args)?;
    // Resolve and load everything before touching the output directory, so
    // a bad dataset leaves no trace on disk.
    let prepared = prepare_data(&doc)?;
    let out_dir = doc.out_dir.clone().unwrap_or_else(|| default_out_dir(&doc));

    let effective = serde_json::to_string_pretty(&doc)
        .map_err(|e| CliError::Usage(format!("config serialization failed: {e}")))?;
    println!("effective config:\n{effective}");

    let learner_cfg = doc.learner();
    let sched = doc.schedule();
    let (ensemble, record) = match doc.method {
        Method::Cbnn => {
            let cfg = boost_config(&doc, prepared.train.k())?;
            engine::run_cbnn(
                &prepared.train,
                Some(&prepared.test),
                &cfg,
                &learner_cfg,
                &sched,
                doc.seed,
            )?
        }
        Method::Single => engine::run_single(
            &prepared.train,
            Some(&prepared.test),
            &learner_cfg,
            &sched,
            doc.total_iters,
            doc.seed,
        )?,
        Method::Horizontal => engine::run_horizontal_voting(
            &prepared.train,
            Some(&prepared.test),
            &learner_cfg,
            &sched,
            doc.total_iters,
            doc.iters_per_checkpoint,
            doc.seed,
        )?,
    };

    print_checkpoint_table(&record);

    let test_pred = engine::ensemble_predictions(&ensemble, &prepared.test)?;
    let test_error = metrics::error_rate(test_pred.view(), prepared.test.labels());
    let train_pred = engine::ensemble_predictions(&ensemble, &prepared.train)?;
    let train_error = metrics::error_rate(train_pred.view(), prepared.train.labels());
    println!("ensemble members: {}", ensemble.len());
    println!("ensemble train error: {train_error:.6e}");
    println!("ensemble test error: {test_error:.6e}");
    if !record.segment_seconds.is_empty() {
        let total: f64 = record.segment_seconds.iter().sum();
        println!(
            "training wall-clock: {total:.3}s over {} segments",
            record.segment_seconds.len()
        );
    }

    persist::save_run(&record, &ensemble, &out_dir)?;
    std::fs::write(out_dir.join("config.json"), format!("{effective}\n"))
        .map_err(|e| CliError::Data(format!("failed to write config: {e}")))?;
    println!("run written to {}", out_dir.display());
    Ok(())
}

fn load_run_and_data(
    run_dir: &Path,
    data_args: &DatasetArgs,
    side: &str,
) -> Result<(RunRecord, EnsembleModel, Dataset, Dataset), CliError> {
    let (record, ensemble) = persist::load_run(run_dir)?;
    // Dataset flags win; otherwise rebuild from the saved config document.
    let doc: RunConfigDocument = if data_args.dataset.is_some() {
        let spec = dataset_spec_from_args(data_args)?.expect("dataset flag present");
        let mut doc = RunConfigDocument::with_dataset(spec);
        doc.seed = record.seed;
        doc
    } else {
        let path = run_dir.join("config.json");
        let text = std::fs::read_to_string(&path).map_err(|e| {
            CliError::Data(format!(
                "no dataset flags and no config at {}: {e}",
                path.display()
            ))
        })?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Data(format!("bad config {}: {e}", path.display())))?
    };
    let prepared = prepare_data(&doc)?;
    let eval_set = match side {
        "train" => prepared.train.clone(),
        "test" => prepared.test,
        "full" => prepared.full,
        other => {
            return Err(CliError::Usage(format!(
                "unknown split side '{other}' (expected train, test, or full)"
            )))
        }
    };
    Ok((record, ensemble, prepared.train, eval_set))
}

fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    let (record, ensemble, _, eval_set) = load_run_and_data(&args.run_dir, &args.data, &args.on)?;
    let ensemble = match args.select {
        Some(count) => engine::select_checkpoints(&ensemble, count)?,
        None => ensemble,
    };
    if eval_set.k() != record.classes {
        return Err(CliError::Data(format!(
            "dataset has {} classes but the run was trained with {}",
            eval_set.k(),
            record.classes
        )));
    }

    let probabilities = engine::ensemble_predictions(&ensemble, &eval_set)?;
    let predictions: Vec<Vec<f64>> = if args.threshold_priors {
        let total: f64 = record.train_class_counts.iter().sum::<usize>() as f64;
        let priors: Vec<f64> = record
            .train_class_counts
            .iter()
            .map(|&c| c as f64 / total)
            .collect();
        metrics::threshold_with_priors(probabilities.view(), &priors)?
    } else {
        probabilities
            .rows()
            .into_iter()
            .map(|r| r.to_vec())
            .collect()
    };

    let classes: Vec<usize> = predictions
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0usize, f64::NEG_INFINITY), |best, (i, &v)| {
                    if v > best.1 {
                        (i, v)
                    } else {
                        best
                    }
                })
                .0
        })
        .collect();
    let error = metrics::error_rate_classes(&classes, eval_set.labels());
    println!("members: {}", ensemble.len());
    println!("samples: {}", eval_set.len());
    println!("error_rate: {error:.6e}");

    if args.per_class {
        let k = eval_set.k();
        let mut wrong = vec![0usize; k];
        let mut count = vec![0usize; k];
        for (&pred, &label) in classes.iter().zip(eval_set.labels()) {
            count[label] += 1;
            if pred != label {
                wrong[label] += 1;
            }
        }
        println!("{:>6} {:>8} {:>12}", "class", "count", "error");
        for c in 0..k {
            if count[c] == 0 {
                println!("{c:>6} {:>8} {:>12}", 0, "-");
            } else {
                println!(
                    "{c:>6} {:>8} {:>13.6e}",
                    count[c],
                    wrong[c] as f64 / count[c] as f64
                );
            }
        }
    }
    Ok(())
}

fn write_csv(path: &Path, content: &str) -> Result<(), CliError> {
    std::fs::write(path, content)
        .map_err(|e| CliError::Data(format!("failed to write {}: {e}", path.display())))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_diagnose(args: DiagnoseArgs) -> Result<(), CliError> {
    if !args.correlation && !args.class_weights && args.surface.is_none() {
        return Err(CliError::Usage(
            "nothing to do: pass --correlation, --class-weights, and/or --surface".into(),
        ));
    }
    let (record, ensemble, train, eval_set) =
        load_run_and_data(&args.run_dir, &args.data, &args.on)?;
    let out_dir = args.out_dir.clone().unwrap_or_else(|| args.run_dir.clone());
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| CliError::Data(format!("failed to create {}: {e}", out_dir.display())))?;

    if args.correlation {
        if ensemble.len() < 2 {
            return Err(CliError::Usage(
                "correlation needs at least two checkpoints".into(),
            ));
        }
        let outputs = metrics::member_softmax_outputs(&ensemble, &eval_set)?;
        let matrix = metrics::correlation_matrix(&outputs)?;
        let mut csv = String::new();
        csv.push_str(
            &(0..matrix.len())
                .map(|i| format!("member_{i}"))
                .collect::<Vec<_>>()
                .join(","),
        );
        csv.push('\n');
        for row in &matrix {
            csv.push_str(
                &row.iter()
                    .map(|v| v.to_string())
                    .collect::<Vec<_>>()
                    .join(","),
            );
            csv.push('\n');
        }
        write_csv(&out_dir.join("correlation.csv"), &csv)?;
        let mean = metrics::off_diagonal_mean(&matrix)?;
        println!("off-diagonal mean correlation: {mean:.6e}");
    }

    if args.class_weights {
        if record.final_weights.len() != train.len() {
            return Err(CliError::Data(format!(
                "run stores {} sample weights but the rebuilt training split has {} samples",
                record.final_weights.len(),
                train.len()
            )));
        }
        let weights = cbnn_core::SampleWeights::from_values(record.final_weights.clone())
            .map_err(|e| CliError::Data(e.to_string()))?;
        let means = metrics::per_class_avg_weights(&weights, train.labels(), train.k());
        let counts = train.class_counts();
        let mut csv = String::from("class,count,mean_weight\n");
        for (c, mean) in means.iter().enumerate() {
            match mean {
                Some(m) => csv.push_str(&format!("{c},{},{m}\n", counts[c])),
                None => csv.push_str(&format!("{c},0,\n")),
            }
        }
        write_csv(&out_dir.join("class_weights.csv"), &csv)?;
    }

    if let Some(indices) = &args.surface {
        if ensemble.len() < 3 {
            return Err(CliError::Usage(
                "surface projection needs at least three checkpoints".into(),
            ));
        }
        let pick = |i: usize| -> Result<&cbnn_core::MlpParams, CliError> {
            ensemble.members().get(i).map(|r| &r.params).ok_or_else(|| {
                CliError::Usage(format!(
                    "checkpoint index {i} out of range ({} members)",
                    ensemble.len()
                ))
            })
        };
        let (p1, p2, p3) = (pick(indices[0])?, pick(indices[1])?, pick(indices[2])?);
        let anchors = metrics::projection_anchors(p1, p2, p3)?;
        let xs: Vec<f64> = anchors.iter().map(|a| a.0).collect();
        let ys: Vec<f64> = anchors.iter().map(|a| a.1).collect();
        let (x_lo, x_hi) = span_with_pad(&xs, args.grid_pad);
        let (y_lo, y_hi) = span_with_pad(&ys, args.grid_pad);
        let grid = metrics::surface_grid(
            p1,
            p2,
            p3,
            &train,
            metrics::SurfaceExtent {
                x: (x_lo, x_hi),
                y: (y_lo, y_hi),
            },
            (args.grid_res, args.grid_res),
        )?;
        let mut csv = String::from("x,y,loss\n");
        for (yi, y) in grid.ys.iter().enumerate() {
            for (xi, x) in grid.xs.iter().enumerate() {
                csv.push_str(&format!("{x},{y},{}\n", grid.values[yi][xi]));
            }
        }
        write_csv(&out_dir.join("surface.csv"), &csv)?;
        println!(
            "anchors: p1 ({:.6e}, {:.6e}), p2 (0, 0), p3 ({:.6e}, 0)",
            grid.anchor_p1.0, grid.anchor_p1.1, grid.anchor_p3.0
        );
    }
    Ok(())
}

fn span_with_pad(values: &[f64], pad: f64) -> (f64, f64) {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(1e-9);
    (lo - pad * span, hi + pad * span)
}
