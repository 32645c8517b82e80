//! Experiment harness behind the `ngauss` binary: single training runs, the
//! scheme-by-dataset grid, Lipschitz certification and dataset inspection.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ngauss::data::{self, DatasetKind, LabeledDataset, Split};
use ngauss::lipschitz::{self, DEFAULT_HI, DEFAULT_SAMPLES};
use ngauss::nn::{build_architecture, init_params, Architecture};
use ngauss::train::{run_training, DivergenceStatus, EpochMetrics, Hyperparams};
use ngauss::{Error, SchemeCode};
use serde::{Deserialize, Serialize};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Io(_) => EXIT_IO,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Io(m) => write!(f, "{m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidInput(_) | Error::SchemeParse { .. } => CliError::Usage(e.to_string()),
            _ => CliError::Io(e.to_string()),
        }
    }
}

fn io_err(path: &Path, e: impl fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "ngauss", version, about = "Train and analyse N-Gauss activation CNNs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one scheme on one dataset.
    Train(TrainArgs),
    /// Train every scheme/dataset cell and write grid.csv.
    Grid(GridArgs),
    /// Estimate Lipschitz constants and check the N-Gauss bound.
    Lipcheck(LipArgs),
    /// Summarise a dataset on disk.
    Inspect(InspectArgs),
}

/// Flags shared by `train` and `grid`; each overrides the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct RunFlags {
    /// JSON config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset directory (default: data/<dataset>).
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub limit_train: Option<usize>,
    #[arg(long)]
    pub limit_test: Option<usize>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: Option<DatasetKind>,
    #[arg(long)]
    pub scheme: Option<SchemeCode>,
    #[command(flatten)]
    pub run: RunFlags,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GridArgs {
    /// Comma-separated scheme codes (default: the nine shared-conv schemes).
    #[arg(long, value_delimiter = ',')]
    pub schemes: Vec<SchemeCode>,
    /// Comma-separated datasets (default: mnist).
    #[arg(long, value_delimiter = ',')]
    pub datasets: Vec<DatasetKind>,
    #[command(flatten)]
    pub run: RunFlags,
}

#[derive(Debug, Clone, Args)]
pub struct LipArgs {
    #[arg(long, default_value_t = DEFAULT_HI)]
    pub hi: f64,
    #[arg(long, default_value_t = DEFAULT_SAMPLES)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub dataset: DatasetKind,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
}

/// Contents of a `--config` file. Every field is optional.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub dataset: Option<DatasetKind>,
    pub scheme: Option<SchemeCode>,
    pub data_dir: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub hyper: Option<Hyperparams>,
    pub limit_train: Option<usize>,
    pub limit_test: Option<usize>,
}

impl ConfigFile {
    pub fn read(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub dataset: DatasetKind,
    pub scheme: SchemeCode,
    pub data_dir: PathBuf,
    pub output_dir: PathBuf,
    pub hyper: Hyperparams,
    pub limit_train: Option<usize>,
    pub limit_test: Option<usize>,
}

impl RunConfig {
    pub fn validate(&self) -> CliResult<()> {
        self.hyper.validate()?;
        if self.limit_train == Some(0) || self.limit_test == Some(0) {
            return Err(CliError::Usage("limits must be positive".into()));
        }
        Ok(())
    }
}

/// Partially resolved run settings: everything except dataset and scheme.
#[derive(Debug, Clone)]
struct Resolved {
    file: ConfigFile,
    data_dir: Option<PathBuf>,
    output_dir: PathBuf,
    hyper: Hyperparams,
    limit_train: Option<usize>,
    limit_test: Option<usize>,
}

impl Resolved {
    fn from_flags(flags: &RunFlags) -> CliResult<Self> {
        let file = match &flags.config {
            Some(p) => ConfigFile::read(p)?,
            None => ConfigFile::default(),
        };
        let mut hyper = file.hyper.unwrap_or_default();
        if let Some(v) = flags.epochs {
            hyper.epochs = v;
        }
        if let Some(v) = flags.lr {
            hyper.learning_rate = v;
        }
        if let Some(v) = flags.momentum {
            hyper.momentum = v;
        }
        if let Some(v) = flags.batch_size {
            hyper.batch_size = v;
        }
        if let Some(v) = flags.seed {
            hyper.seed = v;
        }
        Ok(Self {
            data_dir: flags.data_dir.clone().or_else(|| file.data_dir.clone()),
            output_dir: flags
                .out_dir
                .clone()
                .or_else(|| file.output_dir.clone())
                .unwrap_or_else(|| PathBuf::from("runs")),
            hyper,
            limit_train: flags.limit_train.or(file.limit_train),
            limit_test: flags.limit_test.or(file.limit_test),
            file,
        })
    }

    fn config(&self, dataset: DatasetKind, scheme: SchemeCode) -> RunConfig {
        RunConfig {
            dataset,
            scheme,
            data_dir: self
                .data_dir
                .clone()
                .unwrap_or_else(|| default_data_dir(dataset)),
            output_dir: self.output_dir.clone(),
            hyper: self.hyper,
            limit_train: self.limit_train,
            limit_test: self.limit_test,
        }
    }
}

pub fn default_data_dir(dataset: DatasetKind) -> PathBuf {
    Path::new("data").join(dataset.name())
}

/// Builds the run config for `train` from flags layered over the config file.
pub fn resolve_train_config(args: &TrainArgs) -> CliResult<RunConfig> {
    let r = Resolved::from_flags(&args.run)?;
    let dataset = args
        .dataset
        .or(r.file.dataset)
        .ok_or_else(|| CliError::Usage("--dataset is required".into()))?;
    let scheme = args
        .scheme
        .or(r.file.scheme)
        .ok_or_else(|| CliError::Usage("--scheme is required".into()))?;
    let cfg = r.config(dataset, scheme);
    cfg.validate()?;
    Ok(cfg)
}

fn limit(ds: LabeledDataset, n: Option<usize>, what: &str) -> CliResult<LabeledDataset> {
    match n {
        None => Ok(ds),
        Some(n) if n > ds.len() => Err(CliError::Usage(format!(
            "{what} limit {n} exceeds the {} available samples",
            ds.len()
        ))),
        Some(n) => Ok(ds.take(n)?),
    }
}

/// Train and test splits after applying the configured limits.
pub fn load_splits(cfg: &RunConfig) -> CliResult<(LabeledDataset, LabeledDataset)> {
    if !cfg.data_dir.is_dir() {
        return Err(CliError::Io(format!(
            "data directory {} does not exist",
            cfg.data_dir.display()
        )));
    }
    let train = data::load(cfg.dataset, &cfg.data_dir, Split::Train)?;
    let test = data::load(cfg.dataset, &cfg.data_dir, Split::Test)?;
    Ok((
        limit(train, cfg.limit_train, "train")?,
        limit(test, cfg.limit_test, "test")?,
    ))
}

pub fn metrics_path(cfg: &RunConfig) -> PathBuf {
    cfg.output_dir
        .join(format!("metrics_{}_{}.csv", cfg.dataset.name(), cfg.scheme))
}

pub fn summary_path(cfg: &RunConfig) -> PathBuf {
    cfg.output_dir
        .join(format!("summary_{}_{}.json", cfg.dataset.name(), cfg.scheme))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub config: RunConfig,
    pub status: DivergenceStatus,
    pub epochs_run: usize,
    pub final_metrics: Option<EpochMetrics>,
    pub architecture: Architecture,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub history: Vec<EpochMetrics>,
    pub status: DivergenceStatus,
}

/// Runs one training job, streaming the metrics CSV and writing the summary.
pub fn execute_run(cfg: &RunConfig, log: &mut dyn Write) -> CliResult<RunOutcome> {
    cfg.validate()?;
    let (train, test) = load_splits(cfg)?;
    fs::create_dir_all(&cfg.output_dir).map_err(|e| io_err(&cfg.output_dir, e))?;

    let arch = build_architecture(cfg.dataset, cfg.scheme);
    let mut params = init_params::<f64>(&arch, cfg.hyper.seed);

    let csv_path = metrics_path(cfg);
    let mut writer = csv::Writer::from_path(&csv_path).map_err(|e| io_err(&csv_path, e))?;
    let mut write_err = None;
    let run = run_training(&arch, &mut params, &train, &test, &cfg.hyper, |m| {
        let _ = writeln!(
            log,
            "{} {} epoch {:>3}: train {:.4} test {:.4} acc {:.4} ({:.1}s)",
            cfg.dataset, cfg.scheme, m.epoch, m.train_loss, m.test_loss, m.test_accuracy, m.wall_seconds
        );
        if write_err.is_none() {
            if let Err(e) = writer.serialize(m).and_then(|_| Ok(writer.flush()?)) {
                write_err = Some(e);
            }
        }
    })?;
    if let Some(e) = write_err {
        return Err(io_err(&csv_path, e));
    }

    let summary = RunSummary {
        config: cfg.clone(),
        status: run.status,
        epochs_run: run.history.len(),
        final_metrics: run.history.last().copied(),
        architecture: arch,
    };
    let json_path = summary_path(cfg);
    let text = serde_json::to_string_pretty(&summary).map_err(|e| io_err(&json_path, e))?;
    fs::write(&json_path, text + "\n").map_err(|e| io_err(&json_path, e))?;

    Ok(RunOutcome {
        history: run.history,
        status: run.status,
    })
}

pub fn cmd_train(args: &TrainArgs, out: &mut dyn Write, log: &mut dyn Write) -> CliResult<i32> {
    let cfg = resolve_train_config(args)?;
    let outcome = execute_run(&cfg, log)?;
    let _ = writeln!(
        out,
        "{}",
        serde_json::json!({
            "dataset": cfg.dataset,
            "scheme": cfg.scheme,
            "status": outcome.status,
            "epochs_run": outcome.history.len(),
            "metrics_csv": metrics_path(&cfg),
            "summary_json": summary_path(&cfg),
        })
    );
    Ok(if outcome.status.converged {
        EXIT_OK
    } else {
        EXIT_DIVERGED
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub conv1: char,
    pub conv2: char,
    pub fc1: char,
    pub dataset: DatasetKind,
    /// Empty for cells that did not converge or failed.
    pub final_test_loss: Option<f64>,
    pub converged: bool,
    pub epochs_run: usize,
}

/// Runs every cell sequentially and writes `grid.csv`.
///
/// Divergent cells are results, not failures. A cell that fails with an
/// error is recorded as not converged and the grid continues; the exit code
/// is then that of the first failure.
pub fn cmd_grid(args: &GridArgs, log: &mut dyn Write) -> CliResult<i32> {
    let r = Resolved::from_flags(&args.run)?;
    let schemes = if args.schemes.is_empty() {
        SchemeCode::grid_schemes()
    } else {
        args.schemes.clone()
    };
    let datasets = if args.datasets.is_empty() {
        vec![r.file.dataset.unwrap_or(DatasetKind::Mnist)]
    } else {
        args.datasets.clone()
    };
    r.hyper.validate()?;
    fs::create_dir_all(&r.output_dir).map_err(|e| io_err(&r.output_dir, e))?;

    let grid_path = r.output_dir.join("grid.csv");
    let mut writer = csv::Writer::from_path(&grid_path).map_err(|e| io_err(&grid_path, e))?;
    let mut exit = EXIT_OK;
    for &dataset in &datasets {
        for &scheme in &schemes {
            let cfg = r.config(dataset, scheme);
            let row = match execute_run(&cfg, log) {
                Ok(o) => GridRow {
                    conv1: scheme.conv1.letter(),
                    conv2: scheme.conv2.letter(),
                    fc1: scheme.fc1.letter(),
                    dataset,
                    final_test_loss: o
                        .history
                        .last()
                        .filter(|_| o.status.converged)
                        .map(|m| m.test_loss),
                    converged: o.status.converged,
                    epochs_run: o.history.len(),
                },
                Err(e) => {
                    let _ = writeln!(log, "{dataset} {scheme}: {e}");
                    if exit == EXIT_OK {
                        exit = e.exit_code();
                    }
                    GridRow {
                        conv1: scheme.conv1.letter(),
                        conv2: scheme.conv2.letter(),
                        fc1: scheme.fc1.letter(),
                        dataset,
                        final_test_loss: None,
                        converged: false,
                        epochs_run: 0,
                    }
                }
            };
            writer
                .serialize(&row)
                .and_then(|_| Ok(writer.flush()?))
                .map_err(|e| io_err(&grid_path, e))?;
        }
    }
    Ok(exit)
}

pub fn cmd_lipcheck(args: &LipArgs, out: &mut dyn Write) -> CliResult<i32> {
    if !(args.hi > 1.0) || !args.hi.is_finite() || args.n < 2 {
        return Err(CliError::Usage(format!(
            "need hi > 1 and n >= 2 (got hi = {}, n = {})",
            args.hi, args.n
        )));
    }
    let ngauss = lipschitz::certify_ngauss(args.hi, args.n, args.seed)?;
    let tanh = lipschitz::certify_tanh(args.hi, args.n, args.seed)?;
    let ok = ngauss.all_satisfied();
    let text = serde_json::to_string_pretty(&[&ngauss, &tanh])
        .map_err(|e| CliError::Io(e.to_string()))?;
    let _ = writeln!(out, "{text}");
    Ok(if ok { EXIT_OK } else { EXIT_IO })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub count: usize,
    pub shape: [usize; 3],
    pub label_histogram: Vec<usize>,
    pub pixel_min: f64,
    pub pixel_max: f64,
    pub pixel_mean: f64,
}

pub fn summarize(ds: &LabeledDataset) -> SplitSummary {
    let px = ds.images.data();
    let (min, max) = px
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &p| {
            (lo.min(p), hi.max(p))
        });
    SplitSummary {
        count: ds.len(),
        shape: ds.sample_shape(),
        label_histogram: ds.label_histogram(),
        pixel_min: min,
        pixel_max: max,
        pixel_mean: px.iter().sum::<f64>() / px.len().max(1) as f64,
    }
}

pub fn cmd_inspect(args: &InspectArgs, out: &mut dyn Write) -> CliResult<i32> {
    let dir = args
        .data_dir
        .clone()
        .unwrap_or_else(|| default_data_dir(args.dataset));
    let train = data::load(args.dataset, &dir, Split::Train)?;
    let test = data::load(args.dataset, &dir, Split::Test)?;
    let value = serde_json::json!({
        "dataset": args.dataset,
        "train": summarize(&train),
        "test": summarize(&test),
    });
    let _ = writeln!(out, "{}", serde_json::to_string_pretty(&value).unwrap_or_default());
    Ok(EXIT_OK)
}

/// Dispatches a parsed command line; returns the process exit code.
pub fn run(cli: &Cli, out: &mut dyn Write, log: &mut dyn Write) -> i32 {
    let result = match &cli.command {
        Command::Train(a) => cmd_train(a, out, log),
        Command::Grid(a) => cmd_grid(a, log),
        Command::Lipcheck(a) => cmd_lipcheck(a, out),
        Command::Inspect(a) => cmd_inspect(a, out),
    };
    result.unwrap_or_else(|e| {
        let _ = writeln!(log, "error: {e}");
        e.exit_code()
    })
}

/// Parses `args` (including the program name) and runs it. Argument errors
/// exit 1; `--help` and `--version` exit 0.
pub fn run_from_args<I, S>(args: I, out: &mut dyn Write, log: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(&cli, out, log),
        Err(e) if e.use_stderr() => {
            let _ = write!(log, "{e}");
            EXIT_USAGE
        }
        Err(e) => {
            let _ = write!(out, "{e}");
            EXIT_OK
        }
    }
}
