//! Command-line experiment runner.
//!
//! ```text
//! fisherflow train|compare|matsqrt|selftest [--config PATH] [--seed N] [--per-step]
//! ```
//!
//! Exit codes: 0 success, 1 failed run or self-test, 2 bad arguments or
//! config, 3 missing data.

mod config;
mod matsqrt;
pub mod selftest;

pub use config::{
    BlobsConfig, ConfigError, DatasetKind, Precision, TrainConfig, DATA_DIR_ENV, SPLIT_SEED,
};
pub use matsqrt::{cmd_matsqrt, MatsqrtRow};

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{gen_blobs, load_mnist, split_train_val, write_metrics, Dataset, DataError};
use crate::fisher::FisherConfig;
use crate::network::MlpModel;
use crate::parallel::{join, Exec};
use crate::real::Real;
use crate::training::{
    evaluate_with, train, MetricsRow, Optimizer, OptimizerConfig, OptimizerKind, TrainSettings,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_MISSING_DATA: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "fisherflow", version, about = "Structured natural gradient descent experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML experiment config (defaults to the built-in MNIST setup).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Log a metrics row after every step instead of once per epoch.
    #[arg(long, global = true)]
    pub per_step: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one model and write its metrics CSV.
    Train,
    /// Train SGD and SNGD from the same initialization and compare them.
    Compare,
    /// Benchmark the inverse-square-root solvers against the eigen oracle.
    Matsqrt {
        #[arg(long, default_value_t = 64)]
        dim: usize,
        #[arg(long, default_value_t = 10)]
        trials: usize,
        /// Condition number of the random test matrices.
        #[arg(long, default_value_t = 1e4)]
        condition: f64,
    },
    /// Gradient, equivalence, solver and identity-reduction checks.
    Selftest,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("missing data: {0}")]
    MissingData(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_USAGE,
            CliError::MissingData(_) => EXIT_MISSING_DATA,
            CliError::Failed(_) => EXIT_FAILED,
        }
    }
}

fn failed(e: impl std::fmt::Display) -> CliError {
    CliError::Failed(e.to_string())
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    // Unlocked handle: concurrent jobs print progress from worker threads.
    let mut out = std::io::stdout();
    let result = match cli.command {
        Command::Train => load_config(&cli).and_then(|cfg| cmd_train(&cfg, cli.per_step, &mut out)),
        Command::Compare => load_config(&cli).and_then(|cfg| cmd_compare(&cfg, cli.per_step, &mut out)),
        Command::Matsqrt { dim, trials, condition } => {
            if dim == 0 || !(condition >= 1.0 && condition.is_finite()) {
                eprintln!("error: --dim must be >= 1 and --condition finite and >= 1");
                return EXIT_USAGE;
            }
            cmd_matsqrt(dim, trials, cli.seed.unwrap_or(0), condition, &mut out).map(|_| EXIT_OK)
        }
        Command::Selftest => Ok(selftest::cmd_selftest(&mut out)),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn load_config(cli: &Cli) -> Result<TrainConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

/// Train, validation and (optional) test sets for a config.
pub struct Prepared<T> {
    pub train: Dataset<T>,
    pub val: Dataset<T>,
    pub test: Option<Dataset<T>>,
}

fn data_error(e: DataError) -> CliError {
    match e {
        DataError::Io { .. } => CliError::MissingData(e.to_string()),
        other => failed(other),
    }
}

pub fn prepare_data<T: Real>(cfg: &TrainConfig) -> Result<Prepared<T>, CliError> {
    let (full, test) = match cfg.dataset {
        DatasetKind::Mnist => {
            let dir = cfg.resolve_data_dir().ok_or_else(|| {
                CliError::MissingData(format!("no data_dir in config and {DATA_DIR_ENV} is not set"))
            })?;
            let (full, test) = load_mnist::<T>(&dir).map_err(data_error)?;
            (full, Some(test))
        }
        DatasetKind::Blobs => {
            let b = &cfg.blobs;
            let full = gen_blobs::<T>(cfg.seed, b.n_per_class, b.dim, b.classes, b.separation).map_err(failed)?;
            (full, None)
        }
    };
    if cfg.val_size >= full.len() {
        return Err(ConfigError::Key {
            key: "val_size".into(),
            reason: format!("must be smaller than the {} available samples", full.len()),
        }
        .into());
    }
    let (mut train_set, val) = split_train_val(&full, cfg.val_size, SPLIT_SEED).map_err(failed)?;
    if cfg.train_subset > 0 {
        train_set = train_set.take(cfg.train_subset);
    }
    let (d, k) = (cfg.arch[0], cfg.arch[cfg.arch.len() - 1]);
    if train_set.dim() != d || full.num_classes != k {
        return Err(ConfigError::Key {
            key: "arch".into(),
            reason: format!(
                "data has {} features and {} classes, arch is {:?}",
                train_set.dim(),
                full.num_classes,
                cfg.arch
            ),
        }
        .into());
    }
    Ok(Prepared {
        train: train_set,
        val,
        test,
    })
}

/// The model every run of `cfg` starts from. The optimizer kind only
/// decides whether the whitening states may refresh; the weights depend on
/// the seed alone.
pub fn initial_model<T: Real>(cfg: &TrainConfig, kind: OptimizerKind) -> Result<MlpModel<T>, CliError> {
    let fisher = match kind {
        OptimizerKind::Sgd => FisherConfig::frozen(),
        OptimizerKind::Sngd => cfg.fisher.clone(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    MlpModel::new_random(&cfg.arch, cfg.activation, T::lit(cfg.l2), &fisher, &mut rng).map_err(failed)
}

/// Outcome of one training job.
#[derive(Clone, Debug)]
pub struct RunSummary {
    pub kind: OptimizerKind,
    pub init_fingerprint: String,
    pub rows: Vec<MetricsRow>,
    pub test_loss: Option<f64>,
    pub test_acc: Option<f64>,
}

impl RunSummary {
    pub fn final_val_acc(&self) -> f64 {
        self.rows.last().map_or(f64::NAN, |r| r.val_acc)
    }
}

fn label(kind: OptimizerKind) -> &'static str {
    match kind {
        OptimizerKind::Sgd => "sgd",
        OptimizerKind::Sngd => "sngd",
    }
}

/// Trains one model of `kind` on prepared data; progress goes to stdout.
pub fn run_job<T: Real>(
    cfg: &TrainConfig,
    data: &Prepared<T>,
    kind: OptimizerKind,
    per_step: bool,
) -> Result<RunSummary, CliError> {
    let mut model = initial_model::<T>(cfg, kind)?;
    let init_fingerprint = model.fingerprint();
    let opt_cfg = OptimizerConfig {
        kind,
        lr: cfg.lr,
        momentum: cfg.momentum,
    };
    let mut opt = Optimizer::new(opt_cfg, &model).map_err(failed)?;
    let settings = TrainSettings {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        seed: cfg.seed,
        per_step,
        wall_time: cfg.wall_time,
        exec: Exec::default(),
    };
    let steps_per_epoch = data.train.len().div_ceil(cfg.batch_size) as u64;
    let tag = label(kind);
    let rows = train(&mut model, &mut opt, &data.train, &data.val, &settings, |r| {
        if r.step % steps_per_epoch == 0 {
            eprintln!(
                "[{tag}] epoch {:>3} step {:>7} train_loss {:.6} train_acc {:.4} val_loss {:.6} val_acc {:.4} refreshes {} failures {}",
                r.epoch, r.step, r.train_loss, r.train_acc, r.val_loss, r.val_acc, r.fisher_refreshes, r.fisher_failures
            );
        }
    })
    .map_err(failed)?;
    let (test_loss, test_acc) = match &data.test {
        Some(t) => {
            let (l, a) = evaluate_with(&model, t, Exec::default()).map_err(failed)?;
            (Some(l.as_f64()), Some(a))
        }
        None => (None, None),
    };
    Ok(RunSummary {
        kind,
        init_fingerprint,
        rows,
        test_loss,
        test_acc,
    })
}

fn write_rows(rows: &[MetricsRow], path: &Path) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(failed)?;
    }
    write_metrics(rows, path).map_err(failed)
}

fn print_summary(out: &mut dyn Write, s: &RunSummary) -> std::io::Result<()> {
    writeln!(out, "[{}] final val_acc {:.4}", label(s.kind), s.final_val_acc())?;
    if let (Some(l), Some(a)) = (s.test_loss, s.test_acc) {
        writeln!(out, "[{}] test_loss {:.6} test_acc {:.4}", label(s.kind), l, a)?;
    }
    Ok(())
}

pub fn cmd_train(cfg: &TrainConfig, per_step: bool, out: &mut dyn Write) -> Result<i32, CliError> {
    match cfg.precision {
        Precision::F64 => train_with::<f64>(cfg, per_step, out),
        Precision::F32 => train_with::<f32>(cfg, per_step, out),
    }
}

fn train_with<T: Real>(cfg: &TrainConfig, per_step: bool, out: &mut dyn Write) -> Result<i32, CliError> {
    let data = prepare_data::<T>(cfg)?;
    writeln!(
        out,
        "train: {} samples, val: {}, precision {}, optimizer {}",
        data.train.len(),
        data.val.len(),
        T::NAME,
        label(cfg.optimizer)
    )
    .map_err(failed)?;
    let summary = run_job(cfg, &data, cfg.optimizer, per_step)?;
    write_rows(&summary.rows, &cfg.out)?;
    print_summary(out, &summary).map_err(failed)?;
    writeln!(out, "metrics written to {}", cfg.out.display()).map_err(failed)?;
    Ok(EXIT_OK)
}

/// `<out>.sgd.csv` / `<out>.sngd.csv`, dropping a trailing `.csv` from `out`.
pub fn compare_paths(out: &Path) -> (PathBuf, PathBuf) {
    let base = match out.extension() {
        Some(e) if e == "csv" => out.with_extension(""),
        _ => out.to_path_buf(),
    };
    let with = |suffix: &str| {
        let mut s = base.clone().into_os_string();
        s.push(suffix);
        PathBuf::from(s)
    };
    (with(".sgd.csv"), with(".sngd.csv"))
}

pub fn cmd_compare(cfg: &TrainConfig, per_step: bool, out: &mut dyn Write) -> Result<i32, CliError> {
    match cfg.precision {
        Precision::F64 => compare_with::<f64>(cfg, per_step, out),
        Precision::F32 => compare_with::<f32>(cfg, per_step, out),
    }
}

fn compare_with<T: Real>(cfg: &TrainConfig, per_step: bool, out: &mut dyn Write) -> Result<i32, CliError> {
    let data = prepare_data::<T>(cfg)?;
    let (sgd, sngd) = join(
        Exec::default(),
        || run_job(cfg, &data, OptimizerKind::Sgd, per_step),
        || run_job(cfg, &data, OptimizerKind::Sngd, per_step),
    );
    let (sgd, sngd) = (sgd?, sngd?);
    let (sgd_path, sngd_path) = compare_paths(&cfg.out);
    write_rows(&sgd.rows, &sgd_path)?;
    write_rows(&sngd.rows, &sngd_path)?;

    let w = |out: &mut dyn Write| -> std::io::Result<()> {
        writeln!(out, "init fingerprint sgd  {}", sgd.init_fingerprint)?;
        writeln!(out, "init fingerprint sngd {}", sngd.init_fingerprint)?;
        writeln!(out, "{:>5} {:>10} {:>10} {:>10}", "epoch", "sgd_val", "sngd_val", "delta")?;
        for (a, b) in sgd.rows.iter().zip(&sngd.rows) {
            if a.step % data.train.len().div_ceil(cfg.batch_size) as u64 == 0 {
                writeln!(
                    out,
                    "{:>5} {:>10.4} {:>10.4} {:>+10.4}",
                    a.epoch,
                    a.val_acc,
                    b.val_acc,
                    b.val_acc - a.val_acc
                )?;
            }
        }
        print_summary(out, &sgd)?;
        print_summary(out, &sngd)?;
        writeln!(out, "metrics written to {} and {}", sgd_path.display(), sngd_path.display())
    };
    w(out).map_err(failed)?;
    Ok(EXIT_OK)
}
