//! Batch experiment runner. Three commands: `synthetic` sweeps replications
//! of the simulated benchmarks over a range of environment counts, `mnist`
//! runs the framed-digit tasks from idx files, and `filter-debug` dumps the
//! screening statistics of a single replication for inspection.
//!
//! Flag precedence: command line > `--config` key=value file > built-in
//! defaults. Exit codes: 0 success, 1 configuration error, 2 data error,
//! 3 every replication failed.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use fairm::data::split_sample;
use fairm::experiment::{run_synthetic, write_records_csv, write_summary_csv, RunOptions};
use fairm::filter::{default_thresholds, run_filter, write_distance_csv, write_marginal_csv};
use fairm::mnist::{read_idx_pair, run_mnist_task, write_support_pgm, write_task_csv, MnistTaskConfig};
use fairm::pipeline::FairmConfig;
use fairm::rng::RngStream;
use fairm::synthetic::{generate_experiment, SyntheticConfig};

#[derive(Parser)]
#[command(name = "fairm-cli", version, about = "Multi-environment invariant regression experiments")]
struct Cli {
    /// Flat key=value file supplying defaults for any long flag.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Replicated synthetic benchmark over a range of environment counts.
    Synthetic(SyntheticArgs),
    /// Framed-digit binary classification tasks from idx files.
    Mnist(MnistArgs),
    /// Dump the screening statistics of one synthetic replication.
    FilterDebug(FilterDebugArgs),
}

#[derive(Args)]
struct SyntheticArgs {
    /// Benchmark variant: 1 = independent latents, 2 = equi-correlated.
    #[arg(long)]
    experiment: Option<u8>,
    #[arg(long)]
    k_min: Option<usize>,
    #[arg(long)]
    k_max: Option<usize>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Screening threshold constant.
    #[arg(long)]
    c0: Option<f64>,
    /// Lasso penalty rate constant.
    #[arg(long)]
    c_lambda: Option<f64>,
    /// Fold fraction for the filter/fit split.
    #[arg(long)]
    split: Option<f64>,
    /// Rows per evaluation environment.
    #[arg(long)]
    n_eval: Option<usize>,
    /// Output directory for the records and summary CSVs.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
    /// Fixed penalty for the worst-environment baseline (default: rate-based).
    #[arg(long)]
    mm_lambda: Option<f64>,
}

#[derive(Args)]
struct MnistArgs {
    /// Task: 1 = digits 1 vs 7, 2 = digits 0 vs 6.
    #[arg(long)]
    task: Option<u8>,
    /// Directory holding train-images-idx3-ubyte and train-labels-idx1-ubyte.
    #[arg(long)]
    mnist_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    c0: Option<f64>,
    #[arg(long)]
    c_lambda: Option<f64>,
    #[arg(long)]
    split: Option<f64>,
    /// Border width of the frame, in pixels.
    #[arg(long)]
    frame_width: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct FilterDebugArgs {
    #[arg(long)]
    experiment: Option<u8>,
    /// Number of training environments.
    #[arg(long)]
    k_min: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    c0: Option<f64>,
    #[arg(long)]
    split: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug)]
enum AppError {
    Config(String),
    Data(String),
    AllFailed(String),
}

impl AppError {
    fn code(&self) -> u8 {
        match self {
            AppError::Config(_) => 1,
            AppError::Data(_) => 2,
            AppError::AllFailed(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            AppError::Config(m) | AppError::Data(m) | AppError::AllFailed(m) => m,
        }
    }
}

type AppResult<T> = Result<T, AppError>;

fn config_err(msg: impl Display) -> AppError {
    AppError::Config(msg.to_string())
}

/// Flat `key=value` file; `#` starts a comment, blank lines ignored. Keys use
/// the long flag spelling (either `-` or `_` separators).
fn load_config(path: Option<&Path>) -> AppResult<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    let Some(path) = path else { return Ok(map) };
    let text = std::fs::read_to_string(path)
        .map_err(|e| config_err(format!("cannot read config file {}: {e}", path.display())))?;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(config_err(format!(
                "{}:{}: expected key=value, got `{line}`",
                path.display(),
                lineno + 1
            )));
        };
        map.insert(key.trim().replace('-', "_"), value.trim().to_string());
    }
    Ok(map)
}

/// CLI value, else config-file value, else default.
fn resolve<T: FromStr + Clone>(
    cli: &Option<T>,
    file: &BTreeMap<String, String>,
    key: &str,
    default: T,
) -> AppResult<T>
where
    T::Err: Display,
{
    if let Some(v) = cli {
        return Ok(v.clone());
    }
    match file.get(key) {
        Some(raw) => raw
            .parse()
            .map_err(|e| config_err(format!("config key `{key}`: cannot parse `{raw}`: {e}"))),
        None => Ok(default),
    }
}

fn ensure_out_dir(out: &Path) -> AppResult<()> {
    std::fs::create_dir_all(out)
        .map_err(|e| config_err(format!("cannot create output directory {}: {e}", out.display())))
}

fn init_threads(threads: usize) -> AppResult<()> {
    if threads == 0 {
        return Ok(()); // rayon default: all cores
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| config_err(format!("thread pool: {e}")))
}

fn fit_config(c0: f64, c_lambda: f64, split: f64) -> AppResult<FairmConfig> {
    if c0 <= 0.0 || c_lambda <= 0.0 {
        return Err(config_err("c0 and c-lambda must be positive"));
    }
    if !(split > 0.0 && split < 1.0) {
        return Err(config_err(format!("split must lie in (0, 1), got {split}")));
    }
    Ok(FairmConfig {
        c0,
        c_lambda,
        split_fraction: split,
        ..FairmConfig::default()
    })
}

fn base_config(experiment: u8, k: usize) -> AppResult<SyntheticConfig> {
    match experiment {
        1 => Ok(SyntheticConfig::experiment1(k)),
        2 => Ok(SyntheticConfig::experiment2(k)),
        other => Err(config_err(format!("experiment must be 1 or 2, got {other}"))),
    }
}

fn run_synthetic_cmd(args: &SyntheticArgs, file: &BTreeMap<String, String>) -> AppResult<()> {
    let experiment = resolve(&args.experiment, file, "experiment", 1)?;
    let k_min = resolve(&args.k_min, file, "k_min", 4)?;
    let k_max = resolve(&args.k_max, file, "k_max", 12)?;
    let reps = resolve(&args.reps, file, "reps", 200)?;
    let seed = resolve(&args.seed, file, "seed", 0)?;
    let c0 = resolve(&args.c0, file, "c0", 1.0)?;
    let c_lambda = resolve(&args.c_lambda, file, "c_lambda", 0.5)?;
    let split = resolve(&args.split, file, "split", 0.5)?;
    let n_eval = resolve(&args.n_eval, file, "n_eval", 2000)?;
    let out = resolve(&args.out, file, "out", PathBuf::from("out"))?;
    let threads = resolve(&args.threads, file, "threads", 0)?;
    let mm_lambda = match (&args.mm_lambda, file.get("mm_lambda")) {
        (Some(v), _) => Some(*v),
        (None, Some(raw)) => Some(
            raw.parse()
                .map_err(|e| config_err(format!("config key `mm_lambda`: {e}")))?,
        ),
        (None, None) => None,
    };

    if reps == 0 {
        return Err(config_err("reps must be at least 1"));
    }
    if k_min < 1 || k_max > 64 || k_min > k_max {
        return Err(config_err(format!(
            "environment count range must satisfy 1 <= k-min <= k-max <= 64, got [{k_min}, {k_max}]"
        )));
    }
    if n_eval < 2 {
        return Err(config_err("n-eval must be at least 2"));
    }
    base_config(experiment, k_min)?; // reject bad experiment ids up front
    init_threads(threads)?;
    ensure_out_dir(&out)?;

    let opts = RunOptions {
        master_seed: seed,
        reps,
        k_values: (k_min..=k_max).collect(),
        fit: fit_config(c0, c_lambda, split)?,
        mm_lambda,
        ..RunOptions::default()
    };
    let records = run_synthetic(&opts, |k| SyntheticConfig {
        n_eval,
        ..base_config(experiment, k).expect("experiment id validated above")
    });

    let n_failed = records.iter().filter(|r| r.error.is_some()).count();
    if n_failed == records.len() {
        return Err(AppError::AllFailed(format!(
            "all {} fits failed; first error: {}",
            records.len(),
            records[0].error.as_deref().unwrap_or("")
        )));
    }

    let records_path = out.join(format!("experiment{experiment}_records.csv"));
    let summary_path = out.join(format!("experiment{experiment}_summary.csv"));
    write_records_csv(&records_path, &records).map_err(|e| AppError::Data(e.to_string()))?;
    write_summary_csv(&summary_path, &records).map_err(|e| AppError::Data(e.to_string()))?;
    let total_ms: u128 = records.iter().map(|r| r.runtime_ms).sum();
    eprintln!(
        "wrote {} rows ({} failed) to {} and {}; total fit time {total_ms} ms",
        records.len(),
        n_failed,
        records_path.display(),
        summary_path.display()
    );
    Ok(())
}

fn run_mnist_cmd(args: &MnistArgs, file: &BTreeMap<String, String>) -> AppResult<()> {
    let task = resolve(&args.task, file, "task", 1)?;
    let mnist_dir = resolve(&args.mnist_dir, file, "mnist_dir", PathBuf::from("data/mnist"))?;
    let seed = resolve(&args.seed, file, "seed", 0)?;
    let c0 = resolve(&args.c0, file, "c0", 1.0)?;
    let c_lambda = resolve(&args.c_lambda, file, "c_lambda", 0.5)?;
    let split = resolve(&args.split, file, "split", 0.5)?;
    let frame_width = resolve(&args.frame_width, file, "frame_width", 1)?;
    let out = resolve(&args.out, file, "out", PathBuf::from("out"))?;
    let threads = resolve(&args.threads, file, "threads", 0)?;

    let mut task_cfg = match task {
        1 => MnistTaskConfig::task1(),
        2 => MnistTaskConfig::task2(),
        other => return Err(config_err(format!("task must be 1 or 2, got {other}"))),
    };
    if !(frame_width == 1 || frame_width == 2) {
        return Err(config_err(format!("frame-width must be 1 or 2, got {frame_width}")));
    }
    task_cfg.frame_width = frame_width;
    init_threads(threads)?;
    ensure_out_dir(&out)?;

    let images_path = mnist_dir.join("train-images-idx3-ubyte");
    let labels_path = mnist_dir.join("train-labels-idx1-ubyte");
    for p in [&images_path, &labels_path] {
        if !p.is_file() {
            return Err(AppError::Data(format!(
                "missing data file {}; place the idx-format digit files under {}",
                p.display(),
                mnist_dir.display()
            )));
        }
    }
    let (images, labels) =
        read_idx_pair(&images_path, &labels_path).map_err(|e| AppError::Data(e.to_string()))?;

    let fit_cfg = fit_config(c0, c_lambda, split)?;
    let result = run_mnist_task(&images, &labels, &task_cfg, &fit_cfg, seed)
        .map_err(|e| AppError::AllFailed(e.to_string()))?;

    let csv_path = out.join(format!("task{task}_table.csv"));
    write_task_csv(&csv_path, std::slice::from_ref(&result)).map_err(|e| AppError::Data(e.to_string()))?;
    for (method, mask) in &result.supports {
        let pgm = out.join(format!("task{task}_{}_mask.pgm", method.as_str().to_lowercase()));
        write_support_pgm(&pgm, mask).map_err(|e| AppError::Data(e.to_string()))?;
    }
    eprintln!("wrote {} and per-method masks", csv_path.display());
    Ok(())
}

fn run_filter_debug_cmd(args: &FilterDebugArgs, file: &BTreeMap<String, String>) -> AppResult<()> {
    let experiment = resolve(&args.experiment, file, "experiment", 1)?;
    let k = resolve(&args.k_min, file, "k_min", 4)?;
    let seed = resolve(&args.seed, file, "seed", 0)?;
    let c0 = resolve(&args.c0, file, "c0", 1.0)?;
    let split = resolve(&args.split, file, "split", 0.5)?;
    let out = resolve(&args.out, file, "out", PathBuf::from("out"))?;

    if !(1..=64).contains(&k) {
        return Err(config_err(format!("k-min must lie in [1, 64], got {k}")));
    }
    let fit_cfg = fit_config(c0, 0.5, split)?;
    let cfg = base_config(experiment, k)?;
    ensure_out_dir(&out)?;

    let mut rng = RngStream::new(seed, 0);
    let exp = generate_experiment(&cfg, &mut rng).map_err(|e| AppError::Data(e.to_string()))?;
    let split_data = split_sample(&exp.fit, fit_cfg.split_fraction, &mut rng)
        .map_err(|e| AppError::Data(e.to_string()))?;
    let (rho_m, rho_d) = default_thresholds(cfg.p, cfg.k, split_data.n_ring_total(), fit_cfg.c0)
        .map_err(config_err)?;
    let (_stats, result) =
        run_filter(&split_data.ring, rho_m, rho_d).map_err(|e| AppError::Data(e.to_string()))?;

    write_marginal_csv(&result, &out.join("filter_marginal.csv"))
        .map_err(|e| AppError::Data(e.to_string()))?;
    write_distance_csv(&result, &out.join("filter_distance.csv"))
        .map_err(|e| AppError::Data(e.to_string()))?;
    if result.i_m.is_empty() {
        println!("infeasible: the marginal screen rejected every feature at rho_M = {rho_m}");
    } else {
        println!(
            "screened {} of {} features at rho_M = {rho_m}; contaminated coordinates (1-based): {:?}",
            result.i_m.len(),
            cfg.p,
            exp.truth.s_v.iter().map(|j| j + 1).collect::<Vec<_>>()
        );
    }
    Ok(())
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
    let run = || -> AppResult<()> {
        let file = load_config(cli.config.as_deref())?;
        match &cli.command {
            Command::Synthetic(args) => run_synthetic_cmd(args, &file),
            Command::Mnist(args) => run_mnist_cmd(args, &file),
            Command::FilterDebug(args) => run_filter_debug_cmd(args, &file),
        }
    };
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
