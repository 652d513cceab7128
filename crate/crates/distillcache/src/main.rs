use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use distillcache::commands::{self, bench, eval, losscheck, Output};
use distillcache::config::{init_logging, Overrides, RunConfig};
use distillcache::core::eval::MedianRule;
use distillcache::CliResult;

/// Offline teacher-supervision cache: manifest, cache, verify, losscheck,
/// eval and bench. Exit codes: 0 ok, 1 gradient check failed,
/// 2 input/config/IO error, 3 missing teacher dumps, 4 corrupt data.
#[derive(Debug, Parser)]
#[command(name = "distillcache", version)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// Flat TOML run configuration; flags below override its values.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    #[arg(long, global = true, value_name = "N")]
    workers: Option<usize>,
    /// Confidence threshold; pixels with local confidence below it are masked.
    #[arg(long, global = true, value_name = "F")]
    tau: Option<f64>,
    /// Cache resolution, e.g. 224x518 (multiples of 14).
    #[arg(long, global = true, value_name = "HxW")]
    res: Option<String>,
    /// Loss configuration: full, labels-only or no-weighting.
    #[arg(long, global = true, value_name = "MODE")]
    mode: Option<String>,
    /// Dataset root as id=path (repeatable).
    #[arg(long = "dataset-root", global = true, value_name = "ID=PATH")]
    dataset_roots: Vec<String>,
    #[arg(long, global = true, value_name = "PATH")]
    manifest: Option<PathBuf>,
    #[arg(long = "samples-file", global = true, value_name = "PATH")]
    samples_file: Option<PathBuf>,
    #[arg(long = "dump-dir", global = true, value_name = "DIR")]
    dump_dir: Option<PathBuf>,
    #[arg(long = "cache-dir", global = true, value_name = "DIR")]
    cache_dir: Option<PathBuf>,
    /// Also write each command's JSON report to DIR/<command>.json.
    #[arg(long = "report-dir", global = true, value_name = "DIR")]
    report_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Scan dataset roots into manifest and sample files.
    Manifest,
    /// Build one archive per sample.
    Cache {
        /// Use seeded synthetic teachers instead of dumps.
        #[arg(long)]
        synthetic: bool,
    },
    /// Check every archive in the cache directory.
    Verify {
        /// Rebuild every archive from its source and compare bytes.
        #[arg(long)]
        deep: bool,
    },
    /// Compare analytic loss gradients with finite differences.
    Losscheck {
        #[arg(long, default_value_t = losscheck::DEFAULT_SAMPLES)]
        samples: usize,
        /// Finite-difference step, within [1e-6, 1e-3].
        #[arg(long, default_value_t = losscheck::DEFAULT_STEP)]
        step: f64,
        #[arg(long, default_value_t = losscheck::DEFAULT_TOLERANCE)]
        tolerance: f64,
    },
    /// Accuracy / completeness / scale factor per view.
    Eval {
        /// Archive, teacher dump directory, cloud directory or cloud file.
        #[arg(long)]
        pred: PathBuf,
        /// Cloud directory or cloud file.
        #[arg(long)]
        gt: PathBuf,
        /// Use only valid pixels of archive or dump predictions.
        #[arg(long)]
        masked: bool,
        /// Free-text unit note copied into the report.
        #[arg(long, default_value = eval::DEFAULT_UNIT_NOTE)]
        unit: String,
        /// Median of even-length lists: lower-middle or midpoint.
        #[arg(long, default_value_t = MedianRule::default())]
        median: MedianRule,
    },
    /// Write / read / loss throughput on a synthetic cache.
    Bench {
        #[arg(long, default_value_t = bench::DEFAULT_SAMPLES)]
        samples: usize,
        #[arg(long, default_value_t = bench::DEFAULT_VIEWS)]
        views: usize,
    },
}

impl GlobalArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            workers: self.workers,
            tau: self.tau,
            resolution: self.res.clone(),
            mode: self.mode.clone(),
            dataset_roots: self.dataset_roots.clone(),
            manifest_path: self.manifest.clone(),
            samples_path: self.samples_file.clone(),
            dump_dir: self.dump_dir.clone(),
            cache_dir: self.cache_dir.clone(),
            report_dir: self.report_dir.clone(),
        }
    }
}

fn run(cli: &Cli) -> CliResult<Output> {
    let cfg = RunConfig::load(cli.global.config.as_deref(), &cli.global.overrides())?;
    let out = match &cli.command {
        Command::Manifest => commands::manifest::run(&cfg)?,
        Command::Cache { synthetic } => commands::cache::run(&cfg, *synthetic)?,
        Command::Verify { deep } => commands::verify::run(&cfg, *deep)?,
        Command::Losscheck { samples, step, tolerance } => {
            losscheck::run(&cfg, losscheck::LossCheckArgs { samples: *samples, step: *step, tolerance: *tolerance })?
        }
        Command::Eval { pred, gt, masked, unit, median } => {
            let args = eval::EvalArgs { pred: pred.clone(), gt: gt.clone(), masked: *masked, unit_note: unit.clone(), median: *median };
            eval::run(&cfg, &args)?
        }
        Command::Bench { samples, views } => bench::run(&cfg, bench::BenchArgs { samples: *samples, views: *views })?,
    };
    commands::save_report(&cfg, &out)?;
    Ok(out)
}

fn main() -> ExitCode {
    init_logging();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(out) => {
            println!("{}", serde_json::to_string_pretty(&out.document()).expect("reports are plain JSON"));
            if let Some(err) = &out.failure {
                eprintln!("error: {err}");
            }
            ExitCode::from(out.exit_code())
        }
        Err(err) => {
            println!("{}", serde_json::to_string_pretty(&commands::error_document(&err)).expect("plain JSON"));
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}
