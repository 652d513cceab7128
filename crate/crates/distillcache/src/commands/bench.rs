//! `bench`: wall-clock throughput of archive writing, archive reading with
//! one worker and with the configured worker count, and loss evaluation.
//! Numbers are machine-dependent and only reported. The report follows
//! `schemas/bench_report.schema.json`.

use std::fs;
use std::path::PathBuf;

use distillcache_core::loss::total_loss;
use distillcache_core::teacher::{build_cache_sample, synth_teacher, SyntheticScene};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::losscheck::noisy_student;
use super::{Output, Timer};
use crate::archive_io::{write_archive_bytes, ArchiveReader};
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const DEFAULT_SAMPLES: usize = 100;
pub const DEFAULT_VIEWS: usize = 2;
pub const WORK_DIR: &str = "bench";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchArgs {
    pub samples: usize,
    pub views: usize,
}

impl Default for BenchArgs {
    fn default() -> Self {
        BenchArgs { samples: DEFAULT_SAMPLES, views: DEFAULT_VIEWS }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub samples: usize,
    pub views_per_sample: usize,
    pub resolution: String,
    pub workers: usize,
    pub archive_bytes: u64,
    pub write_seconds: f64,
    pub write_mb_per_s: f64,
    pub read_seconds_single: f64,
    pub read_mb_per_s_single: f64,
    pub read_seconds_parallel: f64,
    pub read_mb_per_s_parallel: f64,
    /// Parallel over single-worker read throughput.
    pub read_speedup: f64,
    pub loss_seconds: f64,
    pub loss_samples_per_s: f64,
}

fn mb_per_s(bytes: u64, seconds: f64) -> f64 {
    bytes as f64 / 1e6 / seconds.max(1e-9)
}

fn read_one(path: &PathBuf) -> CliResult<u64> {
    let reader = ArchiveReader::open(path)?;
    reader.read_all()?;
    Ok(reader.len())
}

pub fn run(cfg: &RunConfig, args: BenchArgs) -> CliResult<Output> {
    if args.samples == 0 || args.views == 0 {
        return Err(CliError::input("bench needs at least one sample and one view"));
    }
    let cache = cfg.cache_config()?;
    let dir = cfg.cache_dir.join(WORK_DIR);
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;

    // write: align + quantize + pack + file write, one sample at a time
    let mut paths = Vec::with_capacity(args.samples);
    let mut archive_bytes = 0u64;
    let mut write_seconds = 0.0;
    for i in 0..args.samples {
        let teacher = synth_teacher(&SyntheticScene::new(cfg.seed.wrapping_add(i as u64), args.views, cache.target))?;
        let timer = Timer::start();
        let built = build_cache_sample(&teacher, &cache)?;
        let path = dir.join(format!("bench_{i:05}.d3rc"));
        write_archive_bytes(&path, &built.archive)?;
        write_seconds += timer.seconds();
        archive_bytes += built.archive.len() as u64;
        paths.push(path);
    }

    let timer = Timer::start();
    for p in &paths {
        read_one(p)?;
    }
    let read_seconds_single = timer.seconds();

    let timer = Timer::start();
    let reads: Vec<CliResult<u64>> = cfg.with_pool(|| paths.par_iter().map(read_one).collect())?;
    reads.into_iter().collect::<CliResult<Vec<_>>>()?;
    let read_seconds_parallel = timer.seconds();

    let loss_cfg = cfg.loss_config()?;
    let mut loss_seconds = 0.0;
    for (i, p) in paths.iter().enumerate() {
        let sample = ArchiveReader::open(p)?.read_all()?.to_view_set()?;
        let student = noisy_student(&sample, cfg.seed.wrapping_add(i as u64))?;
        let timer = Timer::start();
        total_loss(&student, &sample, &loss_cfg, true)?;
        loss_seconds += timer.seconds();
    }
    fs::remove_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;

    let report = BenchReport {
        samples: args.samples,
        views_per_sample: args.views,
        resolution: cache.target.to_string(),
        workers: cfg.workers,
        archive_bytes,
        write_seconds,
        write_mb_per_s: mb_per_s(archive_bytes, write_seconds),
        read_seconds_single,
        read_mb_per_s_single: mb_per_s(archive_bytes, read_seconds_single),
        read_seconds_parallel,
        read_mb_per_s_parallel: mb_per_s(archive_bytes, read_seconds_parallel),
        read_speedup: read_seconds_single / read_seconds_parallel.max(1e-9),
        loss_seconds,
        loss_samples_per_s: args.samples as f64 / loss_seconds.max(1e-9),
    };
    log::info!("bench: {:.1} MB/s write, {:.1}x read speedup", report.write_mb_per_s, report.read_speedup);
    Output::new("bench", report)
}
