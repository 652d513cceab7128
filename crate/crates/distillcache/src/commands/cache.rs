//! `cache`: build one archive per sample from teacher dumps (or from seeded
//! synthetic teachers with `--synthetic`) and write `cache_report.json`.
//!
//! The report file holds only reproducible values; wall-clock time is
//! printed with the command output but never written next to the archives,
//! so two runs with the same config and seed leave byte-identical files.

use std::fs;
use std::path::Path;

use distillcache_core::archive::ArchiveStats;
use distillcache_core::teacher::{build_cache_sample, synth_teacher, CacheSample, SyntheticScene, TeacherSample};
use distillcache_core::Resolution;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{write_json, Output, Timer};
use crate::archive_io::write_archive_bytes;
use crate::config::RunConfig;
use crate::dump::{dump_dir, read_teacher_dump, DESCRIPTOR_FILE};
use crate::error::{CliError, CliResult};
use crate::scan::{read_jsonl, SampleRecord};
use crate::{archive_file_name, fnv1a64};

pub const REPORT_FILE: &str = "cache_report.json";

/// The settings an archive depends on; enough to rebuild it bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheSettings {
    pub resolution: String,
    pub tau: f64,
    pub synthetic: bool,
    pub seed: u64,
    /// Teacher resolution of synthetic samples (absent for dumps).
    pub synthetic_resolution: Option<String>,
}

impl CacheSettings {
    pub fn from_config(cfg: &RunConfig, synthetic: bool) -> CliResult<Self> {
        Ok(CacheSettings {
            resolution: cfg.target_res()?.to_string(),
            tau: cfg.tau,
            synthetic,
            seed: cfg.seed,
            synthetic_resolution: if synthetic { Some(cfg.synthetic_res()?.to_string()) } else { None },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleReport {
    pub sample_id: String,
    pub archive: String,
    pub n_views: usize,
    /// float32 bytes of the teacher maps before alignment.
    pub bytes_in: u64,
    pub bytes_out: u64,
    pub source_image_bytes: Option<u64>,
    pub masked_fraction: f64,
    pub degenerate_views: usize,
    pub stats: ArchiveStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheTotals {
    pub samples: usize,
    pub views: usize,
    pub bytes_in: u64,
    pub bytes_out: u64,
    pub masked_pixels: u64,
    pub total_pixels: u64,
    pub masked_fraction: f64,
    pub degenerate_views: usize,
    /// Archive bytes over float32-equivalent map bytes.
    pub stored_to_raw_ratio: f64,
    /// Archive bytes over source image bytes, when every image was found.
    pub expansion_ratio_vs_source_images: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheReport {
    pub settings: CacheSettings,
    pub samples: Vec<SampleReport>,
    pub totals: CacheTotals,
}

impl CacheReport {
    pub fn load(cache_dir: &Path) -> CliResult<Option<Self>> {
        let path = cache_dir.join(REPORT_FILE);
        if !path.is_file() {
            return Ok(None);
        }
        let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        serde_json::from_str(&text).map(Some).map_err(|e| CliError::json(&path, e))
    }
}

/// Seed of one synthetic sample: the run seed mixed with the sample id, so
/// samples differ and do not depend on processing order.
pub fn sample_seed(seed: u64, sample_id: &str) -> u64 {
    seed ^ fnv1a64(sample_id.as_bytes())
}

fn parse_res(s: &str) -> CliResult<Resolution> {
    s.parse().map_err(|e| CliError::input(format!("resolution `{s}`: {e}")))
}

/// Teacher maps of one sample under `settings`.
pub fn load_teacher(settings: &CacheSettings, dumps: &Path, sample_id: &str, n_views: usize) -> CliResult<TeacherSample> {
    if settings.synthetic {
        let res = parse_res(settings.synthetic_resolution.as_deref().unwrap_or(&settings.resolution))?;
        return Ok(synth_teacher(&SyntheticScene::new(sample_seed(settings.seed, sample_id), n_views, res))?);
    }
    let dir = dump_dir(dumps, sample_id);
    let (descriptor, teacher) = read_teacher_dump(&dir)?;
    if descriptor.sample_id != sample_id {
        return Err(CliError::Mismatch {
            path: dir.join(DESCRIPTOR_FILE),
            offset: 0,
            reason: format!("dump is for sample `{}`, expected `{sample_id}`", descriptor.sample_id),
        });
    }
    Ok(teacher)
}

/// Builds (without writing) the archive of one sample.
pub fn build_sample(settings: &CacheSettings, dumps: &Path, sample_id: &str, n_views: usize) -> CliResult<CacheSample> {
    let teacher = load_teacher(settings, dumps, sample_id, n_views)?;
    let cfg = distillcache_core::teacher::CacheConfig { target: parse_res(&settings.resolution)?, tau: settings.tau };
    Ok(build_cache_sample(&teacher, &cfg)?)
}

fn source_bytes(paths: &[String]) -> Option<u64> {
    paths.iter().map(|p| fs::metadata(p).ok().map(|m| m.len())).sum()
}

fn cache_one(settings: &CacheSettings, cfg: &RunConfig, record: &SampleRecord) -> CliResult<(SampleReport, CacheSample)> {
    let n_views = record.image_paths.len();
    let teacher = load_teacher(settings, &cfg.dump_dir, &record.sample_id, n_views)?;
    if teacher.len() != n_views {
        log::warn!("{}: dump holds {} views, sample lists {n_views} frames", record.sample_id, teacher.len());
    }
    let bytes_in = (teacher.len() * teacher.resolution().pixels() * 8 * 4) as u64;
    let built = build_cache_sample(&teacher, &cfg.cache_config()?)?;
    drop(teacher);
    let name = archive_file_name(&record.sample_id);
    let path = cfg.cache_dir.join(&name);
    write_archive_bytes(&path, &built.archive)?;
    let header = distillcache_core::archive::ArchiveHeader::parse(&built.archive)?;
    let source_image_bytes = source_bytes(&record.image_paths);
    let report = SampleReport {
        sample_id: record.sample_id.clone(),
        archive: name,
        n_views: built.views.len(),
        bytes_in,
        bytes_out: built.archive.len() as u64,
        source_image_bytes,
        masked_fraction: built.masked_fraction(),
        degenerate_views: built.degenerate_views(),
        stats: ArchiveStats::new(&header, built.archive.len() as u64, source_image_bytes),
    };
    log::debug!("{}: {} bytes, {:.1}% masked", report.sample_id, report.bytes_out, 100.0 * report.masked_fraction);
    Ok((report, built))
}

fn totals(samples: &[SampleReport], masked_pixels: u64, total_pixels: u64) -> CacheTotals {
    let bytes_out: u64 = samples.iter().map(|s| s.bytes_out).sum();
    let raw: u64 = samples.iter().map(|s| s.stats.raw_f32_bytes).sum();
    let source: Option<u64> = samples.iter().map(|s| s.source_image_bytes).sum();
    CacheTotals {
        samples: samples.len(),
        views: samples.iter().map(|s| s.n_views).sum(),
        bytes_in: samples.iter().map(|s| s.bytes_in).sum(),
        bytes_out,
        masked_pixels,
        total_pixels,
        masked_fraction: if total_pixels == 0 { 0.0 } else { masked_pixels as f64 / total_pixels as f64 },
        degenerate_views: samples.iter().map(|s| s.degenerate_views).sum(),
        stored_to_raw_ratio: if raw == 0 { 0.0 } else { bytes_out as f64 / raw as f64 },
        expansion_ratio_vs_source_images: source.filter(|b| *b > 0).map(|b| bytes_out as f64 / b as f64),
    }
}

pub fn run(cfg: &RunConfig, synthetic: bool) -> CliResult<Output> {
    let timer = Timer::start();
    let settings = CacheSettings::from_config(cfg, synthetic)?;
    let records: Vec<SampleRecord> = read_jsonl(&cfg.samples_path)?;
    if records.is_empty() {
        log::warn!("{} lists no samples", cfg.samples_path.display());
    }
    if !synthetic {
        let missing: Vec<String> = records
            .iter()
            .filter(|r| !dump_dir(&cfg.dump_dir, &r.sample_id).join(DESCRIPTOR_FILE).is_file())
            .map(|r| r.sample_id.clone())
            .collect();
        if !missing.is_empty() {
            return Err(CliError::MissingDumps(missing));
        }
    }
    fs::create_dir_all(&cfg.cache_dir).map_err(|e| CliError::io(&cfg.cache_dir, e))?;
    let results: Vec<CliResult<(SampleReport, u64, u64)>> = cfg.with_pool(|| {
        records
            .par_iter()
            .map(|r| cache_one(&settings, cfg, r).map(|(rep, built)| (rep, built.masked_pixels, built.total_pixels)))
            .collect()
    })?;
    let mut samples = Vec::with_capacity(results.len());
    let (mut masked, mut total) = (0u64, 0u64);
    for r in results {
        let (rep, m, t) = r?;
        samples.push(rep);
        masked += m;
        total += t;
    }
    let report = CacheReport { totals: totals(&samples, masked, total), settings, samples };
    write_json(&cfg.cache_dir.join(REPORT_FILE), &report)?;
    log::info!("{} archives, {} bytes", report.totals.samples, report.totals.bytes_out);
    Ok(Output::new("cache", &report)?.with_timing(&timer))
}
