//! `manifest`: scan dataset roots into `manifest.jsonl` and cut the sampled
//! scenes into N-view windows in `samples.jsonl`.

use distillcache_core::manifest::{plan_samples, scenes};
use serde::Serialize;

use super::{Output, Timer};
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::scan::{build_manifest, normalize_path, write_jsonl, SampleRecord};

#[derive(Debug, Serialize)]
pub struct ManifestReport {
    pub manifest_path: String,
    pub samples_path: String,
    pub entries: usize,
    pub scenes: usize,
    pub samples: usize,
    pub views_per_sample: usize,
    pub warnings: Vec<String>,
}

pub fn run(cfg: &RunConfig) -> CliResult<Output> {
    let timer = Timer::start();
    let roots = cfg.roots()?;
    if roots.is_empty() {
        return Err(CliError::input("no dataset roots configured (set dataset_roots or pass --dataset-root)"));
    }
    let policy = cfg.sampling_policy()?;
    let mut scan = cfg.with_pool(|| build_manifest(&roots))??;
    if scan.entries.is_empty() {
        scan.warnings.push("no images found under the dataset roots; manifest is empty".into());
    }
    for w in &scan.warnings {
        log::warn!("{w}");
    }
    let samples = plan_samples(&scan.entries, &policy);
    let records: Vec<SampleRecord> = samples.iter().map(SampleRecord::from).collect();
    write_jsonl(&cfg.manifest_path, &scan.entries)?;
    write_jsonl(&cfg.samples_path, &records)?;
    log::info!("{} entries, {} samples", scan.entries.len(), records.len());
    let report = ManifestReport {
        manifest_path: normalize_path(&cfg.manifest_path),
        samples_path: normalize_path(&cfg.samples_path),
        entries: scan.entries.len(),
        scenes: scenes(&scan.entries).count(),
        samples: records.len(),
        views_per_sample: policy.views_per_sample,
        warnings: scan.warnings,
    };
    Ok(Output::new("manifest", report)?.with_timing(&timer))
}
