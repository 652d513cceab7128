//! `verify`: re-read every archive of the cache directory and check header,
//! section, mask and value invariants; with `--deep`, rebuild each archive
//! from its source and compare byte by byte.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use super::cache::{build_sample, CacheReport, REPORT_FILE};
use super::{Output, Timer};
use crate::archive_io::{decode_checked, list_archives};
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArchiveCheck {
    pub archive: String,
    pub bytes: u64,
    pub n_views: usize,
    pub degenerate_views: usize,
    /// `Some(true)` once a deep check rebuilt the archive identically.
    pub regenerated_identical: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub archives: Vec<ArchiveCheck>,
    pub total_bytes: u64,
    pub report_checked: bool,
    pub deep: bool,
}

fn file_name(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

fn check_one(path: &Path) -> CliResult<ArchiveCheck> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    let set = decode_checked(&bytes).map_err(|e| CliError::corrupt(path, e))?;
    Ok(ArchiveCheck {
        archive: file_name(path),
        bytes: bytes.len() as u64,
        n_views: set.len(),
        degenerate_views: set.degenerate_views(),
        regenerated_identical: None,
    })
}

/// Offset of the first differing byte (a length difference counts as a
/// difference at the shorter length).
pub fn first_difference(a: &[u8], b: &[u8]) -> Option<u64> {
    match a.iter().zip(b).position(|(x, y)| x != y) {
        Some(i) => Some(i as u64),
        None if a.len() != b.len() => Some(a.len().min(b.len()) as u64),
        None => None,
    }
}

pub fn run(cfg: &RunConfig, deep: bool) -> CliResult<Output> {
    let timer = Timer::start();
    let dir = &cfg.cache_dir;
    let paths = list_archives(dir)?;
    let results: Vec<CliResult<ArchiveCheck>> = cfg.with_pool(|| paths.par_iter().map(|p| check_one(p)).collect())?;
    let mut archives = results.into_iter().collect::<CliResult<Vec<_>>>()?;

    let report = CacheReport::load(dir)?;
    if let Some(report) = &report {
        for s in &report.samples {
            let path = dir.join(&s.archive);
            let found = archives.iter().find(|a| a.archive == s.archive);
            match found {
                None => {
                    return Err(CliError::Mismatch {
                        path,
                        offset: 0,
                        reason: format!("archive of sample `{}` listed in {REPORT_FILE} is missing", s.sample_id),
                    })
                }
                Some(a) if a.bytes != s.bytes_out => {
                    return Err(CliError::Mismatch {
                        path,
                        offset: a.bytes.min(s.bytes_out),
                        reason: format!("archive holds {} bytes, {REPORT_FILE} records {}", a.bytes, s.bytes_out),
                    })
                }
                Some(_) => {}
            }
        }
    }

    if deep {
        let report = report.as_ref().ok_or_else(|| {
            CliError::input(format!("--deep rebuilds archives from {REPORT_FILE}, which is missing in {}", dir.display()))
        })?;
        let rebuilt: Vec<CliResult<()>> = cfg.with_pool(|| {
            report
                .samples
                .par_iter()
                .map(|s| {
                    let path = dir.join(&s.archive);
                    let built = build_sample(&report.settings, &cfg.dump_dir, &s.sample_id, s.n_views)?;
                    let stored = fs::read(&path).map_err(|e| CliError::io(&path, e))?;
                    match first_difference(&stored, &built.archive) {
                        None => Ok(()),
                        Some(offset) => Err(CliError::Mismatch {
                            reason: format!("byte {offset} differs from the regenerated archive"),
                            path,
                            offset,
                        }),
                    }
                })
                .collect()
        })?;
        for r in rebuilt {
            r?;
        }
        for a in &mut archives {
            a.regenerated_identical = Some(report.samples.iter().any(|s| s.archive == a.archive));
        }
    }
    log::info!("{} archives verified", archives.len());
    let report = VerifyReport {
        total_bytes: archives.iter().map(|a| a.bytes).sum(),
        archives,
        report_checked: report.is_some(),
        deep,
    };
    Ok(Output::new("verify", report)?.with_timing(&timer))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_difference_cases() {
        assert_eq!(first_difference(b"abc", b"abc"), None);
        assert_eq!(first_difference(b"abc", b"abd"), Some(2));
        assert_eq!(first_difference(b"ab", b"abc"), Some(2));
    }
}
