//! `eval`: per-view accuracy / completeness / scale factor of predicted
//! global point clouds against ground-truth clouds.
//!
//! `--pred` may be an archive (`.d3rc`), a teacher dump directory, a
//! directory of cloud files (one per view) or a single cloud file; `--gt`
//! is a directory of cloud files or a single cloud file. Views pair up in
//! order (cloud files sort by name).

use std::path::{Path, PathBuf};

use distillcache_core::eval::{aggregate, evaluate_view, CloudPair, EvalReport, MedianRule, Point3};
use distillcache_core::eval::masked_points;
use distillcache_core::geometry::threshold_mask;
use distillcache_core::Error as CoreError;
use rayon::prelude::*;
use serde::Serialize;

use super::{Output, Timer};
use crate::archive_io::{read_archive, ARCHIVE_EXTENSION};
use crate::cloud::{list_clouds, read_cloud};
use crate::config::RunConfig;
use crate::dump::{read_teacher_dump, DESCRIPTOR_FILE};
use crate::error::{CliError, CliResult};
use crate::scan::normalize_path;

pub const DEFAULT_UNIT_NOTE: &str = "distances x100 in ground-truth units";

#[derive(Debug, Clone, PartialEq)]
pub struct EvalArgs {
    pub pred: PathBuf,
    pub gt: PathBuf,
    /// Restrict archive / dump predictions to their validity masks.
    pub masked: bool,
    pub unit_note: String,
    pub median: MedianRule,
}

impl EvalArgs {
    pub fn new(pred: impl Into<PathBuf>, gt: impl Into<PathBuf>) -> Self {
        EvalArgs { pred: pred.into(), gt: gt.into(), masked: false, unit_note: DEFAULT_UNIT_NOTE.into(), median: MedianRule::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalOutput {
    pub pred: String,
    pub gt: String,
    pub views: usize,
    pub masked: bool,
    #[serde(flatten)]
    pub report: EvalReport,
}

fn clouds(path: &Path) -> CliResult<Vec<Vec<Point3>>> {
    if path.is_dir() {
        let files = list_clouds(path)?;
        if files.is_empty() {
            return Err(CliError::input(format!("{} holds no cloud files (.bin, .xyz, .txt)", path.display())));
        }
        files.iter().map(|f| read_cloud(f)).collect()
    } else {
        Ok(vec![read_cloud(path)?])
    }
}

/// Per-view predicted clouds from any supported source.
pub fn predicted_clouds(path: &Path, masked: bool, tau: f64) -> CliResult<Vec<Vec<Point3>>> {
    let at = |e: CoreError| CliError::from_core_at(path, e);
    if path.extension().is_some_and(|e| e == ARCHIVE_EXTENSION) {
        let set = read_archive(path)?.to_view_set().map_err(at)?;
        return set.views().iter().map(|v| masked_points(&v.maps.global, masked.then_some(&v.mask)).map_err(at)).collect();
    }
    if path.join(DESCRIPTOR_FILE).is_file() {
        let (_, teacher) = read_teacher_dump(path)?;
        return teacher
            .views()
            .iter()
            .map(|v| {
                let mask = if masked { Some(threshold_mask(&v.conf_local, tau)?) } else { None };
                masked_points(&v.global, mask.as_ref())
            })
            .collect::<Result<_, _>>()
            .map_err(at);
    }
    clouds(path)
}

pub fn run(cfg: &RunConfig, args: &EvalArgs) -> CliResult<Output> {
    let timer = Timer::start();
    let pred = predicted_clouds(&args.pred, args.masked, cfg.tau)?;
    let gt = clouds(&args.gt)?;
    if pred.len() != gt.len() {
        return Err(CliError::input(format!(
            "view count mismatch: {} predicted view(s) in {}, {} ground-truth view(s) in {}",
            pred.len(),
            args.pred.display(),
            gt.len(),
            args.gt.display()
        )));
    }
    let views: Vec<_> = cfg.with_pool(|| {
        pred.into_par_iter()
            .zip(gt.into_par_iter())
            .map(|(p, g)| evaluate_view(&CloudPair::new(p, g, args.unit_note.as_str())?, args.median))
            .collect::<Result<Vec<_>, CoreError>>()
    })??;
    let report = aggregate(&views, &args.unit_note, args.median)?;
    let out = EvalOutput {
        pred: normalize_path(&args.pred),
        gt: normalize_path(&args.gt),
        views: views.len(),
        masked: args.masked,
        report,
    };
    Ok(Output::new("eval", out)?.with_timing(&timer))
}
