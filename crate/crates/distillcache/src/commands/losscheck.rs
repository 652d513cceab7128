//! `losscheck`: compare analytic loss gradients with central finite
//! differences. Samples are center crops of two views of cached archives,
//! or seeded synthetic samples when the cache is empty; the student is the
//! teacher plus seeded noise.

use distillcache_core::archive::HalfViewSet;
use distillcache_core::geometry::threshold_mask;
use distillcache_core::loss::{finite_diff_check, FieldReport, StudentPrediction};
use distillcache_core::teacher::{synth_teacher, SyntheticScene};
use distillcache_core::{ConfidenceMap, PointMap, Resolution, ValidityMask, View, ViewMaps, ViewSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::{Output, Timer};
use crate::archive_io::{list_archives, ArchiveReader};
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const CROP: Resolution = Resolution::new(16, 28);
pub const CROP_VIEWS: usize = 2;
pub const DEFAULT_SAMPLES: usize = 20;
pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossCheckArgs {
    pub samples: usize,
    pub step: f64,
    pub tolerance: f64,
}

impl Default for LossCheckArgs {
    fn default() -> Self {
        LossCheckArgs { samples: DEFAULT_SAMPLES, step: DEFAULT_STEP, tolerance: DEFAULT_TOLERANCE }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleCheck {
    pub source: String,
    pub max_rel_err: f64,
    pub l_total: f64,
    pub skipped: bool,
    pub fields: Vec<FieldReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossCheckReport {
    pub mode: String,
    pub source: &'static str,
    pub resolution: String,
    pub views: usize,
    pub step: f64,
    pub tolerance: f64,
    pub max_rel_err: f64,
    pub passed: bool,
    pub samples: Vec<SampleCheck>,
}

fn crop_values(data: &[f64], res: Resolution, channels: usize, top: usize, left: usize, out: Resolution) -> Vec<f64> {
    let mut v = Vec::with_capacity(out.pixels() * channels);
    for i in top..top + out.height {
        let row = (i * res.width + left) * channels;
        v.extend_from_slice(&data[row..row + out.width * channels]);
    }
    v
}

/// Window of `out` pixels centred in the view.
pub fn center_crop(view: &View, out: Resolution) -> CliResult<View> {
    let res = view.maps.resolution();
    if out.height > res.height || out.width > res.width {
        return Err(CliError::input(format!("crop {out} does not fit in {res}")));
    }
    let (top, left) = ((res.height - out.height) / 2, (res.width - out.width) / 2);
    let m = &view.maps;
    let pts = |p: &PointMap| PointMap::new(out, p.frame(), crop_values(p.as_slice(), res, 3, top, left, out));
    let conf = |c: &ConfidenceMap| ConfidenceMap::new(out, crop_values(c.as_slice(), res, 1, top, left, out));
    let bits: Vec<f64> = view.mask.bits().iter().map(|b| f64::from(u8::from(*b))).collect();
    let mask = crop_values(&bits, res, 1, top, left, out).into_iter().map(|b| b != 0.0).collect();
    Ok(View {
        maps: ViewMaps::new(pts(&m.global)?, pts(&m.local)?, conf(&m.conf_global)?, conf(&m.conf_local)?)?,
        mask: ValidityMask::new(out, mask)?,
    })
}

/// Teacher plus seeded noise: points move by up to 10% of their magnitude,
/// confidences by 0.05–0.5 (kept positive and away from the teacher value,
/// where the confidence term has a kink).
pub fn noisy_student(sample: &ViewSet, seed: u64) -> CliResult<StudentPrediction> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let res = sample.resolution();
    let mut views = Vec::with_capacity(sample.len());
    for v in sample.views() {
        let mut pts = |p: &PointMap| {
            let data = p.as_slice().iter().map(|x| x + (0.1 * x.abs() + 1e-3) * rng.random_range(-1.0..1.0)).collect();
            PointMap::new(res, p.frame(), data)
        };
        let (g, l) = (pts(&v.maps.global)?, pts(&v.maps.local)?);
        let mut conf = |c: &ConfidenceMap| {
            let data = c
                .as_slice()
                .iter()
                .map(|x| {
                    let d = rng.random_range(0.05..0.5);
                    if *x < 0.55 || rng.random_bool(0.5) {
                        x + d
                    } else {
                        x - d
                    }
                })
                .collect();
            ConfidenceMap::new(res, data)
        };
        let (cg, cl) = (conf(&v.maps.conf_global)?, conf(&v.maps.conf_local)?);
        views.push(ViewMaps::new(g, l, cg, cl)?);
    }
    Ok(StudentPrediction::new(views)?)
}

/// Crops of the first two views of an archive (only those views are read).
fn archive_sample(path: &std::path::Path) -> CliResult<ViewSet> {
    let reader = ArchiveReader::open(path)?;
    if reader.n_views() < CROP_VIEWS {
        return Err(CliError::input(format!("{} holds {} view(s), gradient check needs {CROP_VIEWS}", path.display(), reader.n_views())));
    }
    let halves = (0..CROP_VIEWS).map(|k| reader.read_view(k)).collect::<CliResult<Vec<_>>>()?;
    let at = |e| CliError::from_core_at(path, e);
    let set = HalfViewSet::new(reader.header().res, halves).and_then(|h| h.to_view_set()).map_err(at)?;
    let views = set.views()[..CROP_VIEWS].iter().map(|v| center_crop(v, CROP)).collect::<CliResult<Vec<_>>>()?;
    Ok(ViewSet::new(views)?)
}

/// A synthetic two-view sample generated directly at the crop size.
pub fn synthetic_sample(seed: u64, tau: f64) -> CliResult<ViewSet> {
    let teacher = synth_teacher(&SyntheticScene::new(seed, CROP_VIEWS, CROP))?;
    let views = teacher
        .into_views()
        .into_iter()
        .map(|maps| Ok(View { mask: threshold_mask(&maps.conf_local, tau)?, maps }))
        .collect::<CliResult<Vec<_>>>()?;
    Ok(ViewSet::new(views)?)
}

pub fn run(cfg: &RunConfig, args: LossCheckArgs) -> CliResult<Output> {
    let timer = Timer::start();
    if args.samples == 0 {
        return Err(CliError::input("--samples must be >= 1"));
    }
    if !(args.tolerance > 0.0) {
        return Err(CliError::input(format!("tolerance must be positive, got {}", args.tolerance)));
    }
    let loss_cfg = cfg.loss_config()?;
    let archives = if cfg.cache_dir.is_dir() { list_archives(&cfg.cache_dir)? } else { Vec::new() };
    let source = if archives.is_empty() { "synthetic" } else { "cache" };
    let samples: Vec<(String, ViewSet)> = (0..args.samples)
        .map(|i| {
            if archives.is_empty() {
                let seed = cfg.seed.wrapping_add(i as u64);
                Ok((format!("synthetic:{seed}"), synthetic_sample(seed, cfg.tau)?))
            } else {
                let path = &archives[i % archives.len()];
                let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
                Ok((name, archive_sample(path)?))
            }
        })
        .collect::<CliResult<_>>()?;
    let checks: Vec<CliResult<SampleCheck>> = cfg.with_pool(|| {
        samples
            .par_iter()
            .enumerate()
            .map(|(i, (name, sample))| {
                let seed = cfg.seed.wrapping_add(i as u64);
                let student = noisy_student(sample, seed)?;
                let r = finite_diff_check(&student, sample, &loss_cfg, args.step, seed)?;
                Ok(SampleCheck {
                    source: name.clone(),
                    max_rel_err: r.max_rel_err,
                    l_total: r.loss.l_total,
                    skipped: r.loss.skipped,
                    fields: r.fields,
                })
            })
            .collect()
    })?;
    let samples = checks.into_iter().collect::<CliResult<Vec<_>>>()?;
    let max_rel_err = samples.iter().map(|s| s.max_rel_err).fold(0.0, f64::max);
    let passed = max_rel_err <= args.tolerance;
    let report = LossCheckReport {
        mode: cfg.loss_mode()?.to_string(),
        source,
        resolution: CROP.to_string(),
        views: CROP_VIEWS,
        step: args.step,
        tolerance: args.tolerance,
        max_rel_err,
        passed,
        samples,
    };
    let mut out = Output::new("losscheck", report)?.with_timing(&timer);
    if !passed {
        out.failure = Some(CliError::GradCheck { max_rel_err, tolerance: args.tolerance });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crop_takes_the_centre() {
        let sample = synthetic_sample(1, 0.3).unwrap();
        let v = &sample.views()[0];
        let small = center_crop(v, Resolution::new(2, 4)).unwrap();
        // (16-2)/2 = 7, (28-4)/2 = 12
        assert_eq!(small.maps.global.point(0), v.maps.global.point(7 * 28 + 12));
        assert_eq!(small.maps.conf_local.as_slice()[5], v.maps.conf_local.as_slice()[8 * 28 + 13]);
        assert_eq!(small.mask.get(5), v.mask.get(8 * 28 + 13));
        assert!(center_crop(v, Resolution::new(17, 28)).is_err());
    }

    #[test]
    fn synthetic_samples_are_informative() {
        let sample = synthetic_sample(0, 0.3).unwrap();
        assert!(sample.views().iter().all(|v| !v.mask.is_empty() && v.mask.valid_count() < CROP.pixels()));
        let student = noisy_student(&sample, 0).unwrap();
        assert_ne!(student.views()[0], sample.views()[0].maps);
    }
}
