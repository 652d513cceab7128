//! Central-difference verification of the analytic loss gradients.
//!
//! The loss is re-evaluated from scratch in double-double precision for each
//! perturbed coordinate, so the numeric derivative does not share the
//! gradient code path and its cancellation error is negligible next to the
//! O(h²) truncation error.

use alloc::format;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::dd::Dd;
use super::{check_sample, total_loss, LossBreakdown, LossConfig, StudentField, StudentPrediction, Weighting};
use crate::error::{Error, Result};
use crate::geometry::ViewSet;

/// Coordinates sampled per student field (all of them when a field has fewer).
pub const FD_COORDS_PER_FIELD: usize = 200;

/// Which scalar is differentiated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    Total,
    /// α_g·L_g + α_ℓ·L_ℓ only.
    Geometric,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CoordError {
    pub view: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FieldReport {
    pub field: StudentField,
    pub coords_checked: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub worst: Option<CoordError>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub fields: Vec<FieldReport>,
    /// Loss at the unperturbed point (gradients stripped).
    pub loss: LossBreakdown,
}

/// `|a − f| / max(|a|, |f|, 1e-12)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

struct Components {
    l_g: Dd,
    l_l: Dd,
    l_conf: Dd,
}

/// Teacher-side quantities, computed once per check.
struct Evaluator<'a> {
    sample: &'a ViewSet,
    cfg: LossConfig,
    inv_total: Dd,
    teacher_global: Vec<Vec<Dd>>,
    teacher_local: Vec<Vec<Dd>>,
}

fn norm_dd(p: &[f64]) -> Dd {
    (Dd::prod(p[0], p[0]) + Dd::prod(p[1], p[1]) + Dd::prod(p[2], p[2])).sqrt()
}

fn group_norm_sum<'d>(maps: impl Iterator<Item = (&'d [f64], &'d crate::geometry::ValidityMask)>) -> (Dd, usize) {
    let mut sum = Dd::ZERO;
    let mut count = 0;
    for (data, mask) in maps {
        for i in mask.valid_pixels() {
            sum = sum + norm_dd(&data[i * 3..i * 3 + 3]);
        }
        count += mask.valid_count();
    }
    (sum, count)
}

impl<'a> Evaluator<'a> {
    fn new(sample: &'a ViewSet, cfg: LossConfig) -> Self {
        let eps = cfg.scale_epsilon;
        let total = sample.valid_count().max(1);
        let normalize = |data: &[f64], sum: Dd, count: usize| -> Vec<Dd> {
            let denom = (sum / Dd::from_f64(count.max(1) as f64)).max_f64(eps);
            data.iter().map(|v| Dd::from_f64(*v) / denom).collect()
        };
        let (g_sum, g_count) = group_norm_sum(sample.views().iter().map(|v| (v.maps.global.as_slice(), &v.mask)));
        let teacher_global = sample.views().iter().map(|v| normalize(v.maps.global.as_slice(), g_sum, g_count)).collect();
        let teacher_local = sample
            .views()
            .iter()
            .map(|v| {
                let (sum, count) = group_norm_sum(core::iter::once((v.maps.local.as_slice(), &v.mask)));
                normalize(v.maps.local.as_slice(), sum, count)
            })
            .collect();
        Evaluator {
            sample,
            cfg,
            inv_total: Dd::from_f64(1.0) / Dd::from_f64(total as f64),
            teacher_global,
            teacher_local,
        }
    }

    fn weight(&self, conf: &[f64], i: usize) -> f64 {
        match self.cfg.weighting {
            Weighting::TeacherConfidence => conf[i],
            Weighting::Unit => 1.0,
        }
    }

    fn squared_error(&self, student: &[f64], scale_sum: Dd, count: usize, teacher: &[Dd], k: usize, conf: &[f64]) -> Dd {
        let denom = (scale_sum / Dd::from_f64(count as f64)).max_f64(self.cfg.scale_epsilon);
        let inv = Dd::from_f64(1.0) / denom;
        let mut acc = Dd::ZERO;
        for i in self.sample.views()[k].mask.valid_pixels() {
            let mut px = Dd::ZERO;
            for c in 0..3 {
                let d = inv.mul_f64(student[i * 3 + c]) - teacher[i * 3 + c];
                px = px + d * d;
            }
            acc = acc + px.mul_f64(self.weight(conf, i));
        }
        acc
    }

    /// Loss components for a student given as per-view field arrays.
    fn eval(&self, student: &[[Vec<f64>; 4]]) -> Components {
        if self.sample.is_degenerate() {
            return Components { l_g: Dd::ZERO, l_l: Dd::ZERO, l_conf: Dd::ZERO };
        }
        let views = self.sample.views();
        let (g_sum, g_count) = group_norm_sum(student.iter().zip(views).map(|(s, v)| (s[0].as_slice(), &v.mask)));
        let mut l_g = Dd::ZERO;
        let mut l_l = Dd::ZERO;
        let mut conf = Dd::ZERO;
        for (k, v) in views.iter().enumerate() {
            let s = &student[k];
            l_g = l_g + self.squared_error(&s[0], g_sum, g_count, &self.teacher_global[k], k, v.maps.conf_global.as_slice());
            let (l_sum, l_count) = group_norm_sum(core::iter::once((s[1].as_slice(), &v.mask)));
            l_l = l_l + self.squared_error(&s[1], l_sum, l_count, &self.teacher_local[k], k, v.maps.conf_local.as_slice());
            let (tg, tl) = (v.maps.conf_global.as_slice(), v.maps.conf_local.as_slice());
            for i in v.mask.valid_pixels() {
                conf = conf + (Dd::from_f64(s[2][i]) - Dd::from_f64(tg[i])).abs();
                conf = conf + (Dd::from_f64(s[3][i]) - Dd::from_f64(tl[i])).abs();
            }
        }
        Components {
            l_g: l_g * self.inv_total,
            l_l: l_l * self.inv_total,
            l_conf: (conf * self.inv_total).mul_f64(0.5),
        }
    }

    fn objective(&self, student: &[[Vec<f64>; 4]], objective: Objective) -> Dd {
        let c = self.eval(student);
        let geo = c.l_g.mul_f64(self.cfg.alpha_g) + c.l_l.mul_f64(self.cfg.alpha_l);
        match objective {
            Objective::Geometric => geo,
            Objective::Total => geo + c.l_conf.mul_f64(self.cfg.effective_gamma()),
        }
    }

    /// Central difference along one coordinate; restores the coordinate.
    fn partial(&self, work: &mut [[Vec<f64>; 4]], field: usize, view: usize, index: usize, h: f64, objective: Objective) -> f64 {
        let x = work[view][field][index];
        let (xp, xm) = (x + h, x - h);
        work[view][field][index] = xp;
        let fp = self.objective(work, objective);
        work[view][field][index] = xm;
        let fm = self.objective(work, objective);
        work[view][field][index] = x;
        ((fp - fm) / (Dd::from_f64(xp) - Dd::from_f64(xm))).to_f64()
    }
}

fn working_copy(student: &StudentPrediction) -> Vec<[Vec<f64>; 4]> {
    student
        .views()
        .iter()
        .map(|v| StudentField::ALL.map(|f| f.of(v).to_vec()))
        .collect()
}

fn field_slot(field: StudentField) -> usize {
    match field {
        StudentField::PointsGlobal => 0,
        StudentField::PointsLocal => 1,
        StudentField::ConfGlobal => 2,
        StudentField::ConfLocal => 3,
    }
}

fn check_step(h: f64) -> Result<()> {
    if !(1e-6..=1e-3).contains(&h) {
        return Err(Error::invalid_argument(format!("finite-difference step {h} outside [1e-6, 1e-3]")));
    }
    Ok(())
}

/// Numeric derivative of `objective` along a single student coordinate.
#[allow(clippy::too_many_arguments)]
pub fn numeric_partial(
    student: &StudentPrediction,
    sample: &ViewSet,
    cfg: &LossConfig,
    objective: Objective,
    field: StudentField,
    view: usize,
    index: usize,
    h: f64,
) -> Result<f64> {
    check_step(h)?;
    cfg.validate()?;
    check_sample(student, sample)?;
    let mut work = working_copy(student);
    if view >= work.len() || index >= work[view][field_slot(field)].len() {
        return Err(Error::invalid_argument(format!("coordinate ({view}, {index}) out of range for {}", field.name())));
    }
    let eval = Evaluator::new(sample, *cfg);
    Ok(eval.partial(&mut work, field_slot(field), view, index, h, objective))
}

/// Compares analytic gradients with central differences on a seeded random
/// subset of at least [`FD_COORDS_PER_FIELD`] coordinates per field.
pub fn finite_diff_check(
    student: &StudentPrediction,
    sample: &ViewSet,
    cfg: &LossConfig,
    h: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    check_step(h)?;
    let mut loss = total_loss(student, sample, cfg, true)?;
    let grads = loss.grads.take().expect("gradients were requested");
    let eval = Evaluator::new(sample, *cfg);
    let mut work = working_copy(student);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per_view = |f: StudentField| sample.resolution().pixels() * f.channels();

    let mut fields = Vec::with_capacity(4);
    for field in StudentField::ALL {
        let n = per_view(field) * sample.len();
        let mut coords: Vec<usize> = if n <= FD_COORDS_PER_FIELD {
            (0..n).collect()
        } else {
            rand::seq::index::sample(&mut rng, n, FD_COORDS_PER_FIELD).into_vec()
        };
        coords.sort_unstable();
        let mut report = FieldReport { field, coords_checked: coords.len(), max_rel_err: 0.0, max_abs_err: 0.0, worst: None };
        for flat in coords {
            let (view, index) = (flat / per_view(field), flat % per_view(field));
            let analytic = grads[view].field(field)[index];
            let numeric = eval.partial(&mut work, field_slot(field), view, index, h, Objective::Total);
            let rel_err = relative_error(analytic, numeric);
            report.max_abs_err = report.max_abs_err.max((analytic - numeric).abs());
            if report.worst.is_none() || rel_err > report.max_rel_err {
                report.max_rel_err = rel_err;
                report.worst = Some(CoordError { view, index, analytic, numeric, rel_err });
            }
        }
        fields.push(report);
    }
    let max_rel_err = fields.iter().map(|f| f.max_rel_err).fold(0.0, f64::max);
    Ok(GradCheckReport { max_rel_err, fields, loss })
}
