//! Confidence-aware distillation objective.
//!
//! ```text
//! L_total = α_g·L_g + α_ℓ·L_ℓ + γ·L_conf
//! L_m     = 1/|M| Σ_k Σ_{ij∈M_k} w^m_kij ‖p̃^s,m_kij − p̃^t,m_kij‖²      m ∈ {g, ℓ}
//! L_conf  = 1/(2|M|) Σ_k Σ_{ij∈M_k} |c^s,g − c^t,g| + |c^s,ℓ − c^t,ℓ|
//! ```
//!
//! Global maps are divided by one scale shared across all views, local maps by
//! a per-view scale; each scale is the mean point norm over the valid pixels.
//! Student and teacher are normalized by their own scales, and the gradients
//! follow the chain through the student scales. `w^m` is the teacher
//! confidence of the matching head (or 1 without weighting). The student's
//! own confidences never enter the geometric terms.
//!
//! Sums run view-major then row-major in `f64`, so results are reproducible
//! bit for bit.

mod dd;
mod gradcheck;

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::geometry::{check_views, norm3, ConfidenceMap, PointMap, Resolution, ValidityMask, ViewMaps, ViewSet};

pub use gradcheck::{
    finite_diff_check, numeric_partial, CoordError, FieldReport, GradCheckReport, Objective, FD_COORDS_PER_FIELD,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Weighting {
    TeacherConfidence,
    Unit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ConfSupervision {
    On,
    Off,
}

/// The three ablation configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum LossMode {
    /// Teacher-confidence weighting and confidence supervision.
    Full,
    /// Unit weights, no confidence term.
    LabelsOnly,
    /// Unit weights, confidence term kept.
    NoWeighting,
}

impl LossMode {
    pub const ALL: [LossMode; 3] = [LossMode::Full, LossMode::LabelsOnly, LossMode::NoWeighting];
}

impl fmt::Display for LossMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossMode::Full => "full",
            LossMode::LabelsOnly => "labels-only",
            LossMode::NoWeighting => "no-weighting",
        })
    }
}

impl FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "full" => Ok(LossMode::Full),
            "labels-only" | "labels_only" => Ok(LossMode::LabelsOnly),
            "no-weighting" | "no_weighting" => Ok(LossMode::NoWeighting),
            other => Err(Error::invalid_argument(format!("unknown loss mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct LossConfig {
    pub alpha_g: f64,
    pub alpha_l: f64,
    pub gamma: f64,
    pub weighting: Weighting,
    pub conf_supervision: ConfSupervision,
    pub scale_epsilon: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            alpha_g: 2.0,
            alpha_l: 1.0,
            gamma: 0.001,
            weighting: Weighting::TeacherConfidence,
            conf_supervision: ConfSupervision::On,
            scale_epsilon: 1e-8,
        }
    }
}

impl LossConfig {
    pub fn for_mode(mode: LossMode) -> Self {
        LossConfig::default().with_mode(mode)
    }

    /// Replaces the weighting and confidence switches, keeping the weights.
    pub fn with_mode(mut self, mode: LossMode) -> Self {
        let (weighting, conf) = match mode {
            LossMode::Full => (Weighting::TeacherConfidence, ConfSupervision::On),
            LossMode::LabelsOnly => (Weighting::Unit, ConfSupervision::Off),
            LossMode::NoWeighting => (Weighting::Unit, ConfSupervision::On),
        };
        self.weighting = weighting;
        self.conf_supervision = conf;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.alpha_g) || !ok(self.alpha_l) || !ok(self.gamma) {
            return Err(Error::Config(format!(
                "loss weights must be finite and >= 0 (alpha_g={}, alpha_l={}, gamma={})",
                self.alpha_g, self.alpha_l, self.gamma
            )));
        }
        if !(self.scale_epsilon > 0.0) || !self.scale_epsilon.is_finite() {
            return Err(Error::Config(format!("scale_epsilon must be > 0, got {}", self.scale_epsilon)));
        }
        Ok(())
    }

    /// γ as applied to the total: zero when confidence supervision is off.
    pub fn effective_gamma(&self) -> f64 {
        match self.conf_supervision {
            ConfSupervision::On => self.gamma,
            ConfSupervision::Off => 0.0,
        }
    }
}

/// Student outputs for every view at cache resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct StudentPrediction {
    res: Resolution,
    views: Vec<ViewMaps>,
}

impl StudentPrediction {
    pub fn new(views: Vec<ViewMaps>) -> Result<Self> {
        let res = check_views(views.iter().map(|v| v.resolution()))?;
        Ok(StudentPrediction { res, views })
    }

    /// A student that reproduces the supervision exactly.
    pub fn copy_of(sample: &ViewSet) -> Self {
        StudentPrediction { res: sample.resolution(), views: sample.views().iter().map(|v| v.maps.clone()).collect() }
    }

    pub fn resolution(&self) -> Resolution {
        self.res
    }

    pub fn views(&self) -> &[ViewMaps] {
        &self.views
    }

    pub fn into_views(self) -> Vec<ViewMaps> {
        self.views
    }
}

/// The four differentiable student outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum StudentField {
    PointsGlobal,
    PointsLocal,
    ConfGlobal,
    ConfLocal,
}

impl StudentField {
    pub const ALL: [StudentField; 4] =
        [StudentField::PointsGlobal, StudentField::PointsLocal, StudentField::ConfGlobal, StudentField::ConfLocal];

    pub fn channels(self) -> usize {
        match self {
            StudentField::PointsGlobal | StudentField::PointsLocal => 3,
            StudentField::ConfGlobal | StudentField::ConfLocal => 1,
        }
    }

    pub fn of(self, maps: &ViewMaps) -> &[f64] {
        match self {
            StudentField::PointsGlobal => maps.global.as_slice(),
            StudentField::PointsLocal => maps.local.as_slice(),
            StudentField::ConfGlobal => maps.conf_global.as_slice(),
            StudentField::ConfLocal => maps.conf_local.as_slice(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            StudentField::PointsGlobal => "points_global",
            StudentField::PointsLocal => "points_local",
            StudentField::ConfGlobal => "conf_global",
            StudentField::ConfLocal => "conf_local",
        }
    }
}

/// Gradient of the total loss for one view, same layout as the maps.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewGrad {
    pub pts_global: Vec<f64>,
    pub pts_local: Vec<f64>,
    pub conf_global: Vec<f64>,
    pub conf_local: Vec<f64>,
}

impl ViewGrad {
    fn zeros(pixels: usize) -> Self {
        ViewGrad {
            pts_global: vec![0.0; pixels * 3],
            pts_local: vec![0.0; pixels * 3],
            conf_global: vec![0.0; pixels],
            conf_local: vec![0.0; pixels],
        }
    }

    pub fn field(&self, field: StudentField) -> &[f64] {
        match field {
            StudentField::PointsGlobal => &self.pts_global,
            StudentField::PointsLocal => &self.pts_local,
            StudentField::ConfGlobal => &self.conf_global,
            StudentField::ConfLocal => &self.conf_local,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub l_g: f64,
    pub l_l: f64,
    pub l_conf: f64,
    pub l_total: f64,
    /// Set when a view has no valid pixels; all values and gradients are zero.
    pub skipped: bool,
    pub grads: Option<Vec<ViewGrad>>,
}

impl LossBreakdown {
    /// α_g·L_g + α_ℓ·L_ℓ, the geometric part of the total.
    pub fn geometric(&self, cfg: &LossConfig) -> f64 {
        cfg.alpha_g * self.l_g + cfg.alpha_l * self.l_l
    }
}

/// Scale-normalized points with the scale that was used.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalized<T> {
    pub points: T,
    /// Mean valid-pixel norm before flooring.
    pub scale: f64,
    /// The scale was below the epsilon floor; points were divided by epsilon.
    pub floored: bool,
}

fn check_pairs(maps: &[&PointMap], masks: &[&ValidityMask]) -> Result<()> {
    if maps.len() != masks.len() {
        return Err(Error::shape(format!("{} point maps but {} masks", maps.len(), masks.len())));
    }
    for (k, (m, mask)) in maps.iter().zip(masks).enumerate() {
        if m.resolution() != mask.resolution() {
            return Err(Error::shape(format!("view {k}: point map {} vs mask {}", m.resolution(), mask.resolution())));
        }
    }
    Ok(())
}

/// Sum of valid-pixel norms and valid count over a group of views.
fn norm_sum(maps: &[&[f64]], masks: &[&ValidityMask]) -> (f64, usize) {
    let mut sum = 0.0;
    let mut count = 0;
    for (data, mask) in maps.iter().zip(masks) {
        for i in mask.valid_pixels() {
            sum += norm3(&data[i * 3..i * 3 + 3]);
        }
        count += mask.valid_count();
    }
    (sum, count)
}

fn divide(map: &PointMap, denom: f64) -> Result<PointMap> {
    PointMap::new(map.resolution(), map.frame(), map.as_slice().iter().map(|v| v / denom).collect())
}

/// Divides every view by one scale shared across all views.
pub fn normalize_global(views: &[&PointMap], masks: &[&ValidityMask], eps: f64) -> Result<Normalized<Vec<PointMap>>> {
    check_pairs(views, masks)?;
    let data: Vec<&[f64]> = views.iter().map(|v| v.as_slice()).collect();
    let (sum, count) = norm_sum(&data, masks);
    if count == 0 {
        return Err(Error::degenerate("no valid pixels in any view"));
    }
    let scale = sum / count as f64;
    let denom = scale.max(eps);
    let points = views.iter().map(|v| divide(v, denom)).collect::<Result<Vec<_>>>()?;
    Ok(Normalized { points, scale, floored: !(scale > eps) })
}

/// Divides one view by its own scale.
pub fn normalize_local(view: &PointMap, mask: &ValidityMask, eps: f64) -> Result<Normalized<PointMap>> {
    check_pairs(&[view], &[mask])?;
    let (sum, count) = norm_sum(&[view.as_slice()], &[mask]);
    if count == 0 {
        return Err(Error::degenerate("view has no valid pixels"));
    }
    let scale = sum / count as f64;
    let points = divide(view, scale.max(eps))?;
    Ok(Normalized { points, scale, floored: !(scale > eps) })
}

/// Confidence-weighted squared error over valid pixels, divided by the total
/// valid count. Returns the value and its gradient with respect to the
/// normalized student points.
pub fn geometric_loss_with_grad(
    student_norm: &[&PointMap],
    teacher_norm: &[&PointMap],
    weights: &[&ConfidenceMap],
    masks: &[&ValidityMask],
    weighting: Weighting,
) -> Result<(f64, Vec<Vec<f64>>)> {
    check_pairs(student_norm, masks)?;
    check_pairs(teacher_norm, masks)?;
    if weights.len() != masks.len() || weights.iter().zip(masks).any(|(w, m)| w.resolution() != m.resolution()) {
        return Err(Error::shape("weights do not match the masks"));
    }
    let total: usize = masks.iter().map(|m| m.valid_count()).sum();
    if total == 0 {
        return Err(Error::degenerate("no valid pixels"));
    }
    let inv = 1.0 / total as f64;
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(masks.len());
    for k in 0..masks.len() {
        let (s, t) = (student_norm[k].as_slice(), teacher_norm[k].as_slice());
        let mut g = vec![0.0; s.len()];
        for i in masks[k].valid_pixels() {
            let w = match weighting {
                Weighting::TeacherConfidence => weights[k].as_slice()[i],
                Weighting::Unit => 1.0,
            };
            for c in 0..3 {
                let d = s[i * 3 + c] - t[i * 3 + c];
                loss += w * (d * d) * inv;
                g[i * 3 + c] = w * (2.0 * d * inv);
            }
        }
        grads.push(g);
    }
    Ok((loss, grads))
}

/// Value-only form of [`geometric_loss_with_grad`].
pub fn geometric_loss(
    student_norm: &[&PointMap],
    teacher_norm: &[&PointMap],
    weights: &[&ConfidenceMap],
    masks: &[&ValidityMask],
    weighting: Weighting,
) -> Result<f64> {
    geometric_loss_with_grad(student_norm, teacher_norm, weights, masks, weighting).map(|(l, _)| l)
}

/// Mean L1 distance between student and teacher confidences over valid
/// pixels, averaged over the two heads.
pub fn confidence_loss(
    student_global: &[&ConfidenceMap],
    student_local: &[&ConfidenceMap],
    teacher_global: &[&ConfidenceMap],
    teacher_local: &[&ConfidenceMap],
    masks: &[&ValidityMask],
) -> Result<f64> {
    let n = masks.len();
    if [student_global.len(), student_local.len(), teacher_global.len(), teacher_local.len()].iter().any(|l| *l != n) {
        return Err(Error::shape("confidence maps and masks differ in view count"));
    }
    let total: usize = masks.iter().map(|m| m.valid_count()).sum();
    if total == 0 {
        return Err(Error::degenerate("no valid pixels"));
    }
    let mut sum = 0.0;
    for k in 0..n {
        for m in [student_global[k], student_local[k], teacher_global[k], teacher_local[k]] {
            if m.resolution() != masks[k].resolution() {
                return Err(Error::shape(format!("view {k}: confidence map does not match mask")));
            }
        }
        let (sg, sl) = (student_global[k].as_slice(), student_local[k].as_slice());
        let (tg, tl) = (teacher_global[k].as_slice(), teacher_local[k].as_slice());
        for i in masks[k].valid_pixels() {
            sum += (sg[i] - tg[i]).abs() + (sl[i] - tl[i]).abs();
        }
    }
    Ok(sum / (2.0 * total as f64))
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// One normalization group: views sharing a scale.
struct HeadGroup<'a> {
    student: Vec<&'a [f64]>,
    teacher: Vec<&'a [f64]>,
    weights: Vec<&'a [f64]>,
    masks: Vec<&'a ValidityMask>,
}

/// Loss contribution of one group and, optionally, the gradient with
/// respect to the raw student points (through the student scale).
fn head_group(group: &HeadGroup<'_>, weighting: Weighting, eps: f64, inv_total: f64, grads: Option<&mut [&mut Vec<f64>]>) -> f64 {
    let (s_sum, count) = norm_sum(&group.student, &group.masks);
    let (t_sum, _) = norm_sum(&group.teacher, &group.masks);
    let s_scale = s_sum / count as f64;
    let t_scale = t_sum / count as f64;
    let ds = s_scale.max(eps);
    let dt = t_scale.max(eps);

    let mut loss = 0.0;
    // Σ r·q, where r = ∂L/∂q at each valid pixel
    let mut r_dot_q = 0.0;
    let mut grads = grads;
    for (k, mask) in group.masks.iter().enumerate() {
        let (s, t) = (group.student[k], group.teacher[k]);
        for i in mask.valid_pixels() {
            let w = match weighting {
                Weighting::TeacherConfidence => group.weights[k][i],
                Weighting::Unit => 1.0,
            };
            for c in 0..3 {
                let q = s[i * 3 + c] / ds;
                let d = q - t[i * 3 + c] / dt;
                loss += w * (d * d) * inv_total;
                if let Some(g) = grads.as_deref_mut() {
                    let r = w * (2.0 * d * inv_total);
                    g[k][i * 3 + c] = r / ds;
                    r_dot_q += r * q;
                }
            }
        }
    }

    // ∂L/∂s = -(Σ r·q)/s and ∂s/∂p = p/(‖p‖·count); no chain below the floor
    if let Some(g) = grads {
        if s_scale > eps {
            let coef = -r_dot_q / ds / count as f64;
            for (k, mask) in group.masks.iter().enumerate() {
                let s = group.student[k];
                for i in mask.valid_pixels() {
                    let p = &s[i * 3..i * 3 + 3];
                    let n = norm3(p);
                    if n > 0.0 {
                        for c in 0..3 {
                            g[k][i * 3 + c] += coef * p[c] / n;
                        }
                    }
                }
            }
        }
    }
    loss
}

fn check_sample(student: &StudentPrediction, sample: &ViewSet) -> Result<()> {
    if student.views.len() != sample.len() {
        return Err(Error::shape(format!("student has {} views, supervision has {}", student.views.len(), sample.len())));
    }
    if student.res != sample.resolution() {
        return Err(Error::shape(format!("student is {}, supervision is {}", student.res, sample.resolution())));
    }
    Ok(())
}

/// Full objective with optional analytic gradients.
pub fn total_loss(student: &StudentPrediction, sample: &ViewSet, cfg: &LossConfig, with_grad: bool) -> Result<LossBreakdown> {
    cfg.validate()?;
    check_sample(student, sample)?;
    let pixels = sample.resolution().pixels();
    let n = sample.len();
    if sample.is_degenerate() {
        return Ok(LossBreakdown {
            l_g: 0.0,
            l_l: 0.0,
            l_conf: 0.0,
            l_total: 0.0,
            skipped: true,
            grads: with_grad.then(|| (0..n).map(|_| ViewGrad::zeros(pixels)).collect()),
        });
    }
    let total = sample.valid_count();
    let inv_total = 1.0 / total as f64;
    let masks: Vec<&ValidityMask> = sample.views().iter().map(|v| &v.mask).collect();
    let mut grads: Option<Vec<ViewGrad>> = with_grad.then(|| (0..n).map(|_| ViewGrad::zeros(pixels)).collect());

    let eps = cfg.scale_epsilon;
    let global = HeadGroup {
        student: student.views.iter().map(|v| v.global.as_slice()).collect(),
        teacher: sample.views().iter().map(|v| v.maps.global.as_slice()).collect(),
        weights: sample.views().iter().map(|v| v.maps.conf_global.as_slice()).collect(),
        masks: masks.clone(),
    };
    let l_g = match grads.as_mut() {
        Some(g) => {
            let mut refs: Vec<&mut Vec<f64>> = g.iter_mut().map(|v| &mut v.pts_global).collect();
            head_group(&global, cfg.weighting, eps, inv_total, Some(&mut refs))
        }
        None => head_group(&global, cfg.weighting, eps, inv_total, None),
    };

    let mut l_l = 0.0;
    for k in 0..n {
        let group = HeadGroup {
            student: vec![student.views[k].local.as_slice()],
            teacher: vec![sample.views()[k].maps.local.as_slice()],
            weights: vec![sample.views()[k].maps.conf_local.as_slice()],
            masks: vec![masks[k]],
        };
        l_l += match grads.as_mut() {
            Some(g) => head_group(&group, cfg.weighting, eps, inv_total, Some(&mut [&mut g[k].pts_local])),
            None => head_group(&group, cfg.weighting, eps, inv_total, None),
        };
    }

    let mut conf_sum = 0.0;
    let gamma = cfg.effective_gamma();
    let conf_scale = 1.0 / (2.0 * total as f64);
    for (k, view) in sample.views().iter().enumerate() {
        let s = &student.views[k];
        let (sg, sl) = (s.conf_global.as_slice(), s.conf_local.as_slice());
        let (tg, tl) = (view.maps.conf_global.as_slice(), view.maps.conf_local.as_slice());
        for i in view.mask.valid_pixels() {
            let (dg, dl) = (sg[i] - tg[i], sl[i] - tl[i]);
            conf_sum += dg.abs() + dl.abs();
            if let Some(g) = grads.as_mut() {
                g[k].conf_global[i] = gamma * sign(dg) * conf_scale;
                g[k].conf_local[i] = gamma * sign(dl) * conf_scale;
            }
        }
    }
    let l_conf = conf_sum * conf_scale;

    if let Some(g) = grads.as_mut() {
        for v in g.iter_mut() {
            v.pts_global.iter_mut().for_each(|x| *x *= cfg.alpha_g);
            v.pts_local.iter_mut().for_each(|x| *x *= cfg.alpha_l);
        }
    }

    Ok(LossBreakdown {
        l_g,
        l_l,
        l_conf,
        l_total: cfg.alpha_g * l_g + cfg.alpha_l * l_l + gamma * l_conf,
        skipped: false,
        grads,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use crate::geometry::{Frame, View};

    fn r(h: usize, w: usize) -> Resolution {
        Resolution::new(h, w)
    }

    fn pm(frame: Frame, pts: &[[f64; 3]]) -> PointMap {
        PointMap::new(r(1, pts.len()), frame, pts.iter().flatten().copied().collect()).unwrap()
    }

    fn cm(v: &[f64]) -> ConfidenceMap {
        ConfidenceMap::new(r(1, v.len()), v.to_vec()).unwrap()
    }

    fn all(n: usize) -> ValidityMask {
        ValidityMask::all(r(1, n), true)
    }

    #[test]
    fn global_normalization_example() {
        let a = pm(Frame::Global, &[[3.0, 0.0, 0.0]]);
        let b = pm(Frame::Global, &[[0.0, 1.0, 0.0]]);
        let (ma, mb) = (all(1), all(1));
        let n = normalize_global(&[&a, &b], &[&ma, &mb], 1e-8).unwrap();
        assert_eq!(n.scale, 2.0);
        assert!(!n.floored);
        assert_eq!(n.points[0].as_slice(), &[1.5, 0.0, 0.0]);
        assert_eq!(n.points[1].as_slice(), &[0.0, 0.5, 0.0]);
    }

    #[test]
    fn unit_sphere_is_fixed_point() {
        let s = 1.0 / 3f64.sqrt();
        let a = pm(Frame::Global, &[[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [s, s, s]]);
        let n = normalize_global(&[&a], &[&all(3)], 1e-8).unwrap();
        assert!((n.scale - 1.0).abs() < 1e-15);
        for (x, y) in n.points[0].as_slice().iter().zip(a.as_slice()) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn scaled_input_same_output() {
        let a = pm(Frame::Global, &[[1.0, 2.0, 0.5], [-0.3, 0.0, 4.0]]);
        let a7 = a.scaled(7.0).unwrap();
        let n1 = normalize_global(&[&a], &[&all(2)], 1e-8).unwrap();
        let n7 = normalize_global(&[&a7], &[&all(2)], 1e-8).unwrap();
        assert!((n7.scale - 7.0 * n1.scale).abs() < 1e-12);
        for (x, y) in n1.points[0].as_slice().iter().zip(n7.points[0].as_slice()) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn local_normalization_examples() {
        let v = pm(Frame::Local, &[[2.0, 0.0, 0.0], [0.0, 0.0, 4.0]]);
        let n = normalize_local(&v, &all(2), 1e-8).unwrap();
        assert_eq!(n.scale, 3.0);
        assert_eq!(n.points.as_slice(), &[2.0 / 3.0, 0.0, 0.0, 0.0, 0.0, 4.0 / 3.0]);

        let single = pm(Frame::Local, &[[0.3, -1.2, 2.5]]);
        let n = normalize_local(&single, &all(1), 1e-8).unwrap();
        assert!((norm3(n.points.as_slice()) - 1.0).abs() < 1e-15);

        let zero = pm(Frame::Local, &[[0.0; 3], [0.0; 3]]);
        let n = normalize_local(&zero, &all(2), 1e-8).unwrap();
        assert_eq!(n.scale, 0.0);
        assert!(n.floored);
        assert!(n.points.as_slice().iter().all(|v| *v == 0.0));

        let none = ValidityMask::all(r(1, 2), false);
        assert!(matches!(normalize_local(&v, &none, 1e-8), Err(Error::Degenerate(_))));
    }

    #[test]
    fn geometric_loss_examples() {
        let s = pm(Frame::Global, &[[1.0, 0.0, 0.0], [0.0, 2.0, 0.0]]);
        let t = pm(Frame::Global, &[[0.0; 3], [0.0; 3]]);
        let w = cm(&[0.5, 1.0]);
        let m = all(2);
        let l = geometric_loss(&[&s], &[&t], &[&w], &[&m], Weighting::TeacherConfidence).unwrap();
        assert_eq!(l, 2.25);
        assert_eq!(geometric_loss(&[&s], &[&s], &[&w], &[&m], Weighting::TeacherConfidence).unwrap(), 0.0);
        assert_eq!(geometric_loss(&[&s], &[&t], &[&w], &[&m], Weighting::Unit).unwrap(), 2.5);
        let none = ValidityMask::all(r(1, 2), false);
        assert!(matches!(geometric_loss(&[&s], &[&t], &[&w], &[&none], Weighting::Unit), Err(Error::Degenerate(_))));
    }

    #[test]
    fn weighting_scales_gradient_per_pixel() {
        let s = pm(Frame::Global, &[[1.0, -0.5, 0.2], [0.3, 2.0, -1.1], [0.7, 0.7, 0.7]]);
        let t = pm(Frame::Global, &[[0.1, 0.4, 0.0], [0.0, 1.0, 0.5], [-0.2, 0.9, 0.3]]);
        let w = cm(&[0.5, 1.7, 3.25]);
        let m = ValidityMask::new(r(1, 3), vec![true, true, false]).unwrap();
        let (_, gw) = geometric_loss_with_grad(&[&s], &[&t], &[&w], &[&m], Weighting::TeacherConfidence).unwrap();
        let (_, gu) = geometric_loss_with_grad(&[&s], &[&t], &[&w], &[&m], Weighting::Unit).unwrap();
        for i in 0..9 {
            assert_eq!(gw[0][i], w.as_slice()[i / 3] * gu[0][i]);
        }
        assert!(gw[0][6..].iter().all(|g| *g == 0.0));
    }

    #[test]
    fn confidence_loss_example() {
        let (sg, tg) = (cm(&[1.0, 3.0]), cm(&[1.0, 2.0]));
        let (sl, tl) = (cm(&[2.0, 0.5]), cm(&[0.0, 0.5]));
        let m = all(2);
        assert_eq!(confidence_loss(&[&sg], &[&sl], &[&tg], &[&tl], &[&m]).unwrap(), 0.75);
        assert_eq!(confidence_loss(&[&tg], &[&tl], &[&tg], &[&tl], &[&m]).unwrap(), 0.0);
    }

    /// Two valid pixels whose normalized global differences are (1,0,0) with
    /// w = 0.5 and (0,2,0) with w = 1.0 (both scales are exactly 1), local
    /// maps identical, confidence diffs {0,1} global and {2,0} local.
    fn composite() -> (StudentPrediction, ViewSet) {
        let t_global = pm(Frame::Global, &[[-0.5, 0.0, 0.0], [1.0, -1.0, 0.5]]);
        let s_global = pm(Frame::Global, &[[0.5, 0.0, 0.0], [1.0, 1.0, 0.5]]);
        let local = pm(Frame::Local, &[[0.2, 0.1, 2.0], [-0.4, 0.3, 1.5]]);
        let teacher = ViewMaps::new(t_global, local.clone(), cm(&[0.5, 1.0]), cm(&[1.0, 1.0])).unwrap();
        let student = ViewMaps::new(s_global, local, cm(&[0.5, 2.0]), cm(&[3.0, 1.0])).unwrap();
        let sample = ViewSet::new(vec![View { maps: teacher, mask: all(2) }]).unwrap();
        (StudentPrediction::new(vec![student]).unwrap(), sample)
    }

    #[test]
    fn composite_total() {
        let (student, sample) = composite();
        let cfg = LossConfig::default();
        let out = total_loss(&student, &sample, &cfg, true).unwrap();
        assert_eq!(out.l_g, 2.25);
        assert_eq!(out.l_l, 0.0);
        assert_eq!(out.l_conf, 0.75);
        assert!((out.l_total - 4.50075).abs() <= 1e-12);
        assert!(!out.skipped);
    }

    #[test]
    fn labels_only_drops_confidence_and_weights() {
        let (student, sample) = composite();
        let cfg = LossConfig::for_mode(LossMode::LabelsOnly);
        let out = total_loss(&student, &sample, &cfg, true).unwrap();
        assert_eq!(out.l_g, 2.5);
        assert_eq!(out.l_total, 2.0 * out.l_g + out.l_l);
        let grads = out.grads.unwrap();
        assert!(grads[0].conf_global.iter().chain(&grads[0].conf_local).all(|g| *g == 0.0));
    }

    #[test]
    fn identical_student_is_minimum() {
        let (_, sample) = composite();
        let student = StudentPrediction::copy_of(&sample);
        for mode in LossMode::ALL {
            let out = total_loss(&student, &sample, &LossConfig::for_mode(mode), true).unwrap();
            assert_eq!((out.l_g, out.l_l, out.l_conf, out.l_total), (0.0, 0.0, 0.0, 0.0));
            for g in out.grads.unwrap() {
                for f in StudentField::ALL {
                    assert!(g.field(f).iter().all(|v| v.abs() <= 1e-9));
                }
            }
        }
    }

    #[test]
    fn degenerate_view_skips_sample() {
        let (student, sample) = composite();
        let mut views = sample.views().to_vec();
        let mut empty = views[0].clone();
        empty.mask = ValidityMask::all(r(1, 2), false);
        views.push(empty);
        let sample = ViewSet::new(views).unwrap();
        let mut sv = student.views().to_vec();
        sv.push(sv[0].clone());
        let out = total_loss(&StudentPrediction::new(sv).unwrap(), &sample, &LossConfig::default(), true).unwrap();
        assert!(out.skipped);
        assert_eq!(out.l_total, 0.0);
        assert!(out.grads.unwrap().iter().all(|g| g.pts_global.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn mismatched_shapes_rejected() {
        let (student, sample) = composite();
        let mut sv = student.views().to_vec();
        sv.push(sv[0].clone());
        let two = StudentPrediction::new(sv).unwrap();
        assert!(matches!(total_loss(&two, &sample, &LossConfig::default(), false), Err(Error::ShapeMismatch(_))));
        let mut bad = LossConfig::default();
        bad.scale_epsilon = 0.0;
        assert!(matches!(total_loss(&student, &sample, &bad, false), Err(Error::Config(_))));
    }

    #[test]
    fn modes_parse() {
        for m in LossMode::ALL {
            assert_eq!(m.to_string().parse::<LossMode>().unwrap(), m);
        }
        assert!("fancy".parse::<LossMode>().is_err());
    }
}
