//! Per-view reconstruction metrics: median-ratio scale alignment, accuracy
//! (prediction → ground truth) and completeness (ground truth → prediction),
//! both reported as 100 × the median nearest-neighbour distance.
//!
//! Medians of even-length lists take the lower-middle element by default so
//! results can be matched exactly against a brute-force oracle;
//! [`MedianRule::Midpoint`] averages the two middle elements instead.

mod kdtree;

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

pub use kdtree::{brute_force_distances, squared_distance, KdTree};

use crate::error::{Error, Result};
use crate::geometry::{PointMap, ValidityMask};

pub type Point3 = [f64; 3];

/// Predicted and ground-truth clouds for one view.
#[derive(Debug, Clone, PartialEq)]
pub struct CloudPair {
    pub predicted: Vec<Point3>,
    pub ground_truth: Vec<Point3>,
    /// Units of the ground truth (e.g. "m" or "mm"), echoed into reports.
    pub unit_note: String,
}

fn check_cloud(name: &str, cloud: &[Point3]) -> Result<()> {
    if cloud.is_empty() {
        return Err(Error::invalid_argument(format!("{name} cloud is empty")));
    }
    if let Some(i) = cloud.iter().position(|p| p.iter().any(|v| !v.is_finite())) {
        return Err(Error::invalid_data(format!("{name} point {i} is not finite")));
    }
    Ok(())
}

impl CloudPair {
    pub fn new(predicted: Vec<Point3>, ground_truth: Vec<Point3>, unit_note: impl Into<String>) -> Result<Self> {
        let pair = CloudPair { predicted, ground_truth, unit_note: unit_note.into() };
        pair.validate()?;
        Ok(pair)
    }

    pub fn validate(&self) -> Result<()> {
        check_cloud("predicted", &self.predicted)?;
        check_cloud("ground-truth", &self.ground_truth)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ReconMetrics {
    /// 100 × median distance from predicted points to the ground truth.
    pub accuracy: f64,
    /// 100 × median distance from ground-truth points to the prediction.
    pub completeness: f64,
    /// Factor applied to the prediction to match the ground-truth scale.
    pub scale_factor: f64,
}

/// How the median of an even-length list is taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum MedianRule {
    /// Element at index `(n − 1) / 2` of the sorted list.
    #[default]
    LowerMiddle,
    /// Mean of the two middle elements.
    Midpoint,
}

impl core::fmt::Display for MedianRule {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(match self {
            MedianRule::LowerMiddle => "lower-middle",
            MedianRule::Midpoint => "midpoint",
        })
    }
}

impl core::str::FromStr for MedianRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "lower-middle" | "lower" => Ok(MedianRule::LowerMiddle),
            "midpoint" | "mid" => Ok(MedianRule::Midpoint),
            other => Err(Error::invalid_argument(format!("unknown median rule `{other}`"))),
        }
    }
}

/// Median under `rule`; `None` when empty.
pub fn median(values: &[f64], rule: MedianRule) -> Option<f64> {
    let lower = median_lower(values)?;
    match rule {
        MedianRule::LowerMiddle => Some(lower),
        MedianRule::Midpoint if values.len() % 2 == 1 => Some(lower),
        MedianRule::Midpoint => {
            // smallest element of the upper half
            let upper = values.iter().copied().filter(|v| v.total_cmp(&lower).is_gt()).fold(f64::INFINITY, f64::min);
            let ties = values.iter().filter(|v| v.total_cmp(&lower).is_le()).count();
            let upper = if ties > values.len() / 2 { lower } else { upper };
            Some(0.5 * (lower + upper))
        }
    }
}

/// Lower-middle order statistic (index `(n − 1) / 2`); `None` when empty.
pub fn median_lower(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    let k = (v.len() - 1) / 2;
    let (_, m, _) = v.select_nth_unstable_by(k, f64::total_cmp);
    Some(*m)
}

fn centroid(cloud: &[Point3]) -> Point3 {
    let mut c = [0.0; 3];
    for p in cloud {
        for k in 0..3 {
            c[k] += p[k];
        }
    }
    c.map(|v| v / cloud.len() as f64)
}

fn median_centered_norm(cloud: &[Point3], rule: MedianRule) -> f64 {
    let c = centroid(cloud);
    let norms: Vec<f64> = cloud.iter().map(|p| libm::sqrt(squared_distance(p, &c))).collect();
    median(&norms, rule).unwrap_or(0.0)
}

/// Scales the prediction so its median centroid-relative norm matches the
/// ground truth's; returns the scaled prediction and the factor.
pub fn scale_align(pair: &CloudPair) -> Result<(Vec<Point3>, f64)> {
    scale_align_with(pair, MedianRule::default())
}

pub fn scale_align_with(pair: &CloudPair, rule: MedianRule) -> Result<(Vec<Point3>, f64)> {
    pair.validate()?;
    let pred = median_centered_norm(&pair.predicted, rule);
    if !(pred > 0.0) {
        return Err(Error::degenerate("predicted cloud has zero median norm"));
    }
    let factor = median_centered_norm(&pair.ground_truth, rule) / pred;
    if !(factor > 0.0 && factor.is_finite()) {
        return Err(Error::degenerate(format!("scale factor {factor} is not positive and finite")));
    }
    let scaled = pair.predicted.iter().map(|p| p.map(|v| v * factor)).collect();
    Ok((scaled, factor))
}

/// Nearest-neighbour distance from each query point to `targets`.
pub fn nearest_distances(queries: &[Point3], targets: &[Point3]) -> Vec<f64> {
    let tree = KdTree::new(targets);
    queries.iter().map(|q| tree.nearest_distance(q)).collect()
}

fn scaled_median(distances: &[f64], rule: MedianRule) -> f64 {
    100.0 * median(distances, rule).unwrap_or(0.0)
}

/// 100 × median distance from predicted points to their nearest GT point.
/// Expects an already aligned pair.
pub fn accuracy_median(pair: &CloudPair) -> f64 {
    accuracy_median_with(pair, MedianRule::default())
}

pub fn accuracy_median_with(pair: &CloudPair, rule: MedianRule) -> f64 {
    scaled_median(&nearest_distances(&pair.predicted, &pair.ground_truth), rule)
}

/// 100 × median distance from GT points to their nearest predicted point.
pub fn completeness_median(pair: &CloudPair) -> f64 {
    completeness_median_with(pair, MedianRule::default())
}

pub fn completeness_median_with(pair: &CloudPair, rule: MedianRule) -> f64 {
    scaled_median(&nearest_distances(&pair.ground_truth, &pair.predicted), rule)
}

/// Metrics for one view together with the raw distances behind them.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewEvaluation {
    pub metrics: ReconMetrics,
    pub accuracy_distances: Vec<f64>,
    pub completeness_distances: Vec<f64>,
}

/// Aligns the prediction's scale, then measures accuracy and completeness.
pub fn evaluate_view(pair: &CloudPair, rule: MedianRule) -> Result<ViewEvaluation> {
    let (aligned, scale_factor) = scale_align_with(pair, rule)?;
    let accuracy_distances = nearest_distances(&aligned, &pair.ground_truth);
    let completeness_distances = nearest_distances(&pair.ground_truth, &aligned);
    Ok(ViewEvaluation {
        metrics: ReconMetrics {
            accuracy: scaled_median(&accuracy_distances, rule),
            completeness: scaled_median(&completeness_distances, rule),
            scale_factor,
        },
        accuracy_distances,
        completeness_distances,
    })
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EvalReport {
    pub unit_note: String,
    pub median_rule: MedianRule,
    pub per_view: Vec<ReconMetrics>,
    /// Median across views of each per-view metric.
    pub cross_view_median: ReconMetrics,
    /// Medians over the distances of all views pooled together (each view is
    /// still scale-aligned on its own); the scale entry is the cross-view
    /// median factor.
    pub pooled: ReconMetrics,
}

/// Folds per-view results, in view order, into a report.
pub fn aggregate(views: &[ViewEvaluation], unit_note: &str, rule: MedianRule) -> Result<EvalReport> {
    if views.is_empty() {
        return Err(Error::invalid_argument("no views to aggregate"));
    }
    let column = |f: fn(&ReconMetrics) -> f64| -> f64 {
        let v: Vec<f64> = views.iter().map(|e| f(&e.metrics)).collect();
        median(&v, rule).unwrap_or(0.0)
    };
    let cross_view_median = ReconMetrics {
        accuracy: column(|m| m.accuracy),
        completeness: column(|m| m.completeness),
        scale_factor: column(|m| m.scale_factor),
    };
    let pool = |f: fn(&ViewEvaluation) -> &[f64]| -> f64 {
        let all: Vec<f64> = views.iter().flat_map(|e| f(e).iter().copied()).collect();
        scaled_median(&all, rule)
    };
    Ok(EvalReport {
        unit_note: String::from(unit_note),
        median_rule: rule,
        per_view: views.iter().map(|e| e.metrics).collect(),
        cross_view_median,
        pooled: ReconMetrics {
            accuracy: pool(|e| &e.accuracy_distances),
            completeness: pool(|e| &e.completeness_distances),
            scale_factor: cross_view_median.scale_factor,
        },
    })
}

/// Evaluates matching lists of per-view clouds sequentially.
pub fn evaluate_per_view(
    predicted: &[Vec<Point3>],
    ground_truth: &[Vec<Point3>],
    unit_note: &str,
    rule: MedianRule,
) -> Result<EvalReport> {
    if predicted.len() != ground_truth.len() {
        return Err(Error::invalid_argument(format!(
            "view count mismatch: {} predicted vs {} ground-truth",
            predicted.len(),
            ground_truth.len()
        )));
    }
    let views = predicted
        .iter()
        .zip(ground_truth)
        .map(|(p, g)| evaluate_view(&CloudPair::new(p.clone(), g.clone(), unit_note)?, rule))
        .collect::<Result<Vec<_>>>()?;
    aggregate(&views, unit_note, rule)
}

/// The points of a map, optionally restricted to a validity mask.
pub fn masked_points(map: &PointMap, mask: Option<&ValidityMask>) -> Result<Vec<Point3>> {
    match mask {
        None => Ok(map.points().collect()),
        Some(m) if m.resolution() != map.resolution() => {
            Err(Error::shape(format!("mask {} does not match map {}", m.resolution(), map.resolution())))
        }
        Some(m) => Ok(m.valid_pixels().map(|i| map.point(i)).collect()),
    }
}
