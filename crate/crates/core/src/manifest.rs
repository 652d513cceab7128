//! Manifest records and the dynamic sub-sampling policy.
//!
//! Directory scanning and the JSON Lines files live in the `distillcache`
//! crate; this module only orders, strides and windows entries.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::DEFAULT_VIEWS_PER_SAMPLE;

/// Normalized metadata for one frame.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ManifestEntry {
    pub dataset_id: String,
    pub scene_id: String,
    /// Per-frame identifier, `{dataset}/{scene}/{file stem}`.
    pub sample_id: String,
    pub frame_index: u64,
    pub width: u32,
    pub height: u32,
    pub image_path: String,
}

impl ManifestEntry {
    fn scene_key(&self) -> (&str, &str) {
        (&self.dataset_id, &self.scene_id)
    }
}

/// Orders entries by (dataset, scene, frame index).
pub fn sort_manifest(entries: &mut [ManifestEntry]) {
    entries.sort_by(|a, b| {
        (&a.dataset_id, &a.scene_id, a.frame_index).cmp(&(&b.dataset_id, &b.scene_id, b.frame_index))
    });
}

/// Checks the (dataset, scene, frame) uniqueness invariant on a sorted
/// manifest.
pub fn check_unique(entries: &[ManifestEntry]) -> Result<()> {
    for pair in entries.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        if a.scene_key() == b.scene_key() && a.frame_index == b.frame_index {
            return Err(Error::invalid_data(format!(
                "duplicate frame {} in {}/{}",
                a.frame_index, a.dataset_id, a.scene_id
            )));
        }
    }
    Ok(())
}

/// Splits a sorted manifest into per-scene runs.
pub fn scenes(entries: &[ManifestEntry]) -> impl Iterator<Item = &[ManifestEntry]> {
    entries.chunk_by(|a, b| a.scene_key() == b.scene_key())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum SceneCategory {
    ObjectCentric,
    Navigation,
    LargeOutdoor,
    Uniform,
}

impl SceneCategory {
    /// Frames to keep per scene before windowing.
    pub fn default_target_count(self) -> usize {
        match self {
            SceneCategory::ObjectCentric | SceneCategory::Navigation => 20,
            SceneCategory::LargeOutdoor => 10,
            SceneCategory::Uniform => 0,
        }
    }
}

impl fmt::Display for SceneCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SceneCategory::ObjectCentric => "object_centric",
            SceneCategory::Navigation => "navigation",
            SceneCategory::LargeOutdoor => "large_outdoor",
            SceneCategory::Uniform => "uniform",
        })
    }
}

impl FromStr for SceneCategory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "object_centric" => Ok(SceneCategory::ObjectCentric),
            "navigation" => Ok(SceneCategory::Navigation),
            "large_outdoor" => Ok(SceneCategory::LargeOutdoor),
            "uniform" => Ok(SceneCategory::Uniform),
            other => Err(Error::invalid_argument(format!("unknown scene category `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SamplingPolicy {
    pub category: SceneCategory,
    pub views_per_sample: usize,
    /// Overrides the category's default target frame count.
    pub target_count: Option<usize>,
    /// Stride used by the `Uniform` category.
    pub uniform_stride: usize,
    /// Step windows by half their length instead of their full length.
    pub overlap: bool,
}

impl Default for SamplingPolicy {
    fn default() -> Self {
        SamplingPolicy::new(SceneCategory::Navigation)
    }
}

impl SamplingPolicy {
    pub fn new(category: SceneCategory) -> Self {
        SamplingPolicy {
            category,
            views_per_sample: DEFAULT_VIEWS_PER_SAMPLE,
            target_count: None,
            uniform_stride: 1,
            overlap: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.views_per_sample < 2 {
            return Err(Error::Config(format!("views_per_sample must be >= 2, got {}", self.views_per_sample)));
        }
        if self.category == SceneCategory::Uniform && self.uniform_stride == 0 {
            return Err(Error::Config("uniform stride must be >= 1".into()));
        }
        Ok(())
    }

    pub fn target_count(&self) -> usize {
        self.target_count.unwrap_or_else(|| self.category.default_target_count())
    }

    /// Stride for a scene of `scene_len` frames; always at least 1.
    pub fn stride(&self, scene_len: usize) -> usize {
        match self.category {
            SceneCategory::Uniform => self.uniform_stride.max(1),
            _ => match self.target_count() {
                0 => 1,
                t => (scene_len / t).max(1),
            },
        }
    }
}

/// Keeps every stride-th frame of one scene, starting with the first.
pub fn subsample_scene(entries: &[ManifestEntry], policy: &SamplingPolicy) -> Vec<ManifestEntry> {
    let stride = policy.stride(entries.len());
    entries.iter().step_by(stride).cloned().collect()
}

/// A fixed-size window of contiguous frames from one scene.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleSpec {
    pub sample_id: String,
    pub entries: Vec<ManifestEntry>,
}

impl SampleSpec {
    pub fn image_paths(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.image_path.as_str())
    }
}

/// Cuts a sub-sampled scene into windows of `views_per_sample` frames,
/// dropping a short remainder.
pub fn make_samples(entries: &[ManifestEntry], policy: &SamplingPolicy) -> Vec<SampleSpec> {
    let n = policy.views_per_sample.max(1);
    if entries.len() < n {
        return Vec::new();
    }
    let step = if policy.overlap { (n / 2).max(1) } else { n };
    (0..=entries.len() - n)
        .step_by(step)
        .map(|start| {
            let window = &entries[start..start + n];
            let first = &window[0];
            SampleSpec {
                sample_id: format!("{}/{}/{}", first.dataset_id, first.scene_id, first.frame_index),
                entries: window.to_vec(),
            }
        })
        .collect()
}

/// Sub-samples and windows every scene of a sorted manifest.
pub fn plan_samples(entries: &[ManifestEntry], policy: &SamplingPolicy) -> Vec<SampleSpec> {
    scenes(entries)
        .flat_map(|scene| make_samples(&subsample_scene(scene, policy), policy))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    fn scene(dataset: &str, scene: &str, n: u64) -> Vec<ManifestEntry> {
        (0..n)
            .map(|i| ManifestEntry {
                dataset_id: dataset.to_string(),
                scene_id: scene.to_string(),
                sample_id: format!("{dataset}/{scene}/{i:03}"),
                frame_index: i,
                width: 64,
                height: 48,
                image_path: format!("/data/{dataset}/{scene}/{i:03}.png"),
            })
            .collect()
    }

    fn indices(entries: &[ManifestEntry]) -> Vec<u64> {
        entries.iter().map(|e| e.frame_index).collect()
    }

    #[test]
    fn navigation_stride_five() {
        let kept = subsample_scene(&scene("d", "s", 100), &SamplingPolicy::new(SceneCategory::Navigation));
        let want: Vec<u64> = (0..100).step_by(5).collect();
        assert_eq!(indices(&kept), want);
        assert_eq!(kept.len(), 20);
    }

    #[test]
    fn short_scene_keeps_everything() {
        let s = scene("d", "s", 7);
        assert_eq!(subsample_scene(&s, &SamplingPolicy::new(SceneCategory::Navigation)), s);
    }

    #[test]
    fn object_centric_spans_orbit() {
        let kept = subsample_scene(&scene("d", "s", 40), &SamplingPolicy::new(SceneCategory::ObjectCentric));
        assert_eq!(indices(&kept), (0..40).step_by(2).collect::<Vec<_>>());
    }

    #[test]
    fn large_outdoor_and_uniform() {
        let s = scene("d", "s", 100);
        assert_eq!(subsample_scene(&s, &SamplingPolicy::new(SceneCategory::LargeOutdoor)).len(), 10);
        let mut p = SamplingPolicy::new(SceneCategory::Uniform);
        p.uniform_stride = 3;
        assert_eq!(subsample_scene(&s, &p).len(), 34);
    }

    #[test]
    fn windows() {
        let p = SamplingPolicy::default();
        let two = make_samples(&scene("d", "s", 40), &p);
        assert_eq!(two.len(), 2);
        assert_eq!(two[0].sample_id, "d/s/0");
        assert_eq!(two[1].sample_id, "d/s/20");
        assert!(make_samples(&scene("d", "s", 19), &p).is_empty());
        let one = make_samples(&scene("d", "s", 20), &p);
        assert_eq!(one.len(), 1);
        assert_eq!(indices(&one[0].entries), (0..20).collect::<Vec<_>>());
    }

    #[test]
    fn overlapping_windows() {
        let mut p = SamplingPolicy::default();
        p.overlap = true;
        let s = make_samples(&scene("d", "s", 40), &p);
        assert_eq!(s.iter().map(|x| x.entries[0].frame_index).collect::<Vec<_>>(), vec![0, 10, 20]);
    }

    #[test]
    fn policy_validation() {
        let mut p = SamplingPolicy::default();
        p.views_per_sample = 1;
        assert!(p.validate().is_err());
        assert_eq!("large-outdoor".parse::<SceneCategory>().unwrap(), SceneCategory::LargeOutdoor);
        assert!("indoor".parse::<SceneCategory>().is_err());
    }

    #[test]
    fn uniqueness_and_grouping() {
        let mut all = scene("b", "x", 3);
        all.extend(scene("a", "y", 2));
        sort_manifest(&mut all);
        assert!(check_unique(&all).is_ok());
        assert_eq!(scenes(&all).map(|s| s.len()).collect::<Vec<_>>(), vec![2, 3]);
        all.push(all[0].clone());
        sort_manifest(&mut all);
        assert!(check_unique(&all).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn sampling_invariants(n in 1u64..400, cat in 0usize..4, views in 2usize..30, stride in 1usize..9) {
                let mut p = SamplingPolicy::new([SceneCategory::ObjectCentric, SceneCategory::Navigation, SceneCategory::LargeOutdoor, SceneCategory::Uniform][cat]);
                p.views_per_sample = views;
                p.uniform_stride = stride;
                let s = scene("d", "s", n);
                let kept = subsample_scene(&s, &p);
                prop_assert!(kept.len() <= s.len());
                prop_assert_eq!(kept[0].frame_index, 0);
                for sample in make_samples(&kept, &p) {
                    prop_assert_eq!(sample.entries.len(), views);
                    prop_assert!(sample.entries.windows(2).all(|w| w[0].frame_index < w[1].frame_index));
                    prop_assert!(sample.entries.iter().all(|e| e.scene_id == "s"));
                }
            }
        }
    }
}
