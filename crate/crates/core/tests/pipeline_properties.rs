use distillcache_core::archive::{decode_archive, Section};
use distillcache_core::geometry::{downsample_bilinear, threshold_mask};
use distillcache_core::manifest::{make_samples, subsample_scene, ManifestEntry, SamplingPolicy, SceneCategory};
use distillcache_core::teacher::{align_view, build_cache_sample, synth_teacher, CacheConfig, SyntheticScene};
use distillcache_core::{Resolution, DEFAULT_TARGET_RES, DEFAULT_TAU};
use proptest::prelude::*;

mod common;

fn small_scene(seed: u64) -> (SyntheticScene, CacheConfig) {
    let scene = SyntheticScene::new(seed, 3, Resolution::new(40, 60));
    (scene, CacheConfig { target: Resolution::new(28, 42), tau: DEFAULT_TAU })
}

#[test]
fn defaults_and_resolution_rule() {
    let cfg = CacheConfig::default();
    assert_eq!(cfg.target, DEFAULT_TARGET_RES);
    assert_eq!(cfg.tau, 0.3);
    assert_eq!(cfg.patch_grid(), (16, 37));
    for bad in [Resolution::new(225, 518), Resolution::new(224, 517), Resolution::new(0, 14)] {
        assert!(CacheConfig { target: bad, tau: 0.3 }.validate().is_err());
    }
}

#[test]
fn sampler_emits_twenty_view_windows() {
    let entries: Vec<ManifestEntry> = (0..400)
        .map(|i| ManifestEntry {
            dataset_id: "d".into(),
            scene_id: "s".into(),
            sample_id: format!("d/s/{i}"),
            frame_index: i,
            width: 64,
            height: 48,
            image_path: format!("d/s/{i}.png"),
        })
        .collect();
    for cat in [SceneCategory::ObjectCentric, SceneCategory::Navigation] {
        let p = SamplingPolicy::new(cat);
        let kept = subsample_scene(&entries, &p);
        let samples = make_samples(&kept, &p);
        assert_eq!(samples.len(), 1);
        assert_eq!(samples[0].entries.len(), 20);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn quantization_is_the_only_lossy_stage(seed in any::<u64>()) {
        let (scene, cfg) = small_scene(seed);
        let teacher = synth_teacher(&scene).unwrap();
        let built = build_cache_sample(&teacher, &cfg).unwrap();
        for (view, stored) in teacher.views().iter().zip(built.views.views()) {
            let aligned = align_view(view, cfg.target).unwrap();
            let f32_maps = [aligned.global.as_slice(), aligned.local.as_slice(), aligned.conf_global.as_slice(), aligned.conf_local.as_slice()];
            for (section, reference) in Section::MAPS.iter().zip(f32_maps) {
                for (h, x) in stored.map(*section).iter().zip(reference) {
                    // half an f16 ulp in the normal range, 2^-25 absolute below it
                    let bound = (x.abs() / 2048.0).max(2f64.powi(-25));
                    prop_assert!((h.to_f64() - x).abs() <= bound);
                }
            }
        }
    }

    #[test]
    fn masked_bits_come_from_low_local_confidence(seed in any::<u64>(), tau in 0.0f64..3.5) {
        let (scene, mut cfg) = small_scene(seed);
        cfg.tau = tau;
        let teacher = synth_teacher(&scene).unwrap();
        let built = build_cache_sample(&teacher, &cfg).unwrap();
        for (view, stored) in teacher.views().iter().zip(built.views.views()) {
            let conf = downsample_bilinear(&view.conf_local, cfg.target).unwrap();
            let conf: Vec<f64> = conf.as_slice().iter().map(|v| f64::from(*v as f32)).collect();
            let mask = stored.mask.decode().unwrap();
            for (i, c) in conf.iter().enumerate() {
                prop_assert_eq!(mask.get(i), !(*c < tau));
            }
        }
    }

    #[test]
    fn same_input_same_bytes(seed in any::<u64>()) {
        let (scene, cfg) = small_scene(seed);
        let a = build_cache_sample(&synth_teacher(&scene).unwrap(), &cfg).unwrap();
        let b = build_cache_sample(&synth_teacher(&scene).unwrap(), &cfg).unwrap();
        prop_assert_eq!(&a.archive, &b.archive);
        prop_assert_eq!(decode_archive(&a.archive).unwrap(), a.views);
    }

    #[test]
    fn threshold_is_monotone(seed in any::<u64>(), t1 in 0.0f64..3.0, dt in 0.0f64..3.0) {
        let (scene, _) = small_scene(seed);
        let teacher = synth_teacher(&scene).unwrap();
        let c = &teacher.views()[0].conf_local;
        let lo = threshold_mask(c, t1).unwrap();
        let hi = threshold_mask(c, t1 + dt).unwrap();
        prop_assert!(hi.bits().iter().zip(lo.bits()).all(|(h, l)| !h || *l));
    }
}
