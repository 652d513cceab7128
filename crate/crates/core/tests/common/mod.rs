#![allow(dead_code)]

use distillcache_core::loss::StudentPrediction;
use distillcache_core::{ConfidenceMap, Frame, PointMap, Resolution, ValidityMask, View, ViewMaps, ViewSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_maps(rng: &mut ChaCha8Rng, res: Resolution) -> ViewMaps {
    let pts = |rng: &mut ChaCha8Rng| (0..res.pixels() * 3).map(|_| rng.random_range(-2.0..2.0)).collect::<Vec<f64>>();
    let g = pts(rng);
    let l = pts(rng);
    let conf = |rng: &mut ChaCha8Rng| (0..res.pixels()).map(|_| rng.random_range(0.05..3.0)).collect::<Vec<f64>>();
    let cg = conf(rng);
    let cl = conf(rng);
    ViewMaps::new(
        PointMap::new(res, Frame::Global, g).unwrap(),
        PointMap::new(res, Frame::Local, l).unwrap(),
        ConfidenceMap::new(res, cg).unwrap(),
        ConfidenceMap::new(res, cl).unwrap(),
    )
    .unwrap()
}

/// Independent random student and teacher with ~70% valid pixels per view
/// (at least one valid pixel each).
pub fn random_pair(seed: u64, res: Resolution, n_views: usize) -> (StudentPrediction, ViewSet) {
    let mut rng = rng(seed);
    let mut teacher = Vec::new();
    let mut student = Vec::new();
    for _ in 0..n_views {
        let maps = random_maps(&mut rng, res);
        let mut bits: Vec<bool> = (0..res.pixels()).map(|_| rng.random_bool(0.7)).collect();
        bits[0] = true;
        teacher.push(View { maps, mask: ValidityMask::new(res, bits).unwrap() });
        student.push(random_maps(&mut rng, res));
    }
    (StudentPrediction::new(student).unwrap(), ViewSet::new(teacher).unwrap())
}

pub fn scale_points(maps: &ViewMaps, global: f64, local: f64) -> ViewMaps {
    ViewMaps::new(maps.global.scaled(global).unwrap(), maps.local.scaled(local).unwrap(), maps.conf_global.clone(), maps.conf_local.clone()).unwrap()
}
