//! Teacher outputs and the cache-build pipeline.
//!
//! A [`TeacherSample`] holds float32-precision teacher maps for N views at the
//! teacher's resolution. [`build_cache_sample`] turns it into a stored
//! archive: downsample all four maps, threshold the downsampled local
//! confidence into the validity mask, quantize the maps to binary16,
//! run-length encode the mask, and serialize.
//!
//! [`SyntheticScene`] stands in for a real teacher in tests and benchmarks.

use alloc::format;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::archive::{encode_archive, HalfView, HalfViewSet};
use crate::error::{Error, Result};
use crate::geometry::{
    check_views, threshold_mask, ConfidenceMap, Frame, PointMap, Resample, Resolution, ViewMaps,
};
use crate::half;
use crate::rle::RleMask;
use crate::{DEFAULT_TARGET_RES, DEFAULT_TAU, PATCH_SIZE};

/// Teacher maps for one sample, all views at one resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherSample {
    res: Resolution,
    views: Vec<ViewMaps>,
}

impl TeacherSample {
    pub fn new(views: Vec<ViewMaps>) -> Result<Self> {
        let res = check_views(views.iter().map(|v| v.resolution()))?;
        Ok(TeacherSample { res, views })
    }

    pub fn resolution(&self) -> Resolution {
        self.res
    }

    pub fn views(&self) -> &[ViewMaps] {
        &self.views
    }

    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }

    pub fn into_views(self) -> Vec<ViewMaps> {
        self.views
    }
}

/// Resolution and threshold used when building cache entries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CacheConfig {
    pub target: Resolution,
    pub tau: f64,
}

impl Default for CacheConfig {
    fn default() -> Self {
        CacheConfig { target: DEFAULT_TARGET_RES, tau: DEFAULT_TAU }
    }
}

impl CacheConfig {
    pub fn validate(&self) -> Result<()> {
        let Resolution { height, width } = self.target;
        if height == 0 || width == 0 || height % PATCH_SIZE != 0 || width % PATCH_SIZE != 0 {
            return Err(Error::Config(format!(
                "target resolution {} must be a nonzero multiple of the {PATCH_SIZE}x{PATCH_SIZE} patch size",
                self.target
            )));
        }
        if !(self.tau >= 0.0) || !self.tau.is_finite() {
            return Err(Error::Config(format!("tau must be finite and >= 0, got {}", self.tau)));
        }
        Ok(())
    }

    /// Patch grid (rows, cols) of the target resolution.
    pub fn patch_grid(&self) -> (usize, usize) {
        (self.target.height / PATCH_SIZE, self.target.width / PATCH_SIZE)
    }
}

/// Result of running the pipeline on one sample.
#[derive(Debug, Clone)]
pub struct CacheSample {
    pub archive: Vec<u8>,
    pub views: HalfViewSet,
    pub masked_pixels: u64,
    pub total_pixels: u64,
}

impl CacheSample {
    pub fn masked_fraction(&self) -> f64 {
        if self.total_pixels == 0 {
            0.0
        } else {
            self.masked_pixels as f64 / self.total_pixels as f64
        }
    }

    pub fn degenerate_views(&self) -> usize {
        self.views.degenerate_views()
    }
}

fn round_f32(values: Vec<f64>) -> Vec<f64> {
    values.into_iter().map(|v| f64::from(v as f32)).collect()
}

/// Resolution alignment for one view: bilinear resampling, then rounding to
/// the teacher's float32 precision.
pub fn align_view(view: &ViewMaps, target: Resolution) -> Result<ViewMaps> {
    ViewMaps::new(
        PointMap::new(target, Frame::Global, round_f32(view.global.downsample_bilinear(target)?.into_vec()))?,
        PointMap::new(target, Frame::Local, round_f32(view.local.downsample_bilinear(target)?.into_vec()))?,
        ConfidenceMap::new(target, round_f32(view.conf_global.downsample_bilinear(target)?.into_vec()))?,
        ConfidenceMap::new(target, round_f32(view.conf_local.downsample_bilinear(target)?.into_vec()))?,
    )
}

/// Align → filter → quantize → pack, for every view of the sample.
pub fn build_cache_sample(teacher: &TeacherSample, cfg: &CacheConfig) -> Result<CacheSample> {
    cfg.validate()?;
    let mut views = Vec::with_capacity(teacher.len());
    let mut masked_pixels = 0u64;
    for view in teacher.views() {
        let aligned = align_view(view, cfg.target)?;
        let mask = threshold_mask(&aligned.conf_local, cfg.tau)?;
        masked_pixels += (cfg.target.pixels() - mask.valid_count()) as u64;
        views.push(HalfView {
            pts_global: half::encode_slice(aligned.global.as_slice())?,
            pts_local: half::encode_slice(aligned.local.as_slice())?,
            conf_global: half::encode_slice(aligned.conf_global.as_slice())?,
            conf_local: half::encode_slice(aligned.conf_local.as_slice())?,
            degenerate: mask.is_empty(),
            mask: RleMask::encode(&mask),
        });
    }
    let total_pixels = (cfg.target.pixels() * teacher.len()) as u64;
    let views = HalfViewSet::new(cfg.target, views)?;
    let archive = encode_archive(&views)?;
    Ok(CacheSample { archive, views, masked_pixels, total_pixels })
}

/// Smooth height field the synthetic views observe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceParams {
    /// Mean distance of the surface from the reference camera.
    pub depth: f64,
    pub amplitude: f64,
    pub frequency: f64,
    /// Half-width of one view's footprint on the surface.
    pub extent: f64,
}

/// Per-view rigid offsets relative to view 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionParams {
    /// Maximum yaw about the optical axis, radians.
    pub max_yaw: f64,
    /// Maximum tilt about the camera x axis, radians.
    pub max_tilt: f64,
    pub max_translation: f64,
    /// Use identity offsets for every view.
    pub identity: bool,
}

/// Radial confidence falloff from the image center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfidenceParams {
    pub peak: f64,
    pub floor: f64,
    /// Falloff width in normalized image coordinates (image spans [-1, 1]).
    pub sigma: f64,
    /// Uniform jitter amplitude added before clamping at zero.
    pub jitter: f64,
}

impl ConfidenceParams {
    /// Fraction of the image whose noise-free confidence is below `tau`.
    pub fn masked_fraction(&self, tau: f64) -> f64 {
        if tau <= self.floor {
            return 0.0;
        }
        if tau > self.peak {
            return 1.0;
        }
        let q = (tau - self.floor) / (self.peak - self.floor);
        let radius = libm::sqrt(-2.0 * self.sigma * self.sigma * libm::log(q));
        1.0 - disk_in_square_fraction(radius)
    }

    /// Sets `sigma` so that the noise-free masked fraction at `tau` is
    /// `fraction`.
    pub fn solve_sigma(&mut self, tau: f64, fraction: f64) -> Result<()> {
        if !(self.floor < tau && tau < self.peak) {
            return Err(Error::invalid_argument("tau must lie strictly between floor and peak"));
        }
        if !(0.0 < fraction && fraction < 1.0) {
            return Err(Error::invalid_argument("masked fraction must be in (0, 1)"));
        }
        let (mut lo, mut hi) = (0.0, core::f64::consts::SQRT_2);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if 1.0 - disk_in_square_fraction(mid) > fraction {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let radius = 0.5 * (lo + hi);
        let q = (tau - self.floor) / (self.peak - self.floor);
        self.sigma = radius / libm::sqrt(-2.0 * libm::log(q));
        Ok(())
    }
}

/// Area fraction of `[-1, 1]^2` covered by the centered disk of `radius`.
pub fn disk_in_square_fraction(radius: f64) -> f64 {
    let r = radius.max(0.0);
    if r <= 1.0 {
        core::f64::consts::PI * r * r / 4.0
    } else if r >= core::f64::consts::SQRT_2 {
        1.0
    } else {
        // one quadrant: the strip x < sqrt(r^2 - 1) is full height, the rest
        // lies under the arc
        let a = libm::sqrt(r * r - 1.0);
        a + 0.5 * r * r * (libm::asin(1.0 / r) - libm::asin(a / r))
    }
}

/// Seeded synthetic teacher scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub seed: u64,
    pub n_views: usize,
    pub res: Resolution,
    pub surface: SurfaceParams,
    pub motion: MotionParams,
    pub confidence: ConfidenceParams,
}

impl SyntheticScene {
    pub fn new(seed: u64, n_views: usize, res: Resolution) -> Self {
        let mut confidence = ConfidenceParams { peak: 3.0, floor: 0.1, sigma: 0.5, jitter: 0.01 };
        // about 40% of each view below the default threshold
        confidence.solve_sigma(DEFAULT_TAU, 0.4).expect("default confidence parameters are valid");
        SyntheticScene {
            seed,
            n_views,
            res,
            surface: SurfaceParams { depth: 3.0, amplitude: 0.4, frequency: 1.7, extent: 1.5 },
            motion: MotionParams { max_yaw: 0.3, max_tilt: 0.1, max_translation: 0.5, identity: false },
            confidence,
        }
    }
}

type Mat3 = [[f64; 3]; 3];

fn rotation(yaw: f64, tilt: f64) -> Mat3 {
    let (sz, cz) = (libm::sin(yaw), libm::cos(yaw));
    let (sx, cx) = (libm::sin(tilt), libm::cos(tilt));
    // Rz(yaw) * Rx(tilt)
    [[cz, -sz * cx, sz * sx], [sz, cz * cx, -cz * sx], [0.0, sx, cx]]
}

/// Generates float32-precision teacher maps for a synthetic scene.
pub fn synth_teacher(scene: &SyntheticScene) -> Result<TeacherSample> {
    if scene.n_views == 0 {
        return Err(Error::invalid_argument("synthetic scene needs at least one view"));
    }
    let res = scene.res;
    if res.height == 0 || res.width == 0 {
        return Err(Error::invalid_argument(format!("synthetic resolution {res} has a zero dimension")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(scene.seed);
    let s = scene.surface;
    let phase: (f64, f64) = (rng.random_range(0.0..core::f64::consts::TAU), rng.random_range(0.0..core::f64::consts::TAU));
    let height_at = |x: f64, y: f64| {
        s.depth + s.amplitude * libm::sin(s.frequency * x + phase.0) * libm::cos(s.frequency * y + phase.1)
    };
    let aspect = res.height as f64 / res.width as f64;
    let c = scene.confidence;

    let mut views = Vec::with_capacity(scene.n_views);
    for k in 0..scene.n_views {
        let m = scene.motion;
        let (yaw, tilt, t) = if k == 0 || m.identity {
            (0.0, 0.0, [0.0; 3])
        } else {
            let mut sym = |limit: f64| if limit > 0.0 { rng.random_range(-limit..=limit) } else { 0.0 };
            (sym(m.max_yaw), sym(m.max_tilt), [sym(m.max_translation), sym(m.max_translation), 0.0])
        };
        let r = rotation(yaw, tilt);
        let mut global = Vec::with_capacity(res.pixels() * 3);
        let mut local = Vec::with_capacity(res.pixels() * 3);
        let mut conf_global = Vec::with_capacity(res.pixels());
        let mut conf_local = Vec::with_capacity(res.pixels());
        for i in 0..res.height {
            let v = (i as f64 + 0.5) / res.height as f64 * 2.0 - 1.0;
            for j in 0..res.width {
                let u = (j as f64 + 0.5) / res.width as f64 * 2.0 - 1.0;
                // footprint on the surface, rotated by yaw and shifted by t
                let (fx, fy) = (u * s.extent, v * s.extent * aspect);
                let x = t[0] + r[0][0] * fx + r[0][1] * fy;
                let y = t[1] + r[1][0] * fx + r[1][1] * fy;
                let g = [x, y, height_at(x, y)];
                let l = if m.identity || k == 0 {
                    g
                } else {
                    let d = [g[0] - t[0], g[1] - t[1], g[2] - t[2]];
                    // R^T d
                    [
                        r[0][0] * d[0] + r[1][0] * d[1] + r[2][0] * d[2],
                        r[0][1] * d[0] + r[1][1] * d[1] + r[2][1] * d[2],
                        r[0][2] * d[0] + r[1][2] * d[1] + r[2][2] * d[2],
                    ]
                };
                global.extend(g.iter().map(|x| f64::from(*x as f32)));
                local.extend(l.iter().map(|x| f64::from(*x as f32)));

                let rho2 = u * u + v * v;
                let falloff = |sigma: f64| c.floor + (c.peak - c.floor) * libm::exp(-rho2 / (2.0 * sigma * sigma));
                let mut jitter = || if c.jitter > 0.0 { rng.random_range(-c.jitter..=c.jitter) } else { 0.0 };
                let cl = (falloff(c.sigma) + jitter()).max(0.0);
                let cg = (falloff(c.sigma * 1.2) + jitter()).max(0.0);
                conf_local.push(f64::from(cl as f32));
                conf_global.push(f64::from(cg as f32));
            }
        }
        views.push(ViewMaps::new(
            PointMap::new(res, Frame::Global, global)?,
            PointMap::new(res, Frame::Local, local)?,
            ConfidenceMap::new(res, conf_global)?,
            ConfidenceMap::new(res, conf_local)?,
        )?);
    }
    TeacherSample::new(views)
}
