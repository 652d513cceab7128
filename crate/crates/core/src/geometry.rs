//! Dense per-pixel maps and the pixel-level primitives shared by the cache
//! builder, the loss and the evaluator.
//!
//! Storage is row-major. Point maps carry three interleaved components per
//! pixel. All arithmetic is done in `f64` regardless of the precision the
//! values were produced or stored in.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};

/// Grid size in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Resolution {
    pub height: usize,
    pub width: usize,
}

impl Resolution {
    pub const fn new(height: usize, width: usize) -> Self {
        Resolution { height, width }
    }

    pub const fn pixels(&self) -> usize {
        self.height * self.width
    }
}

impl fmt::Display for Resolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.height, self.width)
    }
}

impl FromStr for Resolution {
    type Err = Error;

    /// Parses `HxW`, e.g. `224x518`.
    fn from_str(s: &str) -> Result<Self> {
        let (h, w) = s
            .trim()
            .split_once(['x', 'X'])
            .ok_or_else(|| Error::invalid_argument(format!("resolution `{s}` is not HxW")))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<usize>()
                .map_err(|_| Error::invalid_argument(format!("resolution `{s}` is not HxW")))
        };
        Ok(Resolution::new(parse(h)?, parse(w)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Frame {
    Global,
    Local,
}

#[inline]
pub(crate) fn norm3(p: &[f64]) -> f64 {
    libm::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2])
}

/// H×W grid of 3D points in either the shared scene frame or a per-camera
/// frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PointMap {
    res: Resolution,
    frame: Frame,
    data: Vec<f64>,
}

impl PointMap {
    pub fn new(res: Resolution, frame: Frame, data: Vec<f64>) -> Result<Self> {
        if data.len() != res.pixels() * 3 {
            return Err(Error::shape(format!(
                "point map {res} needs {} values, got {}",
                res.pixels() * 3,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid_data(format!("non-finite point component at index {i}")));
        }
        Ok(PointMap { res, frame, data })
    }

    pub fn zeros(res: Resolution, frame: Frame) -> Self {
        PointMap { res, frame, data: vec![0.0; res.pixels() * 3] }
    }

    pub fn resolution(&self) -> Resolution {
        self.res
    }

    pub fn frame(&self) -> Frame {
        self.frame
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn point(&self, pixel: usize) -> [f64; 3] {
        let p = &self.data[pixel * 3..pixel * 3 + 3];
        [p[0], p[1], p[2]]
    }

    pub fn points(&self) -> impl Iterator<Item = [f64; 3]> + '_ {
        self.data.chunks_exact(3).map(|p| [p[0], p[1], p[2]])
    }

    /// Returns a copy with every component multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        PointMap::new(self.res, self.frame, self.data.iter().map(|v| v * factor).collect())
    }
}

/// H×W grid of per-pixel confidences in `[0, ∞)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceMap {
    res: Resolution,
    data: Vec<f64>,
}

impl ConfidenceMap {
    pub fn new(res: Resolution, data: Vec<f64>) -> Result<Self> {
        if data.len() != res.pixels() {
            return Err(Error::shape(format!(
                "confidence map {res} needs {} values, got {}",
                res.pixels(),
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid_data(format!(
                "confidence at index {i} is {} (must be finite and >= 0)",
                data[i]
            )));
        }
        Ok(ConfidenceMap { res, data })
    }

    pub fn filled(res: Resolution, value: f64) -> Result<Self> {
        ConfidenceMap::new(res, vec![value; res.pixels()])
    }

    pub fn resolution(&self) -> Resolution {
        self.res
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }
}

/// Boolean validity grid; `true` marks a pixel that contributes to the loss.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidityMask {
    res: Resolution,
    bits: Vec<bool>,
    valid_count: usize,
}

impl ValidityMask {
    pub fn new(res: Resolution, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != res.pixels() {
            return Err(Error::shape(format!(
                "mask {res} needs {} bits, got {}",
                res.pixels(),
                bits.len()
            )));
        }
        let valid_count = bits.iter().filter(|b| **b).count();
        Ok(ValidityMask { res, bits, valid_count })
    }

    /// Builds a mask with a caller-supplied count, rejecting inconsistent ones.
    pub fn with_count(res: Resolution, bits: Vec<bool>, valid_count: usize) -> Result<Self> {
        let mask = ValidityMask::new(res, bits)?;
        if mask.valid_count != valid_count {
            return Err(Error::invalid_data(format!(
                "mask declares {valid_count} valid pixels but has {}",
                mask.valid_count
            )));
        }
        Ok(mask)
    }

    pub fn all(res: Resolution, value: bool) -> Self {
        ValidityMask {
            res,
            bits: vec![value; res.pixels()],
            valid_count: if value { res.pixels() } else { 0 },
        }
    }

    pub fn resolution(&self) -> Resolution {
        self.res
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, pixel: usize) -> bool {
        self.bits[pixel]
    }

    pub fn valid_count(&self) -> usize {
        self.valid_count
    }

    pub fn is_empty(&self) -> bool {
        self.valid_count == 0
    }

    /// Indices of valid pixels in row-major order.
    pub fn valid_pixels(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter().enumerate().filter_map(|(i, b)| b.then_some(i))
    }
}

/// The four dense maps produced for one view.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewMaps {
    pub global: PointMap,
    pub local: PointMap,
    pub conf_global: ConfidenceMap,
    pub conf_local: ConfidenceMap,
}

impl ViewMaps {
    pub fn new(
        global: PointMap,
        local: PointMap,
        conf_global: ConfidenceMap,
        conf_local: ConfidenceMap,
    ) -> Result<Self> {
        let res = global.resolution();
        if global.frame() != Frame::Global || local.frame() != Frame::Local {
            return Err(Error::invalid_argument("view maps need one global and one local point map"));
        }
        for (name, r) in [
            ("local", local.resolution()),
            ("conf_global", conf_global.resolution()),
            ("conf_local", conf_local.resolution()),
        ] {
            if r != res {
                return Err(Error::shape(format!("{name} is {r}, global point map is {res}")));
            }
        }
        Ok(ViewMaps { global, local, conf_global, conf_local })
    }

    pub fn resolution(&self) -> Resolution {
        self.global.resolution()
    }
}

/// One view of a supervision sample: maps plus validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub maps: ViewMaps,
    pub mask: ValidityMask,
}

/// Ordered set of N ≥ 1 views sharing one resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewSet {
    res: Resolution,
    views: Vec<View>,
}

impl ViewSet {
    pub fn new(views: Vec<View>) -> Result<Self> {
        let res = check_views(views.iter().map(|v| v.maps.resolution()))?;
        if let Some(k) = views.iter().position(|v| v.mask.resolution() != res) {
            return Err(Error::shape(format!("mask of view {k} does not match resolution {res}")));
        }
        Ok(ViewSet { res, views })
    }

    pub fn resolution(&self) -> Resolution {
        self.res
    }

    pub fn views(&self) -> &[View] {
        &self.views
    }

    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }

    /// Total valid pixels across all views.
    pub fn valid_count(&self) -> usize {
        self.views.iter().map(|v| v.mask.valid_count()).sum()
    }

    /// True when any view has an empty mask.
    pub fn is_degenerate(&self) -> bool {
        self.views.iter().any(|v| v.mask.is_empty())
    }
}

pub(crate) fn check_views(mut resolutions: impl Iterator<Item = Resolution>) -> Result<Resolution> {
    let first = resolutions
        .next()
        .ok_or_else(|| Error::invalid_argument("a view set needs at least one view"))?;
    for (k, r) in resolutions.enumerate() {
        if r != first {
            return Err(Error::shape(format!("view {} is {r}, view 0 is {first}", k + 1)));
        }
    }
    Ok(first)
}

/// Maps that can be bilinearly resampled channel-wise.
pub trait Resample: Sized {
    fn downsample_bilinear(&self, target: Resolution) -> Result<Self>;
}

impl Resample for PointMap {
    fn downsample_bilinear(&self, target: Resolution) -> Result<Self> {
        if target == self.res {
            return Ok(self.clone());
        }
        let data = resample_channels(&self.data, self.res, 3, target)?;
        Ok(PointMap { res: target, frame: self.frame, data })
    }
}

impl Resample for ConfidenceMap {
    fn downsample_bilinear(&self, target: Resolution) -> Result<Self> {
        if target == self.res {
            return Ok(self.clone());
        }
        let data = resample_channels(&self.data, self.res, 1, target)?;
        Ok(ConfidenceMap { res: target, data })
    }
}

/// Pixel-center-aligned bilinear resampling of a point or confidence map.
pub fn downsample_bilinear<M: Resample>(map: &M, target: Resolution) -> Result<M> {
    map.downsample_bilinear(target)
}

/// Source coordinate and the two taps + weight for one output axis.
fn axis_taps(dst: usize, src_len: usize, dst_len: usize) -> (usize, usize, f64) {
    let scale = src_len as f64 / dst_len as f64;
    let x = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (src_len - 1) as f64);
    let lo = libm::floor(x) as usize;
    let hi = (lo + 1).min(src_len - 1);
    (lo, hi, x - lo as f64)
}

fn resample_channels(src: &[f64], from: Resolution, channels: usize, to: Resolution) -> Result<Vec<f64>> {
    if to.height == 0 || to.width == 0 {
        return Err(Error::invalid_argument(format!("target resolution {to} has a zero dimension")));
    }
    if from.height == 0 || from.width == 0 {
        return Err(Error::invalid_argument(format!("source resolution {from} has a zero dimension")));
    }
    let cols: Vec<_> = (0..to.width).map(|j| axis_taps(j, from.width, to.width)).collect();
    let mut out = Vec::with_capacity(to.pixels() * channels);
    for i in 0..to.height {
        let (y0, y1, fy) = axis_taps(i, from.height, to.height);
        for &(x0, x1, fx) in &cols {
            for c in 0..channels {
                let at = |y: usize, x: usize| src[(y * from.width + x) * channels + c];
                let (v00, v01, v10, v11) = (at(y0, x0), at(y0, x1), at(y1, x0), at(y1, x1));
                let top = v00 * (1.0 - fx) + v01 * fx;
                let bottom = v10 * (1.0 - fx) + v11 * fx;
                let v = top * (1.0 - fy) + bottom * fy;
                // keep rounding from leaving the corner envelope
                let lo = v00.min(v01).min(v10).min(v11);
                let hi = v00.max(v01).max(v10).max(v11);
                out.push(v.clamp(lo, hi));
            }
        }
    }
    Ok(out)
}

/// Marks pixels whose local confidence is at least `tau`; `c < tau` is masked.
pub fn threshold_mask(local_conf: &ConfidenceMap, tau: f64) -> Result<ValidityMask> {
    if !(tau >= 0.0) {
        return Err(Error::invalid_argument(format!("tau must be >= 0, got {tau}")));
    }
    let bits: Vec<bool> = local_conf.as_slice().iter().map(|c| !(*c < tau)).collect();
    ValidityMask::new(local_conf.resolution(), bits)
}

/// Mean Euclidean norm over the valid pixels of `map`.
pub fn masked_mean_norm(map: &PointMap, mask: &ValidityMask) -> Result<f64> {
    if map.resolution() != mask.resolution() {
        return Err(Error::shape(format!(
            "point map is {}, mask is {}",
            map.resolution(),
            mask.resolution()
        )));
    }
    if mask.is_empty() {
        return Err(Error::degenerate("mask has no valid pixels"));
    }
    let data = map.as_slice();
    let sum: f64 = mask.valid_pixels().map(|i| norm3(&data[i * 3..i * 3 + 3])).sum();
    Ok(sum / mask.valid_count() as f64)
}
