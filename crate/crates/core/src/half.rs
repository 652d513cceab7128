//! IEEE 754 binary16 quantization used for cached maps.
//!
//! Encoding rounds to nearest, ties to even, keeps subnormals, and clamps
//! magnitudes beyond the largest finite half (65504) instead of producing
//! infinities: confidences are unbounded above and an infinity would poison
//! the loss.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Largest finite binary16 value.
pub const HALF_MAX: f32 = 65504.0;
const HALF_MAX_BITS: u16 = 0x7BFF;
const EXP_MASK: u16 = 0x7C00;

/// A binary16 bit pattern.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Half(u16);

impl Half {
    pub const ZERO: Half = Half(0);
    pub const ONE: Half = Half(0x3C00);
    pub const MAX: Half = Half(HALF_MAX_BITS);

    pub const fn from_bits(bits: u16) -> Self {
        Half(bits)
    }

    pub const fn to_bits(self) -> u16 {
        self.0
    }

    pub const fn is_finite(self) -> bool {
        self.0 & EXP_MASK != EXP_MASK
    }

    pub const fn is_sign_negative(self) -> bool {
        self.0 & 0x8000 != 0
    }

    /// Quantizes a finite `f32`.
    pub fn encode(x: f32) -> Result<Half> {
        if !x.is_finite() {
            return Err(Error::invalid_data(format!("cannot quantize non-finite value {x}")));
        }
        Ok(Half(encode_bits(x)))
    }

    /// Quantizes an `f64` by way of `f32`, the precision teacher outputs are
    /// produced in.
    pub fn encode_f64(x: f64) -> Result<Half> {
        if !x.is_finite() {
            return Err(Error::invalid_data(format!("cannot quantize non-finite value {x}")));
        }
        Half::encode(x as f32)
    }

    pub fn to_f32(self) -> f32 {
        decode_bits(self.0)
    }

    pub fn to_f64(self) -> f64 {
        f64::from(self.to_f32())
    }
}

fn encode_bits(x: f32) -> u16 {
    let bits = x.to_bits();
    let sign = ((bits >> 16) & 0x8000) as u16;
    let exp = ((bits >> 23) & 0xFF) as i32;
    let man = bits & 0x007F_FFFF;
    let e = exp - 127;

    let magnitude = if e > 15 {
        HALF_MAX_BITS
    } else if e >= -14 {
        let mut h = (((e + 15) as u32) << 10 | (man >> 13)) as u16;
        let rest = man & 0x1FFF;
        if rest > 0x1000 || (rest == 0x1000 && h & 1 == 1) {
            h += 1;
        }
        // rounding carried into the infinity exponent
        if h >= EXP_MASK {
            HALF_MAX_BITS
        } else {
            h
        }
    } else if e >= -25 {
        // subnormal result: value / 2^-24 = significand * 2^(e + 1)
        let sig = man | 0x0080_0000;
        let shift = (-e - 1) as u32;
        let mut h = sig >> shift;
        let rest = sig & ((1 << shift) - 1);
        let halfway = 1 << (shift - 1);
        if rest > halfway || (rest == halfway && h & 1 == 1) {
            h += 1;
        }
        h as u16
    } else {
        0
    };
    sign | magnitude
}

fn decode_bits(h: u16) -> f32 {
    let sign = if h & 0x8000 != 0 { -1.0f32 } else { 1.0 };
    let exp = (h >> 10) & 0x1F;
    let man = u32::from(h & 0x03FF);
    match exp {
        // subnormal: man * 2^-24, exact in f32
        0 => sign * (man as f32) * f32::from_bits(0x3380_0000),
        0x1F if man == 0 => sign * f32::INFINITY,
        0x1F => f32::NAN,
        _ => {
            let bits = u32::from(h & 0x8000) << 16 | (u32::from(exp) + 112) << 23 | man << 13;
            f32::from_bits(bits)
        }
    }
}

pub fn f16_encode(x: f32) -> Result<Half> {
    Half::encode(x)
}

pub fn f16_decode(h: Half) -> f32 {
    h.to_f32()
}

/// Quantizes a slice of `f64` values.
pub fn encode_slice(values: &[f64]) -> Result<Vec<Half>> {
    values.iter().map(|v| Half::encode_f64(*v)).collect()
}

/// Decodes halves into `f64`.
pub fn decode_slice(values: &[Half]) -> Vec<f64> {
    values.iter().map(|h| h.to_f64()).collect()
}
