//! Run-length coding for validity masks.
//!
//! A mask is stored as the value of its first pixel followed by the lengths
//! of alternating runs in row-major order. Runs are never zero, so every mask
//! has exactly one encoding.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geometry::{Resolution, ValidityMask};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RleMask {
    pub res: Resolution,
    pub first_value: bool,
    pub runs: Vec<u32>,
}

impl RleMask {
    pub fn encode(mask: &ValidityMask) -> RleMask {
        let bits = mask.bits();
        let first_value = bits.first().copied().unwrap_or(false);
        let mut runs = Vec::new();
        let mut current = first_value;
        let mut len = 0u32;
        for &b in bits {
            if b == current {
                len += 1;
            } else {
                runs.push(len);
                current = b;
                len = 1;
            }
        }
        if len > 0 {
            runs.push(len);
        }
        RleMask { res: mask.resolution(), first_value, runs }
    }

    /// Expands the runs; rejects zero-length runs and totals other than H×W.
    pub fn decode(&self) -> Result<ValidityMask> {
        self.validate()?;
        let mut bits = Vec::with_capacity(self.res.pixels());
        let mut value = self.first_value;
        for &run in &self.runs {
            bits.extend(core::iter::repeat_n(value, run as usize));
            value = !value;
        }
        ValidityMask::new(self.res, bits)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(i) = self.runs.iter().position(|r| *r == 0) {
            return Err(Error::corrupt(0, format!("run {i} has zero length")));
        }
        let total: u64 = self.runs.iter().map(|r| u64::from(*r)).sum();
        if total != self.res.pixels() as u64 {
            return Err(Error::corrupt(
                0,
                format!("runs cover {total} pixels, mask {} has {}", self.res, self.res.pixels()),
            ));
        }
        Ok(())
    }

    /// Number of valid pixels, computed from the runs without expanding them.
    pub fn valid_count(&self) -> u64 {
        let skip = usize::from(!self.first_value);
        self.runs.iter().skip(skip).step_by(2).map(|r| u64::from(*r)).sum()
    }

    /// Encoded payload size in bytes (runs only).
    pub fn payload_bytes(&self) -> usize {
        self.runs.len() * 4
    }
}

pub fn rle_encode(mask: &ValidityMask) -> RleMask {
    RleMask::encode(mask)
}

pub fn rle_decode(rle: &RleMask) -> Result<ValidityMask> {
    rle.decode()
}

/// An all-valid RLE mask of the given size.
pub fn all_valid(res: Resolution) -> RleMask {
    let runs = if res.pixels() == 0 { vec![] } else { vec![res.pixels() as u32] };
    RleMask { res, first_value: true, runs }
}
