//! Unsigned fixed-point activations and bit-level queries.
//!
//! Activations are non-negative magnitudes of at most [`MAX_WIDTH`] bits.
//! Everything here is a pure function on `Copy` values.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Widest activation the simulator models.
pub const MAX_WIDTH: u8 = 16;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FixedPointError {
    #[error("negative input {0} cannot be quantized to an unsigned activation")]
    NegativeInput(f64),
    #[error("input is NaN")]
    NotANumber,
    #[error("width {0} outside 1..=16")]
    WidthOutOfRange(u8),
    #[error("{frac_bits} fractional bits exceed width {width}")]
    FracBitsExceedWidth { width: u8, frac_bits: u8 },
    #[error("raw value {raw} does not fit in {width} bits")]
    RawOutOfRange { raw: u32, width: u8 },
}

/// A non-negative fixed-point magnitude: `raw < 2^width`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FixedValue {
    raw: u16,
    width: u8,
}

impl FixedValue {
    pub fn new(raw: u32, width: u8) -> Result<Self, FixedPointError> {
        check_width(width)?;
        if raw > max_raw(width) as u32 {
            return Err(FixedPointError::RawOutOfRange { raw, width });
        }
        Ok(Self {
            raw: raw as u16,
            width,
        })
    }

    pub fn zero(width: u8) -> Self {
        debug_assert!((1..=MAX_WIDTH).contains(&width));
        Self { raw: 0, width }
    }

    #[inline]
    pub fn raw(self) -> u16 {
        self.raw
    }

    #[inline]
    pub fn width(self) -> u8 {
        self.width
    }

    #[inline]
    pub fn is_zero(self) -> bool {
        self.raw == 0
    }

    #[inline]
    pub fn bit(self, position: u8) -> bool {
        position < self.width && (self.raw >> position) & 1 == 1
    }

    #[inline]
    fn with_raw(self, raw: u16) -> Self {
        Self {
            raw,
            width: self.width,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rounding {
    #[default]
    Truncate,
    NearestEven,
}

/// How real-valued activations map onto raw fixed-point codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QuantSpec {
    pub width: u8,
    pub frac_bits: u8,
    #[serde(default)]
    pub rounding: Rounding,
}

impl QuantSpec {
    pub fn new(width: u8, frac_bits: u8, rounding: Rounding) -> Result<Self, FixedPointError> {
        let spec = Self {
            width,
            frac_bits,
            rounding,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), FixedPointError> {
        check_width(self.width)?;
        if self.frac_bits > self.width {
            return Err(FixedPointError::FracBitsExceedWidth {
                width: self.width,
                frac_bits: self.frac_bits,
            });
        }
        Ok(())
    }

    /// Real value represented by a raw code under this spec.
    pub fn dequantize(&self, v: FixedValue) -> f64 {
        v.raw as f64 / (1u32 << self.frac_bits) as f64
    }
}

fn check_width(width: u8) -> Result<(), FixedPointError> {
    if (1..=MAX_WIDTH).contains(&width) {
        Ok(())
    } else {
        Err(FixedPointError::WidthOutOfRange(width))
    }
}

#[inline]
fn max_raw(width: u8) -> u16 {
    (((1u32) << width) - 1) as u16
}

/// Scales by `2^frac_bits`, rounds per `spec.rounding` and saturates at `2^width - 1`.
pub fn quantize(x: f64, spec: QuantSpec) -> Result<FixedValue, FixedPointError> {
    spec.validate()?;
    if x.is_nan() {
        return Err(FixedPointError::NotANumber);
    }
    if x < 0.0 {
        return Err(FixedPointError::NegativeInput(x));
    }
    let scaled = x * (1u32 << spec.frac_bits) as f64;
    let rounded = match spec.rounding {
        Rounding::Truncate => scaled.floor(),
        Rounding::NearestEven => scaled.round_ties_even(),
    };
    let top = max_raw(spec.width);
    let raw = if rounded >= top as f64 {
        top
    } else {
        rounded as u16
    };
    Ok(FixedValue {
        raw,
        width: spec.width,
    })
}

/// Leading-one position (bit 0 is the LSB).
#[inline]
pub fn msb_position(v: FixedValue) -> Option<u8> {
    if v.raw == 0 {
        None
    } else {
        Some(15 - v.raw.leading_zeros() as u8)
    }
}

/// Trailing-one position.
#[inline]
pub fn lsb_position(v: FixedValue) -> Option<u8> {
    if v.raw == 0 {
        None
    } else {
        Some(v.raw.trailing_zeros() as u8)
    }
}

#[inline]
pub fn essential_bits(v: FixedValue) -> u32 {
    v.raw.count_ones()
}

/// Keeps the `budget` most significant set bits of `v` and clears the rest.
pub fn msp2_truncate(v: FixedValue, budget: u32) -> FixedValue {
    let mut remaining = v.raw;
    let mut kept = 0u16;
    for _ in 0..budget {
        if remaining == 0 {
            break;
        }
        let top = 1u16 << (15 - remaining.leading_zeros());
        kept |= top;
        remaining &= !top;
    }
    v.with_raw(kept)
}

/// Maps `v` onto the bit window `[low, high]` the way a per-layer precision
/// does: values needing bits above `high` saturate to the window's maximum,
/// bits below `low` are dropped.
pub fn reduce_to_window(v: FixedValue, high: u8, low: u8) -> FixedValue {
    debug_assert!(low <= high && high < MAX_WIDTH);
    let window_mask = ((((1u32) << (high + 1)) - 1) & !(((1u32) << low) - 1)) as u16;
    let raw = if (v.raw as u32) >> (high + 1) != 0 {
        window_mask
    } else {
        v.raw & window_mask
    };
    v.with_raw(raw)
}
