//! Runtime precision detection for a group of activations.
//!
//! Functional model of the dispatcher front end: a per-position OR network
//! across the group, a leading-one detector for the high end of the window,
//! a trailing-one detector (same block, reversed priority) for the low end,
//! and an encoder turning the one-hot detector output into a binary offset.
//! Detection is combinational and charges no cycles.

use crate::fixedpoint::{FixedValue, MAX_WIDTH};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DetectError {
    #[error("activation group is empty")]
    EmptyGroup,
    #[error("activation {index} has width {found}, group width is {expected}")]
    WidthMismatch {
        index: usize,
        expected: u8,
        found: u8,
    },
    #[error("pattern {0:#06x} is not one-hot")]
    NotOneHot(u16),
}

/// Per-bit-position OR across a group: bit `j` is set iff some activation
/// in the group has bit `j` set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OrVector {
    bits: u16,
    width: u8,
}

impl OrVector {
    pub fn bits(self) -> u16 {
        self.bits
    }

    pub fn width(self) -> u8 {
        self.width
    }

    pub fn get(self, position: u8) -> bool {
        position < self.width && (self.bits >> position) & 1 == 1
    }

    pub fn is_zero(self) -> bool {
        self.bits == 0
    }

    /// One-hot output of the leading-one detector, 0 when no bit is set.
    pub fn leading_one(self) -> u16 {
        if self.bits == 0 {
            0
        } else {
            1 << (15 - self.bits.leading_zeros())
        }
    }

    /// One-hot output of the trailing-one detector.
    pub fn trailing_one(self) -> u16 {
        self.bits & self.bits.wrapping_neg()
    }
}

/// Detected precision window `(n_high, n_low)` of a group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GroupPrecision {
    pub n_high: u8,
    pub n_low: u8,
    pub is_zero_group: bool,
}

impl GroupPrecision {
    pub const ZERO: GroupPrecision = GroupPrecision {
        n_high: 0,
        n_low: 0,
        is_zero_group: true,
    };

    pub fn new(n_high: u8, n_low: u8) -> Self {
        debug_assert!(n_low <= n_high && n_high < MAX_WIDTH);
        Self {
            n_high,
            n_low,
            is_zero_group: false,
        }
    }

    /// Bit-serial cycles needed for the group. An all-zero group still costs
    /// one cycle so that its end-of-group signal is emitted.
    pub fn span(self) -> u32 {
        if self.is_zero_group {
            1
        } else {
            (self.n_high - self.n_low) as u32 + 1
        }
    }

    /// Whether `self` lies inside the window `[low, high]`. Zero groups fit
    /// anywhere.
    pub fn within(self, high: u8, low: u8) -> bool {
        self.is_zero_group || (self.n_high <= high && self.n_low >= low)
    }
}

pub fn or_reduce(group: &[FixedValue], width: u8) -> Result<OrVector, DetectError> {
    if group.is_empty() {
        return Err(DetectError::EmptyGroup);
    }
    let mut bits = 0u16;
    for (index, v) in group.iter().enumerate() {
        if v.width() != width {
            return Err(DetectError::WidthMismatch {
                index,
                expected: width,
                found: v.width(),
            });
        }
        bits |= v.raw();
    }
    Ok(OrVector { bits, width })
}

pub fn detect_precision(group: &[FixedValue], width: u8) -> Result<GroupPrecision, DetectError> {
    let or = or_reduce(group, width)?;
    Ok(precision_of(or))
}

/// Detector pair applied to an already reduced OR vector.
pub fn precision_of(or: OrVector) -> GroupPrecision {
    if or.is_zero() {
        return GroupPrecision::ZERO;
    }
    // both detectors produce one-hot patterns, which cannot fail to encode
    let n_high = encode_offset(or.leading_one()).expect("leading-one output is one-hot");
    let n_low = encode_offset(or.trailing_one()).expect("trailing-one output is one-hot");
    GroupPrecision::new(n_high, n_low)
}

/// Precision of raw 16-bit codes without width checks. Used on engine hot
/// paths where the pallet has been validated already.
#[inline]
pub fn precision_of_raw(values: impl IntoIterator<Item = u16>) -> GroupPrecision {
    let bits = values.into_iter().fold(0u16, |acc, v| acc | v);
    if bits == 0 {
        GroupPrecision::ZERO
    } else {
        GroupPrecision::new(15 - bits.leading_zeros() as u8, bits.trailing_zeros() as u8)
    }
}

/// Binary index of the single set bit. A 16-bit input always fits in 4 bits.
pub fn encode_offset(one_hot: u16) -> Result<u8, DetectError> {
    if one_hot.count_ones() != 1 {
        return Err(DetectError::NotOneHot(one_hot));
    }
    // OR-plane encoder: output bit k is the OR of inputs whose index has bit k set
    let mut offset = 0u8;
    for k in 0..4 {
        let plane = (0..16u16)
            .filter(|j| (j >> k) & 1 == 1)
            .fold(0u16, |m, j| m | (1 << j));
        if one_hot & plane != 0 {
            offset |= 1 << k;
        }
    }
    Ok(offset)
}

/// One broadcast cycle: the bit position on the wires and the EOG flag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OffsetStep {
    pub offset: u8,
    pub end_of_group: bool,
}

/// Offsets broadcast for a group, from `n_high` down to `n_low`, with the
/// end-of-group flag raised when the counter reaches `n_low`.
#[derive(Debug, Clone)]
pub struct OffsetSchedule {
    next: Option<u8>,
    low: u8,
}

impl Iterator for OffsetSchedule {
    type Item = OffsetStep;

    fn next(&mut self) -> Option<OffsetStep> {
        let offset = self.next?;
        let end_of_group = offset == self.low;
        self.next = if end_of_group { None } else { Some(offset - 1) };
        Some(OffsetStep {
            offset,
            end_of_group,
        })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = self.next.map_or(0, |o| (o - self.low) as usize + 1);
        (n, Some(n))
    }
}

impl ExactSizeIterator for OffsetSchedule {}

pub fn offset_schedule(p: GroupPrecision) -> OffsetSchedule {
    if p.is_zero_group {
        OffsetSchedule {
            next: Some(0),
            low: 0,
        }
    } else {
        OffsetSchedule {
            next: Some(p.n_high),
            low: p.n_low,
        }
    }
}
