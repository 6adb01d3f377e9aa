//! Functional model of a serial inner-product unit with a shifter between
//! the adder tree and the accumulator.
//!
//! Each cycle the SIP receives one bit-plane of its 16 activations together
//! with the plane's offset, sums the weights whose activation bit is set, and
//! shifts that partial sum to the offset before accumulating. Only the planes
//! in the detected window are visited.

use crate::fixedpoint::FixedValue;
use crate::precdetect::OffsetStep;

pub const SIP_LANES: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SipState {
    pub accumulator: i64,
    pub weights: [i16; SIP_LANES],
}

impl SipState {
    pub fn new(weights: [i16; SIP_LANES]) -> Self {
        Self {
            accumulator: 0,
            weights,
        }
    }

    /// Adder-tree output for one activation bit-plane.
    pub fn adder_tree(&self, plane: u16) -> i64 {
        self.weights
            .iter()
            .enumerate()
            .filter(|(i, _)| (plane >> i) & 1 == 1)
            .map(|(_, &w)| w as i64)
            .sum()
    }

    pub fn step(&mut self, plane: u16, offset: u8) {
        self.accumulator += self.adder_tree(plane) << offset;
    }
}

/// Bit-plane `offset` of the activations: bit `i` is bit `offset` of lane `i`.
pub fn bit_plane(activations: &[FixedValue], offset: u8) -> u16 {
    activations
        .iter()
        .enumerate()
        .fold(0u16, |plane, (i, a)| plane | ((a.bit(offset) as u16) << i))
}

/// Runs a SIP over `schedule` and returns the accumulated inner product.
pub fn sip_reference(
    activations: &[FixedValue; SIP_LANES],
    weights: &[i16; SIP_LANES],
    schedule: impl IntoIterator<Item = OffsetStep>,
) -> i64 {
    let mut sip = SipState::new(*weights);
    for step in schedule {
        sip.step(bit_plane(activations, step.offset), step.offset);
        if step.end_of_group {
            break;
        }
    }
    sip.accumulator
}
