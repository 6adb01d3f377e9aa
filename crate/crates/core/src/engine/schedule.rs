//! Essential-bit scheduling with a limited per-lane shifter.
//!
//! All lanes of a subgroup share one column offset per cycle. A lane whose
//! shifter has `k` bits can only contribute a set bit lying in the `2^k`
//! positions ending at that offset.

/// Greedy schedule: the column starts at the highest pending set bit; each
/// cycle every lane consumes its highest pending bit if the shifter reaches
/// it, then the column drops to the highest bit still pending anywhere.
///
/// Returns at least 1, matching the one-cycle cost of an all-zero subgroup.
pub fn greedy_limited_schedule(lanes: &[u16], reach_bits: u8) -> u32 {
    let window = (1u32 << reach_bits) - 1;
    let mut pending: Vec<u16> = lanes.to_vec();
    let mut cycles = 0;
    loop {
        let any = pending.iter().fold(0u16, |acc, &v| acc | v);
        if any == 0 {
            break;
        }
        let column = 15 - any.leading_zeros();
        let floor = column.saturating_sub(window);
        for lane in pending.iter_mut().filter(|l| **l != 0) {
            let top = 15 - lane.leading_zeros();
            if top >= floor {
                *lane &= !(1 << top);
            }
        }
        cycles += 1;
    }
    cycles.max(1)
}
