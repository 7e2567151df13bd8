//! Deterministic seed derivation.
//!
//! Every random draw in the pipeline flows from one base seed. Sub-tasks
//! (grid-search cells, solver restarts, sweep rows, per-group blocks) get
//! independent streams derived with a splitmix64 finalizer so that results
//! do not depend on execution or thread order.

/// Derive an independent seed for sub-stream `stream` of `base`.
pub fn derive(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Two-level derivation for nested task grids.
pub fn derive2(base: u64, stream: u64, substream: u64) -> u64 {
    derive(derive(base, stream), substream)
}
