//! SplitMix64 generator and keyed stream derivation.
//!
//! Every random quantity in the toolkit (extractor weights, synthetic scenes)
//! comes from this generator so outputs are bit-identical across platforms.

use rand_core::{impls, RngCore};

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    /// Independent stream for a (seed, key...) tuple, e.g. (seed, scenario, frame, role).
    pub fn keyed(seed: u64, keys: &[u64]) -> Self {
        let state = keys
            .iter()
            .fold(mix64(seed), |acc, &k| mix64(acc ^ mix64(k.wrapping_add(GAMMA))));
        Self { state }
    }

    pub fn next(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GAMMA);
        mix64(self.state)
    }

    /// Real in [-1, 1]: `u / 2^63 - 1` on the full 64-bit output.
    pub fn next_signed_unit(&mut self) -> f64 {
        self.next() as f64 / 9_223_372_036_854_775_808.0 - 1.0
    }
}

impl RngCore for SplitMix64 {
    fn next_u32(&mut self) -> u32 {
        (self.next() >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        self.next()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        impls::fill_bytes_via_next(self, dst)
    }
}
