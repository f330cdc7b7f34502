//! Counter-based random streams.
//!
//! Each draw sequence is keyed by `(seed, index, step, kind)`, so a member's
//! noise at a given step does not depend on how many other members were
//! processed before it or on which thread processed them.

use rand::rand_core::impls::fill_bytes_via_next;
use rand::RngCore;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// What a stream is used for; part of the stream key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum DrawKind {
    EnsembleInit = 1,
    EnsembleProcess = 2,
    EnsembleObservation = 3,
    TruthProcess = 4,
    TruthMeasurement = 5,
}

/// SplitMix64 output function applied to a keyed counter.
#[derive(Debug, Clone)]
pub struct CounterRng {
    key: u64,
    counter: u64,
}

impl CounterRng {
    pub fn new(seed: u64, index: u64, step: u64, kind: DrawKind) -> Self {
        let mut key = mix64(seed.wrapping_add(GOLDEN));
        key = mix64(key ^ index.wrapping_mul(0xd6e8_feb8_6659_fd93));
        key = mix64(key ^ step.wrapping_mul(0xa076_1d64_78bd_642f));
        key = mix64(key ^ (kind as u64).wrapping_mul(0xe703_7ed1_a0b4_28db));
        CounterRng { key, counter: 0 }
    }
}

impl RngCore for CounterRng {
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.key.wrapping_add(self.counter.wrapping_mul(GOLDEN)))
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        fill_bytes_via_next(self, dst)
    }
}
