//! Counter-based random streams.
//!
//! Every Gaussian increment used by the steppers is a pure function of
//! `(root seed, channel, step, particle)`: the tuple is hashed into the seed
//! of a short SplitMix64 sequence. No generator state is shared between
//! particles, so the order in which particles are updated (and therefore the
//! number of worker threads) cannot change the draws.

use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent noise sources. Each gets its own key derived from the root.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Channel {
    /// Noise of a stand-alone particle-system step.
    Ips = 1,
    /// Noise of a stand-alone nonlinear-ensemble step.
    Nonlinear = 2,
    /// Shared (synchronous) noise of the coupled step.
    Synchronous = 3,
    /// Reflected noise of the coupled step.
    Reflection = 4,
    /// Noise of the frozen reference ensemble.
    Reference = 5,
}

/// Keyed family of counter-addressed streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseKey(u64);

impl NoiseKey {
    pub fn new(root: u64, channel: Channel) -> Self {
        NoiseKey(mix64(mix64(root ^ GOLDEN).wrapping_add(channel as u64)))
    }

    /// Stream for `(step, particle)`.
    #[inline]
    pub fn stream(self, step: u64, particle: u64) -> CounterRng {
        let s = mix64(self.0 ^ mix64(step.wrapping_mul(GOLDEN) ^ 0x5851_f42d_4c95_7f2d));
        CounterRng {
            state: mix64(s ^ particle.wrapping_mul(0xd134_2543_de82_ef95)),
        }
    }
}

/// SplitMix64 sequence started from a hashed counter.
#[derive(Debug, Clone)]
pub struct CounterRng {
    state: u64,
}

impl CounterRng {
    pub fn from_seed(seed: u64) -> Self {
        CounterRng { state: mix64(seed) }
    }

    #[inline]
    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(self)
    }

    pub fn fill_normal(&mut self, out: &mut [f64]) {
        for v in out {
            *v = self.normal();
        }
    }
}

impl RngCore for CounterRng {
    #[inline]
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    #[inline]
    fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix64(self.state)
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let bytes = self.next_u64().to_le_bytes();
            chunk.copy_from_slice(&bytes[..chunk.len()]);
        }
    }
}

/// Derives a sub-seed for a named purpose (graph, initial law, disorder...).
pub fn sub_seed(root: u64, tag: u64, index: u64) -> u64 {
    mix64(mix64(root ^ tag.wrapping_mul(GOLDEN)).wrapping_add(index))
}
