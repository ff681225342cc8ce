//! Deterministic, platform-independent random streams.
//!
//! Every RCST draws from its own stream and the MAC owns one more, so adding
//! a terminal never shifts the draws of the others.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Stream id reserved for MAC-level draws (open-loop transmit decisions).
pub const MAC_STREAM: u64 = 0;

/// Stream id of the RCST with the given index.
pub fn rcst_stream(rcst: usize) -> u64 {
    rcst as u64 + 1
}

/// A ChaCha8 generator keyed by `(seed, stream_id)`.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    stream_id: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }
}

impl RngCore for SeededRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.inner.try_fill_bytes(dest)
    }
}

/// SplitMix64 finalizer, used to derive per-run seeds in sweeps.
pub fn mix_seed(base: u64, salt: u64) -> u64 {
    let mut z = base ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn same_seed_and_stream_repeat() {
        let mut a = SeededRng::new(42, 3);
        let mut b = SeededRng::new(42, 3);
        let xs: Vec<u64> = (0..16).map(|_| a.next_u64()).collect();
        let ys: Vec<u64> = (0..16).map(|_| b.next_u64()).collect();
        assert_eq!(xs, ys);
    }

    #[test]
    fn streams_are_independent() {
        let mut a = SeededRng::new(42, 1);
        let mut b = SeededRng::new(42, 2);
        let xs: Vec<u64> = (0..4).map(|_| a.next_u64()).collect();
        let ys: Vec<u64> = (0..4).map(|_| b.next_u64()).collect();
        assert_ne!(xs, ys);
    }

    #[test]
    fn stable_across_platforms() {
        // Frozen first draw; ChaCha8 output is specified bit-for-bit.
        let mut r = SeededRng::new(7, MAC_STREAM);
        let first = r.next_u64();
        assert_eq!(first, 2_910_824_217_569_608_635);
        let mut again = SeededRng::new(7, MAC_STREAM);
        assert_eq!(first, again.next_u64());
        let u: f64 = again.gen();
        assert!((0.0..1.0).contains(&u));
    }

    #[test]
    fn mixed_seeds_differ() {
        assert_ne!(mix_seed(1, 30), mix_seed(1, 31));
        assert_eq!(mix_seed(9, 5), mix_seed(9, 5));
    }
}
