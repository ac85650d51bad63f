//! Counter-based deterministic random numbers.
//!
//! Every stochastic operation in this crate (DARE dropout, synthetic
//! checkpoint generation, fuzzing) draws from a pure function of
//! `(seed, tensor name, element index)`. There is no mutable generator
//! state, so parallel and serial execution produce identical streams, and
//! element `i` of a tensor can be recomputed in isolation.
//!
//! The word function is the splitmix64 finalizer applied twice:
//!
//! ```text
//! key      = mix64(seed xor fnv1a64(name))
//! value(i) = mix64(key xor mix64(i xor GOLDEN))
//! ```
//!
//! `mix64` is bijective, so distinct indices never collide for a fixed key.

/// 2^64 / golden ratio; the increment constant from splitmix64.
pub const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// splitmix64 finalizer: a bijective avalanche mix of all 64 bits.
#[inline]
pub fn mix64(mut x: u64) -> u64 {
    x ^= x >> 30;
    x = x.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x ^= x >> 27;
    x = x.wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^= x >> 31;
    x
}

/// FNV-1a 64-bit hash, used to fold tensor names into the key.
#[inline]
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    h
}

/// A keyed, stateless random stream addressed by element index.
#[derive(Debug, Clone, Copy)]
pub struct CounterRng {
    key: u64,
}

impl CounterRng {
    /// Stream keyed by a seed and a tensor name.
    pub fn new(seed: u64, name: &str) -> Self {
        CounterRng {
            key: mix64(seed ^ fnv1a64(name.as_bytes())),
        }
    }

    /// Stream keyed by a bare seed (no name component).
    pub fn from_seed(seed: u64) -> Self {
        CounterRng { key: mix64(seed) }
    }

    /// Raw 64 random bits for element `index`.
    #[inline]
    pub fn value(&self, index: u64) -> u64 {
        mix64(self.key ^ mix64(index ^ GOLDEN))
    }

    /// Uniform f64 in [0, 1) with 53 bits of precision.
    #[inline]
    pub fn uniform(&self, index: u64) -> f64 {
        // Top 53 bits scaled by 2^-53.
        (self.value(index) >> 11) as f64 * (1.0 / 9007199254740992.0)
    }

    /// Derive a sub-stream, e.g. one per tensor from a file-level seed.
    pub fn derive(&self, name: &str) -> Self {
        CounterRng {
            key: mix64(self.key ^ fnv1a64(name.as_bytes())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_vectors() {
        // Published FNV-1a 64-bit vectors.
        assert_eq!(fnv1a64(b""), 0xCBF2_9CE4_8422_2325);
        assert_eq!(fnv1a64(b"a"), 0xAF63_DC4C_8601_EC8C);
    }

    #[test]
    fn mix64_matches_splitmix64() {
        // splitmix64 seeded with 0 outputs mix64(0 + GOLDEN) first; the
        // reference implementation's first output is this constant.
        assert_eq!(mix64(GOLDEN), 0xE220_A839_7B1D_CDAF);
        assert_eq!(mix64(1), 0x5692_161D_100B_05E5);
        assert_eq!(mix64(0), 0);
    }

    #[test]
    fn stream_stability_canary() {
        // Frozen outputs; a change here silently breaks every stored DARE
        // seed and synthetic checkpoint, so treat failures as breaking.
        let rng = CounterRng::new(5, "w");
        assert_eq!(rng.value(0), 0x6918_FCED_4E9C_9385);
        assert_eq!(rng.value(1), 0xD626_9BF6_7D1E_38BB);
        assert_eq!(rng.value(2), 0xC00B_A3A4_5C6A_E0A0);
        assert_eq!(rng.value(63), 0x7B7D_F4A3_DA24_1C5A);
        assert!((rng.uniform(0) - 0.410_537_536_560_342_75).abs() < 1e-16);
    }

    #[test]
    fn keyed_by_seed_and_name() {
        let a = CounterRng::new(1, "w");
        let b = CounterRng::new(2, "w");
        let c = CounterRng::new(1, "v");
        assert_ne!(a.value(0), b.value(0));
        assert_ne!(a.value(0), c.value(0));
        assert_eq!(a.value(0), CounterRng::new(1, "w").value(0));
    }

    #[test]
    fn uniform_range_and_mean() {
        let rng = CounterRng::new(9, "mean");
        let n = 100_000u64;
        let mut sum = 0.0;
        for i in 0..n {
            let u = rng.uniform(i);
            assert!((0.0..1.0).contains(&u));
            sum += u;
        }
        let mean = sum / n as f64;
        assert!((mean - 0.5).abs() < 0.01, "mean {mean}");
    }
}
