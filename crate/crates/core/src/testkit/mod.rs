//! Synthetic data and self-check suites.
//!
//! Everything here is deterministic: checkpoints generated from a spec are
//! byte-identical across runs, machines, and thread counts, and the
//! invariant suites measure exact ULP distances instead of comparing
//! against tolerances pulled out of the air.

mod invariants;
mod synth;

pub use invariants::{run_invariants, CheckResult, InvariantReport, Suite};
pub use synth::{gen_checkpoint, gen_delta_checkpoint, Distribution, SynthSpec};

/// Number of representable F32 values strictly between `a` and `b`.
///
/// Uses the monotone mapping of IEEE-754 bit patterns onto a signed
/// integer line, so adjacent floats are distance 1 apart and `+0`/`−0`
/// are distance 0.
pub fn ulp_distance(a: f32, b: f32) -> u64 {
    fn key(x: f32) -> i64 {
        let bits = x.to_bits();
        if bits & 0x8000_0000 != 0 {
            -((bits & 0x7FFF_FFFF) as i64)
        } else {
            (bits & 0x7FFF_FFFF) as i64
        }
    }
    key(a).abs_diff(key(b))
}
