//! The data-size heuristic for choosing a mixture weight.
//!
//! A skill trained on |D| examples merged into a generalist trained on
//! |G| examples gets ω = |D| / |G|: small specialist datasets should
//! perturb the generalist proportionally less. The quotient is exact as
//! a rational d/g; the returned f64 is its closest double.

use crate::error::{Error, Result};

/// ω = d / g, clamped to 1.0 (with a warning) when d > g.
///
/// Returns the weight and an optional clamp warning.
pub fn heuristic_omega(d_size: u64, g_size: u64) -> Result<(f64, Option<String>)> {
    if d_size == 0 || g_size == 0 {
        return Err(Error::InvalidInput {
            detail: format!(
                "heuristic omega needs positive sizes, got d_size={d_size}, g_size={g_size}"
            ),
        });
    }
    if d_size > g_size {
        return Ok((
            1.0,
            Some(format!(
                "heuristic omega {d_size}/{g_size} exceeds 1; clamped to 1.0"
            )),
        ));
    }
    Ok((d_size as f64 / g_size as f64, None))
}

/// The same quotient as a reduced fraction, for exact reporting.
pub fn heuristic_fraction(d_size: u64, g_size: u64) -> Result<(u64, u64)> {
    if d_size == 0 || g_size == 0 {
        return Err(Error::InvalidInput {
            detail: format!(
                "heuristic omega needs positive sizes, got d_size={d_size}, g_size={g_size}"
            ),
        });
    }
    let g = gcd(d_size, g_size);
    Ok((d_size / g, g_size / g))
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}
