//! Deterministic synthetic checkpoints.
//!
//! Values land on dyadic grids (multiples of 2⁻¹⁶ for uniform, 2⁻¹³ for
//! gaussian) with magnitude below 1 for uniform draws. On such grids,
//! sums and differences of any two stored values — including after
//! rounding through F16/BF16 storage — are exact in F32, which is what
//! lets the invariant suites assert endpoint identities at 0 ULP instead
//! of "close enough".
//!
//! All randomness is counter-based and keyed by (seed, tensor name, flat
//! index): the same spec always produces byte-identical files, at any
//! thread count, in any generation order.

use std::path::Path;

use crate::container::{
    CheckpointManifest, DType, PlannedWriter, ROLE_KEY, ROLE_MODEL, ROLE_TASK_VECTOR,
};
use crate::error::Result;
use crate::rng::CounterRng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Distribution {
    /// Dyadic grid over (−1, 1), zero excluded.
    Uniform,
    /// Gaussian(0, 1) approximated by a 12-uniform sum (no libm calls, so
    /// bytes are identical across platforms), snapped to a 2⁻¹³ grid.
    Gaussian,
    /// Every element equals `c`.
    Constant(f64),
}

impl Distribution {
    fn describe(&self) -> String {
        match self {
            Distribution::Uniform => "uniform".into(),
            Distribution::Gaussian => "gaussian".into(),
            Distribution::Constant(c) => format!("constant({c})"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub seed: u64,
    pub layout: Vec<(String, DType, Vec<u64>)>,
    pub distribution: Distribution,
}

/// One uniform grid value: k·2⁻¹⁶ with k ∈ [−65535, 65535] \ {0}.
fn uniform_grid(rng: &CounterRng, i: u64) -> f32 {
    let mut k = (rng.value(i) % 131_071) as i64 - 65_535;
    if k == 0 {
        k = 1;
    }
    k as f32 * (1.0 / 65_536.0)
}

fn gaussian_grid(rng: &CounterRng, i: u64) -> f32 {
    let mut z = -6.0f64;
    for j in 0..12 {
        z += rng.uniform(i * 12 + j);
    }
    let mut k = (z * 8192.0).round() as i64;
    if k == 0 {
        k = 1;
    }
    k as f32 * (1.0 / 8192.0)
}

fn float_values(dist: Distribution, rng: &CounterRng, n: u64) -> Vec<f32> {
    match dist {
        Distribution::Uniform => (0..n).map(|i| uniform_grid(rng, i)).collect(),
        Distribution::Gaussian => (0..n).map(|i| gaussian_grid(rng, i)).collect(),
        Distribution::Constant(c) => vec![c as f32; n as usize],
    }
}

fn raw_values(dtype: DType, dist: Distribution, rng: &CounterRng, n: u64) -> Vec<u8> {
    match dtype {
        DType::I64 => (0..n)
            .flat_map(|i| {
                let v: i64 = match dist {
                    Distribution::Constant(c) => c as i64,
                    _ => (rng.value(i) % 1000) as i64,
                };
                v.to_le_bytes()
            })
            .collect(),
        DType::Bool => (0..n)
            .map(|i| match dist {
                Distribution::Constant(c) => (c != 0.0) as u8,
                _ => (rng.value(i) & 1) as u8,
            })
            .collect(),
        _ => unreachable!("raw_values is only for non-arithmetic dtypes"),
    }
}

/// Write a synthetic model checkpoint; returns its manifest.
pub fn gen_checkpoint(spec: &SynthSpec, path: &Path) -> Result<CheckpointManifest> {
    let mut metadata = std::collections::BTreeMap::new();
    metadata.insert(ROLE_KEY.to_string(), ROLE_MODEL.to_string());
    metadata.insert("synth.seed".into(), spec.seed.to_string());
    metadata.insert("synth.distribution".into(), spec.distribution.describe());

    let mut writer = PlannedWriter::create(path, &spec.layout, metadata)?;
    for (name, dtype, shape) in &spec.layout {
        let n = shape.iter().product::<u64>();
        let rng = CounterRng::new(spec.seed, name);
        if dtype.is_arithmetic() {
            writer.write_f32(name, &float_values(spec.distribution, &rng, n))?;
        } else {
            writer.write_raw(name, &raw_values(*dtype, spec.distribution, &rng, n))?;
        }
    }
    writer.finish()
}

/// Write a synthetic task vector: F32 storage, uniform grid, zero-free —
/// so trim keep-counts are exactly observable as nonzero counts.
pub fn gen_delta_checkpoint(
    seed: u64,
    layout: &[(String, Vec<u64>)],
    path: &Path,
) -> Result<CheckpointManifest> {
    let full: Vec<(String, DType, Vec<u64>)> = layout
        .iter()
        .map(|(n, s)| (n.clone(), DType::F32, s.clone()))
        .collect();
    let mut metadata = std::collections::BTreeMap::new();
    metadata.insert(ROLE_KEY.to_string(), ROLE_TASK_VECTOR.to_string());
    metadata.insert("synth.seed".into(), seed.to_string());

    let mut writer = PlannedWriter::create(path, &full, metadata)?;
    for (name, _, shape) in &full {
        let n = shape.iter().product::<u64>();
        let rng = CounterRng::new(seed, name);
        let vals: Vec<f32> = (0..n).map(|i| uniform_grid(&rng, i)).collect();
        writer.write_f32(name, &vals)?;
    }
    writer.finish()
}
