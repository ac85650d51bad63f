//! DARE: drop-and-rescale sparsification.
//!
//! Each element is zeroed independently with probability `drop_p`;
//! survivors are scaled by `1/(1−drop_p)` so the result is unbiased in
//! expectation. Randomness comes from the counter-based generator keyed
//! by (seed, tensor name, flat index), so output bytes depend only on the
//! configuration — never on thread count or iteration order.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::container::{DType, PlannedWriter, ROLE_KEY, ROLE_TASK_VECTOR};
use crate::error::{Error, Result};
use crate::merge::TaskVector;
use crate::rng::CounterRng;

const PAR_CHUNK: usize = 1 << 16;

fn default_drop_p() -> f64 {
    0.9
}

/// Configuration for [`dare`] / [`dare_in_place`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DareConfig {
    /// Probability of zeroing each element; must satisfy `0 ≤ p < 1` so
    /// the rescale factor stays finite.
    #[serde(default = "default_drop_p")]
    pub drop_p: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for DareConfig {
    fn default() -> Self {
        DareConfig {
            drop_p: default_drop_p(),
            seed: 0,
        }
    }
}

impl DareConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.drop_p >= 0.0 && self.drop_p < 1.0) {
            return Err(Error::InvalidInput {
                detail: format!("dare drop_p must be in [0, 1), got {}", self.drop_p),
            });
        }
        Ok(())
    }
}

/// Apply DARE to one tensor's values in place.
pub fn dare_in_place(values: &mut [f32], cfg: &DareConfig, tensor_name: &str) -> Result<()> {
    cfg.validate()?;
    if cfg.drop_p == 0.0 {
        return Ok(());
    }
    let scale = (1.0 / (1.0 - cfg.drop_p)) as f32;
    let rng = CounterRng::new(cfg.seed, tensor_name);
    values
        .par_chunks_mut(PAR_CHUNK)
        .enumerate()
        .for_each(|(ci, chunk)| {
            let base = (ci * PAR_CHUNK) as u64;
            for (j, v) in chunk.iter_mut().enumerate() {
                if rng.uniform(base + j as u64) < cfg.drop_p {
                    *v = 0.0;
                } else {
                    *v *= scale;
                }
            }
        });
    Ok(())
}

/// Apply DARE to a stored task vector, writing a new container at
/// `out_path` with self-describing `sparsify.dare.*` metadata.
pub fn dare(vector: &TaskVector, cfg: &DareConfig, out_path: &Path) -> Result<TaskVector> {
    cfg.validate()?;
    let cp = vector.checkpoint();
    let layout: Vec<(String, DType, Vec<u64>)> = cp
        .manifest()
        .records()
        .iter()
        .filter(|r| r.dtype.is_arithmetic())
        .map(|r| (r.name.clone(), DType::F32, r.shape.clone()))
        .collect();
    let mut metadata = cp.manifest().metadata().clone();
    metadata.insert(ROLE_KEY.into(), ROLE_TASK_VECTOR.into());
    metadata.insert(
        "sparsify.dare.drop_p".into(),
        serde_json::to_string(&cfg.drop_p).expect("json"),
    );
    metadata.insert("sparsify.dare.seed".into(), cfg.seed.to_string());
    let mut writer = PlannedWriter::create(out_path, &layout, metadata)?;
    for (name, _, _) in &layout {
        let mut vals = cp.read_f32(name)?;
        dare_in_place(&mut vals, cfg, name)?;
        writer.write_f32(name, &vals)?;
    }
    writer.finish()?;
    TaskVector::open(out_path)
}
