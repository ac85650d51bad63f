//! Training-step accounting for the three ways to produce n specialist
//! variants of a generalist model:
//!
//! - CFT (continued fine-tuning): train each specialist from the
//!   generalist on its subsample — Σᵢ steps(|Dᵢ|).
//! - RT (retraining): retrain the generalist mix from scratch for each
//!   variant — n·steps(|G|) + Σᵢ steps(|Dᵢ|).
//! - PTM (parallel-train-then-merge): fine-tune once on the full data and
//!   reuse the checkpoints by merging — steps(|D|) with |D| the largest
//!   subsample (one full-data run).
//!
//! steps(X) = ⌈X·epochs / batch⌉. Epochs and batch size are explicit
//! inputs rather than constants because reported step counts depend on
//! the convention chosen.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CostMethod {
    #[serde(rename = "CFT")]
    Cft,
    #[serde(rename = "RT")]
    Rt,
    #[serde(rename = "PTM")]
    Ptm,
}

impl fmt::Display for CostMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CostMethod::Cft => "CFT",
            CostMethod::Rt => "RT",
            CostMethod::Ptm => "PTM",
        })
    }
}

impl FromStr for CostMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cft" => Ok(CostMethod::Cft),
            "rt" => Ok(CostMethod::Rt),
            "ptm" => Ok(CostMethod::Ptm),
            _ => Err(Error::InvalidInput {
                detail: format!("unknown cost method {s:?}; expected cft, rt, or ptm"),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostReport {
    pub method: CostMethod,
    pub subsample_sizes: Vec<u64>,
    pub general_size: u64,
    pub batch_size: u64,
    pub epochs: u64,
    pub total_steps: u64,
}

fn steps(examples: u64, epochs: u64, batch: u64) -> Result<u64> {
    let scaled = examples.checked_mul(epochs).ok_or(Error::InvalidInput {
        detail: format!("step count overflows: {examples} examples × {epochs} epochs"),
    })?;
    Ok(scaled.div_ceil(batch))
}

/// Total optimizer steps for one production method.
pub fn cost_steps(
    method: CostMethod,
    subsample_sizes: &[u64],
    general_size: u64,
    batch_size: u64,
    epochs: u64,
) -> Result<CostReport> {
    if subsample_sizes.is_empty() {
        return Err(Error::InvalidInput {
            detail: "cost accounting needs at least one subsample size".into(),
        });
    }
    if subsample_sizes.contains(&0) || general_size == 0 {
        return Err(Error::InvalidInput {
            detail: "all dataset sizes must be positive".into(),
        });
    }
    if batch_size == 0 || epochs == 0 {
        return Err(Error::InvalidInput {
            detail: "batch_size and epochs must be at least 1".into(),
        });
    }

    let sum_subsamples = || -> Result<u64> {
        let mut total = 0u64;
        for &d in subsample_sizes {
            total = total
                .checked_add(steps(d, epochs, batch_size)?)
                .ok_or(Error::InvalidInput {
                    detail: "total step count overflows".into(),
                })?;
        }
        Ok(total)
    };

    let total_steps = match method {
        CostMethod::Cft => sum_subsamples()?,
        CostMethod::Rt => {
            let n = subsample_sizes.len() as u64;
            let general = steps(general_size, epochs, batch_size)?
                .checked_mul(n)
                .ok_or(Error::InvalidInput {
                    detail: "total step count overflows".into(),
                })?;
            general
                .checked_add(sum_subsamples()?)
                .ok_or(Error::InvalidInput {
                    detail: "total step count overflows".into(),
                })?
        }
        CostMethod::Ptm => {
            let full = *subsample_sizes.iter().max().expect("nonempty");
            steps(full, epochs, batch_size)?
        }
    };

    Ok(CostReport {
        method,
        subsample_sizes: subsample_sizes.to_vec(),
        general_size,
        batch_size,
        epochs,
        total_steps,
    })
}
