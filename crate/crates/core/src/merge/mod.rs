//! Merge methods over whole checkpoints.
//!
//! Three methods, all streaming and all accumulating in F32:
//!
//! * task arithmetic: `out = θ_G + Σ_i ω_i·τ_i` over any number of skill
//!   task vectors;
//! * linear interpolation: `out = θ_pre + ω·τ_D + (1−ω)·τ_G`, trading the
//!   skill vector off against a general vector above the pretrained base;
//! * WiSE-FT: `out = θ_G + ω·(θ_CFT − θ_G)`, which needs no pretrained
//!   checkpoint at all.
//!
//! Task vectors are checkpoint-shaped deltas stored as F32 containers with
//! role metadata `"task_vector"` so a raw model can never be mistaken for a
//! delta.

mod engine;

pub use engine::{
    apply_task_arithmetic, compute_task_vector, linear_interpolate, wise_ft,
};
pub(crate) use engine::{
    require_role, run_plan, scale_in_place, DeltaSource, MergePlan, MergeTerm, TermPrep,
};

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::container::{
    Checkpoint, DType, MINUEND_KEY, ROLE_TASK_VECTOR, SUBTRAHEND_KEY,
};
use crate::error::{Error, Result};

/// Highest mixture weight accepted; beyond extrapolation this far, merges
/// are noise.
pub const MAX_OMEGA: f64 = 2.0;

/// A checkpoint-shaped delta `θ_minuend − θ_subtrahend`.
///
/// Wraps an open container whose role metadata must read `"task_vector"`.
#[derive(Debug, Clone)]
pub struct TaskVector {
    checkpoint: Arc<Checkpoint>,
}

impl TaskVector {
    /// Adopt an open container, enforcing the role marker.
    pub fn from_checkpoint(checkpoint: Arc<Checkpoint>) -> Result<TaskVector> {
        let role = checkpoint.manifest().role();
        if role != ROLE_TASK_VECTOR {
            return Err(Error::RoleMismatch {
                path: checkpoint.path().into(),
                expected: ROLE_TASK_VECTOR.into(),
                found: role.into(),
            });
        }
        Ok(TaskVector { checkpoint })
    }

    /// Open a task-vector container from disk.
    pub fn open(path: impl AsRef<std::path::Path>) -> Result<TaskVector> {
        TaskVector::from_checkpoint(Arc::new(Checkpoint::open(path)?))
    }

    pub fn checkpoint(&self) -> &Arc<Checkpoint> {
        &self.checkpoint
    }

    /// Identifier of the model this delta was subtracted from, if recorded.
    pub fn minuend_id(&self) -> Option<&str> {
        self.checkpoint
            .manifest()
            .metadata()
            .get(MINUEND_KEY)
            .map(String::as_str)
    }

    /// Identifier of the base that was subtracted, if recorded.
    pub fn subtrahend_id(&self) -> Option<&str> {
        self.checkpoint
            .manifest()
            .metadata()
            .get(SUBTRAHEND_KEY)
            .map(String::as_str)
    }
}

/// A task vector paired with its mixture weight ω.
#[derive(Debug, Clone)]
pub struct WeightedVector {
    pub vector: TaskVector,
    pub omega: f64,
}

/// Check ω is finite and within `[0, MAX_OMEGA]`; weights above 1.0 are
/// legal extrapolation and return a warning instead of an error.
pub fn validate_omega(omega: f64) -> Result<Option<String>> {
    if !omega.is_finite() {
        return Err(Error::InvalidOmega {
            detail: format!("omega must be finite, got {omega}"),
        });
    }
    if !(0.0..=MAX_OMEGA).contains(&omega) {
        return Err(Error::InvalidOmega {
            detail: format!("omega {omega} outside [0, {MAX_OMEGA}]"),
        });
    }
    if omega > 1.0 {
        Ok(Some(format!(
            "omega {omega} exceeds 1.0; extrapolating beyond the finetuned endpoint"
        )))
    } else {
        Ok(None)
    }
}

/// What to do when a tensor is present in the reference model but missing
/// from a delta source (or vice versa).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingKeyPolicy {
    /// Any key difference is an error.
    #[default]
    Strict,
    /// Tensors with a missing contributor are copied verbatim from the
    /// reference model; surplus source keys are ignored.
    Skip,
    /// Missing contributors are treated as all-zero deltas; surplus source
    /// keys are ignored.
    Zeros,
}

impl std::str::FromStr for MissingKeyPolicy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "strict" => Ok(MissingKeyPolicy::Strict),
            "skip" => Ok(MissingKeyPolicy::Skip),
            "zeros" => Ok(MissingKeyPolicy::Zeros),
            _ => Err(format!(
                "unknown missing-key policy {s:?} (expected strict, skip, or zeros)"
            )),
        }
    }
}

/// Storage dtype of merged float tensors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DtypePolicy {
    /// Each tensor keeps the reference model's storage dtype.
    #[default]
    SameAsGeneral,
    /// All float tensors are stored as this dtype; pass-through tensors
    /// keep their own.
    Fixed(DType),
}

impl Serialize for DtypePolicy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            DtypePolicy::SameAsGeneral => s.serialize_str("same_as_general"),
            DtypePolicy::Fixed(dt) => s.serialize_str(dt.tag()),
        }
    }
}

impl<'de> Deserialize<'de> for DtypePolicy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl std::str::FromStr for DtypePolicy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        if s == "same_as_general" {
            return Ok(DtypePolicy::SameAsGeneral);
        }
        match DType::from_tag(s) {
            Some(dt) if dt.is_arithmetic() => Ok(DtypePolicy::Fixed(dt)),
            Some(dt) => Err(format!("output dtype {dt} is not arithmetic")),
            None => Err(format!(
                "unknown output dtype {s:?} (expected same_as_general, F32, F16, or BF16)"
            )),
        }
    }
}

/// Knobs shared by every merge operation.
#[derive(Debug, Clone, Default)]
pub struct MergeOptions {
    pub output_dtype: DtypePolicy,
    pub missing_key_policy: MissingKeyPolicy,
    /// Pass non-finite values through instead of aborting.
    pub allow_nonfinite: bool,
    /// Extra key/value pairs for the output header's metadata map.
    pub metadata: BTreeMap<String, String>,
}

/// Per-tensor summary emitted with every merge.
#[derive(Debug, Clone, Serialize)]
pub struct TensorDeltaStat {
    pub name: String,
    /// Largest elementwise |output − reference| in F32, before narrowing.
    pub max_abs_delta: f64,
}

/// What a merge produced.
#[derive(Debug)]
pub struct MergeReport {
    pub output: PathBuf,
    pub manifest: crate::container::CheckpointManifest,
    pub tensors: Vec<TensorDeltaStat>,
    pub warnings: Vec<String>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn omega_validation() {
        assert!(validate_omega(0.0).unwrap().is_none());
        assert!(validate_omega(1.0).unwrap().is_none());
        assert!(validate_omega(1.5).unwrap().is_some());
        assert!(validate_omega(2.0).unwrap().is_some());
        assert!(validate_omega(2.1).is_err());
        assert!(validate_omega(-0.1).is_err());
        assert!(validate_omega(f64::NAN).is_err());
        assert!(validate_omega(f64::INFINITY).is_err());
    }

    #[test]
    fn missing_key_policy_strings() {
        assert_eq!("strict".parse(), Ok(MissingKeyPolicy::Strict));
        assert_eq!("skip".parse(), Ok(MissingKeyPolicy::Skip));
        assert_eq!("zeros".parse(), Ok(MissingKeyPolicy::Zeros));
        assert!("lenient".parse::<MissingKeyPolicy>().is_err());
        let json = serde_json::to_string(&MissingKeyPolicy::Zeros).unwrap();
        assert_eq!(json, "\"zeros\"");
    }

    #[test]
    fn dtype_policy_strings() {
        assert_eq!(
            "same_as_general".parse::<DtypePolicy>().unwrap(),
            DtypePolicy::SameAsGeneral
        );
        assert_eq!(
            "BF16".parse::<DtypePolicy>().unwrap(),
            DtypePolicy::Fixed(DType::Bf16)
        );
        assert!("I64".parse::<DtypePolicy>().is_err());
        assert!("F64".parse::<DtypePolicy>().is_err());
        let json = serde_json::to_string(&DtypePolicy::Fixed(DType::F16)).unwrap();
        assert_eq!(json, "\"F16\"");
        let back: DtypePolicy = serde_json::from_str("\"same_as_general\"").unwrap();
        assert_eq!(back, DtypePolicy::SameAsGeneral);
    }
}
