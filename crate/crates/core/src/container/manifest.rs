//! Validated description of a container's contents.

use std::collections::BTreeMap;

use serde::Serialize;

use super::dtype::DType;
use crate::error::{Error, Result};

/// Metadata key carrying the file's role.
pub const ROLE_KEY: &str = "role";
/// Role of a plain weight checkpoint.
pub const ROLE_MODEL: &str = "model";
/// Role of a stored delta (difference of two checkpoints).
pub const ROLE_TASK_VECTOR: &str = "task_vector";
/// Metadata keys recording which checkpoints a task vector was built from.
pub const MINUEND_KEY: &str = "minuend";
pub const SUBTRAHEND_KEY: &str = "subtrahend";

/// One named tensor: dtype, shape, and where its bytes live in the data
/// region (half-open range `[begin, end)`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TensorRecord {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<u64>,
    pub data_offsets: (u64, u64),
}

impl TensorRecord {
    /// Element count; the product of an empty shape is 1 (a scalar).
    pub fn num_elements(&self) -> Option<u64> {
        self.shape.iter().try_fold(1u64, |acc, &d| acc.checked_mul(d))
    }

    /// Payload size in bytes.
    pub fn byte_len(&self) -> u64 {
        self.data_offsets.1 - self.data_offsets.0
    }
}

/// Ordered, validated map of tensor records plus container metadata.
///
/// Invariants established at construction: names are unique and non-empty,
/// byte ranges match `dtype × shape`, ranges are non-overlapping, and their
/// union covers `[0, total_data_bytes)` with no gaps. Records are kept in
/// ascending offset order.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointManifest {
    records: Vec<TensorRecord>,
    index: BTreeMap<String, usize>,
    metadata: BTreeMap<String, String>,
    total_data_bytes: u64,
}

impl CheckpointManifest {
    /// Validate records and assemble a manifest.
    ///
    /// Records may arrive in any order; they are sorted by begin offset.
    pub fn from_records(
        records: Vec<TensorRecord>,
        metadata: BTreeMap<String, String>,
    ) -> Result<Self> {
        let mut records = records;
        for rec in &records {
            validate_name(&rec.name)?;
            let elements = rec.num_elements().ok_or_else(|| Error::BadRecord {
                name: rec.name.clone(),
                detail: "shape element product overflows u64".into(),
            })?;
            let expected = elements
                .checked_mul(rec.dtype.byte_width())
                .ok_or_else(|| Error::BadRecord {
                    name: rec.name.clone(),
                    detail: "byte length overflows u64".into(),
                })?;
            let (begin, end) = rec.data_offsets;
            if end < begin {
                return Err(Error::BadRecord {
                    name: rec.name.clone(),
                    detail: format!("data_offsets end {end} precedes begin {begin}"),
                });
            }
            if end - begin != expected {
                return Err(Error::BadRecord {
                    name: rec.name.clone(),
                    detail: format!(
                        "data_offsets span {} bytes but dtype {} × shape {:?} needs {}",
                        end - begin,
                        rec.dtype,
                        rec.shape,
                        expected
                    ),
                });
            }
        }

        records.sort_by(|a, b| a.data_offsets.cmp(&b.data_offsets).then(a.name.cmp(&b.name)));

        let mut index = BTreeMap::new();
        for (i, rec) in records.iter().enumerate() {
            if index.insert(rec.name.clone(), i).is_some() {
                return Err(Error::DuplicateName {
                    name: rec.name.clone(),
                });
            }
        }

        // Coverage walk: each record must start exactly where the previous
        // byte range ended.
        let mut cursor = 0u64;
        let mut prev_name: Option<&str> = None;
        for rec in &records {
            let (begin, end) = rec.data_offsets;
            if begin < cursor {
                return Err(Error::OverlappingOffsets {
                    first: prev_name.unwrap_or("<start>").to_string(),
                    second: rec.name.clone(),
                });
            }
            if begin > cursor {
                return Err(Error::GappedOffsets {
                    name: rec.name.clone(),
                    expected: cursor,
                    found: begin,
                });
            }
            if end > cursor {
                cursor = end;
                prev_name = Some(&rec.name);
            }
        }

        Ok(CheckpointManifest {
            records,
            index,
            metadata,
            total_data_bytes: cursor,
        })
    }

    /// Records in ascending offset order.
    pub fn records(&self) -> &[TensorRecord] {
        &self.records
    }

    /// Tensor names in ascending offset order.
    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.records.iter().map(|r| r.name.as_str())
    }

    pub fn get(&self, name: &str) -> Option<&TensorRecord> {
        self.index.get(name).map(|&i| &self.records[i])
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn metadata(&self) -> &BTreeMap<String, String> {
        &self.metadata
    }

    /// Total size of the packed data region.
    pub fn total_data_bytes(&self) -> u64 {
        self.total_data_bytes
    }

    /// The file's role; files without an explicit marker count as models.
    pub fn role(&self) -> &str {
        self.metadata
            .get(ROLE_KEY)
            .map(String::as_str)
            .unwrap_or(ROLE_MODEL)
    }
}

/// Check a tensor name is storable: non-empty and not the reserved
/// metadata key.
pub fn validate_name(name: &str) -> Result<()> {
    if name.is_empty() {
        return Err(Error::InvalidName {
            name: name.into(),
            reason: "empty name".into(),
        });
    }
    if name == "__metadata__" {
        return Err(Error::InvalidName {
            name: name.into(),
            reason: "reserved header key".into(),
        });
    }
    Ok(())
}
