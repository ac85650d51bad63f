//! Structural compatibility between two manifests.

use serde::Serialize;

use super::dtype::DType;
use super::manifest::CheckpointManifest;

/// A shared key whose dtype or shape differs between the two manifests.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompatMismatch {
    pub name: String,
    pub dtype_a: DType,
    pub dtype_b: DType,
    pub shape_a: Vec<u64>,
    pub shape_b: Vec<u64>,
}

/// Key and shape/dtype comparison of two manifests.
///
/// `a` and `b` follow the argument order of [`validate_compat`]. The report
/// is strict: any dtype difference counts as a mismatch, even between float
/// types a merge could reconcile. Merge planning applies its own, looser
/// rules on top.
#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct CompatReport {
    pub only_in_a: Vec<String>,
    pub only_in_b: Vec<String>,
    pub mismatched: Vec<CompatMismatch>,
}

impl CompatReport {
    /// Compatible iff the key sets are equal and every shared key agrees on
    /// dtype and shape.
    pub fn is_compatible(&self) -> bool {
        self.only_in_a.is_empty() && self.only_in_b.is_empty() && self.mismatched.is_empty()
    }

    /// One-line summary for error messages.
    pub fn summary(&self) -> String {
        fn preview(items: &[String]) -> String {
            const SHOW: usize = 3;
            let head: Vec<_> = items.iter().take(SHOW).map(|s| format!("{s:?}")).collect();
            let mut s = head.join(", ");
            if items.len() > SHOW {
                s.push_str(&format!(", … ({} total)", items.len()));
            }
            s
        }
        let mut parts = Vec::new();
        if !self.only_in_a.is_empty() {
            parts.push(format!("only in first: {}", preview(&self.only_in_a)));
        }
        if !self.only_in_b.is_empty() {
            parts.push(format!("only in second: {}", preview(&self.only_in_b)));
        }
        if !self.mismatched.is_empty() {
            let names: Vec<String> = self.mismatched.iter().map(|m| m.name.clone()).collect();
            parts.push(format!("dtype/shape mismatch: {}", preview(&names)));
        }
        if parts.is_empty() {
            "compatible".into()
        } else {
            parts.join("; ")
        }
    }
}

/// Compare key sets and per-key dtype/shape of two manifests.
pub fn validate_compat(a: &CheckpointManifest, b: &CheckpointManifest) -> CompatReport {
    let mut report = CompatReport::default();
    // Iterate in sorted name order so the report is deterministic.
    let mut a_names: Vec<&str> = a.names().collect();
    a_names.sort_unstable();
    for name in a_names {
        let ra = a.get(name).expect("name from manifest");
        match b.get(name) {
            None => report.only_in_a.push(name.into()),
            Some(rb) => {
                if ra.dtype != rb.dtype || ra.shape != rb.shape {
                    report.mismatched.push(CompatMismatch {
                        name: name.into(),
                        dtype_a: ra.dtype,
                        dtype_b: rb.dtype,
                        shape_a: ra.shape.clone(),
                        shape_b: rb.shape.clone(),
                    });
                }
            }
        }
    }
    let mut b_names: Vec<&str> = b.names().collect();
    b_names.sort_unstable();
    for name in b_names {
        if !a.contains(name) {
            report.only_in_b.push(name.into());
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::container::manifest::TensorRecord;
    use std::collections::BTreeMap;

    fn manifest(specs: &[(&str, DType, &[u64])]) -> CheckpointManifest {
        let mut records = Vec::new();
        let mut cursor = 0u64;
        for (name, dtype, shape) in specs {
            let elems: u64 = shape.iter().product();
            let len = elems * dtype.byte_width();
            records.push(TensorRecord {
                name: name.to_string(),
                dtype: *dtype,
                shape: shape.to_vec(),
                data_offsets: (cursor, cursor + len),
            });
            cursor += len;
        }
        CheckpointManifest::from_records(records, BTreeMap::new()).unwrap()
    }

    #[test]
    fn identical_manifests_compatible() {
        let a = manifest(&[("w", DType::F32, &[2, 3]), ("b", DType::F16, &[3])]);
        let b = manifest(&[("w", DType::F32, &[2, 3]), ("b", DType::F16, &[3])]);
        let report = validate_compat(&a, &b);
        assert!(report.is_compatible());
        assert_eq!(report.summary(), "compatible");
    }

    #[test]
    fn missing_key_reported() {
        let a = manifest(&[("lm_head.weight", DType::F32, &[4]), ("w", DType::F32, &[1])]);
        let b = manifest(&[("w", DType::F32, &[1])]);
        let report = validate_compat(&a, &b);
        assert_eq!(report.only_in_a, ["lm_head.weight"]);
        assert!(report.only_in_b.is_empty());
        assert!(!report.is_compatible());
    }

    #[test]
    fn transposed_shape_reported() {
        let a = manifest(&[("w", DType::F32, &[2, 3])]);
        let b = manifest(&[("w", DType::F32, &[3, 2])]);
        let report = validate_compat(&a, &b);
        assert_eq!(report.mismatched.len(), 1);
        assert_eq!(report.mismatched[0].shape_a, [2, 3]);
        assert_eq!(report.mismatched[0].shape_b, [3, 2]);
    }

    #[test]
    fn dtype_difference_reported() {
        let a = manifest(&[("w", DType::F32, &[2])]);
        let b = manifest(&[("w", DType::Bf16, &[2])]);
        assert!(!validate_compat(&a, &b).is_compatible());
    }
}
