//! Element types storable in a checkpoint container.

use serde::{Deserialize, Serialize};

/// Storage dtype of a tensor.
///
/// Only the three float types participate in arithmetic; `I64` and `Bool`
/// tensors are carried through merges verbatim.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DType {
    F32,
    F16,
    #[serde(rename = "BF16")]
    Bf16,
    I64,
    #[serde(rename = "BOOL")]
    Bool,
}

impl DType {
    /// Bytes per element.
    pub fn byte_width(self) -> u64 {
        match self {
            DType::F32 => 4,
            DType::F16 | DType::Bf16 => 2,
            DType::I64 => 8,
            DType::Bool => 1,
        }
    }

    /// Whether elements of this dtype take part in merge arithmetic.
    pub fn is_arithmetic(self) -> bool {
        matches!(self, DType::F32 | DType::F16 | DType::Bf16)
    }

    /// The tag stored in container headers.
    pub fn tag(self) -> &'static str {
        match self {
            DType::F32 => "F32",
            DType::F16 => "F16",
            DType::Bf16 => "BF16",
            DType::I64 => "I64",
            DType::Bool => "BOOL",
        }
    }

    /// Parse a header tag; `None` for unknown tags.
    pub fn from_tag(tag: &str) -> Option<DType> {
        match tag {
            "F32" => Some(DType::F32),
            "F16" => Some(DType::F16),
            "BF16" => Some(DType::Bf16),
            "I64" => Some(DType::I64),
            "BOOL" => Some(DType::Bool),
            _ => None,
        }
    }

    /// All supported dtypes, in a fixed order (useful for fuzzing).
    pub const ALL: [DType; 5] = [DType::F32, DType::F16, DType::Bf16, DType::I64, DType::Bool];
}

impl std::fmt::Display for DType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

impl std::str::FromStr for DType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DType::from_tag(s).ok_or_else(|| format!("unknown dtype tag {s:?}"))
    }
}
