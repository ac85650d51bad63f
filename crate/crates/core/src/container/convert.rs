//! Widening and narrowing between storage dtypes and F32 work buffers.
//!
//! F16 and BF16 are both subsets of F32, so widening is exact and
//! widen → narrow → widen is the identity. Narrowing from F32 rounds to
//! nearest-even.

use half::{bf16, f16};

use super::dtype::DType;
use crate::error::{Error, Result};

/// Decode little-endian storage bytes into an F32 buffer.
///
/// Only arithmetic dtypes can be widened; call sites handling `I64`/`BOOL`
/// must take the raw-bytes path instead.
pub fn widen_to_f32(dtype: DType, name: &str, bytes: &[u8]) -> Result<Vec<f32>> {
    debug_assert_eq!(bytes.len() as u64 % dtype.byte_width(), 0);
    match dtype {
        DType::F32 => Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect()),
        DType::F16 => Ok(bytes
            .chunks_exact(2)
            .map(|c| f16::from_le_bytes([c[0], c[1]]).to_f32())
            .collect()),
        DType::Bf16 => Ok(bytes
            .chunks_exact(2)
            .map(|c| bf16::from_le_bytes([c[0], c[1]]).to_f32())
            .collect()),
        DType::I64 | DType::Bool => Err(Error::NonArithmetic {
            name: name.into(),
            dtype: dtype.to_string(),
        }),
    }
}

/// Encode an F32 buffer as little-endian storage bytes of `dtype`.
pub fn narrow_from_f32(dtype: DType, name: &str, values: &[f32]) -> Result<Vec<u8>> {
    match dtype {
        DType::F32 => {
            let mut out = Vec::with_capacity(values.len() * 4);
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
            Ok(out)
        }
        DType::F16 => {
            let mut out = Vec::with_capacity(values.len() * 2);
            for v in values {
                out.extend_from_slice(&f16::from_f32(*v).to_le_bytes());
            }
            Ok(out)
        }
        DType::Bf16 => {
            let mut out = Vec::with_capacity(values.len() * 2);
            for v in values {
                out.extend_from_slice(&bf16::from_f32(*v).to_le_bytes());
            }
            Ok(out)
        }
        DType::I64 | DType::Bool => Err(Error::NonArithmetic {
            name: name.into(),
            dtype: dtype.to_string(),
        }),
    }
}

/// Round an F32 value through `dtype` storage and back.
pub fn round_trip_f32(dtype: DType, value: f32) -> f32 {
    match dtype {
        DType::F32 => value,
        DType::F16 => f16::from_f32(value).to_f32(),
        DType::Bf16 => bf16::from_f32(value).to_f32(),
        DType::I64 | DType::Bool => value,
    }
}
