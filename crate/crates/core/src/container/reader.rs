//! Opening containers and reading tensors one at a time.
//!
//! File layout (little-endian):
//!
//! ```text
//! +-----------+----------------------+--------------------------------+
//! | u64 H     | JSON header, H bytes | packed tensor data             |
//! +-----------+----------------------+--------------------------------+
//! 0           8                      8+H
//! ```
//!
//! The header maps each tensor name to `{"dtype", "shape", "data_offsets"}`
//! with offsets relative to the data region, plus an optional
//! `"__metadata__"` string map. Opening validates the whole layout but
//! reads no tensor data; tensors are fetched individually afterwards, so
//! peak memory is bounded by the largest single tensor.

use std::collections::BTreeMap;
use std::fs::File;
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::convert::widen_to_f32;
use super::dtype::DType;
use super::manifest::{CheckpointManifest, TensorRecord};
use crate::error::{Error, Result};

/// Cap on header size; anything larger is treated as corruption.
pub const MAX_HEADER_BYTES: u64 = 100 * 1024 * 1024;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEntry {
    dtype: String,
    shape: Vec<u64>,
    data_offsets: [u64; 2],
}

/// Decoded payload of one tensor.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    /// Arithmetic dtypes, widened to F32 (exact for F16/BF16).
    Floats(Vec<f32>),
    /// Pass-through dtypes (`I64`, `BOOL`): raw little-endian bytes.
    Raw(Vec<u8>),
}

/// A tensor read from a container.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<u64>,
    pub data: TensorData,
}

/// An open container: validated manifest plus a readable file handle.
///
/// Immutable after opening; reads of distinct tensors may proceed
/// concurrently (positioned reads share no cursor).
#[derive(Debug)]
pub struct Checkpoint {
    path: PathBuf,
    file: File,
    manifest: CheckpointManifest,
    data_start: u64,
}

impl Checkpoint {
    /// Open and validate a container without loading tensor data.
    pub fn open(path: impl AsRef<Path>) -> Result<Checkpoint> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let file_len = file.metadata().map_err(|e| Error::io(path, e))?.len();

        let mut len_bytes = [0u8; 8];
        if file_len < 8 {
            return Err(Error::MalformedHeader {
                path: path.into(),
                detail: format!("file is {file_len} bytes, too short for a header length"),
            });
        }
        file.read_exact_at(&mut len_bytes, 0)
            .map_err(|e| Error::io(path, e))?;
        let header_len = u64::from_le_bytes(len_bytes);
        if header_len > MAX_HEADER_BYTES {
            return Err(Error::MalformedHeader {
                path: path.into(),
                detail: format!("header length {header_len} exceeds cap {MAX_HEADER_BYTES}"),
            });
        }
        if header_len > file_len - 8 {
            return Err(Error::MalformedHeader {
                path: path.into(),
                detail: format!(
                    "header length {header_len} extends past end of file ({file_len} bytes)"
                ),
            });
        }

        let mut header = vec![0u8; header_len as usize];
        file.read_exact_at(&mut header, 8)
            .map_err(|e| Error::io(path, e))?;
        let (records, metadata) = parse_header(path, &header)?;
        let manifest = CheckpointManifest::from_records(records, metadata)?;

        let data_available = file_len - 8 - header_len;
        let needed = manifest.total_data_bytes();
        if data_available < needed {
            return Err(Error::Truncated {
                path: path.into(),
                needed,
                available: data_available,
            });
        }
        if data_available > needed {
            return Err(Error::TrailingData {
                path: path.into(),
                extra: data_available - needed,
            });
        }

        Ok(Checkpoint {
            path: path.into(),
            file,
            manifest,
            data_start: 8 + header_len,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn manifest(&self) -> &CheckpointManifest {
        &self.manifest
    }

    fn record(&self, name: &str) -> Result<&TensorRecord> {
        self.manifest.get(name).ok_or_else(|| Error::UnknownTensor {
            name: name.into(),
        })
    }

    /// Read a tensor's raw storage bytes.
    pub fn read_raw(&self, name: &str) -> Result<Vec<u8>> {
        let rec = self.record(name)?;
        let mut buf = vec![0u8; rec.byte_len() as usize];
        self.file
            .read_exact_at(&mut buf, self.data_start + rec.data_offsets.0)
            .map_err(|e| Error::io(&self.path, e))?;
        Ok(buf)
    }

    /// Read an arithmetic tensor widened to F32.
    ///
    /// Errors with `NonArithmetic` for `I64`/`BOOL` tensors.
    pub fn read_f32(&self, name: &str) -> Result<Vec<f32>> {
        let rec = self.record(name)?;
        let dtype = rec.dtype;
        let raw = self.read_raw(name)?;
        widen_to_f32(dtype, name, &raw)
    }

    /// Read any tensor; floats are widened, pass-through dtypes stay raw.
    pub fn read_tensor(&self, name: &str) -> Result<Tensor> {
        let rec = self.record(name)?;
        let (dtype, shape) = (rec.dtype, rec.shape.clone());
        let raw = self.read_raw(name)?;
        let data = if dtype.is_arithmetic() {
            TensorData::Floats(widen_to_f32(dtype, name, &raw)?)
        } else {
            TensorData::Raw(raw)
        };
        Ok(Tensor {
            name: name.into(),
            dtype,
            shape,
            data,
        })
    }
}

fn parse_header(
    path: &Path,
    header: &[u8],
) -> Result<(Vec<TensorRecord>, BTreeMap<String, String>)> {
    // Writers are free to pad the header with trailing whitespace (some
    // align the data region); tolerate it on read.
    let text = std::str::from_utf8(header).map_err(|e| Error::MalformedHeader {
        path: path.into(),
        detail: format!("header is not UTF-8: {e}"),
    })?;
    let text = text.trim_end_matches([' ', '\t', '\r', '\n']);

    let root: BTreeMap<String, serde_json::Value> =
        serde_json::from_str(text).map_err(|e| Error::MalformedHeader {
            path: path.into(),
            detail: e.to_string(),
        })?;

    let mut records = Vec::with_capacity(root.len());
    let mut metadata = BTreeMap::new();
    for (name, value) in root {
        if name == "__metadata__" {
            metadata = serde_json::from_value(value).map_err(|e| Error::MalformedHeader {
                path: path.into(),
                detail: format!("__metadata__ must map strings to strings: {e}"),
            })?;
            continue;
        }
        let entry: RawEntry =
            serde_json::from_value(value).map_err(|e| Error::MalformedHeader {
                path: path.into(),
                detail: format!("tensor {name:?}: {e}"),
            })?;
        let dtype = DType::from_tag(&entry.dtype).ok_or_else(|| Error::UnknownDtype {
            name: name.clone(),
            tag: entry.dtype.clone(),
        })?;
        records.push(TensorRecord {
            name,
            dtype,
            shape: entry.shape,
            data_offsets: (entry.data_offsets[0], entry.data_offsets[1]),
        });
    }
    Ok((records, metadata))
}
