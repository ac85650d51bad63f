//! Writing containers, packed and byte-reproducible.
//!
//! Two writers cover the two layout situations:
//!
//! * [`PlannedWriter`] — the full layout is known up front (merges, synthetic
//!   generation). The header is written first and tensor data streams
//!   straight to the output in a single pass.
//! * [`CheckpointWriter`] — tensors arrive one at a time with no advance
//!   notice. Data streams to a sibling temp file and the header is
//!   assembled at the end.
//!
//! Both write to a temp file in the destination directory and atomically
//! rename on `finish`, so an interrupted write never leaves a partial
//! container behind. Offsets are packed with no padding and header keys are
//! serialized in lexicographic order: equal logical content yields equal
//! bytes.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::convert::narrow_from_f32;
use super::dtype::DType;
use super::manifest::{validate_name, CheckpointManifest, TensorRecord};
use crate::error::{Error, Result};

#[derive(Serialize)]
#[serde(untagged)]
enum HeaderValue<'a> {
    Meta(&'a BTreeMap<String, String>),
    Entry {
        dtype: &'static str,
        shape: &'a [u64],
        data_offsets: [u64; 2],
    },
}

/// Serialize the JSON header for a validated record set.
///
/// All keys — tensor names and, when present, `__metadata__` — appear in
/// lexicographic order with fixed field order inside each entry, so the
/// encoding is a pure function of the logical content.
pub fn encode_header(
    records: &[TensorRecord],
    metadata: &BTreeMap<String, String>,
) -> Vec<u8> {
    let mut map: BTreeMap<&str, HeaderValue> = BTreeMap::new();
    if !metadata.is_empty() {
        map.insert("__metadata__", HeaderValue::Meta(metadata));
    }
    for rec in records {
        map.insert(
            &rec.name,
            HeaderValue::Entry {
                dtype: rec.dtype.tag(),
                shape: &rec.shape,
                data_offsets: [rec.data_offsets.0, rec.data_offsets.1],
            },
        );
    }
    serde_json::to_vec(&map).expect("header serialization cannot fail")
}

fn temp_in_parent(path: &Path) -> Result<tempfile::NamedTempFile> {
    let parent = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    tempfile::NamedTempFile::new_in(parent).map_err(|e| Error::io(path, e))
}

fn persist(tmp: tempfile::NamedTempFile, path: &Path) -> Result<()> {
    tmp.persist(path)
        .map(|_| ())
        .map_err(|e| Error::io(path, e.error))
}

fn expected_elements(name: &str, shape: &[u64]) -> Result<u64> {
    shape
        .iter()
        .try_fold(1u64, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::BadRecord {
            name: name.into(),
            detail: "shape element product overflows u64".into(),
        })
}

/// Single-pass writer for a layout known in advance.
pub struct PlannedWriter {
    final_path: PathBuf,
    tmp: Option<tempfile::NamedTempFile>,
    manifest: CheckpointManifest,
    next: usize,
}

impl PlannedWriter {
    /// Compute packed offsets for `layout` (in the given order), write the
    /// header, and prepare the data region.
    pub fn create(
        path: impl AsRef<Path>,
        layout: &[(String, DType, Vec<u64>)],
        metadata: BTreeMap<String, String>,
    ) -> Result<PlannedWriter> {
        let path = path.as_ref();
        let mut records = Vec::with_capacity(layout.len());
        let mut cursor = 0u64;
        for (name, dtype, shape) in layout {
            let elements = expected_elements(name, shape)?;
            let bytes = elements
                .checked_mul(dtype.byte_width())
                .and_then(|b| cursor.checked_add(b).map(|end| (b, end)))
                .ok_or_else(|| Error::BadRecord {
                    name: name.clone(),
                    detail: "data region size overflows u64".into(),
                })?;
            records.push(TensorRecord {
                name: name.clone(),
                dtype: *dtype,
                shape: shape.clone(),
                data_offsets: (cursor, bytes.1),
            });
            cursor = bytes.1;
        }
        // from_records re-sorts by offset, which matches plan order because
        // offsets were assigned sequentially; it also enforces name rules.
        let manifest = CheckpointManifest::from_records(records, metadata)?;

        let mut tmp = temp_in_parent(path)?;
        let header = encode_header(manifest.records(), manifest.metadata());
        tmp.write_all(&(header.len() as u64).to_le_bytes())
            .and_then(|_| tmp.write_all(&header))
            .map_err(|e| Error::io(path, e))?;

        Ok(PlannedWriter {
            final_path: path.into(),
            tmp: Some(tmp),
            manifest,
            next: 0,
        })
    }

    fn expect_next(&self, name: &str) -> Result<&TensorRecord> {
        let rec = self.manifest.records().get(self.next).ok_or_else(|| {
            Error::InvalidWrite {
                expected: "<no tensors remaining>".into(),
                found: name.into(),
            }
        })?;
        if rec.name != name {
            return Err(Error::InvalidWrite {
                expected: rec.name.clone(),
                found: name.into(),
            });
        }
        Ok(rec)
    }

    /// Append the next planned tensor from raw storage bytes.
    pub fn write_raw(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let rec = self.expect_next(name)?;
        if bytes.len() as u64 != rec.byte_len() {
            return Err(Error::BadRecord {
                name: name.into(),
                detail: format!(
                    "planned {} bytes, got {}",
                    rec.byte_len(),
                    bytes.len()
                ),
            });
        }
        let tmp = self.tmp.as_mut().expect("writer already finished");
        tmp.write_all(bytes)
            .map_err(|e| Error::io(&self.final_path, e))?;
        self.next += 1;
        Ok(())
    }

    /// Append the next planned tensor from F32 values, narrowing to its
    /// planned storage dtype.
    pub fn write_f32(&mut self, name: &str, values: &[f32]) -> Result<()> {
        let rec = self.expect_next(name)?;
        let expected = expected_elements(name, &rec.shape)?;
        if values.len() as u64 != expected {
            return Err(Error::LengthMismatch {
                name: name.into(),
                expected,
                found: values.len() as u64,
            });
        }
        let bytes = narrow_from_f32(rec.dtype, name, values)?;
        self.write_raw(name, &bytes)
    }

    /// Flush and atomically move the finished container into place.
    pub fn finish(mut self) -> Result<CheckpointManifest> {
        if self.next != self.manifest.len() {
            return Err(Error::InvalidWrite {
                expected: self.manifest.records()[self.next].name.clone(),
                found: "<finish>".into(),
            });
        }
        let mut tmp = self.tmp.take().expect("writer already finished");
        tmp.flush().map_err(|e| Error::io(&self.final_path, e))?;
        persist(tmp, &self.final_path)?;
        Ok(self.manifest)
    }
}

/// Append-as-you-go writer for streams with unknown layout.
pub struct CheckpointWriter {
    final_path: PathBuf,
    data_tmp: Option<tempfile::NamedTempFile>,
    records: Vec<TensorRecord>,
    cursor: u64,
}

impl CheckpointWriter {
    pub fn create(path: impl AsRef<Path>) -> Result<CheckpointWriter> {
        let path = path.as_ref();
        let data_tmp = temp_in_parent(path)?;
        Ok(CheckpointWriter {
            final_path: path.into(),
            data_tmp: Some(data_tmp),
            records: Vec::new(),
            cursor: 0,
        })
    }

    /// Append a tensor from raw storage bytes.
    pub fn add_raw(
        &mut self,
        name: &str,
        dtype: DType,
        shape: &[u64],
        bytes: &[u8],
    ) -> Result<()> {
        validate_name(name)?;
        if self.records.iter().any(|r| r.name == name) {
            return Err(Error::DuplicateName { name: name.into() });
        }
        let elements = expected_elements(name, shape)?;
        let expected = elements
            .checked_mul(dtype.byte_width())
            .ok_or_else(|| Error::BadRecord {
                name: name.into(),
                detail: "byte length overflows u64".into(),
            })?;
        if bytes.len() as u64 != expected {
            return Err(Error::BadRecord {
                name: name.into(),
                detail: format!("dtype {dtype} × shape {shape:?} needs {expected} bytes, got {}", bytes.len()),
            });
        }
        let tmp = self.data_tmp.as_mut().expect("writer already finished");
        tmp.write_all(bytes)
            .map_err(|e| Error::io(&self.final_path, e))?;
        self.records.push(TensorRecord {
            name: name.into(),
            dtype,
            shape: shape.to_vec(),
            data_offsets: (self.cursor, self.cursor + expected),
        });
        self.cursor += expected;
        Ok(())
    }

    /// Append a tensor from F32 values, narrowing to `dtype`.
    pub fn add_f32(
        &mut self,
        name: &str,
        dtype: DType,
        shape: &[u64],
        values: &[f32],
    ) -> Result<()> {
        let elements = expected_elements(name, shape)?;
        if values.len() as u64 != elements {
            return Err(Error::LengthMismatch {
                name: name.into(),
                expected: elements,
                found: values.len() as u64,
            });
        }
        let bytes = narrow_from_f32(dtype, name, values)?;
        self.add_raw(name, dtype, shape, &bytes)
    }

    /// Write the header and assemble the final container.
    pub fn finish(mut self, metadata: BTreeMap<String, String>) -> Result<CheckpointManifest> {
        let manifest = CheckpointManifest::from_records(self.records.clone(), metadata)?;
        let mut data_tmp = self.data_tmp.take().expect("writer already finished");
        data_tmp
            .flush()
            .map_err(|e| Error::io(&self.final_path, e))?;

        let mut out = temp_in_parent(&self.final_path)?;
        let header = encode_header(manifest.records(), manifest.metadata());
        out.write_all(&(header.len() as u64).to_le_bytes())
            .and_then(|_| out.write_all(&header))
            .map_err(|e| Error::io(&self.final_path, e))?;

        // Stream the data region across in bounded chunks.
        let mut src = data_tmp.reopen().map_err(|e| Error::io(&self.final_path, e))?;
        let mut buf = vec![0u8; 1 << 20];
        loop {
            let n = src.read(&mut buf).map_err(|e| Error::io(&self.final_path, e))?;
            if n == 0 {
                break;
            }
            out.write_all(&buf[..n])
                .map_err(|e| Error::io(&self.final_path, e))?;
        }
        out.flush().map_err(|e| Error::io(&self.final_path, e))?;
        persist(out, &self.final_path)?;
        Ok(manifest)
    }
}

/// Decoded or raw values for [`write_checkpoint`] entries.
pub enum TensorValues {
    F32(Vec<f32>),
    Raw(Vec<u8>),
}

/// Write a whole container from an ordered stream of tensors.
pub fn write_checkpoint(
    path: impl AsRef<Path>,
    entries: impl IntoIterator<Item = (String, DType, Vec<u64>, TensorValues)>,
    metadata: BTreeMap<String, String>,
) -> Result<CheckpointManifest> {
    let mut writer = CheckpointWriter::create(path)?;
    for (name, dtype, shape, values) in entries {
        match values {
            TensorValues::F32(v) => writer.add_f32(&name, dtype, &shape, &v)?,
            TensorValues::Raw(b) => writer.add_raw(&name, dtype, &shape, &b)?,
        }
    }
    writer.finish(metadata)
}
