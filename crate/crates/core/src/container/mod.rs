//! The checkpoint container: a single file holding named tensors.
//!
//! Layout is an 8-byte little-endian header length, a JSON header mapping
//! tensor names to dtype/shape/offsets (plus an optional `__metadata__`
//! string map), and a packed data region — the widely used safetensors
//! layout, so real checkpoints load directly. All access is streaming and
//! tensor-at-a-time; nothing ever materializes a whole model in memory.

mod compat;
mod convert;
mod dtype;
mod manifest;
mod reader;
mod writer;

pub use compat::{validate_compat, CompatMismatch, CompatReport};
pub use convert::{narrow_from_f32, round_trip_f32, widen_to_f32};
pub use dtype::DType;
pub use manifest::{
    validate_name, CheckpointManifest, TensorRecord, MINUEND_KEY, ROLE_KEY, ROLE_MODEL,
    ROLE_TASK_VECTOR, SUBTRAHEND_KEY,
};
pub use reader::{Checkpoint, Tensor, TensorData, MAX_HEADER_BYTES};
pub use writer::{
    encode_header, write_checkpoint, CheckpointWriter, PlannedWriter, TensorValues,
};
