//! patchkit — streaming checkpoint merging.
//!
//! Add a separately finetuned skill to an instruction-tuned model by
//! weight-space arithmetic instead of retraining: extract task vectors
//! (differences between checkpoints), combine them with a tunable mixture
//! weight ω via task arithmetic, linear interpolation, or WiSE-FT, and
//! optionally sparsify deltas first with TIES or DARE to reduce
//! interference. A cost calculator compares the training budgets of the
//! merge workflow against continued finetuning and full retraining.
//!
//! Everything operates tensor-at-a-time over a safetensors-compatible
//! container format, so models far larger than RAM merge in bounded
//! memory, and all randomness is counter-based so results are
//! byte-reproducible at any thread count.

pub mod container;
pub mod error;
pub mod exec;
pub mod merge;
pub mod recipe;
pub mod rng;
pub mod sparsify;
pub mod testkit;

pub use container::{Checkpoint, CheckpointManifest, DType, TensorRecord};
pub use error::{Error, ErrorCategory, Result};
pub use merge::{TaskVector, WeightedVector};
