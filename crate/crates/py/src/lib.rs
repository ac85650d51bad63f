//! Python bindings for patchkit.
//!
//! The extension module `_patchkit` mirrors the Rust surface: checkpoint
//! containers are opened and written by path, merges stream tensor-at-a-
//! time on the Rust side with the GIL released, and reports come back as
//! plain dicts/lists. Errors map onto builtin exceptions by category:
//! bad input → `ValueError`, filesystem trouble → `OSError`, non-finite
//! tensor data → `ArithmeticError`.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use pyo3::exceptions::{PyArithmeticError, PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use pyo3::IntoPyObjectExt;
use serde_json::Value;

use patchkit::container::{self, DType, TensorValues};
use patchkit::merge::{self, MergeOptions, MissingKeyPolicy, WeightedVector};
use patchkit::recipe::{self, CostMethod};
use patchkit::sparsify::{self, DareConfig};
use patchkit::testkit::{self, Suite};
use patchkit::ErrorCategory;

fn pyerr(e: patchkit::Error) -> PyErr {
    let msg = e.to_string();
    match e.category() {
        ErrorCategory::Io => PyOSError::new_err(msg),
        ErrorCategory::Numeric => PyArithmeticError::new_err(msg),
        ErrorCategory::Validation => PyValueError::new_err(msg),
    }
}

fn json_to_py(py: Python<'_>, v: &Value) -> PyResult<Py<PyAny>> {
    Ok(match v {
        Value::Null => py.None(),
        Value::Bool(b) => b.into_py_any(py)?,
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                i.into_py_any(py)?
            } else if let Some(u) = n.as_u64() {
                u.into_py_any(py)?
            } else {
                n.as_f64().unwrap_or(f64::NAN).into_py_any(py)?
            }
        }
        Value::String(s) => s.into_py_any(py)?,
        Value::Array(items) => {
            let list = PyList::empty(py);
            for item in items {
                list.append(json_to_py(py, item)?)?;
            }
            list.into_py_any(py)?
        }
        Value::Object(map) => {
            let dict = PyDict::new(py);
            for (k, val) in map {
                dict.set_item(k, json_to_py(py, val)?)?;
            }
            dict.into_py_any(py)?
        }
    })
}

fn to_py<T: serde::Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let v = serde_json::to_value(value)
        .map_err(|e| PyValueError::new_err(format!("report serialization failed: {e}")))?;
    json_to_py(py, &v)
}

fn parse_policy(s: &str) -> PyResult<MissingKeyPolicy> {
    s.parse().map_err(PyValueError::new_err)
}

fn parse_options(
    missing_key_policy: &str,
    output_dtype: &str,
    allow_nonfinite: bool,
) -> PyResult<MergeOptions> {
    Ok(MergeOptions {
        output_dtype: output_dtype.parse().map_err(PyValueError::new_err)?,
        missing_key_policy: parse_policy(missing_key_policy)?,
        allow_nonfinite,
        metadata: BTreeMap::new(),
    })
}

fn merge_report_to_py(py: Python<'_>, report: &merge::MergeReport) -> PyResult<Py<PyAny>> {
    let v = serde_json::json!({
        "output": report.output,
        "tensors": report.tensors,
        "warnings": report.warnings,
    });
    json_to_py(py, &v)
}

/// An open checkpoint container.
#[pyclass(frozen, name = "Checkpoint")]
struct PyCheckpoint {
    inner: Arc<container::Checkpoint>,
}

#[pymethods]
impl PyCheckpoint {
    #[new]
    fn new(path: PathBuf) -> PyResult<Self> {
        Ok(PyCheckpoint {
            inner: Arc::new(container::Checkpoint::open(path).map_err(pyerr)?),
        })
    }

    #[getter]
    fn path(&self) -> String {
        self.inner.path().display().to_string()
    }

    #[getter]
    fn role(&self) -> String {
        self.inner.manifest().role().to_string()
    }

    #[getter]
    fn metadata(&self) -> BTreeMap<String, String> {
        self.inner.manifest().metadata().clone()
    }

    /// Tensor descriptors in container order as dicts with
    /// `name`, `dtype`, `shape`, and `bytes` keys.
    fn tensors(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        let list = PyList::empty(py);
        for r in self.inner.manifest().records() {
            let d = PyDict::new(py);
            d.set_item("name", &r.name)?;
            d.set_item("dtype", r.dtype.tag())?;
            d.set_item("shape", r.shape.clone())?;
            d.set_item("bytes", r.byte_len())?;
            list.append(d)?;
        }
        list.into_py_any(py)
    }

    /// One tensor's values widened to F32.
    fn read_f32(&self, py: Python<'_>, name: &str) -> PyResult<Vec<f32>> {
        let inner = self.inner.clone();
        let name = name.to_string();
        py.detach(move || inner.read_f32(&name)).map_err(pyerr)
    }

    fn __len__(&self) -> usize {
        self.inner.manifest().len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Checkpoint({:?}, role={:?}, tensors={})",
            self.inner.path().display().to_string(),
            self.inner.manifest().role(),
            self.inner.manifest().len()
        )
    }
}

impl PyCheckpoint {
    fn wrap(inner: Arc<container::Checkpoint>) -> PyCheckpoint {
        PyCheckpoint { inner }
    }
}

/// An open task-vector container (a checkpoint whose role is
/// `task_vector`).
#[pyclass(frozen, name = "TaskVector")]
struct PyTaskVector {
    inner: merge::TaskVector,
}

#[pymethods]
impl PyTaskVector {
    #[new]
    fn new(path: PathBuf) -> PyResult<Self> {
        Ok(PyTaskVector {
            inner: merge::TaskVector::open(path).map_err(pyerr)?,
        })
    }

    #[getter]
    fn path(&self) -> String {
        self.inner.checkpoint().path().display().to_string()
    }

    #[getter]
    fn minuend_id(&self) -> Option<String> {
        self.inner.minuend_id().map(str::to_string)
    }

    #[getter]
    fn subtrahend_id(&self) -> Option<String> {
        self.inner.subtrahend_id().map(str::to_string)
    }

    fn checkpoint(&self) -> PyCheckpoint {
        PyCheckpoint::wrap(self.inner.checkpoint().clone())
    }

    fn __repr__(&self) -> String {
        format!(
            "TaskVector({:?}, tensors={})",
            self.inner.checkpoint().path().display().to_string(),
            self.inner.checkpoint().manifest().len()
        )
    }
}

fn open_model(path: &PathBuf) -> PyResult<Arc<container::Checkpoint>> {
    Ok(Arc::new(container::Checkpoint::open(path).map_err(pyerr)?))
}

fn open_vector(path: &PathBuf) -> PyResult<merge::TaskVector> {
    merge::TaskVector::open(path).map_err(pyerr)
}

/// Write a container with F32-valued tensors (narrowed to each declared
/// dtype) and optional metadata.
#[pyfunction]
#[pyo3(signature = (path, tensors, metadata = None))]
fn write_checkpoint(
    py: Python<'_>,
    path: PathBuf,
    tensors: Vec<(String, String, Vec<u64>, Vec<f32>)>,
    metadata: Option<BTreeMap<String, String>>,
) -> PyResult<()> {
    let mut entries = Vec::with_capacity(tensors.len());
    for (name, tag, shape, values) in tensors {
        let dtype = DType::from_tag(&tag)
            .ok_or_else(|| PyValueError::new_err(format!("unknown dtype tag {tag:?}")))?;
        entries.push((name, dtype, shape, TensorValues::F32(values)));
    }
    py.detach(move || {
        container::write_checkpoint(&path, entries, metadata.unwrap_or_default()).map(|_| ())
    })
    .map_err(pyerr)
}

/// `model − base`, written to `out` as a task vector.
#[pyfunction]
#[pyo3(signature = (model, base, out, *, missing_key_policy = "strict"))]
fn diff(
    py: Python<'_>,
    model: PathBuf,
    base: PathBuf,
    out: PathBuf,
    missing_key_policy: &str,
) -> PyResult<Py<PyAny>> {
    let policy = parse_policy(missing_key_policy)?;
    let model = open_model(&model)?;
    let base = open_model(&base)?;
    let (_, warnings) = py
        .detach(move || merge::compute_task_vector(&model, &base, &out, policy))
        .map_err(pyerr)?;
    warnings.into_py_any(py)
}

/// `out = general + Σ ωᵢ·τᵢ` over `(vector_path, omega)` pairs.
#[pyfunction]
#[pyo3(signature = (general, skills, out, *,
       missing_key_policy = "strict", output_dtype = "same_as_general",
       allow_nonfinite = false))]
fn task_arithmetic(
    py: Python<'_>,
    general: PathBuf,
    skills: Vec<(PathBuf, f64)>,
    out: PathBuf,
    missing_key_policy: &str,
    output_dtype: &str,
    allow_nonfinite: bool,
) -> PyResult<Py<PyAny>> {
    let opts = parse_options(missing_key_policy, output_dtype, allow_nonfinite)?;
    let general = open_model(&general)?;
    let mut weighted = Vec::with_capacity(skills.len());
    for (path, omega) in &skills {
        weighted.push(WeightedVector {
            vector: open_vector(path)?,
            omega: *omega,
        });
    }
    let report = py
        .detach(move || merge::apply_task_arithmetic(&general, &weighted, &out, &opts))
        .map_err(pyerr)?;
    merge_report_to_py(py, &report)
}

/// `out = general + ω·(cft − general)`.
#[pyfunction]
#[pyo3(signature = (general, cft, omega, out, *,
       missing_key_policy = "strict", output_dtype = "same_as_general",
       allow_nonfinite = false))]
fn wise_ft(
    py: Python<'_>,
    general: PathBuf,
    cft: PathBuf,
    omega: f64,
    out: PathBuf,
    missing_key_policy: &str,
    output_dtype: &str,
    allow_nonfinite: bool,
) -> PyResult<Py<PyAny>> {
    let opts = parse_options(missing_key_policy, output_dtype, allow_nonfinite)?;
    let general = open_model(&general)?;
    let cft = open_model(&cft)?;
    let report = py
        .detach(move || merge::wise_ft(&general, &cft, omega, &out, &opts))
        .map_err(pyerr)?;
    merge_report_to_py(py, &report)
}

/// `out = pre + ω·τ_D + (1−ω)·τ_G`.
#[pyfunction]
#[pyo3(signature = (pre, skill_vector, general_vector, omega, out, *,
       missing_key_policy = "strict", output_dtype = "same_as_general",
       allow_nonfinite = false))]
#[allow(clippy::too_many_arguments)]
fn linear_interpolate(
    py: Python<'_>,
    pre: PathBuf,
    skill_vector: PathBuf,
    general_vector: PathBuf,
    omega: f64,
    out: PathBuf,
    missing_key_policy: &str,
    output_dtype: &str,
    allow_nonfinite: bool,
) -> PyResult<Py<PyAny>> {
    let opts = parse_options(missing_key_policy, output_dtype, allow_nonfinite)?;
    let pre = open_model(&pre)?;
    let skill = open_vector(&skill_vector)?;
    let general = open_vector(&general_vector)?;
    let report = py
        .detach(move || merge::linear_interpolate(&pre, &skill, &general, omega, &out, &opts))
        .map_err(pyerr)?;
    merge_report_to_py(py, &report)
}

/// Keep the `⌈density·n⌉` largest-magnitude elements per tensor.
#[pyfunction]
fn ties_trim(py: Python<'_>, vector: PathBuf, density: f64, out: PathBuf) -> PyResult<String> {
    let v = open_vector(&vector)?;
    let trimmed = py
        .detach(move || sparsify::ties_trim(&v, density, &out))
        .map_err(pyerr)?;
    Ok(trimmed.checkpoint().path().display().to_string())
}

/// Trim, elect a per-element sign, and average agreeing contributions
/// across `(vector_path, omega)` pairs.
#[pyfunction]
fn ties_merge(
    py: Python<'_>,
    vectors: Vec<(PathBuf, f64)>,
    density: f64,
    out: PathBuf,
) -> PyResult<String> {
    let mut weighted = Vec::with_capacity(vectors.len());
    for (path, omega) in &vectors {
        weighted.push(WeightedVector {
            vector: open_vector(path)?,
            omega: *omega,
        });
    }
    let merged = py
        .detach(move || sparsify::ties_merge(&weighted, density, &out))
        .map_err(pyerr)?;
    Ok(merged.checkpoint().path().display().to_string())
}

/// Zero elements with probability `drop_p` and rescale survivors by
/// `1/(1−drop_p)`.
#[pyfunction]
#[pyo3(signature = (vector, out, *, drop_p = 0.9, seed = 0))]
fn dare(py: Python<'_>, vector: PathBuf, out: PathBuf, drop_p: f64, seed: u64) -> PyResult<String> {
    let v = open_vector(&vector)?;
    let cfg = DareConfig { drop_p, seed };
    let dropped = py
        .detach(move || sparsify::dare(&v, &cfg, &out))
        .map_err(pyerr)?;
    Ok(dropped.checkpoint().path().display().to_string())
}

/// ω = d_size / g_size, clamped to 1.0; returns `(omega, warning)`.
#[pyfunction]
fn heuristic_omega(d_size: u64, g_size: u64) -> PyResult<(f64, Option<String>)> {
    recipe::heuristic_omega(d_size, g_size).map_err(pyerr)
}

/// Total optimizer steps for `method` ∈ {"cft", "rt", "ptm"}.
#[pyfunction]
#[pyo3(signature = (method, sizes, general_size, *, batch_size = 128, epochs = 1))]
fn cost_steps(
    py: Python<'_>,
    method: &str,
    sizes: Vec<u64>,
    general_size: u64,
    batch_size: u64,
    epochs: u64,
) -> PyResult<Py<PyAny>> {
    let method: CostMethod = method.parse().map_err(pyerr)?;
    let report = recipe::cost_steps(method, &sizes, general_size, batch_size, epochs)
        .map_err(pyerr)?;
    to_py(py, &report)
}

/// Execute a recipe file (JSON or TOML); paths inside the recipe resolve
/// against the current working directory.
#[pyfunction]
#[pyo3(signature = (path, *, force = false, allow_nonfinite = false))]
fn run_recipe(
    py: Python<'_>,
    path: PathBuf,
    force: bool,
    allow_nonfinite: bool,
) -> PyResult<Py<PyAny>> {
    let (recipe, _) = recipe::parse_recipe_file(&path).map_err(pyerr)?;
    let report = py
        .detach(move || patchkit::exec::run_recipe(&recipe, force, allow_nonfinite))
        .map_err(pyerr)?;
    to_py(py, &report)
}

/// Run a self-check suite ("endpoints", "linearity", "equivalence",
/// "sparsify", "roundtrip", or None for all) and return its report(s).
#[pyfunction]
#[pyo3(signature = (suite = None, seed = 7))]
fn verify(py: Python<'_>, suite: Option<&str>, seed: u64) -> PyResult<Py<PyAny>> {
    let suites: Vec<Suite> = match suite {
        Some(name) => vec![name.parse().map_err(pyerr)?],
        None => Suite::ALL.to_vec(),
    };
    let reports: Vec<testkit::InvariantReport> = py.detach(move || {
        suites
            .into_iter()
            .map(|s| testkit::run_invariants(s, seed))
            .collect()
    });
    to_py(py, &reports)
}

#[pymodule]
fn _patchkit(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyCheckpoint>()?;
    m.add_class::<PyTaskVector>()?;
    m.add_function(wrap_pyfunction!(write_checkpoint, m)?)?;
    m.add_function(wrap_pyfunction!(diff, m)?)?;
    m.add_function(wrap_pyfunction!(task_arithmetic, m)?)?;
    m.add_function(wrap_pyfunction!(wise_ft, m)?)?;
    m.add_function(wrap_pyfunction!(linear_interpolate, m)?)?;
    m.add_function(wrap_pyfunction!(ties_trim, m)?)?;
    m.add_function(wrap_pyfunction!(ties_merge, m)?)?;
    m.add_function(wrap_pyfunction!(dare, m)?)?;
    m.add_function(wrap_pyfunction!(heuristic_omega, m)?)?;
    m.add_function(wrap_pyfunction!(cost_steps, m)?)?;
    m.add_function(wrap_pyfunction!(run_recipe, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    Ok(())
}
