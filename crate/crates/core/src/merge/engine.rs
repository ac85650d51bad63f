//! Streaming execution of merge plans.
//!
//! A plan is a reference model plus a list of weighted delta terms. The
//! engine walks the reference manifest tensor by tensor: widen to F32,
//! accumulate each term in plan order, narrow to the output dtype, write.
//! Peak memory is a few buffers of the largest tensor, independent of
//! model size.
//!
//! Determinism: tensors are processed sequentially; within a tensor,
//! elementwise kernels parallelize over fixed-size chunks with no
//! cross-element reductions, so output bytes are identical at any thread
//! count. Endpoint weights are special-cased — ω = 0 terms are dropped
//! before any data is read, and a single ω = 1 model-pair term whose
//! subtrahend is the reference copies the minuend's bytes verbatim — so
//! identities like "ω = 0 reproduces the general model" hold bitwise, not
//! merely to rounding.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;

use crate::container::{
    widen_to_f32, Checkpoint, DType, PlannedWriter, TensorRecord, MINUEND_KEY, ROLE_KEY,
    ROLE_MODEL, SUBTRAHEND_KEY,
};
use crate::error::{Error, Result};
use crate::merge::{
    validate_omega, DtypePolicy, MergeOptions, MergeReport, MissingKeyPolicy, TaskVector,
    TensorDeltaStat, WeightedVector,
};
use crate::sparsify::{dare_in_place, ties_merge_buffers, validate_density, DareConfig};

/// Chunk size for intra-tensor parallelism. Fixed so the work split — and
/// therefore every rounding sequence — is independent of thread count.
const PAR_CHUNK: usize = 1 << 16;

pub(crate) fn axpy_into(acc: &mut [f32], w: f32, x: &[f32]) {
    debug_assert_eq!(acc.len(), x.len());
    acc.par_chunks_mut(PAR_CHUNK)
        .zip(x.par_chunks(PAR_CHUNK))
        .for_each(|(a, b)| {
            for (ai, bi) in a.iter_mut().zip(b) {
                *ai += w * *bi;
            }
        });
}

pub(crate) fn sub_into(minuend: &mut [f32], subtrahend: &[f32]) {
    debug_assert_eq!(minuend.len(), subtrahend.len());
    minuend
        .par_chunks_mut(PAR_CHUNK)
        .zip(subtrahend.par_chunks(PAR_CHUNK))
        .for_each(|(a, b)| {
            for (ai, bi) in a.iter_mut().zip(b) {
                *ai -= *bi;
            }
        });
}

pub(crate) fn scale_in_place(x: &mut [f32], w: f32) {
    x.par_chunks_mut(PAR_CHUNK).for_each(|c| {
        for v in c {
            *v *= w;
        }
    });
}

pub(crate) fn count_nonfinite(x: &[f32]) -> u64 {
    x.par_chunks(PAR_CHUNK)
        .map(|c| c.iter().filter(|v| !v.is_finite()).count() as u64)
        .sum()
}

pub(crate) fn max_abs_diff(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.par_chunks(PAR_CHUNK)
        .zip(b.par_chunks(PAR_CHUNK))
        .map(|(ca, cb)| {
            let mut m = 0.0f32;
            for (x, y) in ca.iter().zip(cb) {
                m = m.max((x - y).abs());
            }
            m
        })
        .reduce(|| 0.0f32, f32::max) as f64
}

/// Where a term's delta values come from.
pub(crate) enum DeltaSource {
    /// A stored task-vector container.
    Vector(Arc<Checkpoint>),
    /// Computed on the fly as `minuend − subtrahend`.
    ModelPair {
        minuend: Arc<Checkpoint>,
        subtrahend: Arc<Checkpoint>,
    },
}

impl DeltaSource {
    fn checkpoints(&self) -> Vec<&Arc<Checkpoint>> {
        match self {
            DeltaSource::Vector(v) => vec![v],
            DeltaSource::ModelPair { minuend, subtrahend } => vec![minuend, subtrahend],
        }
    }

    fn label(&self) -> String {
        match self {
            DeltaSource::Vector(v) => v.path().display().to_string(),
            DeltaSource::ModelPair { minuend, subtrahend } => format!(
                "{} − {}",
                minuend.path().display(),
                subtrahend.path().display()
            ),
        }
    }
}

/// Per-term delta preprocessor.
pub(crate) enum TermPrep {
    None,
    /// Joint TIES merge across all `Ties` terms of the plan.
    Ties,
    Dare(DareConfig),
}

pub(crate) struct MergeTerm {
    pub source: DeltaSource,
    /// Mixture weight; applied before any preprocessor.
    pub omega: f64,
    pub prep: TermPrep,
}

pub(crate) struct MergePlan {
    pub reference: Arc<Checkpoint>,
    pub terms: Vec<MergeTerm>,
    /// Shared density for all `Ties` terms; ignored when none exist.
    pub ties_density: f64,
}

pub(crate) fn require_role(cp: &Checkpoint, expected: &str) -> Result<()> {
    let role = cp.manifest().role();
    if role != expected {
        return Err(Error::RoleMismatch {
            path: cp.path().into(),
            expected: expected.into(),
            found: role.into(),
        });
    }
    Ok(())
}

fn scan_finite(vals: &[f32], tensor: &str, context: &str, allow: bool) -> Result<()> {
    if allow {
        return Ok(());
    }
    let count = count_nonfinite(vals);
    if count > 0 {
        return Err(Error::NonFinite {
            name: format!("{tensor} in {context}"),
            count,
        });
    }
    Ok(())
}

/// Read a term's delta for one tensor, widened to F32 and finiteness-checked.
fn fetch_delta(source: &DeltaSource, name: &str, allow_nonfinite: bool) -> Result<Vec<f32>> {
    match source {
        DeltaSource::Vector(v) => {
            let vals = v.read_f32(name)?;
            scan_finite(&vals, name, &v.path().display().to_string(), allow_nonfinite)?;
            Ok(vals)
        }
        DeltaSource::ModelPair { minuend, subtrahend } => {
            let mut m = minuend.read_f32(name)?;
            scan_finite(&m, name, &minuend.path().display().to_string(), allow_nonfinite)?;
            let b = subtrahend.read_f32(name)?;
            scan_finite(&b, name, &subtrahend.path().display().to_string(), allow_nonfinite)?;
            sub_into(&mut m, &b);
            Ok(m)
        }
    }
}

/// Can this source supply a delta for the (arithmetic) reference tensor?
///
/// Shape conflicts and non-arithmetic storage are hard errors; a cleanly
/// absent key returns `false` for the missing-key policy to resolve.
fn availability(source: &DeltaSource, rec: &TensorRecord) -> Result<bool> {
    let check = |cp: &Arc<Checkpoint>| -> Result<bool> {
        match cp.manifest().get(&rec.name) {
            None => Ok(false),
            Some(r) => {
                if !r.dtype.is_arithmetic() {
                    return Err(Error::Incompatible {
                        context: cp.path().display().to_string(),
                        detail: format!(
                            "tensor {:?} stored as non-arithmetic {} where reference has {}",
                            rec.name, r.dtype, rec.dtype
                        ),
                    });
                }
                if r.shape != rec.shape {
                    return Err(Error::Incompatible {
                        context: cp.path().display().to_string(),
                        detail: format!(
                            "tensor {:?} has shape {:?}, reference has {:?}",
                            rec.name, r.shape, rec.shape
                        ),
                    });
                }
                Ok(true)
            }
        }
    };
    match source {
        DeltaSource::Vector(v) => check(v),
        DeltaSource::ModelPair { minuend, subtrahend } => {
            Ok(check(minuend)? && check(subtrahend)?)
        }
    }
}

/// Flag source keys the reference does not use: error under strict policy,
/// warning otherwise.
fn surplus_check(
    source: &DeltaSource,
    reference: &Arc<Checkpoint>,
    policy: MissingKeyPolicy,
    warnings: &mut Vec<String>,
) -> Result<()> {
    fn preview(names: &[&str]) -> String {
        let head: Vec<_> = names.iter().take(3).map(|n| format!("{n:?}")).collect();
        let mut s = head.join(", ");
        if names.len() > 3 {
            s.push_str(", …");
        }
        s
    }
    for cp in source.checkpoints() {
        if Arc::ptr_eq(cp, reference) {
            continue;
        }
        let extra: Vec<&str> = cp
            .manifest()
            .names()
            .filter(|n| !reference.manifest().contains(n))
            .collect();
        if !extra.is_empty() {
            if policy == MissingKeyPolicy::Strict {
                return Err(Error::Incompatible {
                    context: cp.path().display().to_string(),
                    detail: format!(
                        "{} key(s) absent from the reference model ({})",
                        extra.len(),
                        preview(&extra)
                    ),
                });
            }
            warnings.push(format!(
                "{}: ignoring {} key(s) absent from the reference model ({})",
                cp.path().display(),
                extra.len(),
                preview(&extra)
            ));
        }
        if matches!(source, DeltaSource::Vector(_)) {
            let shadowed: Vec<&str> = cp
                .manifest()
                .records()
                .iter()
                .filter(|r| {
                    r.dtype.is_arithmetic()
                        && reference
                            .manifest()
                            .get(&r.name)
                            .is_some_and(|rr| !rr.dtype.is_arithmetic())
                })
                .map(|r| r.name.as_str())
                .collect();
            if !shadowed.is_empty() {
                warnings.push(format!(
                    "{}: delta entries for non-arithmetic tensors ignored ({})",
                    cp.path().display(),
                    preview(&shadowed)
                ));
            }
        }
    }
    Ok(())
}

enum TensorKind {
    /// Non-arithmetic dtype: raw bytes copied from the reference.
    PassThrough,
    /// No participating terms (or skip policy): reference tensor re-encoded.
    Copy,
    /// Accumulate the listed term indices.
    Merge(Vec<usize>),
}

fn copy_reference_tensor(
    reference: &Checkpoint,
    rec: &TensorRecord,
    out_dtype: DType,
    writer: &mut PlannedWriter,
    allow_nonfinite: bool,
) -> Result<()> {
    let raw = reference.read_raw(&rec.name)?;
    if rec.dtype.is_arithmetic() {
        let vals = widen_to_f32(rec.dtype, &rec.name, &raw)?;
        scan_finite(
            &vals,
            &rec.name,
            &reference.path().display().to_string(),
            allow_nonfinite,
        )?;
        if out_dtype == rec.dtype {
            writer.write_raw(&rec.name, &raw)
        } else {
            writer.write_f32(&rec.name, &vals)
        }
    } else {
        writer.write_raw(&rec.name, &raw)
    }
}

/// Execute a merge plan, streaming tensors to `out_path`.
pub(crate) fn run_plan(
    plan: &MergePlan,
    out_path: &Path,
    opts: &MergeOptions,
) -> Result<MergeReport> {
    let reference = &plan.reference;
    require_role(reference, ROLE_MODEL)?;
    let mut warnings = Vec::new();

    // ω = 0 terms contribute nothing; drop them without reading their data
    // so the endpoint identity is bitwise.
    let active: Vec<&MergeTerm> = plan.terms.iter().filter(|t| t.omega != 0.0).collect();

    if active.iter().any(|t| matches!(t.prep, TermPrep::Ties)) {
        validate_density(plan.ties_density)?;
    }
    for term in &active {
        surplus_check(&term.source, reference, opts.missing_key_policy, &mut warnings)?;
    }

    // Resolve per-tensor participation up front so validation errors fire
    // before any output is created.
    let ref_manifest = reference.manifest();
    let mut kinds = Vec::with_capacity(ref_manifest.len());
    let mut skip_copied: Vec<&str> = Vec::new();
    for rec in ref_manifest.records() {
        if !rec.dtype.is_arithmetic() {
            kinds.push(TensorKind::PassThrough);
            continue;
        }
        let mut parts = Vec::new();
        let mut missing = false;
        for (i, term) in active.iter().enumerate() {
            if availability(&term.source, rec)? {
                parts.push(i);
            } else if opts.missing_key_policy == MissingKeyPolicy::Strict {
                return Err(Error::Incompatible {
                    context: term.source.label(),
                    detail: format!(
                        "tensor {:?} is missing (strict missing-key policy)",
                        rec.name
                    ),
                });
            } else {
                missing = true;
            }
        }
        if missing && opts.missing_key_policy == MissingKeyPolicy::Skip {
            skip_copied.push(&rec.name);
            kinds.push(TensorKind::Copy);
        } else {
            kinds.push(TensorKind::Merge(parts));
        }
    }
    if !skip_copied.is_empty() {
        warnings.push(format!(
            "copied {} tensor(s) verbatim from {} due to missing keys (first: {:?})",
            skip_copied.len(),
            reference.path().display(),
            skip_copied[0]
        ));
    }

    let layout: Vec<(String, DType, Vec<u64>)> = ref_manifest
        .records()
        .iter()
        .map(|rec| {
            let dt = if rec.dtype.is_arithmetic() {
                match opts.output_dtype {
                    DtypePolicy::SameAsGeneral => rec.dtype,
                    DtypePolicy::Fixed(d) => d,
                }
            } else {
                rec.dtype
            };
            (rec.name.clone(), dt, rec.shape.clone())
        })
        .collect();

    let mut metadata = opts.metadata.clone();
    metadata.insert(ROLE_KEY.into(), ROLE_MODEL.into());
    let mut writer = PlannedWriter::create(out_path, &layout, metadata)?;

    // A single full-weight model-pair term over the reference is a rename
    // in weight space: adopt the minuend's bytes directly.
    let copy_from: Option<&Arc<Checkpoint>> =
        if active.len() == 1 && active[0].omega == 1.0 && matches!(active[0].prep, TermPrep::None)
        {
            match &active[0].source {
                DeltaSource::ModelPair { minuend, subtrahend }
                    if Arc::ptr_eq(subtrahend, reference) =>
                {
                    Some(minuend)
                }
                _ => None,
            }
        } else {
            None
        };

    let mut stats = Vec::with_capacity(ref_manifest.len());
    for (i, rec) in ref_manifest.records().iter().enumerate() {
        let out_dtype = layout[i].1;
        match &kinds[i] {
            TensorKind::PassThrough => {
                let raw = reference.read_raw(&rec.name)?;
                writer.write_raw(&rec.name, &raw)?;
                stats.push(TensorDeltaStat {
                    name: rec.name.clone(),
                    max_abs_delta: 0.0,
                });
            }
            TensorKind::Copy => {
                copy_reference_tensor(reference, rec, out_dtype, &mut writer, opts.allow_nonfinite)?;
                stats.push(TensorDeltaStat {
                    name: rec.name.clone(),
                    max_abs_delta: 0.0,
                });
            }
            TensorKind::Merge(parts) if parts.is_empty() => {
                copy_reference_tensor(reference, rec, out_dtype, &mut writer, opts.allow_nonfinite)?;
                stats.push(TensorDeltaStat {
                    name: rec.name.clone(),
                    max_abs_delta: 0.0,
                });
            }
            TensorKind::Merge(parts) => {
                let ref_vals = {
                    let raw = reference.read_raw(&rec.name)?;
                    widen_to_f32(rec.dtype, &rec.name, &raw)?
                };
                scan_finite(
                    &ref_vals,
                    &rec.name,
                    &reference.path().display().to_string(),
                    opts.allow_nonfinite,
                )?;

                if let Some(m) = copy_from {
                    // `parts` is exactly [0] here: the sole term participates.
                    let m_rec = m.manifest().get(&rec.name).expect("availability checked");
                    let m_raw = m.read_raw(&rec.name)?;
                    let m_vals = widen_to_f32(m_rec.dtype, &rec.name, &m_raw)?;
                    scan_finite(
                        &m_vals,
                        &rec.name,
                        &m.path().display().to_string(),
                        opts.allow_nonfinite,
                    )?;
                    let delta = max_abs_diff(&m_vals, &ref_vals);
                    if m_rec.dtype == out_dtype {
                        writer.write_raw(&rec.name, &m_raw)?;
                    } else {
                        writer.write_f32(&rec.name, &m_vals)?;
                    }
                    stats.push(TensorDeltaStat {
                        name: rec.name.clone(),
                        max_abs_delta: delta,
                    });
                    continue;
                }

                let mut acc = ref_vals.clone();
                let mut ties_done = false;
                for &t in parts {
                    let term = active[t];
                    match &term.prep {
                        TermPrep::None => {
                            let d =
                                fetch_delta(&term.source, &rec.name, opts.allow_nonfinite)?;
                            axpy_into(&mut acc, term.omega as f32, &d);
                        }
                        TermPrep::Dare(cfg) => {
                            let mut d =
                                fetch_delta(&term.source, &rec.name, opts.allow_nonfinite)?;
                            scale_in_place(&mut d, term.omega as f32);
                            dare_in_place(&mut d, cfg, &rec.name)?;
                            axpy_into(&mut acc, 1.0, &d);
                        }
                        TermPrep::Ties => {
                            // All TIES terms merge jointly at the position
                            // of the first one.
                            if ties_done {
                                continue;
                            }
                            ties_done = true;
                            let mut bufs = Vec::new();
                            for &u in parts {
                                let t2 = active[u];
                                if matches!(t2.prep, TermPrep::Ties) {
                                    let mut d = fetch_delta(
                                        &t2.source,
                                        &rec.name,
                                        opts.allow_nonfinite,
                                    )?;
                                    scale_in_place(&mut d, t2.omega as f32);
                                    bufs.push(d);
                                }
                            }
                            let merged = ties_merge_buffers(&mut bufs, plan.ties_density)?;
                            drop(bufs);
                            axpy_into(&mut acc, 1.0, &merged);
                        }
                    }
                }

                if !opts.allow_nonfinite {
                    let count = count_nonfinite(&acc);
                    if count > 0 {
                        return Err(Error::NonFinite {
                            name: format!("{} in merge output", rec.name),
                            count,
                        });
                    }
                }
                let delta = max_abs_diff(&acc, &ref_vals);
                drop(ref_vals);
                writer.write_f32(&rec.name, &acc)?;
                stats.push(TensorDeltaStat {
                    name: rec.name.clone(),
                    max_abs_delta: delta,
                });
            }
        }
    }

    let manifest = writer.finish()?;
    Ok(MergeReport {
        output: out_path.into(),
        manifest,
        tensors: stats,
        warnings,
    })
}

/// Subtract `base` from `model` tensorwise, storing the delta as an F32
/// task-vector container at `out_path`.
///
/// Non-arithmetic tensors are omitted from the delta. Values are not
/// finiteness-checked here — a merge consuming the vector will be.
pub fn compute_task_vector(
    model: &Checkpoint,
    base: &Checkpoint,
    out_path: &Path,
    policy: MissingKeyPolicy,
) -> Result<(TaskVector, Vec<String>)> {
    require_role(model, ROLE_MODEL)?;
    require_role(base, ROLE_MODEL)?;
    let mut warnings = Vec::new();

    let mut layout: Vec<(String, DType, Vec<u64>)> = Vec::new();
    let mut base_missing: Vec<String> = Vec::new();
    let mut omitted: Vec<&str> = Vec::new();
    for rec in model.manifest().records() {
        if !rec.dtype.is_arithmetic() {
            continue;
        }
        match base.manifest().get(&rec.name) {
            Some(b) => {
                if !b.dtype.is_arithmetic() {
                    return Err(Error::Incompatible {
                        context: base.path().display().to_string(),
                        detail: format!(
                            "tensor {:?} stored as non-arithmetic {} where model has {}",
                            rec.name, b.dtype, rec.dtype
                        ),
                    });
                }
                if b.shape != rec.shape {
                    return Err(Error::Incompatible {
                        context: base.path().display().to_string(),
                        detail: format!(
                            "tensor {:?} has shape {:?}, model has {:?}",
                            rec.name, b.shape, rec.shape
                        ),
                    });
                }
                layout.push((rec.name.clone(), DType::F32, rec.shape.clone()));
            }
            None => match policy {
                MissingKeyPolicy::Strict => {
                    return Err(Error::Incompatible {
                        context: base.path().display().to_string(),
                        detail: format!(
                            "tensor {:?} is missing (strict missing-key policy)",
                            rec.name
                        ),
                    });
                }
                MissingKeyPolicy::Skip => omitted.push(&rec.name),
                MissingKeyPolicy::Zeros => {
                    layout.push((rec.name.clone(), DType::F32, rec.shape.clone()));
                    base_missing.push(rec.name.clone());
                }
            },
        }
    }
    if !omitted.is_empty() {
        warnings.push(format!(
            "omitted {} tensor(s) missing from the base (first: {:?})",
            omitted.len(),
            omitted[0]
        ));
    }
    let extra: Vec<&str> = base
        .manifest()
        .names()
        .filter(|n| !model.manifest().contains(n))
        .collect();
    if !extra.is_empty() {
        if policy == MissingKeyPolicy::Strict {
            return Err(Error::Incompatible {
                context: base.path().display().to_string(),
                detail: format!(
                    "{} key(s) absent from the model (first: {:?})",
                    extra.len(),
                    extra[0]
                ),
            });
        }
        warnings.push(format!(
            "{}: ignoring {} key(s) absent from the model (first: {:?})",
            base.path().display(),
            extra.len(),
            extra[0]
        ));
    }

    let mut metadata = BTreeMap::new();
    metadata.insert(ROLE_KEY.into(), crate::container::ROLE_TASK_VECTOR.to_string());
    metadata.insert(MINUEND_KEY.into(), model.path().display().to_string());
    metadata.insert(SUBTRAHEND_KEY.into(), base.path().display().to_string());

    let mut writer = PlannedWriter::create(out_path, &layout, metadata)?;
    for (name, _, _) in &layout {
        let mut vals = model.read_f32(name)?;
        if !base_missing.contains(name) {
            let b = base.read_f32(name)?;
            sub_into(&mut vals, &b);
        }
        writer.write_f32(name, &vals)?;
    }
    writer.finish()?;
    Ok((TaskVector::open(out_path)?, warnings))
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

/// `out = general + Σ_i ω_i·τ_i`, accumulated in F32.
///
/// Skills are sorted canonically by (source path, ω) before accumulation,
/// so declaration order never changes the output bytes.
pub fn apply_task_arithmetic(
    general: &Arc<Checkpoint>,
    skills: &[WeightedVector],
    out_path: &Path,
    opts: &MergeOptions,
) -> Result<MergeReport> {
    let mut warnings = Vec::new();
    for s in skills {
        if let Some(w) = validate_omega(s.omega)? {
            warnings.push(format!(
                "skill {}: {w}",
                s.vector.checkpoint().path().display()
            ));
        }
    }
    let mut ordered: Vec<&WeightedVector> = skills.iter().collect();
    ordered.sort_by(|a, b| {
        path_str(a.vector.checkpoint().path())
            .cmp(&path_str(b.vector.checkpoint().path()))
            .then(a.omega.total_cmp(&b.omega))
    });

    let skills_json = serde_json::to_string(
        &ordered
            .iter()
            .map(|s| {
                serde_json::json!({
                    "source": path_str(s.vector.checkpoint().path()),
                    "omega": s.omega,
                })
            })
            .collect::<Vec<_>>(),
    )
    .expect("json");
    let mut opts = opts.clone();
    opts.metadata
        .insert("merge.method".into(), "task_arithmetic".into());
    opts.metadata.insert("merge.skills".into(), skills_json);

    let plan = MergePlan {
        reference: general.clone(),
        terms: ordered
            .iter()
            .map(|s| MergeTerm {
                source: DeltaSource::Vector(s.vector.checkpoint().clone()),
                omega: s.omega,
                prep: TermPrep::None,
            })
            .collect(),
        ties_density: 0.0,
    };
    let mut report = run_plan(&plan, out_path, &opts)?;
    warnings.append(&mut report.warnings);
    report.warnings = warnings;
    Ok(report)
}

/// `out = pre + ω·τ_D + (1−ω)·τ_G`, accumulated in that order.
pub fn linear_interpolate(
    pre_model: &Arc<Checkpoint>,
    skill: &TaskVector,
    general_vec: &TaskVector,
    omega: f64,
    out_path: &Path,
    opts: &MergeOptions,
) -> Result<MergeReport> {
    let mut warnings = Vec::new();
    if let Some(w) = validate_omega(omega)? {
        warnings.push(w);
    }
    let mut opts = opts.clone();
    opts.metadata
        .insert("merge.method".into(), "linear_interpolation".into());
    opts.metadata.insert(
        "merge.omega".into(),
        serde_json::to_string(&omega).expect("json"),
    );
    opts.metadata.insert(
        "merge.skill_vector".into(),
        path_str(skill.checkpoint().path()),
    );
    opts.metadata.insert(
        "merge.general_vector".into(),
        path_str(general_vec.checkpoint().path()),
    );

    let plan = MergePlan {
        reference: pre_model.clone(),
        terms: vec![
            MergeTerm {
                source: DeltaSource::Vector(skill.checkpoint().clone()),
                omega,
                prep: TermPrep::None,
            },
            MergeTerm {
                source: DeltaSource::Vector(general_vec.checkpoint().clone()),
                omega: 1.0 - omega,
                prep: TermPrep::None,
            },
        ],
        ties_density: 0.0,
    };
    let mut report = run_plan(&plan, out_path, &opts)?;
    warnings.append(&mut report.warnings);
    report.warnings = warnings;
    Ok(report)
}

/// `out = general + ω·(cft − general)`; needs no pretrained checkpoint.
pub fn wise_ft(
    general: &Arc<Checkpoint>,
    cft_model: &Arc<Checkpoint>,
    omega: f64,
    out_path: &Path,
    opts: &MergeOptions,
) -> Result<MergeReport> {
    require_role(cft_model, ROLE_MODEL)?;
    let mut warnings = Vec::new();
    if let Some(w) = validate_omega(omega)? {
        warnings.push(w);
    }
    let mut opts = opts.clone();
    opts.metadata.insert("merge.method".into(), "wise_ft".into());
    opts.metadata.insert(
        "merge.omega".into(),
        serde_json::to_string(&omega).expect("json"),
    );
    opts.metadata
        .insert("merge.cft_model".into(), path_str(cft_model.path()));

    let plan = MergePlan {
        reference: general.clone(),
        terms: vec![MergeTerm {
            source: DeltaSource::ModelPair {
                minuend: cft_model.clone(),
                subtrahend: general.clone(),
            },
            omega,
            prep: TermPrep::None,
        }],
        ties_density: 0.0,
    };
    let mut report = run_plan(&plan, out_path, &opts)?;
    warnings.append(&mut report.warnings);
    report.warnings = warnings;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::container::{write_checkpoint, TensorValues, ROLE_TASK_VECTOR};
    use crate::rng::CounterRng;
    use std::collections::BTreeMap;

    fn meta(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }

    fn write_model(path: &Path, tensors: &[(&str, DType, Vec<u64>, Vec<f32>)]) {
        let entries: Vec<_> = tensors
            .iter()
            .map(|(n, dt, sh, v)| (n.to_string(), *dt, sh.clone(), TensorValues::F32(v.clone())))
            .collect();
        write_checkpoint(path, entries, meta(&[(ROLE_KEY, ROLE_MODEL)])).unwrap();
    }

    fn write_vector(path: &Path, tensors: &[(&str, Vec<u64>, Vec<f32>)]) {
        let entries: Vec<_> = tensors
            .iter()
            .map(|(n, sh, v)| {
                (n.to_string(), DType::F32, sh.clone(), TensorValues::F32(v.clone()))
            })
            .collect();
        write_checkpoint(path, entries, meta(&[(ROLE_KEY, ROLE_TASK_VECTOR)])).unwrap();
    }

    fn open(path: &Path) -> Arc<Checkpoint> {
        Arc::new(Checkpoint::open(path).unwrap())
    }

    #[test]
    fn task_vector_role_guard() {
        let dir = tempfile::tempdir().unwrap();
        let model = dir.path().join("m.st");
        write_model(&model, &[("w", DType::F32, vec![1], vec![1.0])]);
        let err = TaskVector::open(&model).unwrap_err();
        assert!(matches!(err, Error::RoleMismatch { .. }), "{err}");
    }

    #[test]
    fn general_role_guard() {
        let dir = tempfile::tempdir().unwrap();
        let vec_path = dir.path().join("v.st");
        write_vector(&vec_path, &[("w", vec![1], vec![1.0])]);
        let err = apply_task_arithmetic(
            &open(&vec_path),
            &[],
            &dir.path().join("out.st"),
            &MergeOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::RoleMismatch { .. }), "{err}");
    }

    #[test]
    fn diff_elementwise() {
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join("m.st");
        let b = dir.path().join("b.st");
        write_model(&m, &[("w", DType::F32, vec![2], vec![3.0, 1.0])]);
        write_model(&b, &[("w", DType::F32, vec![2], vec![1.0, 2.0])]);
        let out = dir.path().join("tau.st");
        let (tv, warnings) = compute_task_vector(
            &Checkpoint::open(&m).unwrap(),
            &Checkpoint::open(&b).unwrap(),
            &out,
            MissingKeyPolicy::Strict,
        )
        .unwrap();
        assert!(warnings.is_empty());
        assert_eq!(tv.checkpoint().read_f32("w").unwrap(), [2.0, -1.0]);
        assert_eq!(tv.checkpoint().manifest().role(), ROLE_TASK_VECTOR);
        assert_eq!(tv.minuend_id(), Some(m.display().to_string().as_str()));
    }

    #[test]
    fn diff_of_identical_models_is_zero() {
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join("m.st");
        write_model(
            &m,
            &[("w", DType::Bf16, vec![3], vec![0.5, -0.25, 1.0])],
        );
        let out = dir.path().join("tau.st");
        let cp = Checkpoint::open(&m).unwrap();
        let (tv, _) =
            compute_task_vector(&cp, &cp, &out, MissingKeyPolicy::Strict).unwrap();
        assert_eq!(tv.checkpoint().read_f32("w").unwrap(), [0.0, 0.0, 0.0]);
        // Deltas are stored in F32 regardless of the model dtype.
        assert_eq!(
            tv.checkpoint().manifest().get("w").unwrap().dtype,
            DType::F32
        );
    }

    #[test]
    fn diff_matches_scalar_loop_oracle() {
        let dir = tempfile::tempdir().unwrap();
        let rng = CounterRng::new(7, "diff-oracle");
        let a: Vec<f32> = (0..64).map(|i| rng.uniform(i) as f32 * 2.0 - 1.0).collect();
        let b: Vec<f32> = (64..128).map(|i| rng.uniform(i) as f32 * 2.0 - 1.0).collect();
        let m = dir.path().join("m.st");
        let bb = dir.path().join("b.st");
        write_model(&m, &[("w", DType::F32, vec![64], a.clone())]);
        write_model(&bb, &[("w", DType::F32, vec![64], b.clone())]);
        let (tv, _) = compute_task_vector(
            &Checkpoint::open(&m).unwrap(),
            &Checkpoint::open(&bb).unwrap(),
            &dir.path().join("tau.st"),
            MissingKeyPolicy::Strict,
        )
        .unwrap();
        let got = tv.checkpoint().read_f32("w").unwrap();
        for i in 0..64 {
            let want = a[i] - b[i];
            assert_eq!(got[i].to_bits(), want.to_bits(), "element {i}");
        }
    }

    #[test]
    fn diff_omits_non_arithmetic_tensors() {
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join("m.st");
        write_checkpoint(
            &m,
            vec![
                ("w".to_string(), DType::F32, vec![1], TensorValues::F32(vec![2.0])),
                ("steps".to_string(), DType::I64, vec![1], TensorValues::Raw(9i64.to_le_bytes().to_vec())),
            ],
            meta(&[(ROLE_KEY, ROLE_MODEL)]),
        )
        .unwrap();
        let cp = Checkpoint::open(&m).unwrap();
        let (tv, _) = compute_task_vector(
            &cp,
            &cp,
            &dir.path().join("tau.st"),
            MissingKeyPolicy::Strict,
        )
        .unwrap();
        assert!(tv.checkpoint().manifest().get("steps").is_none());
        assert!(tv.checkpoint().manifest().get("w").is_some());
    }

    #[test]
    fn ta_scalar_example() {
        let dir = tempfile::tempdir().unwrap();
        let g = dir.path().join("g.st");
        let v = dir.path().join("v.st");
        write_model(&g, &[("w", DType::F32, vec![2], vec![0.0, 0.0])]);
        write_vector(&v, &[("w", vec![2], vec![2.0, -1.0])]);
        let out = dir.path().join("out.st");
        let report = apply_task_arithmetic(
            &open(&g),
            &[WeightedVector {
                vector: TaskVector::open(&v).unwrap(),
                omega: 0.5,
            }],
            &out,
            &MergeOptions::default(),
        )
        .unwrap();
        let merged = Checkpoint::open(&out).unwrap();
        assert_eq!(merged.read_f32("w").unwrap(), [1.0, -0.5]);
        assert_eq!(report.tensors.len(), 1);
        assert_eq!(report.tensors[0].max_abs_delta, 1.0);
        assert_eq!(merged.manifest().role(), ROLE_MODEL);
        assert_eq!(
            merged.manifest().metadata().get("merge.method").unwrap(),
            "task_arithmetic"
        );
    }

    #[test]
    fn ta_omega_zero_is_bitwise_general() {
        let dir = tempfile::tempdir().unwrap();
        let g = dir.path().join("g.st");
        let v = dir.path().join("v.st");
        write_checkpoint(
            &g,
            vec![
                (
                    "w".to_string(),
                    DType::Bf16,
                    vec![3],
                    TensorValues::F32(vec![0.33, -1.7, 2.5]),
                ),
                (
                    "idx".to_string(),
                    DType::I64,
                    vec![2],
                    TensorValues::Raw([1i64, -3].iter().flat_map(|v| v.to_le_bytes()).collect()),
                ),
            ],
            meta(&[(ROLE_KEY, ROLE_MODEL)]),
        )
        .unwrap();
        write_vector(&v, &[("w", vec![3], vec![5.0, 5.0, 5.0])]);
        let out = dir.path().join("out.st");
        apply_task_arithmetic(
            &open(&g),
            &[WeightedVector {
                vector: TaskVector::open(&v).unwrap(),
                omega: 0.0,
            }],
            &out,
            &MergeOptions::default(),
        )
        .unwrap();
        let general = Checkpoint::open(&g).unwrap();
        let merged = Checkpoint::open(&out).unwrap();
        for name in ["w", "idx"] {
            assert_eq!(
                general.read_raw(name).unwrap(),
                merged.read_raw(name).unwrap(),
                "tensor {name}"
            );
        }
    }

    #[test]
    fn ta_three_skills_match_scalar_oracle() {
        let dir = tempfile::tempdir().unwrap();
        let n = 64usize;
        let rng = CounterRng::new(11, "ta-oracle");
        let gen_vals: Vec<f32> = (0..n as u64).map(|i| rng.uniform(i) as f32).collect();
        let taus: Vec<Vec<f32>> = (1..=3u64)
            .map(|k| {
                (0..n as u64)
                    .map(|i| CounterRng::new(11 + k, "tau").uniform(i) as f32 - 0.5)
                    .collect()
            })
            .collect();
        let omegas = [0.3f64, 0.5, 0.2];

        let g = dir.path().join("g.st");
        write_model(&g, &[("w", DType::F32, vec![n as u64], gen_vals.clone())]);
        // Paths sort "a" < "b" < "c", matching declaration order, so the
        // oracle below accumulates in the same canonical order.
        let mut skills = Vec::new();
        for (k, tau) in taus.iter().enumerate() {
            let p = dir.path().join(format!("{}.st", ["a", "b", "c"][k]));
            write_vector(&p, &[("w", vec![n as u64], tau.clone())]);
            skills.push(WeightedVector {
                vector: TaskVector::open(&p).unwrap(),
                omega: omegas[k],
            });
        }
        let out = dir.path().join("out.st");
        apply_task_arithmetic(&open(&g), &skills, &out, &MergeOptions::default()).unwrap();
        let got = Checkpoint::open(&out).unwrap().read_f32("w").unwrap();

        for i in 0..n {
            let mut want = gen_vals[i];
            for (k, tau) in taus.iter().enumerate() {
                want += omegas[k] as f32 * tau[i];
            }
            assert_eq!(got[i].to_bits(), want.to_bits(), "element {i}");
        }
    }

    #[test]
    fn ta_declaration_order_does_not_change_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let g = dir.path().join("g.st");
        write_model(&g, &[("w", DType::F32, vec![2], vec![0.1, 0.9])]);
        let pa = dir.path().join("a.st");
        let pb = dir.path().join("b.st");
        write_vector(&pa, &[("w", vec![2], vec![0.7, 0.3])]);
        write_vector(&pb, &[("w", vec![2], vec![-0.2, 0.6])]);
        let skills = |order: [&Path; 2], omegas: [f64; 2]| {
            vec![
                WeightedVector {
                    vector: TaskVector::open(order[0]).unwrap(),
                    omega: omegas[0],
                },
                WeightedVector {
                    vector: TaskVector::open(order[1]).unwrap(),
                    omega: omegas[1],
                },
            ]
        };
        let o1 = dir.path().join("o1.st");
        let o2 = dir.path().join("o2.st");
        apply_task_arithmetic(
            &open(&g),
            &skills([&pa, &pb], [0.3, 0.9]),
            &o1,
            &MergeOptions::default(),
        )
        .unwrap();
        apply_task_arithmetic(
            &open(&g),
            &skills([&pb, &pa], [0.9, 0.3]),
            &o2,
            &MergeOptions::default(),
        )
        .unwrap();
        assert_eq!(std::fs::read(&o1).unwrap(), std::fs::read(&o2).unwrap());
    }

    #[test]
    fn li_endpoints_exact() {
        let dir = tempfile::tempdir().unwrap();
        let pre = dir.path().join("pre.st");
        let d = dir.path().join("d.st");
        let g = dir.path().join("g.st");
        // Dyadic values: differences and sums are exact in F32.
        write_model(&pre, &[("w", DType::F32, vec![3], vec![0.25, -0.5, 1.0])]);
        write_model(&d, &[("w", DType::F32, vec![3], vec![0.75, -0.25, 0.5])]);
        write_model(&g, &[("w", DType::F32, vec![3], vec![0.5, 0.125, -1.5])]);
        let pre_cp = open(&pre);
        let (tau_d, _) = compute_task_vector(
            &Checkpoint::open(&d).unwrap(),
            &pre_cp,
            &dir.path().join("tau_d.st"),
            MissingKeyPolicy::Strict,
        )
        .unwrap();
        let (tau_g, _) = compute_task_vector(
            &Checkpoint::open(&g).unwrap(),
            &pre_cp,
            &dir.path().join("tau_g.st"),
            MissingKeyPolicy::Strict,
        )
        .unwrap();

        let out0 = dir.path().join("w0.st");
        linear_interpolate(&pre_cp, &tau_d, &tau_g, 0.0, &out0, &MergeOptions::default())
            .unwrap();
        let got0 = Checkpoint::open(&out0).unwrap().read_f32("w").unwrap();
        let want0 = Checkpoint::open(&g).unwrap().read_f32("w").unwrap();
        assert_eq!(got0, want0);

        let out1 = dir.path().join("w1.st");
        linear_interpolate(&pre_cp, &tau_d, &tau_g, 1.0, &out1, &MergeOptions::default())
            .unwrap();
        let got1 = Checkpoint::open(&out1).unwrap().read_f32("w").unwrap();
        let want1 = Checkpoint::open(&d).unwrap().read_f32("w").unwrap();
        assert_eq!(got1, want1);
    }

    #[test]
    fn li_midpoint_matches_average_oracle() {
        let dir = tempfile::tempdir().unwrap();
        let pre = dir.path().join("pre.st");
        let d = dir.path().join("d.st");
        let g = dir.path().join("g.st");
        write_model(&pre, &[("w", DType::F32, vec![2], vec![0.5, -0.75])]);
        write_model(&d, &[("w", DType::F32, vec![2], vec![1.0, 0.25])]);
        write_model(&g, &[("w", DType::F32, vec![2], vec![-0.5, 0.5])]);
        let pre_cp = open(&pre);
        let (tau_d, _) = compute_task_vector(
            &Checkpoint::open(&d).unwrap(),
            &pre_cp,
            &dir.path().join("td.st"),
            MissingKeyPolicy::Strict,
        )
        .unwrap();
        let (tau_g, _) = compute_task_vector(
            &Checkpoint::open(&g).unwrap(),
            &pre_cp,
            &dir.path().join("tg.st"),
            MissingKeyPolicy::Strict,
        )
        .unwrap();
        let out = dir.path().join("mid.st");
        linear_interpolate(&pre_cp, &tau_d, &tau_g, 0.5, &out, &MergeOptions::default())
            .unwrap();
        let got = Checkpoint::open(&out).unwrap().read_f32("w").unwrap();
        // On dyadic inputs the midpoint equals 0.5·(θ_D + θ_G) exactly.
        assert_eq!(got, [0.5 * (1.0 + -0.5), 0.5 * (0.25 + 0.5)]);
    }

    #[test]
    fn wise_scalar_example() {
        let dir = tempfile::tempdir().unwrap();
        let g = dir.path().join("g.st");
        let c = dir.path().join("c.st");
        write_model(&g, &[("w", DType::F32, vec![1], vec![4.0])]);
        write_model(&c, &[("w", DType::F32, vec![1], vec![8.0])]);
        let out = dir.path().join("out.st");
        wise_ft(&open(&g), &open(&c), 0.25, &out, &MergeOptions::default()).unwrap();
        assert_eq!(Checkpoint::open(&out).unwrap().read_f32("w").unwrap(), [5.0]);
    }

    #[test]
    fn wise_endpoints_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let g = dir.path().join("g.st");
        let c = dir.path().join("c.st");
        write_model(
            &g,
            &[("w", DType::Bf16, vec![3], vec![0.37, -2.2, 0.001])],
        );
        write_model(
            &c,
            &[("w", DType::Bf16, vec![3], vec![1.11, -0.3, 5.5])],
        );
        let general = open(&g);
        let cft = open(&c);
        let out1 = dir.path().join("w1.st");
        wise_ft(&general, &cft, 1.0, &out1, &MergeOptions::default()).unwrap();
        assert_eq!(
            Checkpoint::open(&out1).unwrap().read_raw("w").unwrap(),
            cft.read_raw("w").unwrap()
        );
        let out0 = dir.path().join("w0.st");
        wise_ft(&general, &cft, 0.0, &out0, &MergeOptions::default()).unwrap();
        assert_eq!(
            Checkpoint::open(&out0).unwrap().read_raw("w").unwrap(),
            general.read_raw("w").unwrap()
        );
    }

    #[test]
    fn wise_equals_ta_on_constructed_cft() {
        let dir = tempfile::tempdir().unwrap();
        let n = 512u64;
        let rng = CounterRng::new(21, "equiv");
        // Dyadic grid values: θ_CFT = θ_G + τ is exact, so both methods
        // compute fl(θ_G + fl(ω·τ)) and agree bitwise.
        let g_vals: Vec<f32> = (0..n)
            .map(|i| (rng.value(i) % 131_071) as f32 / 65536.0 - 1.0)
            .collect();
        let tau: Vec<f32> = (0..n)
            .map(|i| (rng.value(i + n) % 131_071) as f32 / 65536.0 - 1.0)
            .collect();
        let cft_vals: Vec<f32> = g_vals.iter().zip(&tau).map(|(a, b)| a + b).collect();

        let g = dir.path().join("g.st");
        let c = dir.path().join("c.st");
        let v = dir.path().join("v.st");
        write_model(&g, &[("w", DType::F32, vec![n], g_vals)]);
        write_model(&c, &[("w", DType::F32, vec![n], cft_vals)]);
        write_vector(&v, &[("w", vec![n], tau)]);

        let out_w = dir.path().join("wise.st");
        let out_t = dir.path().join("ta.st");
        wise_ft(&open(&g), &open(&c), 0.3, &out_w, &MergeOptions::default()).unwrap();
        apply_task_arithmetic(
            &open(&g),
            &[WeightedVector {
                vector: TaskVector::open(&v).unwrap(),
                omega: 0.3,
            }],
            &out_t,
            &MergeOptions::default(),
        )
        .unwrap();
        let a = Checkpoint::open(&out_w).unwrap().read_f32("w").unwrap();
        let b = Checkpoint::open(&out_t).unwrap().read_f32("w").unwrap();
        for i in 0..n as usize {
            assert_eq!(a[i].to_bits(), b[i].to_bits(), "element {i}");
        }
    }

    #[test]
    fn missing_key_policies() {
        let dir = tempfile::tempdir().unwrap();
        let g = dir.path().join("g.st");
        write_model(
            &g,
            &[
                ("a", DType::F32, vec![1], vec![1.0]),
                ("b", DType::F32, vec![1], vec![2.0]),
            ],
        );
        let v = dir.path().join("v.st");
        write_vector(&v, &[("a", vec![1], vec![10.0])]);
        let general = open(&g);
        let skill = || {
            vec![WeightedVector {
                vector: TaskVector::open(&v).unwrap(),
                omega: 1.0,
            }]
        };

        let err = apply_task_arithmetic(
            &general,
            &skill(),
            &dir.path().join("s.st"),
            &MergeOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Incompatible { .. }), "{err}");

        let out = dir.path().join("skip.st");
        let report = apply_task_arithmetic(
            &general,
            &skill(),
            &out,
            &MergeOptions {
                missing_key_policy: MissingKeyPolicy::Skip,
                ..Default::default()
            },
        )
        .unwrap();
        let merged = Checkpoint::open(&out).unwrap();
        assert_eq!(merged.read_f32("a").unwrap(), [11.0]);
        assert_eq!(merged.read_f32("b").unwrap(), [2.0]);
        assert!(report.warnings.iter().any(|w| w.contains("copied")), "{:?}", report.warnings);

        let out = dir.path().join("zeros.st");
        apply_task_arithmetic(
            &general,
            &skill(),
            &out,
            &MergeOptions {
                missing_key_policy: MissingKeyPolicy::Zeros,
                ..Default::default()
            },
        )
        .unwrap();
        let merged = Checkpoint::open(&out).unwrap();
        assert_eq!(merged.read_f32("a").unwrap(), [11.0]);
        assert_eq!(merged.read_f32("b").unwrap(), [2.0]);
    }

    #[test]
    fn surplus_vector_keys() {
        let dir = tempfile::tempdir().unwrap();
        let g = dir.path().join("g.st");
        write_model(&g, &[("a", DType::F32, vec![1], vec![1.0])]);
        let v = dir.path().join("v.st");
        write_vector(
            &v,
            &[("a", vec![1], vec![1.0]), ("extra", vec![1], vec![1.0])],
        );
        let skill = || {
            vec![WeightedVector {
                vector: TaskVector::open(&v).unwrap(),
                omega: 0.5,
            }]
        };
        let err = apply_task_arithmetic(
            &open(&g),
            &skill(),
            &dir.path().join("o.st"),
            &MergeOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Incompatible { .. }), "{err}");

        let report = apply_task_arithmetic(
            &open(&g),
            &skill(),
            &dir.path().join("o2.st"),
            &MergeOptions {
                missing_key_policy: MissingKeyPolicy::Zeros,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(
            report.warnings.iter().any(|w| w.contains("absent from the reference")),
            "{:?}",
            report.warnings
        );
    }

    #[test]
    fn shape_conflict_is_error_under_every_policy() {
        let dir = tempfile::tempdir().unwrap();
        let g = dir.path().join("g.st");
        write_model(&g, &[("a", DType::F32, vec![2], vec![1.0, 2.0])]);
        let v = dir.path().join("v.st");
        write_vector(&v, &[("a", vec![1], vec![1.0])]);
        for policy in [
            MissingKeyPolicy::Strict,
            MissingKeyPolicy::Skip,
            MissingKeyPolicy::Zeros,
        ] {
            let err = apply_task_arithmetic(
                &open(&g),
                &[WeightedVector {
                    vector: TaskVector::open(&v).unwrap(),
                    omega: 0.5,
                }],
                &dir.path().join("o.st"),
                &MergeOptions {
                    missing_key_policy: policy,
                    ..Default::default()
                },
            )
            .unwrap_err();
            assert!(matches!(err, Error::Incompatible { .. }), "{policy:?}: {err}");
        }
    }

    #[test]
    fn nonfinite_input_aborts_unless_allowed() {
        let dir = tempfile::tempdir().unwrap();
        let g = dir.path().join("g.st");
        write_model(&g, &[("w", DType::F32, vec![2], vec![1.0, 2.0])]);
        let v = dir.path().join("v.st");
        write_vector(&v, &[("w", vec![2], vec![f32::NAN, 1.0])]);
        let skill = || {
            vec![WeightedVector {
                vector: TaskVector::open(&v).unwrap(),
                omega: 0.5,
            }]
        };
        let err = apply_task_arithmetic(
            &open(&g),
            &skill(),
            &dir.path().join("o.st"),
            &MergeOptions::default(),
        )
        .unwrap_err();
        assert!(
            matches!(err, Error::NonFinite { count: 1, .. }),
            "{err}"
        );
        assert_eq!(err.category(), crate::error::ErrorCategory::Numeric);

        let out = dir.path().join("o2.st");
        apply_task_arithmetic(
            &open(&g),
            &skill(),
            &out,
            &MergeOptions {
                allow_nonfinite: true,
                ..Default::default()
            },
        )
        .unwrap();
        let got = Checkpoint::open(&out).unwrap().read_f32("w").unwrap();
        assert!(got[0].is_nan());
    }

    #[test]
    fn fixed_output_dtype_applies_to_floats_only() {
        let dir = tempfile::tempdir().unwrap();
        let g = dir.path().join("g.st");
        write_checkpoint(
            &g,
            vec![
                ("w".to_string(), DType::F32, vec![2], TensorValues::F32(vec![0.5, 1.5])),
                ("n".to_string(), DType::I64, vec![1], TensorValues::Raw(3i64.to_le_bytes().to_vec())),
            ],
            meta(&[(ROLE_KEY, ROLE_MODEL)]),
        )
        .unwrap();
        let out = dir.path().join("o.st");
        apply_task_arithmetic(
            &open(&g),
            &[],
            &out,
            &MergeOptions {
                output_dtype: DtypePolicy::Fixed(DType::F16),
                ..Default::default()
            },
        )
        .unwrap();
        let merged = Checkpoint::open(&out).unwrap();
        assert_eq!(merged.manifest().get("w").unwrap().dtype, DType::F16);
        assert_eq!(merged.manifest().get("n").unwrap().dtype, DType::I64);
        assert_eq!(merged.read_f32("w").unwrap(), [0.5, 1.5]);
    }

    #[test]
    fn empty_skill_list_reencodes_general() {
        let dir = tempfile::tempdir().unwrap();
        let g = dir.path().join("g.st");
        write_model(&g, &[("w", DType::Bf16, vec![2], vec![0.33, -1.25])]);
        let out = dir.path().join("o.st");
        apply_task_arithmetic(&open(&g), &[], &out, &MergeOptions::default()).unwrap();
        assert_eq!(
            Checkpoint::open(&out).unwrap().read_raw("w").unwrap(),
            Checkpoint::open(&g).unwrap().read_raw("w").unwrap()
        );
    }

    #[test]
    fn non_arithmetic_tensors_come_from_general() {
        let dir = tempfile::tempdir().unwrap();
        let g = dir.path().join("g.st");
        let c = dir.path().join("c.st");
        let mk = |path: &Path, idx: i64| {
            write_checkpoint(
                path,
                vec![
                    ("w".to_string(), DType::F32, vec![1], TensorValues::F32(vec![1.0])),
                    (
                        "idx".to_string(),
                        DType::I64,
                        vec![1],
                        TensorValues::Raw(idx.to_le_bytes().to_vec()),
                    ),
                ],
                meta(&[(ROLE_KEY, ROLE_MODEL)]),
            )
            .unwrap();
        };
        mk(&g, 7);
        mk(&c, 99);
        let out = dir.path().join("o.st");
        wise_ft(&open(&g), &open(&c), 1.0, &out, &MergeOptions::default()).unwrap();
        let merged = Checkpoint::open(&out).unwrap();
        assert_eq!(merged.read_raw("idx").unwrap(), 7i64.to_le_bytes());
    }
}
