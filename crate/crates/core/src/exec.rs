//! Recipe execution: open the declared checkpoints, build a merge plan,
//! run it, and report what was actually done.
//!
//! The run report is the auditable record of a merge — every heuristic
//! weight resolved to a number with its provenance, preprocessor
//! configurations, per-tensor max |Δ| against the general model, and wall
//! time. The CLI serializes it as a sidecar JSON next to the output.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;

use crate::container::Checkpoint;
use crate::error::{Error, Result};
use crate::merge::{
    require_role, run_plan, DeltaSource, MergeOptions, MergePlan, MergeTerm, TaskVector,
    TensorDeltaStat, TermPrep,
};
use crate::recipe::{MergeMethod, MergeRecipe, PreprocessorSpec, SkillKind};

/// One skill as it was actually merged.
#[derive(Debug, Clone, Serialize)]
pub struct SkillReport {
    pub source: PathBuf,
    pub kind: SkillKind,
    pub omega: f64,
    pub omega_origin: String,
    pub preprocessor: PreprocessorSpec,
}

/// Everything a reader needs to audit one merge run.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub output: PathBuf,
    pub method: MergeMethod,
    pub general_model: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub base_model: Option<PathBuf>,
    pub skills: Vec<SkillReport>,
    /// Per-tensor max |output − general| in F32.
    pub tensors: Vec<TensorDeltaStat>,
    pub wall_seconds: f64,
    pub warnings: Vec<String>,
}

fn open_model(path: &Path) -> Result<Arc<Checkpoint>> {
    let cp = Checkpoint::open(path)?;
    require_role(&cp, crate::container::ROLE_MODEL)?;
    Ok(Arc::new(cp))
}

/// The delta source for one skill, given the anchor its delta is taken
/// against.
fn skill_source(
    skill_path: &Path,
    kind: SkillKind,
    anchor: &Arc<Checkpoint>,
) -> Result<DeltaSource> {
    match kind {
        SkillKind::Vector => Ok(DeltaSource::Vector(
            TaskVector::open(skill_path)?.checkpoint().clone(),
        )),
        SkillKind::Model => Ok(DeltaSource::ModelPair {
            minuend: open_model(skill_path)?,
            subtrahend: anchor.clone(),
        }),
    }
}

fn term_prep(spec: &PreprocessorSpec) -> TermPrep {
    match spec {
        PreprocessorSpec::None => TermPrep::None,
        PreprocessorSpec::Ties(_) => TermPrep::Ties,
        PreprocessorSpec::Dare(cfg) => TermPrep::Dare(cfg.clone()),
    }
}

/// All TIES skills of one plan share a single density; mixing densities
/// has no defined joint election.
fn shared_ties_density(skills: &[SkillReport]) -> Result<f64> {
    let mut density: Option<f64> = None;
    for s in skills {
        if let PreprocessorSpec::Ties(cfg) = &s.preprocessor {
            match density {
                None => density = Some(cfg.density),
                Some(d) if d == cfg.density => {}
                Some(d) => {
                    return Err(Error::Recipe {
                        detail: format!(
                            "ties preprocessors disagree on density ({} vs {}); joint \
                             election needs a single value",
                            d, cfg.density
                        ),
                    })
                }
            }
        }
    }
    Ok(density.unwrap_or(0.0))
}

/// Execute a validated recipe. `force` overwrites an existing output;
/// `allow_nonfinite` lets NaN/Inf values flow through instead of
/// aborting.
pub fn run_recipe(recipe: &MergeRecipe, force: bool, allow_nonfinite: bool) -> Result<RunReport> {
    let mut warnings = recipe.validate()?;
    let (resolved, mut resolve_warnings) = recipe.resolve_omegas()?;
    warnings.append(&mut resolve_warnings);

    if recipe.output.exists() && !force {
        return Err(Error::OutputExists {
            path: recipe.output.clone(),
        });
    }

    // Skills are merged in canonical (source path, ω) order so that two
    // recipes listing the same skills differently produce identical bytes.
    let mut skills: Vec<SkillReport> = recipe
        .skills
        .iter()
        .zip(&resolved)
        .map(|(s, r)| SkillReport {
            source: s.source.clone(),
            kind: s.kind,
            omega: r.value,
            omega_origin: r.origin.clone(),
            preprocessor: s.preprocessor.clone(),
        })
        .collect();
    skills.sort_by(|a, b| {
        a.source
            .cmp(&b.source)
            .then(a.omega.total_cmp(&b.omega))
    });

    let general = open_model(&recipe.general_model)?;
    // The base model is opened only when some delta actually needs it, so
    // an all-vector recipe works even if the declared base is absent.
    let mut base: Option<Arc<Checkpoint>> = None;
    let mut base_model = |path_field: &Option<PathBuf>| -> Result<Arc<Checkpoint>> {
        if let Some(cp) = &base {
            return Ok(cp.clone());
        }
        let path = path_field.as_ref().ok_or_else(|| Error::Recipe {
            detail: "this recipe needs base_model".into(),
        })?;
        let cp = open_model(path)?;
        base = Some(cp.clone());
        Ok(cp)
    };

    let plan = match recipe.method {
        MergeMethod::TaskArithmetic => {
            let mut terms = Vec::with_capacity(skills.len());
            for s in &skills {
                let anchor = match s.kind {
                    SkillKind::Model => base_model(&recipe.base_model)?,
                    // Vectors carry their own delta; the anchor is unused.
                    SkillKind::Vector => general.clone(),
                };
                terms.push(MergeTerm {
                    source: skill_source(&s.source, s.kind, &anchor)?,
                    omega: s.omega,
                    prep: term_prep(&s.preprocessor),
                });
            }
            MergePlan {
                reference: general.clone(),
                terms,
                ties_density: shared_ties_density(&skills)?,
            }
        }
        MergeMethod::LinearInterpolation => {
            let pre = base_model(&recipe.base_model)?;
            let s = &skills[0];
            let terms = vec![
                MergeTerm {
                    source: skill_source(&s.source, s.kind, &pre)?,
                    omega: s.omega,
                    prep: term_prep(&s.preprocessor),
                },
                MergeTerm {
                    source: DeltaSource::ModelPair {
                        minuend: general.clone(),
                        subtrahend: pre.clone(),
                    },
                    omega: 1.0 - s.omega,
                    prep: TermPrep::None,
                },
            ];
            MergePlan {
                reference: pre,
                terms,
                ties_density: shared_ties_density(&skills)?,
            }
        }
        MergeMethod::WiseFt => {
            let s = &skills[0];
            let terms = vec![MergeTerm {
                source: DeltaSource::ModelPair {
                    minuend: open_model(&s.source)?,
                    subtrahend: general.clone(),
                },
                omega: s.omega,
                prep: term_prep(&s.preprocessor),
            }];
            MergePlan {
                reference: general.clone(),
                terms,
                ties_density: shared_ties_density(&skills)?,
            }
        }
    };

    let mut opts = MergeOptions {
        output_dtype: recipe.output_dtype.clone(),
        missing_key_policy: recipe.missing_key_policy,
        allow_nonfinite,
        ..Default::default()
    };
    opts.metadata
        .insert("merge.method".into(), recipe.method.to_string());
    opts.metadata.insert(
        "merge.skills".into(),
        serde_json::to_string(&skills).expect("json"),
    );

    let started = Instant::now();
    let mut merge_report = run_plan(&plan, &recipe.output, &opts)?;
    let wall_seconds = started.elapsed().as_secs_f64();
    warnings.append(&mut merge_report.warnings);

    Ok(RunReport {
        output: recipe.output.clone(),
        method: recipe.method,
        general_model: recipe.general_model.clone(),
        base_model: recipe.base_model.clone(),
        skills,
        tensors: merge_report.tensors,
        wall_seconds,
        warnings,
    })
}
