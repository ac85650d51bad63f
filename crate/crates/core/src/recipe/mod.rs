//! Declarative merge recipes.
//!
//! A recipe is data, not code: one JSON (canonical) or TOML (convenience)
//! document describing a single merge — method, input checkpoints,
//! mixture weights (literal or `"heuristic"`), preprocessors, and output
//! policies. Documents are validated strictly: unknown keys are rejected
//! so a misspelled field never silently falls back to a default.
//!
//! ```json
//! {
//!   "method": "task_arithmetic",
//!   "base_model": "base.st",
//!   "general_model": "general.st",
//!   "skills": [
//!     {"source": "science.tau.st", "kind": "vector", "omega": "heuristic",
//!      "d_size": 61349, "preprocessor": {"ties": {"density": 0.2}}}
//!   ],
//!   "g_size": 275464,
//!   "output": "merged.st"
//! }
//! ```

mod cost;
mod omega;
mod sweep;

pub use cost::{cost_steps, CostMethod, CostReport};
pub use omega::{heuristic_fraction, heuristic_omega};
pub use sweep::{expand_sweep, sweep_output_path};

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{de, Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::merge::{validate_omega, DtypePolicy, MissingKeyPolicy};
use crate::sparsify::{DareConfig, TiesConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeMethod {
    TaskArithmetic,
    LinearInterpolation,
    WiseFt,
}

impl fmt::Display for MergeMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MergeMethod::TaskArithmetic => "task_arithmetic",
            MergeMethod::LinearInterpolation => "linear_interpolation",
            MergeMethod::WiseFt => "wise_ft",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkillKind {
    /// A fine-tuned checkpoint; its delta is computed against the anchor
    /// (`base_model`, or the general model for `wise_ft`).
    Model,
    /// A stored task-vector container.
    Vector,
}

/// A mixture weight: either a literal or `"heuristic"` (resolved from
/// `d_size` / `g_size` at run time).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OmegaSpec {
    Literal(f64),
    Heuristic,
}

impl Serialize for OmegaSpec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            OmegaSpec::Literal(x) => s.serialize_f64(*x),
            OmegaSpec::Heuristic => s.serialize_str("heuristic"),
        }
    }
}

impl<'de> Deserialize<'de> for OmegaSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl de::Visitor<'_> for V {
            type Value = OmegaSpec;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a number or the string \"heuristic\"")
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<OmegaSpec, E> {
                Ok(OmegaSpec::Literal(v))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<OmegaSpec, E> {
                Ok(OmegaSpec::Literal(v as f64))
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<OmegaSpec, E> {
                Ok(OmegaSpec::Literal(v as f64))
            }

            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<OmegaSpec, E> {
                if v == "heuristic" {
                    Ok(OmegaSpec::Heuristic)
                } else {
                    Err(E::invalid_value(de::Unexpected::Str(v), &self))
                }
            }
        }
        d.deserialize_any(V)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreprocessorSpec {
    #[default]
    None,
    Ties(TiesConfig),
    Dare(DareConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkillSpec {
    pub source: PathBuf,
    pub kind: SkillKind,
    pub omega: OmegaSpec,
    /// Specialist dataset size; consulted only when `omega = "heuristic"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_size: Option<u64>,
    #[serde(default)]
    pub preprocessor: PreprocessorSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MergeRecipe {
    pub method: MergeMethod,
    /// Pretrained anchor; required unless the method is `wise_ft`, which
    /// anchors on the general model instead.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_model: Option<PathBuf>,
    pub general_model: PathBuf,
    pub skills: Vec<SkillSpec>,
    /// Generalist dataset size; consulted only by heuristic weights.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g_size: Option<u64>,
    pub output: PathBuf,
    #[serde(default)]
    pub output_dtype: DtypePolicy,
    #[serde(default)]
    pub missing_key_policy: MissingKeyPolicy,
}

/// A skill's weight after heuristic resolution, with its provenance.
#[derive(Debug, Clone, Serialize)]
pub struct ResolvedOmega {
    pub value: f64,
    pub origin: String,
}

impl MergeRecipe {
    /// Check every structural rule; returns lint warnings on success.
    pub fn validate(&self) -> Result<Vec<String>> {
        let mut warnings = Vec::new();

        match self.method {
            MergeMethod::TaskArithmetic => {
                if self.skills.is_empty() {
                    return Err(Error::Recipe {
                        detail: "task_arithmetic requires at least one skill".into(),
                    });
                }
                if self.base_model.is_none() {
                    return Err(Error::Recipe {
                        detail: "task_arithmetic requires base_model".into(),
                    });
                }
            }
            MergeMethod::LinearInterpolation => {
                if self.skills.len() != 1 {
                    return Err(Error::ExactlyOneSkillRequired {
                        method: self.method.to_string(),
                    });
                }
                if self.base_model.is_none() {
                    return Err(Error::Recipe {
                        detail: "linear_interpolation requires base_model".into(),
                    });
                }
            }
            MergeMethod::WiseFt => {
                if self.skills.len() != 1 {
                    return Err(Error::ExactlyOneSkillRequired {
                        method: self.method.to_string(),
                    });
                }
                if self.skills[0].kind != SkillKind::Model {
                    return Err(Error::Recipe {
                        detail: "wise_ft requires a skill of kind \"model\"".into(),
                    });
                }
                if self.base_model.is_some() {
                    return Err(Error::Recipe {
                        detail:
                            "wise_ft does not take base_model; it anchors on general_model"
                                .into(),
                    });
                }
            }
        }

        let mut any_heuristic = false;
        for (i, skill) in self.skills.iter().enumerate() {
            match skill.omega {
                OmegaSpec::Heuristic => {
                    any_heuristic = true;
                    if !skill.d_size.is_some_and(|d| d > 0) {
                        return Err(Error::Recipe {
                            detail: format!(
                                "skills[{i}]: omega = \"heuristic\" requires d_size > 0"
                            ),
                        });
                    }
                }
                OmegaSpec::Literal(w) => {
                    if let Some(note) = validate_omega(w)? {
                        warnings.push(format!("skills[{i}] ({}): {note}", skill.source.display()));
                    }
                    if skill.d_size.is_some() {
                        warnings.push(format!(
                            "skills[{i}]: d_size is ignored unless omega = \"heuristic\""
                        ));
                    }
                }
            }
            match &skill.preprocessor {
                PreprocessorSpec::None => {}
                PreprocessorSpec::Ties(cfg) => cfg.validate()?,
                PreprocessorSpec::Dare(cfg) => cfg.validate()?,
            }
        }
        if any_heuristic && !self.g_size.is_some_and(|g| g > 0) {
            return Err(Error::Recipe {
                detail: "a heuristic omega requires g_size > 0".into(),
            });
        }
        if !any_heuristic && self.g_size.is_some() {
            warnings.push("g_size is ignored when no omega is \"heuristic\"".into());
        }
        Ok(warnings)
    }

    /// Turn every weight into a number, resolving heuristics from the
    /// declared dataset sizes.
    pub fn resolve_omegas(&self) -> Result<(Vec<ResolvedOmega>, Vec<String>)> {
        let mut resolved = Vec::with_capacity(self.skills.len());
        let mut warnings = Vec::new();
        for (i, skill) in self.skills.iter().enumerate() {
            match skill.omega {
                OmegaSpec::Literal(w) => resolved.push(ResolvedOmega {
                    value: w,
                    origin: "literal".into(),
                }),
                OmegaSpec::Heuristic => {
                    let d = skill.d_size.ok_or_else(|| Error::Recipe {
                        detail: format!("skills[{i}]: omega = \"heuristic\" requires d_size"),
                    })?;
                    let g = self.g_size.ok_or_else(|| Error::Recipe {
                        detail: "a heuristic omega requires g_size".into(),
                    })?;
                    let (value, warn) = heuristic_omega(d, g)?;
                    if let Some(w) = warn {
                        warnings.push(format!("skills[{i}]: {w}"));
                    }
                    resolved.push(ResolvedOmega {
                        value,
                        origin: format!("heuristic({d}/{g})"),
                    });
                }
            }
        }
        Ok((resolved, warnings))
    }

    /// Apply one `--set key=value` style override.
    ///
    /// Supported keys: `omega` (every skill), `skills.N.omega`,
    /// `skills.N.d_size`, `g_size`, `output`, `output_dtype`,
    /// `missing_key_policy`.
    pub fn apply_override(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |detail: String| Error::InvalidOverride {
            key: key.to_string(),
            detail,
        };
        let parse_omega = |value: &str| -> Result<OmegaSpec> {
            if value == "heuristic" {
                return Ok(OmegaSpec::Heuristic);
            }
            value
                .parse::<f64>()
                .map(OmegaSpec::Literal)
                .map_err(|_| bad(format!("expected a number or \"heuristic\", got {value:?}")))
        };
        let parse_size = |value: &str| -> Result<u64> {
            value
                .parse::<u64>()
                .map_err(|_| bad(format!("expected a non-negative integer, got {value:?}")))
        };
        let skill_index = |segment: &str| -> Result<usize> {
            let idx: usize = segment
                .parse()
                .map_err(|_| bad(format!("bad skill index {segment:?}")))?;
            if idx >= self.skills.len() {
                return Err(bad(format!(
                    "skill index {idx} out of range (recipe has {})",
                    self.skills.len()
                )));
            }
            Ok(idx)
        };

        let parts: Vec<&str> = key.split('.').collect();
        match parts.as_slice() {
            ["omega"] => {
                let w = parse_omega(value)?;
                for skill in &mut self.skills {
                    skill.omega = w;
                }
            }
            ["skills", n, "omega"] => {
                let idx = skill_index(n)?;
                self.skills[idx].omega = parse_omega(value)?;
            }
            ["skills", n, "d_size"] => {
                let idx = skill_index(n)?;
                self.skills[idx].d_size = Some(parse_size(value)?);
            }
            ["g_size"] => self.g_size = Some(parse_size(value)?),
            ["output"] => self.output = PathBuf::from(value),
            ["output_dtype"] => {
                self.output_dtype = value.parse().map_err(|e: String| bad(e))?;
            }
            ["missing_key_policy"] => {
                self.missing_key_policy = value.parse().map_err(|e: String| bad(e))?;
            }
            _ => {
                return Err(bad(
                    "unknown key; expected omega, skills.N.omega, skills.N.d_size, g_size, \
                     output, output_dtype, or missing_key_policy"
                        .into(),
                ))
            }
        }
        Ok(())
    }
}

/// Parse without validating — used when overrides may still fix the
/// document before validation.
pub fn deserialize_recipe_str(doc: &str) -> Result<MergeRecipe> {
    if doc.trim_start().starts_with('{') {
        let mut de = serde_json::Deserializer::from_str(doc);
        serde_path_to_error::deserialize(&mut de).map_err(|e| Error::Recipe {
            detail: format!("at {}: {}", e.path(), e.inner()),
        })
    } else {
        toml::from_str(doc).map_err(|e| Error::Recipe {
            detail: e.to_string(),
        })
    }
}

/// Parse and validate a recipe document (JSON or TOML, detected by the
/// leading byte). Returns the recipe and lint warnings.
pub fn parse_recipe_str(doc: &str) -> Result<(MergeRecipe, Vec<String>)> {
    let recipe = deserialize_recipe_str(doc)?;
    let warnings = recipe.validate()?;
    Ok((recipe, warnings))
}

/// Read and parse a recipe file.
pub fn parse_recipe_file(path: &Path) -> Result<(MergeRecipe, Vec<String>)> {
    let doc = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_recipe_str(&doc)
}

/// Canonical JSON rendering; `parse_recipe_str` inverts it exactly.
pub fn serialize_recipe(recipe: &MergeRecipe) -> String {
    let mut s = serde_json::to_string_pretty(recipe).expect("recipe serializes");
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::container::DType;

    fn minimal_json() -> &'static str {
        r#"{
            "method": "task_arithmetic",
            "base_model": "base.st",
            "general_model": "g.st",
            "skills": [{"source": "v.st", "kind": "vector", "omega": 0.5}],
            "output": "out.st"
        }"#
    }

    #[test]
    fn minimal_recipe_parses_with_defaults() {
        let (r, warnings) = parse_recipe_str(minimal_json()).unwrap();
        assert!(warnings.is_empty());
        assert_eq!(r.method, MergeMethod::TaskArithmetic);
        assert_eq!(r.skills[0].omega, OmegaSpec::Literal(0.5));
        assert_eq!(r.skills[0].preprocessor, PreprocessorSpec::None);
        assert_eq!(r.output_dtype, DtypePolicy::SameAsGeneral);
        assert_eq!(r.missing_key_policy, MissingKeyPolicy::Strict);
    }

    #[test]
    fn toml_parses_to_the_same_recipe() {
        let toml_doc = r#"
            method = "task_arithmetic"
            base_model = "base.st"
            general_model = "g.st"
            output = "out.st"

            [[skills]]
            source = "v.st"
            kind = "vector"
            omega = 0.5
        "#;
        let (a, _) = parse_recipe_str(minimal_json()).unwrap();
        let (b, _) = parse_recipe_str(toml_doc).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unknown_keys_are_rejected_with_a_path() {
        let doc = r#"{
            "method": "task_arithmetic",
            "base_model": "base.st",
            "general_model": "g.st",
            "skills": [{"source": "v.st", "kind": "vector", "omega": 0.5, "omgea": 1}],
            "output": "out.st"
        }"#;
        let err = parse_recipe_str(doc).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("omgea"), "{msg}");
        assert!(msg.contains("skills"), "{msg}");
    }

    #[test]
    fn linear_interpolation_needs_exactly_one_skill() {
        let doc = r#"{
            "method": "linear_interpolation",
            "base_model": "pre.st",
            "general_model": "g.st",
            "skills": [
                {"source": "a.st", "kind": "vector", "omega": 0.5},
                {"source": "b.st", "kind": "vector", "omega": 0.5}
            ],
            "output": "out.st"
        }"#;
        let err = parse_recipe_str(doc).unwrap_err();
        assert!(
            matches!(err, Error::ExactlyOneSkillRequired { ref method } if method == "linear_interpolation"),
            "{err}"
        );
    }

    #[test]
    fn wise_ft_rejects_base_model_and_vector_skills() {
        let with_base = r#"{
            "method": "wise_ft",
            "base_model": "pre.st",
            "general_model": "g.st",
            "skills": [{"source": "cft.st", "kind": "model", "omega": 0.5}],
            "output": "out.st"
        }"#;
        let err = parse_recipe_str(with_base).unwrap_err();
        assert!(matches!(err, Error::Recipe { .. }), "{err}");

        let with_vector = r#"{
            "method": "wise_ft",
            "general_model": "g.st",
            "skills": [{"source": "v.st", "kind": "vector", "omega": 0.5}],
            "output": "out.st"
        }"#;
        let err = parse_recipe_str(with_vector).unwrap_err();
        assert!(err.to_string().contains("model"), "{err}");
    }

    #[test]
    fn heuristic_omega_requires_and_resolves_sizes() {
        let missing = r#"{
            "method": "task_arithmetic",
            "base_model": "base.st",
            "general_model": "g.st",
            "skills": [{"source": "v.st", "kind": "vector", "omega": "heuristic"}],
            "output": "out.st"
        }"#;
        let err = parse_recipe_str(missing).unwrap_err();
        assert!(err.to_string().contains("d_size"), "{err}");

        let full = r#"{
            "method": "task_arithmetic",
            "base_model": "base.st",
            "general_model": "g.st",
            "skills": [{"source": "v.st", "kind": "vector", "omega": "heuristic", "d_size": 61349}],
            "g_size": 275464,
            "output": "out.st"
        }"#;
        let (r, _) = parse_recipe_str(full).unwrap();
        let (resolved, warnings) = r.resolve_omegas().unwrap();
        assert!(warnings.is_empty());
        assert!((resolved[0].value - 0.22271).abs() <= 5e-6, "{}", resolved[0].value);
        assert_eq!(resolved[0].origin, "heuristic(61349/275464)");
    }

    #[test]
    fn serialize_then_parse_is_identity() {
        let doc = r#"{
            "method": "task_arithmetic",
            "base_model": "base.st",
            "general_model": "g.st",
            "skills": [
                {"source": "a.st", "kind": "vector", "omega": "heuristic", "d_size": 61349,
                 "preprocessor": {"ties": {"density": 0.2, "elect_mode": "mass"}}},
                {"source": "b.st", "kind": "model", "omega": 0.25,
                 "preprocessor": {"dare": {"drop_p": 0.9, "seed": 7}}}
            ],
            "g_size": 275464,
            "output": "out.st",
            "output_dtype": "BF16",
            "missing_key_policy": "zeros"
        }"#;
        let (r, _) = parse_recipe_str(doc).unwrap();
        let round = serialize_recipe(&r);
        let (r2, _) = parse_recipe_str(&round).unwrap();
        assert_eq!(r, r2);
    }

    #[test]
    fn omega_warnings_and_range_errors() {
        let over_one = r#"{
            "method": "task_arithmetic",
            "base_model": "base.st",
            "general_model": "g.st",
            "skills": [{"source": "v.st", "kind": "vector", "omega": 1.5}],
            "output": "out.st"
        }"#;
        let (_, warnings) = parse_recipe_str(over_one).unwrap();
        assert_eq!(warnings.len(), 1);
        assert!(warnings[0].contains("extrapolating"), "{:?}", warnings);

        let out_of_range = over_one.replace("1.5", "2.5");
        assert!(matches!(
            parse_recipe_str(&out_of_range).unwrap_err(),
            Error::InvalidOmega { .. }
        ));
    }

    #[test]
    fn lint_flags_ignored_sizes() {
        let doc = r#"{
            "method": "task_arithmetic",
            "base_model": "base.st",
            "general_model": "g.st",
            "skills": [{"source": "v.st", "kind": "vector", "omega": 0.5, "d_size": 100}],
            "g_size": 1000,
            "output": "out.st"
        }"#;
        let (_, warnings) = parse_recipe_str(doc).unwrap();
        assert!(warnings.iter().any(|w| w.contains("d_size is ignored")));
        assert!(warnings.iter().any(|w| w.contains("g_size is ignored")));
    }

    #[test]
    fn overrides_rewrite_fields() {
        let (mut r, _) = parse_recipe_str(minimal_json()).unwrap();
        r.apply_override("omega", "0.75").unwrap();
        assert_eq!(r.skills[0].omega, OmegaSpec::Literal(0.75));
        r.apply_override("skills.0.omega", "heuristic").unwrap();
        assert_eq!(r.skills[0].omega, OmegaSpec::Heuristic);
        r.apply_override("skills.0.d_size", "61349").unwrap();
        r.apply_override("g_size", "275464").unwrap();
        r.apply_override("output", "elsewhere.st").unwrap();
        r.apply_override("output_dtype", "F16").unwrap();
        r.apply_override("missing_key_policy", "skip").unwrap();
        assert_eq!(r.output, PathBuf::from("elsewhere.st"));
        assert_eq!(r.output_dtype, DtypePolicy::Fixed(DType::F16));
        assert_eq!(r.missing_key_policy, MissingKeyPolicy::Skip);
        assert!(r.validate().is_ok());

        assert!(matches!(
            r.apply_override("skills.9.omega", "0.5").unwrap_err(),
            Error::InvalidOverride { .. }
        ));
        assert!(r.apply_override("nope", "1").is_err());
        assert!(r.apply_override("omega", "fast").is_err());
    }

    #[test]
    fn preprocessor_forms_round_trip() {
        let (r, _) = parse_recipe_str(
            &minimal_json().replace(
                r#""omega": 0.5"#,
                r#""omega": 0.5, "preprocessor": "none""#,
            ),
        )
        .unwrap();
        assert_eq!(r.skills[0].preprocessor, PreprocessorSpec::None);

        let (r, _) = parse_recipe_str(
            &minimal_json().replace(
                r#""omega": 0.5"#,
                r#""omega": 0.5, "preprocessor": {"dare": {}}"#,
            ),
        )
        .unwrap();
        assert_eq!(
            r.skills[0].preprocessor,
            PreprocessorSpec::Dare(DareConfig::default())
        );
    }
}
