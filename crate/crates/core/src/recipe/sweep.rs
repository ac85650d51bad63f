//! ω-sweep expansion: one recipe per grid value.
//!
//! A sweep takes a single-skill recipe and a list of mixture weights and
//! produces one concrete recipe per weight, with the output path suffixed
//! by the weight formatted to two decimals (`out.st` → `out-omega0.40.st`).
//! Sweeping several skills jointly is deliberately unsupported.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::recipe::{MergeRecipe, OmegaSpec};

/// Output path for one sweep point.
pub fn sweep_output_path(output: &Path, omega: f64) -> PathBuf {
    let suffix = format!("omega{omega:.2}");
    let stem = output
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let name = match output.extension() {
        Some(ext) => format!("{stem}-{suffix}.{}", ext.to_string_lossy()),
        None => format!("{stem}-{suffix}"),
    };
    output.with_file_name(name)
}

/// Expand `recipe` over `grid`, returning the per-point recipes and any
/// deduplication warnings.
pub fn expand_sweep(recipe: &MergeRecipe, grid: &[f64]) -> Result<(Vec<MergeRecipe>, Vec<String>)> {
    if recipe.skills.len() != 1 {
        return Err(Error::Recipe {
            detail: format!(
                "sweep requires a single-skill recipe, found {} skills",
                recipe.skills.len()
            ),
        });
    }
    if grid.is_empty() {
        return Err(Error::InvalidInput {
            detail: "sweep grid is empty".into(),
        });
    }
    let mut warnings = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    for &w in grid {
        if !(w > 0.0 && w <= 2.0) {
            return Err(Error::InvalidOmega {
                detail: format!("sweep value {w} outside (0, 2]"),
            });
        }
        if values.contains(&w) {
            warnings.push(format!("duplicate sweep value {w} ignored"));
        } else {
            values.push(w);
        }
    }

    // Distinct weights that print identically would silently overwrite
    // each other's outputs.
    let mut by_suffix: BTreeMap<String, f64> = BTreeMap::new();
    for &w in &values {
        let suffix = format!("{w:.2}");
        if let Some(&prev) = by_suffix.get(&suffix) {
            return Err(Error::SweepCollision {
                a: prev,
                b: w,
                suffix,
            });
        }
        by_suffix.insert(suffix, w);
    }

    let recipes = values
        .iter()
        .map(|&w| {
            let mut r = recipe.clone();
            r.skills[0].omega = OmegaSpec::Literal(w);
            r.output = sweep_output_path(&recipe.output, w);
            r
        })
        .collect();
    Ok((recipes, warnings))
}
