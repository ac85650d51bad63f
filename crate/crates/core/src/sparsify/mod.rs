//! Interference-reducing task-vector preprocessors.
//!
//! Two families, both deterministic and streaming-friendly:
//!
//! - TIES (`ties_trim`, `ties_merge`): keep only the largest-magnitude
//!   fraction of each vector, elect a per-element sign by total
//!   magnitude, and average sign-agreeing contributions.
//! - DARE (`dare`): zero elements at random with probability `drop_p`
//!   and rescale survivors by `1/(1−drop_p)`, unbiased in expectation.
//!
//! Preprocessors consume mixture weights first: a recipe term
//! `ω·τ` is scaled by ω and then trimmed/dropped.

mod dare;
mod ties;

use serde::{Deserialize, Serialize};

pub use dare::{dare, dare_in_place, DareConfig};
pub use ties::{
    ties_merge, ties_merge_buffers, ties_trim, ties_trim_in_place, trim_keep_count,
    validate_density,
};

fn default_density() -> f64 {
    0.2
}

/// Sign-election strategy for TIES. Only magnitude-mass election exists
/// today; the enum keeps the knob explicit in configs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElectMode {
    #[default]
    Mass,
}

/// Configuration for TIES preprocessing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TiesConfig {
    /// Fraction of elements kept per tensor, in (0, 1].
    #[serde(default = "default_density")]
    pub density: f64,
    #[serde(default)]
    pub elect_mode: ElectMode,
}

impl Default for TiesConfig {
    fn default() -> Self {
        TiesConfig {
            density: default_density(),
            elect_mode: ElectMode::Mass,
        }
    }
}

impl TiesConfig {
    pub fn validate(&self) -> crate::error::Result<()> {
        validate_density(self.density)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ties_config_defaults_and_serde() {
        let cfg: TiesConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg, TiesConfig::default());
        assert_eq!(cfg.density, 0.2);
        assert_eq!(cfg.elect_mode, ElectMode::Mass);

        let cfg: TiesConfig = serde_json::from_str(r#"{"density":0.5}"#).unwrap();
        assert_eq!(cfg.density, 0.5);
        assert!(cfg.validate().is_ok());
        assert!(serde_json::from_str::<TiesConfig>(r#"{"junk":1}"#).is_err());

        let s = serde_json::to_string(&TiesConfig::default()).unwrap();
        assert_eq!(s, r#"{"density":0.2,"elect_mode":"mass"}"#);
    }

    #[test]
    fn dare_config_defaults_and_serde() {
        let cfg: DareConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg, DareConfig::default());
        assert_eq!(cfg.drop_p, 0.9);
        assert_eq!(cfg.seed, 0);

        let cfg: DareConfig = serde_json::from_str(r#"{"drop_p":0.1,"seed":9}"#).unwrap();
        assert_eq!(cfg.drop_p, 0.1);
        assert_eq!(cfg.seed, 9);
    }
}
