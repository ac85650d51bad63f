//! Self-check suites over the merge engine and container.
//!
//! Five suites, each a list of named checks with a measured worst-case
//! ULP distance:
//!
//! ```text
//! endpoints    ω at {0,1} reproduces an input bitwise           max ULP 0
//! linearity    scaling ω scales the delta, α ∈ {0.5, 2}         ≤ 4 ULP
//! equivalence  wise_ft ≡ task arithmetic on a constructed CFT   ≤ 1 ULP
//! sparsify     trim counts, sign election, DARE statistics
//! roundtrip    1000 fuzzed write→open→read→rewrite cycles
//! ```
//!
//! Synthetic inputs sit on dyadic grids (see the synth module) and the
//! algebraic suites use dyadic mixture weights, so the identities above
//! hold exactly rather than approximately; the ULP bounds are ceilings,
//! and a healthy build measures 0 everywhere. Checks never panic: any
//! internal error is reported as a failed check. A suite runs inside its
//! own temporary directory, so suites can run concurrently.

use std::path::Path;
use std::sync::Arc;

use serde::Serialize;

use crate::container::{Checkpoint, DType, PlannedWriter, ROLE_KEY, ROLE_MODEL};
use crate::error::{Error, Result};
use crate::merge::{
    apply_task_arithmetic, compute_task_vector, linear_interpolate, wise_ft, MergeOptions,
    MissingKeyPolicy, TaskVector, WeightedVector,
};
use crate::rng::CounterRng;
use crate::sparsify::{
    dare_in_place, ties_merge_buffers, ties_trim_in_place, trim_keep_count, DareConfig,
};
use crate::testkit::synth::{gen_checkpoint, gen_delta_checkpoint, Distribution, SynthSpec};
use crate::testkit::ulp_distance;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Endpoints,
    Linearity,
    Equivalence,
    Sparsify,
    Roundtrip,
}

impl Suite {
    pub const ALL: [Suite; 5] = [
        Suite::Endpoints,
        Suite::Linearity,
        Suite::Equivalence,
        Suite::Sparsify,
        Suite::Roundtrip,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Suite::Endpoints => "endpoints",
            Suite::Linearity => "linearity",
            Suite::Equivalence => "equivalence",
            Suite::Sparsify => "sparsify",
            Suite::Roundtrip => "roundtrip",
        }
    }
}

impl std::fmt::Display for Suite {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Suite> {
        Suite::ALL
            .iter()
            .copied()
            .find(|suite| suite.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::UnknownSuite { name: s.into() })
    }
}

/// Outcome of one named check.
#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// Worst elementwise ULP distance measured while checking.
    pub max_ulp: u64,
    pub detail: String,
}

/// Everything one suite run produced.
#[derive(Debug, Clone, Serialize)]
pub struct InvariantReport {
    pub suite: String,
    pub seed: u64,
    pub checks: Vec<CheckResult>,
}

impl InvariantReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn max_ulp(&self) -> u64 {
        self.checks.iter().map(|c| c.max_ulp).max().unwrap_or(0)
    }

    /// Multi-line human-readable rendering.
    pub fn render(&self) -> String {
        let mut out = format!("suite {} (seed {})\n", self.suite, self.seed);
        for c in &self.checks {
            let tag = if c.passed { "PASS" } else { "FAIL" };
            out.push_str(&format!("  [{tag}] {} (max ULP {})", c.name, c.max_ulp));
            if !c.detail.is_empty() {
                out.push_str(&format!(" — {}", c.detail));
            }
            out.push('\n');
        }
        let failed = self.checks.iter().filter(|c| !c.passed).count();
        if failed == 0 {
            out.push_str(&format!(
                "  {} checks passed, max ULP {}\n",
                self.checks.len(),
                self.max_ulp()
            ));
        } else {
            out.push_str(&format!("  {failed} of {} checks FAILED\n", self.checks.len()));
        }
        out
    }
}

/// Run one suite to completion and report per-check results.
pub fn run_invariants(suite: Suite, seed: u64) -> InvariantReport {
    let mut checks = Vec::new();
    match tempfile::tempdir() {
        Ok(dir) => {
            let d = dir.path();
            match suite {
                Suite::Endpoints => endpoints_suite(seed, d, &mut checks),
                Suite::Linearity => linearity_suite(seed, d, &mut checks),
                Suite::Equivalence => equivalence_suite(seed, d, &mut checks),
                Suite::Sparsify => sparsify_suite(seed, d, &mut checks),
                Suite::Roundtrip => roundtrip_suite(seed, d, &mut checks),
            }
        }
        Err(e) => checks.push(CheckResult {
            name: "setup".into(),
            passed: false,
            max_ulp: 0,
            detail: format!("could not create temp dir: {e}"),
        }),
    }
    InvariantReport {
        suite: suite.name().into(),
        seed,
        checks,
    }
}

fn push_check(
    checks: &mut Vec<CheckResult>,
    name: &str,
    body: impl FnOnce() -> Result<(bool, u64, String)>,
) {
    let result = match body() {
        Ok((passed, max_ulp, detail)) => CheckResult {
            name: name.into(),
            passed,
            max_ulp,
            detail,
        },
        Err(e) => CheckResult {
            name: name.into(),
            passed: false,
            max_ulp: 0,
            detail: format!("error: {e}"),
        },
    };
    checks.push(result);
}

// ---- shared fixtures -----------------------------------------------------

fn mixed_layout() -> Vec<(String, DType, Vec<u64>)> {
    vec![
        ("embed.weight".into(), DType::F32, vec![24, 8]),
        ("block.0.attn.weight".into(), DType::F16, vec![16, 16]),
        ("block.0.mlp.weight".into(), DType::Bf16, vec![320]),
        ("head.weight".into(), DType::F32, vec![96]),
        ("schedule.steps".into(), DType::I64, vec![3]),
    ]
}

const FLOAT_NAMES: [&str; 4] = [
    "embed.weight",
    "block.0.attn.weight",
    "block.0.mlp.weight",
    "head.weight",
];

fn delta_layout() -> Vec<(String, Vec<u64>)> {
    mixed_layout()
        .into_iter()
        .filter(|(_, dt, _)| dt.is_arithmetic())
        .map(|(n, _, s)| (n, s))
        .collect()
}

fn f32_layout() -> Vec<(String, DType, Vec<u64>)> {
    vec![
        ("lin.a.weight".into(), DType::F32, vec![512]),
        ("lin.b.weight".into(), DType::F32, vec![257]),
    ]
}

fn f32_delta_layout() -> Vec<(String, Vec<u64>)> {
    f32_layout().into_iter().map(|(n, _, s)| (n, s)).collect()
}

fn gen_model(
    seed: u64,
    layout: Vec<(String, DType, Vec<u64>)>,
    path: &Path,
) -> Result<Arc<Checkpoint>> {
    gen_checkpoint(
        &SynthSpec {
            seed,
            layout,
            distribution: Distribution::Uniform,
        },
        path,
    )?;
    Ok(Arc::new(Checkpoint::open(path)?))
}

/// Bitwise comparison of the named tensors; on mismatch also measures the
/// float ULP distance so the report says how far off the bytes are.
fn compare_tensors(
    got: &Checkpoint,
    want: &Checkpoint,
    names: &[&str],
) -> Result<(bool, u64, String)> {
    let mut worst = 0u64;
    let mut bad = Vec::new();
    for name in names {
        let g = got.read_raw(name)?;
        let w = want.read_raw(name)?;
        if g != w {
            bad.push(name.to_string());
            let dtype = got
                .manifest()
                .get(name)
                .map(|r| r.dtype)
                .unwrap_or(DType::F32);
            if dtype.is_arithmetic() {
                let gf = got.read_f32(name)?;
                let wf = want.read_f32(name)?;
                for (a, b) in gf.iter().zip(&wf) {
                    worst = worst.max(ulp_distance(*a, *b));
                }
            } else {
                worst = u64::MAX;
            }
        }
    }
    if bad.is_empty() {
        Ok((true, 0, String::new()))
    } else {
        Ok((false, worst, format!("tensors differ: {}", bad.join(", "))))
    }
}

fn max_ulp_vs(got: &[f32], want: &[f32]) -> u64 {
    debug_assert_eq!(got.len(), want.len());
    got.iter()
        .zip(want)
        .map(|(a, b)| ulp_distance(*a, *b))
        .max()
        .unwrap_or(0)
}

// ---- endpoints -----------------------------------------------------------

const ALL_NAMES: [&str; 5] = [
    "embed.weight",
    "block.0.attn.weight",
    "block.0.mlp.weight",
    "head.weight",
    "schedule.steps",
];

fn endpoints_suite(seed: u64, dir: &Path, checks: &mut Vec<CheckResult>) {
    push_check(checks, "task_arithmetic_omega0_is_general", || {
        let general = gen_model(seed, mixed_layout(), &dir.join("g.st"))?;
        gen_delta_checkpoint(seed ^ 0x1001, &delta_layout(), &dir.join("tau.st"))?;
        let tau = TaskVector::open(dir.join("tau.st"))?;
        let report = apply_task_arithmetic(
            &general,
            &[WeightedVector {
                vector: tau,
                omega: 0.0,
            }],
            &dir.join("out0.st"),
            &MergeOptions::default(),
        )?;
        let out = Checkpoint::open(&report.output)?;
        compare_tensors(&out, &general, &ALL_NAMES)
    });

    push_check(checks, "wise_ft_omega0_is_general", || {
        let general = gen_model(seed ^ 0x2001, mixed_layout(), &dir.join("wg.st"))?;
        let cft = gen_model(seed ^ 0x2002, mixed_layout(), &dir.join("wc.st"))?;
        let report = wise_ft(&general, &cft, 0.0, &dir.join("w0.st"), &MergeOptions::default())?;
        let out = Checkpoint::open(&report.output)?;
        compare_tensors(&out, &general, &ALL_NAMES)
    });

    push_check(checks, "wise_ft_omega1_is_cft_model", || {
        let general = gen_model(seed ^ 0x2001, mixed_layout(), &dir.join("wg1.st"))?;
        let cft = gen_model(seed ^ 0x2002, mixed_layout(), &dir.join("wc1.st"))?;
        let report = wise_ft(&general, &cft, 1.0, &dir.join("w1.st"), &MergeOptions::default())?;
        let out = Checkpoint::open(&report.output)?;
        let mut res = compare_tensors(&out, &cft, &FLOAT_NAMES)?;
        // Pass-through tensors come from the reference model by design.
        let steps_ok = out.read_raw("schedule.steps")? == general.read_raw("schedule.steps")?;
        if !steps_ok {
            res = (false, res.1, "pass-through tensor not taken from reference".into());
        }
        Ok(res)
    });

    push_check(checks, "interpolation_omega0_is_general_model", || {
        let (out, _, g) = interpolation_fixture(seed, dir, 0.0)?;
        compare_tensors(&out, &g, &FLOAT_NAMES)
    });

    push_check(checks, "interpolation_omega1_is_skill_model", || {
        let (out, d, _) = interpolation_fixture(seed, dir, 1.0)?;
        compare_tensors(&out, &d, &FLOAT_NAMES)
    });

    push_check(checks, "interpolation_degenerate_equal_vectors", || {
        let pre = gen_model(seed ^ 0x3101, mixed_layout(), &dir.join("dp.st"))?;
        let g = gen_model(seed ^ 0x3102, mixed_layout(), &dir.join("dg.st"))?;
        let (tau_g, _) =
            compute_task_vector(&g, &pre, &dir.join("dtg.st"), MissingKeyPolicy::Strict)?;
        for (i, omega) in [0.0, 0.25, 0.5, 0.75, 1.0].iter().enumerate() {
            let out_path = dir.join(format!("deg{i}.st"));
            linear_interpolate(&pre, &tau_g, &tau_g, *omega, &out_path, &MergeOptions::default())?;
            let out = Checkpoint::open(&out_path)?;
            let res = compare_tensors(&out, &g, &FLOAT_NAMES)?;
            if !res.0 {
                return Ok((false, res.1, format!("omega {omega}: {}", res.2)));
            }
        }
        Ok((true, 0, "omega in {0, 0.25, 0.5, 0.75, 1}".into()))
    });

    push_check(checks, "diff_then_add_reproduces_model", || {
        let base = gen_model(seed ^ 0x4001, mixed_layout(), &dir.join("rb.st"))?;
        let model = gen_model(seed ^ 0x4002, mixed_layout(), &dir.join("rm.st"))?;
        let (tau, _) =
            compute_task_vector(&model, &base, &dir.join("rt.st"), MissingKeyPolicy::Strict)?;
        let report = apply_task_arithmetic(
            &base,
            &[WeightedVector {
                vector: tau,
                omega: 1.0,
            }],
            &dir.join("rr.st"),
            &MergeOptions::default(),
        )?;
        let out = Checkpoint::open(&report.output)?;
        compare_tensors(&out, &model, &FLOAT_NAMES)
    });
}

/// Generate pre/skill/general models plus their task vectors and run one
/// interpolation; returns (output, skill model, general model).
fn interpolation_fixture(
    seed: u64,
    dir: &Path,
    omega: f64,
) -> Result<(Checkpoint, Arc<Checkpoint>, Arc<Checkpoint>)> {
    let pre = gen_model(seed ^ 0x3001, mixed_layout(), &dir.join("ip.st"))?;
    let d = gen_model(seed ^ 0x3002, mixed_layout(), &dir.join("id.st"))?;
    let g = gen_model(seed ^ 0x3003, mixed_layout(), &dir.join("ig.st"))?;
    let (tau_d, _) = compute_task_vector(&d, &pre, &dir.join("itd.st"), MissingKeyPolicy::Strict)?;
    let (tau_g, _) = compute_task_vector(&g, &pre, &dir.join("itg.st"), MissingKeyPolicy::Strict)?;
    let out_path = dir.join(format!("li{omega}.st"));
    linear_interpolate(&pre, &tau_d, &tau_g, omega, &out_path, &MergeOptions::default())?;
    Ok((Checkpoint::open(&out_path)?, d, g))
}

// ---- linearity -----------------------------------------------------------

const LINEARITY_ULP_BOUND: u64 = 4;

fn linearity_suite(seed: u64, dir: &Path, checks: &mut Vec<CheckResult>) {
    // merge(ω = α·β) − θ_G versus α·(merge(ω = β) − θ_G), with β = 0.5.
    // On the synthetic grid both sides are exact, so the measured distance
    // should be 0 against a ceiling of 4.
    for (label, alpha) in [("half", 0.5f32), ("two", 2.0f32)] {
        push_check(checks, &format!("task_arithmetic_scaling_alpha_{label}"), || {
            let g = gen_model(seed ^ 0x5001, f32_layout(), &dir.join("lg.st"))?;
            gen_delta_checkpoint(seed ^ 0x5002, &f32_delta_layout(), &dir.join("lt.st"))?;
            let merged = |omega: f64, file: &str| -> Result<Checkpoint> {
                let tau = TaskVector::open(dir.join("lt.st"))?;
                let report = apply_task_arithmetic(
                    &g,
                    &[WeightedVector { vector: tau, omega }],
                    &dir.join(file),
                    &MergeOptions::default(),
                )?;
                Checkpoint::open(&report.output)
            };
            let base = merged(0.5, "l_base.st")?;
            let scaled = merged(0.5 * alpha as f64, "l_scaled.st")?;
            linearity_distance(&scaled, &base, &g, alpha)
        });
    }

    for (label, alpha) in [("half", 0.5f32), ("two", 2.0f32)] {
        push_check(checks, &format!("wise_ft_scaling_alpha_{label}"), || {
            let g = gen_model(seed ^ 0x5003, f32_layout(), &dir.join("wlg.st"))?;
            let cft = gen_model(seed ^ 0x5004, f32_layout(), &dir.join("wlc.st"))?;
            let merged = |omega: f64, file: &str| -> Result<Checkpoint> {
                let report = wise_ft(&g, &cft, omega, &dir.join(file), &MergeOptions::default())?;
                Checkpoint::open(&report.output)
            };
            let base = merged(0.5, "wl_base.st")?;
            let scaled = merged(0.5 * alpha as f64, "wl_scaled.st")?;
            linearity_distance(&scaled, &base, &g, alpha)
        });
    }
}

fn linearity_distance(
    scaled: &Checkpoint,
    base: &Checkpoint,
    general: &Checkpoint,
    alpha: f32,
) -> Result<(bool, u64, String)> {
    let mut worst = 0u64;
    for (name, _, _) in f32_layout() {
        let s = scaled.read_f32(&name)?;
        let b = base.read_f32(&name)?;
        let g = general.read_f32(&name)?;
        for i in 0..s.len() {
            let lhs = s[i] - g[i];
            let rhs = alpha * (b[i] - g[i]);
            worst = worst.max(ulp_distance(lhs, rhs));
        }
    }
    Ok((
        worst <= LINEARITY_ULP_BOUND,
        worst,
        format!("bound {LINEARITY_ULP_BOUND}"),
    ))
}

// ---- equivalence ---------------------------------------------------------

const EQUIVALENCE_ULP_BOUND: u64 = 1;

fn equivalence_suite(seed: u64, dir: &Path, checks: &mut Vec<CheckResult>) {
    // Build θ_CFT = θ_G + τ exactly (grid sums are exact in F32), then
    // wise_ft(θ_G, θ_CFT, ω) must match task arithmetic with the same τ.
    let fixture = || -> Result<(Arc<Checkpoint>, Arc<Checkpoint>)> {
        let g = gen_model(seed ^ 0x6001, f32_layout(), &dir.join("eg.st"))?;
        gen_delta_checkpoint(seed ^ 0x6002, &f32_delta_layout(), &dir.join("et.st"))?;
        let tau = TaskVector::open(dir.join("et.st"))?;
        let mut metadata = std::collections::BTreeMap::new();
        metadata.insert(ROLE_KEY.to_string(), ROLE_MODEL.to_string());
        let cft_path = dir.join("ecft.st");
        let mut w = PlannedWriter::create(&cft_path, &f32_layout(), metadata)?;
        for (name, _, _) in f32_layout() {
            let gv = g.read_f32(&name)?;
            let tv = tau.checkpoint().read_f32(&name)?;
            let sum: Vec<f32> = gv.iter().zip(&tv).map(|(a, b)| a + b).collect();
            w.write_f32(&name, &sum)?;
        }
        w.finish()?;
        Ok((g, Arc::new(Checkpoint::open(&cft_path)?)))
    };

    for omega in [0.3f64, 0.5, 0.9] {
        push_check(checks, &format!("wise_ft_matches_task_arithmetic_omega{omega}"), || {
            let (g, cft) = fixture()?;
            let wise_out = dir.join("e_wise.st");
            wise_ft(&g, &cft, omega, &wise_out, &MergeOptions::default())?;
            let tau = TaskVector::open(dir.join("et.st"))?;
            let ta_out = dir.join("e_ta.st");
            apply_task_arithmetic(
                &g,
                &[WeightedVector { vector: tau, omega }],
                &ta_out,
                &MergeOptions::default(),
            )?;
            let a = Checkpoint::open(&wise_out)?;
            let b = Checkpoint::open(&ta_out)?;
            let mut worst = 0u64;
            for (name, _, _) in f32_layout() {
                worst = worst.max(max_ulp_vs(&a.read_f32(&name)?, &b.read_f32(&name)?));
            }
            Ok((
                worst <= EQUIVALENCE_ULP_BOUND,
                worst,
                format!("bound {EQUIVALENCE_ULP_BOUND}"),
            ))
        });
    }

    push_check(checks, "interpolation_midpoint_is_model_average", || {
        let pre = gen_model(seed ^ 0x6101, f32_layout(), &dir.join("mp.st"))?;
        let d = gen_model(seed ^ 0x6102, f32_layout(), &dir.join("md.st"))?;
        let g = gen_model(seed ^ 0x6103, f32_layout(), &dir.join("mg.st"))?;
        let (tau_d, _) =
            compute_task_vector(&d, &pre, &dir.join("mtd.st"), MissingKeyPolicy::Strict)?;
        let (tau_g, _) =
            compute_task_vector(&g, &pre, &dir.join("mtg.st"), MissingKeyPolicy::Strict)?;
        let out_path = dir.join("mid.st");
        linear_interpolate(&pre, &tau_d, &tau_g, 0.5, &out_path, &MergeOptions::default())?;
        let out = Checkpoint::open(&out_path)?;
        let mut worst = 0u64;
        for (name, _, _) in f32_layout() {
            let got = out.read_f32(&name)?;
            let dv = d.read_f32(&name)?;
            let gv = g.read_f32(&name)?;
            for i in 0..got.len() {
                worst = worst.max(ulp_distance(got[i], 0.5 * (dv[i] + gv[i])));
            }
        }
        Ok((
            worst <= EQUIVALENCE_ULP_BOUND,
            worst,
            format!("bound {EQUIVALENCE_ULP_BOUND}"),
        ))
    });
}

// ---- sparsify ------------------------------------------------------------

fn sparsify_suite(seed: u64, dir: &Path, checks: &mut Vec<CheckResult>) {
    let values = |n: u64, tag: &str| -> Result<Vec<f32>> {
        let path = dir.join(format!("{tag}.st"));
        gen_delta_checkpoint(seed ^ 0x7001, &[("w".into(), vec![n])], &path)?;
        Checkpoint::open(&path)?.read_f32("w")
    };

    push_check(checks, "trim_keeps_exactly_ceil_density_n", || {
        let original = values(997, "trim")?;
        for density in [0.2, 0.5, 1.0] {
            let mut v = original.clone();
            ties_trim_in_place(&mut v, density)?;
            let nonzero = v.iter().filter(|x| **x != 0.0).count();
            let expect = trim_keep_count(density, v.len());
            if nonzero != expect {
                return Ok((
                    false,
                    0,
                    format!("density {density}: kept {nonzero}, expected {expect}"),
                ));
            }
        }
        Ok((true, 0, "densities 0.2, 0.5, 1.0 on 997 elements".into()))
    });

    push_check(checks, "trim_keeps_largest_magnitudes_bit_exact", || {
        let original = values(997, "mag")?;
        let mut v = original.clone();
        ties_trim_in_place(&mut v, 0.3)?;
        let mut min_kept = f32::INFINITY;
        let mut max_dropped = 0.0f32;
        for i in 0..v.len() {
            if v[i] != 0.0 {
                if v[i].to_bits() != original[i].to_bits() {
                    return Ok((false, 0, format!("kept element {i} was altered")));
                }
                min_kept = min_kept.min(v[i].abs());
            } else {
                max_dropped = max_dropped.max(original[i].abs());
            }
        }
        Ok((
            min_kept >= max_dropped,
            0,
            format!("min kept |v| {min_kept}, max dropped |v| {max_dropped}"),
        ))
    });

    push_check(checks, "trim_full_density_is_identity", || {
        let original = values(256, "ident")?;
        let mut v = original.clone();
        ties_trim_in_place(&mut v, 1.0)?;
        let same = v
            .iter()
            .zip(&original)
            .all(|(a, b)| a.to_bits() == b.to_bits());
        Ok((same, 0, String::new()))
    });

    push_check(checks, "merge_single_vector_is_identity", || {
        let original = values(256, "single")?;
        let merged = ties_merge_buffers(&mut [original.clone()], 1.0)?;
        let same = merged
            .iter()
            .zip(&original)
            .all(|(a, b)| a.to_bits() == b.to_bits());
        Ok((same, 0, String::new()))
    });

    push_check(checks, "election_follows_majority_mass", || {
        let cases: [(&[&[f32]], f32); 3] = [
            (&[&[2.0], &[-1.0]], 2.0),
            (&[&[1.0], &[1.0], &[-5.0]], -5.0),
            (&[&[1.0], &[-1.0]], 0.0),
        ];
        for (vectors, expect) in cases {
            let mut bufs: Vec<Vec<f32>> = vectors.iter().map(|v| v.to_vec()).collect();
            let merged = ties_merge_buffers(&mut bufs, 1.0)?;
            if merged[0] != expect {
                return Ok((
                    false,
                    0,
                    format!("expected {expect}, got {} for {vectors:?}", merged[0]),
                ));
            }
        }
        Ok((true, 0, "2 elections + 1 zero-sum cancellation".into()))
    });

    push_check(checks, "dare_survivors_scaled_exactly", || {
        let original = values(4096, "dare")?;
        let cfg = DareConfig {
            drop_p: 0.5,
            seed: seed ^ 0x7002,
        };
        let mut v = original.clone();
        dare_in_place(&mut v, &cfg, "w")?;
        let mut rerun = original.clone();
        dare_in_place(&mut rerun, &cfg, "w")?;
        if v.iter().zip(&rerun).any(|(a, b)| a.to_bits() != b.to_bits()) {
            return Ok((false, 0, "same config gave different outputs".into()));
        }
        let survivors = v.iter().filter(|x| **x != 0.0).count();
        for i in 0..v.len() {
            if v[i] != 0.0 && v[i].to_bits() != (2.0 * original[i]).to_bits() {
                return Ok((false, 0, format!("survivor {i} not scaled by 1/(1-p)")));
            }
        }
        Ok((
            survivors > 0 && survivors < v.len(),
            0,
            format!("{survivors} of {} survived at p=0.5", v.len()),
        ))
    });

    push_check(checks, "dare_unbiased_within_five_stderr", || {
        let original = values(1000, "bias")?;
        let trials = 1000u64;
        let mut sums = vec![0.0f64; original.len()];
        for t in 0..trials {
            let cfg = DareConfig {
                drop_p: 0.5,
                seed: seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(t),
            };
            let mut v = original.clone();
            dare_in_place(&mut v, &cfg, "w")?;
            for (s, x) in sums.iter_mut().zip(&v) {
                *s += *x as f64;
            }
        }
        // Each trial keeps x/(1−p) with probability 1−p, so the per-trial
        // variance is x²·p/(1−p) and stderr = |x|·√(p/(1−p))/√trials.
        let stderr_factor = (0.5f64 / 0.5).sqrt() / (trials as f64).sqrt();
        let mut worst_sigmas = 0.0f64;
        for (s, x) in sums.iter().zip(&original) {
            let mean = s / trials as f64;
            let stderr = (*x as f64).abs() * stderr_factor;
            worst_sigmas = worst_sigmas.max((mean - *x as f64).abs() / stderr);
        }
        Ok((
            worst_sigmas <= 5.0,
            0,
            format!("worst deviation {worst_sigmas:.2} stderr over {trials} trials"),
        ))
    });
}

// ---- roundtrip -----------------------------------------------------------

const ROUNDTRIP_CASES: u64 = 1000;

const FUZZ_DTYPES: [DType; 5] = [DType::F32, DType::F16, DType::Bf16, DType::I64, DType::Bool];

struct FuzzCase {
    layout: Vec<(String, DType, Vec<u64>)>,
    metadata: std::collections::BTreeMap<String, String>,
    tensors: Vec<Vec<u8>>,
}

fn fuzz_case(seed: u64, case: u64) -> FuzzCase {
    let rng = CounterRng::new(seed, "fuzz");
    let mut ctr = case * 4096;
    let mut next = move || {
        let v = rng.value(ctr);
        ctr += 1;
        v
    };

    let n_tensors = 1 + (next() % 6) as usize;
    let mut layout = Vec::new();
    let mut tensors = Vec::new();
    for j in 0..n_tensors {
        let name = format!("t{j}.w{}", next() % 10);
        let dtype = FUZZ_DTYPES[(next() % 5) as usize];
        let rank = (next() % 4) as usize;
        let mut shape: Vec<u64> = (0..rank).map(|_| 1 + next() % 7).collect();
        if rank > 0 && next() % 16 == 0 {
            shape[0] = 0; // zero-sized tensors are legal
        }
        let elements: u64 = shape.iter().product();
        let byte_len = (elements * dtype.byte_width()) as usize;
        let mut bytes = Vec::with_capacity(byte_len + 8);
        while bytes.len() < byte_len {
            bytes.extend_from_slice(&next().to_le_bytes());
        }
        bytes.truncate(byte_len);
        layout.push((name, dtype, shape));
        tensors.push(bytes);
    }

    let mut metadata = std::collections::BTreeMap::new();
    if next() % 4 == 0 {
        metadata.insert("note".to_string(), format!("n{}", next() % 1000));
    }
    if next() % 4 == 0 {
        metadata.insert(ROLE_KEY.to_string(), ROLE_MODEL.to_string());
    }
    FuzzCase {
        layout,
        metadata,
        tensors,
    }
}

fn write_case(case: &FuzzCase, path: &Path) -> Result<()> {
    let mut w = PlannedWriter::create(path, &case.layout, case.metadata.clone())?;
    for ((name, _, _), bytes) in case.layout.iter().zip(&case.tensors) {
        w.write_raw(name, bytes)?;
    }
    w.finish()?;
    Ok(())
}

fn roundtrip_suite(seed: u64, dir: &Path, checks: &mut Vec<CheckResult>) {
    let mut read_back_ok = 0u64;
    let mut rewrite_ok = 0u64;
    let mut deterministic_ok = 0u64;
    let mut first_failure = String::new();

    for case_idx in 0..ROUNDTRIP_CASES {
        let case = fuzz_case(seed, case_idx);
        let run = || -> Result<(bool, bool, bool)> {
            let p1 = dir.join("fuzz_a.st");
            let p2 = dir.join("fuzz_b.st");
            let p3 = dir.join("fuzz_c.st");
            write_case(&case, &p1)?;
            write_case(&case, &p2)?;
            let identical = std::fs::read(&p1).map_err(|e| Error::io(&p1, e))?
                == std::fs::read(&p2).map_err(|e| Error::io(&p2, e))?;

            let cp = Checkpoint::open(&p1)?;
            let mut logical = cp.manifest().metadata() == &case.metadata
                && cp.manifest().len() == case.layout.len();
            for ((name, dtype, shape), bytes) in case.layout.iter().zip(&case.tensors) {
                match cp.manifest().get(name) {
                    Some(rec) => {
                        logical &= rec.dtype == *dtype
                            && rec.shape == *shape
                            && &cp.read_raw(name)? == bytes;
                    }
                    None => logical = false,
                }
            }

            let relayout: Vec<(String, DType, Vec<u64>)> = cp
                .manifest()
                .records()
                .iter()
                .map(|r| (r.name.clone(), r.dtype, r.shape.clone()))
                .collect();
            let mut w = PlannedWriter::create(&p3, &relayout, cp.manifest().metadata().clone())?;
            for (name, _, _) in &relayout {
                w.write_raw(name, &cp.read_raw(name)?)?;
            }
            w.finish()?;
            let rewritten = std::fs::read(&p1).map_err(|e| Error::io(&p1, e))?
                == std::fs::read(&p3).map_err(|e| Error::io(&p3, e))?;
            Ok((logical, rewritten, identical))
        };
        match run() {
            Ok((logical, rewritten, identical)) => {
                read_back_ok += logical as u64;
                rewrite_ok += rewritten as u64;
                deterministic_ok += identical as u64;
                if (!logical || !rewritten || !identical) && first_failure.is_empty() {
                    first_failure = format!("first failure at case {case_idx}");
                }
            }
            Err(e) => {
                if first_failure.is_empty() {
                    first_failure = format!("case {case_idx}: {e}");
                }
            }
        }
    }

    let total = ROUNDTRIP_CASES;
    for (name, ok) in [
        ("write_open_read_preserves_everything", read_back_ok),
        ("reopen_and_rewrite_is_byte_identical", rewrite_ok),
        ("same_content_always_serializes_identically", deterministic_ok),
    ] {
        checks.push(CheckResult {
            name: name.into(),
            passed: ok == total,
            max_ulp: 0,
            detail: if ok == total {
                format!("{total}/{total} fuzzed containers")
            } else {
                format!("{ok}/{total} fuzzed containers; {first_failure}")
            },
        });
    }
}
