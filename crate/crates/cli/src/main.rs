//! patchkit command line.
//!
//! Exit codes are stable: 0 success, 1 validation error (bad recipe, bad
//! container, bad argument), 2 I/O error, 3 numeric error (non-finite
//! values detected). Diagnostics go to standard error; data and reports
//! go to standard output or files, so every command is scriptable.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use patchkit::error::ErrorCategory;
use patchkit::exec::{run_recipe, RunReport};
use patchkit::merge::{compute_task_vector, MissingKeyPolicy};
use patchkit::recipe::{
    cost_steps, expand_sweep, parse_recipe_file, CostMethod, MergeRecipe, OmegaSpec,
};
use patchkit::testkit::{run_invariants, InvariantReport, Suite};
use patchkit::{Checkpoint, Error, Result};

#[derive(Parser)]
#[command(
    name = "patchkit",
    version,
    about = "Merge finetuned checkpoints by task-vector arithmetic"
)]
struct Cli {
    /// Worker threads for tensor kernels (default: all cores); the
    /// PATCHKIT_THREADS environment variable sets the same knob.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a merge recipe; writes the output checkpoint plus a JSON report.
    Merge {
        /// Recipe file, JSON or TOML.
        recipe: PathBuf,
        /// Override a recipe field, e.g. --set omega=0.4 or
        /// --set skills.0.omega=heuristic.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Overwrite the output if it already exists.
        #[arg(long)]
        force: bool,
    },
    /// Expand a single-skill recipe over an ω grid and merge each point.
    Sweep {
        /// Recipe file, JSON or TOML.
        recipe: PathBuf,
        /// Comma-separated ω values, e.g. 0.2,0.4,0.6,0.8,1.0.
        #[arg(long, value_name = "CSV")]
        grid: String,
        /// Merge remaining grid points even after one fails.
        #[arg(long)]
        keep_going: bool,
    },
    /// Write the task vector MODEL − BASE.
    Diff {
        model: PathBuf,
        base: PathBuf,
        /// Where to write the task-vector checkpoint.
        #[arg(short, long, value_name = "PATH")]
        output: PathBuf,
        /// Overwrite the output if it already exists.
        #[arg(long)]
        force: bool,
    },
    /// Print a container's manifest.
    Inspect {
        path: PathBuf,
        /// Emit JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Training cost of a workflow, in optimizer steps.
    Cost {
        /// cft, rt, or ptm.
        #[arg(long, value_name = "METHOD")]
        method: String,
        /// Comma-separated skill dataset sizes.
        #[arg(long, value_name = "CSV")]
        sizes: String,
        /// General-mix dataset size.
        #[arg(long, value_name = "N")]
        general: u64,
        /// Examples per optimizer step.
        #[arg(long, value_name = "N")]
        batch: u64,
        /// Passes over each dataset.
        #[arg(long, value_name = "N")]
        epochs: u64,
        /// Print all three methods plus the PTM/RT ratio.
        #[arg(long)]
        compare: bool,
    },
    /// Run self-check suites against the merge engine.
    Verify {
        /// endpoints, linearity, equivalence, sparsify, or roundtrip
        /// (default: all of them).
        #[arg(long, value_name = "NAME")]
        suite: Option<String>,
        #[arg(long, value_name = "N", default_value_t = 7)]
        seed: u64,
        /// Emit the reports as JSON instead of text.
        #[arg(long)]
        json: bool,
    },
}

fn exit_code(category: ErrorCategory) -> u8 {
    match category {
        ErrorCategory::Validation => 1,
        ErrorCategory::Io => 2,
        ErrorCategory::Numeric => 3,
    }
}

fn fail(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(exit_code(e.category()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Err(e) = configure_threads(cli.threads) {
        return fail(&e);
    }
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => fail(&e),
    }
}

fn configure_threads(flag: Option<usize>) -> Result<()> {
    let n = match flag {
        Some(n) => n,
        None => match std::env::var("PATCHKIT_THREADS") {
            Ok(raw) => raw.trim().parse().map_err(|_| Error::InvalidInput {
                detail: format!("PATCHKIT_THREADS must be a thread count, got {raw:?}"),
            })?,
            Err(_) => return Ok(()),
        },
    };
    // num_threads(0) means "pick for me", matching the flag's default.
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::InvalidInput {
            detail: format!("could not configure {n} worker threads: {e}"),
        })
}

fn dispatch(command: Command) -> Result<ExitCode> {
    match command {
        Command::Merge { recipe, set, force } => cmd_merge(&recipe, &set, force),
        Command::Sweep {
            recipe,
            grid,
            keep_going,
        } => cmd_sweep(&recipe, &grid, keep_going),
        Command::Diff {
            model,
            base,
            output,
            force,
        } => cmd_diff(&model, &base, &output, force),
        Command::Inspect { path, json } => cmd_inspect(&path, json),
        Command::Cost {
            method,
            sizes,
            general,
            batch,
            epochs,
            compare,
        } => cmd_cost(&method, &sizes, general, batch, epochs, compare),
        Command::Verify { suite, seed, json } => cmd_verify(suite.as_deref(), seed, json),
    }
}

fn warn_all(warnings: &[String]) {
    for w in warnings {
        eprintln!("warning: {w}");
    }
}

fn load_recipe(path: &Path, set: &[String]) -> Result<MergeRecipe> {
    let (mut recipe, _) = parse_recipe_file(path)?;
    for kv in set {
        let (key, value) = kv.split_once('=').ok_or_else(|| Error::InvalidOverride {
            key: kv.clone(),
            detail: "expected KEY=VALUE".into(),
        })?;
        recipe.apply_override(key, value)?;
    }
    Ok(recipe)
}

/// Write `<output>.report.json` next to a merge output.
fn write_sidecar(report: &RunReport) -> Result<PathBuf> {
    let mut name = report
        .output
        .file_name()
        .unwrap_or_default()
        .to_os_string();
    name.push(".report.json");
    let path = report.output.with_file_name(name);
    let json = serde_json::to_string_pretty(report).expect("report serializes") + "\n";
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn cmd_merge(recipe_path: &Path, set: &[String], force: bool) -> Result<ExitCode> {
    let recipe = load_recipe(recipe_path, set)?;
    let report = run_recipe(&recipe, force, false)?;
    warn_all(&report.warnings);
    let sidecar = write_sidecar(&report)?;
    println!(
        "wrote {} ({} tensors)",
        report.output.display(),
        report.tensors.len()
    );
    println!("report {}", sidecar.display());
    Ok(ExitCode::SUCCESS)
}

fn parse_grid(csv: &str) -> Result<Vec<f64>> {
    csv.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>().map_err(|_| Error::InvalidInput {
                detail: format!("grid value {s:?} is not a number"),
            })
        })
        .collect()
}

fn cmd_sweep(recipe_path: &Path, grid_csv: &str, keep_going: bool) -> Result<ExitCode> {
    let recipe = load_recipe(recipe_path, &[])?;
    let grid = parse_grid(grid_csv)?;
    let (points, warnings) = expand_sweep(&recipe, &grid)?;
    warn_all(&warnings);

    let mut first_failure = None;
    for point in &points {
        let omega = match point.skills[0].omega {
            OmegaSpec::Literal(v) => v,
            OmegaSpec::Heuristic => f64::NAN,
        };
        match run_recipe(point, false, false) {
            Ok(report) => {
                warn_all(&report.warnings);
                write_sidecar(&report)?;
                println!("{omega:<8.2} {}", report.output.display());
            }
            Err(e) => {
                eprintln!("error: omega {omega}: {e}");
                if first_failure.is_none() {
                    first_failure = Some(e.category());
                }
                if !keep_going {
                    break;
                }
            }
        }
    }
    Ok(match first_failure {
        None => ExitCode::SUCCESS,
        Some(category) => ExitCode::from(exit_code(category)),
    })
}

fn cmd_diff(model: &Path, base: &Path, output: &Path, force: bool) -> Result<ExitCode> {
    if output.exists() && !force {
        return Err(Error::OutputExists {
            path: output.into(),
        });
    }
    let model_cp = Checkpoint::open(model)?;
    let base_cp = Checkpoint::open(base)?;
    let (_, warnings) = compute_task_vector(&model_cp, &base_cp, output, MissingKeyPolicy::Strict)?;
    warn_all(&warnings);
    println!("wrote {}", output.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_inspect(path: &Path, json: bool) -> Result<ExitCode> {
    let cp = Checkpoint::open(path)?;
    let manifest = cp.manifest();
    if json {
        let tensors: Vec<_> = manifest
            .records()
            .iter()
            .map(|r| {
                serde_json::json!({
                    "name": r.name,
                    "dtype": r.dtype.tag(),
                    "shape": r.shape,
                    "bytes": r.byte_len(),
                })
            })
            .collect();
        let doc = serde_json::json!({
            "path": path,
            "role": manifest.role(),
            "metadata": manifest.metadata(),
            "tensors": tensors,
        });
        println!("{}", serde_json::to_string_pretty(&doc).expect("json"));
    } else {
        println!(
            "{}: role {}, {} tensors",
            path.display(),
            manifest.role(),
            manifest.len()
        );
        for (key, value) in manifest.metadata() {
            println!("  {key} = {value}");
        }
        println!("{:<40} {:>6} {:>16} {:>12}", "name", "dtype", "shape", "bytes");
        for r in manifest.records() {
            let shape = format!("{:?}", r.shape);
            println!(
                "{:<40} {:>6} {:>16} {:>12}",
                r.name,
                r.dtype.tag(),
                shape,
                r.byte_len()
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn parse_sizes(csv: &str) -> Result<Vec<u64>> {
    csv.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<u64>().map_err(|_| Error::InvalidInput {
                detail: format!("dataset size {s:?} is not a non-negative integer"),
            })
        })
        .collect()
}

fn cmd_cost(
    method: &str,
    sizes_csv: &str,
    general: u64,
    batch: u64,
    epochs: u64,
    compare: bool,
) -> Result<ExitCode> {
    let method: CostMethod = method.parse()?;
    let sizes = parse_sizes(sizes_csv)?;
    if compare {
        let mut totals = Vec::new();
        for m in [CostMethod::Cft, CostMethod::Rt, CostMethod::Ptm] {
            let report = cost_steps(m, &sizes, general, batch, epochs)?;
            println!("{:<4} {:>12} steps", m.to_string(), report.total_steps);
            totals.push((m, report.total_steps));
        }
        let rt = totals[1].1 as f64;
        let ptm = totals[2].1 as f64;
        println!("PTM/RT ratio {:.4}", ptm / rt);
    } else {
        let report = cost_steps(method, &sizes, general, batch, epochs)?;
        println!(
            "{}",
            serde_json::to_string_pretty(&report).expect("report serializes")
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify(suite: Option<&str>, seed: u64, json: bool) -> Result<ExitCode> {
    let suites: Vec<Suite> = match suite {
        Some(name) => vec![name.parse()?],
        None => Suite::ALL.to_vec(),
    };
    // Each suite owns its temp directory, so they can run concurrently.
    let reports: Vec<InvariantReport> = suites
        .par_iter()
        .map(|s| run_invariants(*s, seed))
        .collect();
    let all_pass = reports.iter().all(|r| r.passed());
    if json {
        println!(
            "{}",
            serde_json::to_string_pretty(&reports).expect("reports serialize")
        );
    } else {
        for r in &reports {
            print!("{}", r.render());
        }
    }
    if all_pass {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("error: invariant checks failed");
        Ok(ExitCode::from(1))
    }
}
