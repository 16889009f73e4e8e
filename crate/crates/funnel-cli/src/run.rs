//! Command orchestration: load and validate a config, run the requested
//! pipeline, stage the result bundle, and write it atomically.

use std::path::{Path, PathBuf};
use std::time::Instant;

use funnel_synth::conic::{ClarabelBackend, ConicBackend, SolveSettings, SolveStatus};
use funnel_synth::ctcs::scvx_iterate;
use funnel_synth::error::SynthError;
use funnel_synth::synthesis::{line_search_alpha, solve, FunnelSolution, SynthesisProblem};
use funnel_synth::verify::{eig_traces, invariance_report};

use crate::bundle::{
    report_from, scvx_trace_csv, stop_label, to_json_pretty, FamilyEntry, Manifest, Overrides,
    ResultBundle, ScvxStats, SolverStats,
};
use crate::config::{self, AlphaConfig, BuiltProblem, ConfigError, ProblemConfig};
use crate::solution::SolutionFile;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("solution/config mismatch: {0}")]
    Mismatch(String),
    #[error("{0}")]
    Run(String),
}

/// Successful pipeline outcomes, mapped to process exit codes by main.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Success,
    Infeasible,
}

/// Shared command-line inputs.
pub struct RunInputs {
    pub config: PathBuf,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub backend: Option<String>,
    pub dense_grid: Option<usize>,
}

fn verbosity() -> u8 {
    match std::env::var("FUNNEL_LOG").as_deref() {
        Ok("debug") => 2,
        Ok("info") => 1,
        _ => 0,
    }
}

fn log_info(msg: impl AsRef<str>) {
    if verbosity() >= 1 {
        eprintln!("funnel: {}", msg.as_ref());
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

struct Loaded {
    config: ProblemConfig,
    raw: Vec<u8>,
    value: serde_json::Value,
    overrides: Overrides,
}

fn load_config(inputs: &RunInputs) -> Result<Loaded, CliError> {
    let raw = read_file(&inputs.config)?;
    let value: serde_json::Value = serde_json::from_slice(&raw)
        .map_err(|e| ConfigError { path: "/".into(), message: e.to_string() })?;
    let mut config = config::parse(&raw)?;
    let mut overrides = Overrides::default();
    if let Some(seed) = inputs.seed {
        config.seed = seed;
        overrides.seed = Some(seed);
    }
    if let Some(points) = inputs.dense_grid {
        config.dense_grid = points;
        overrides.dense_grid = Some(points);
    }
    if let Some(out) = &inputs.out {
        overrides.out = Some(out.display().to_string());
    }
    overrides.backend = inputs.backend.clone();
    Ok(Loaded { config, raw, value, overrides })
}

fn backend_for(name: &Option<String>) -> Result<ClarabelBackend, CliError> {
    match name.as_deref() {
        None | Some("clarabel") => Ok(ClarabelBackend),
        Some(other) => Err(CliError::Run(format!(
            "unknown backend {other:?}; available backends: clarabel"
        ))),
    }
}

fn out_dir(inputs: &RunInputs, config: &ProblemConfig) -> Result<PathBuf, CliError> {
    inputs
        .out
        .clone()
        .or_else(|| config.output_dir.clone())
        .ok_or_else(|| CliError::Run("no output directory; pass --out or set output_dir".into()))
}

/// Solve the stage-one program, honoring a fixed rate or a rate search.
/// An exhausted search bracket counts as infeasible, not as an error.
fn solve_stage(
    built: &BuiltProblem,
    backend: &dyn ConicBackend,
    settings: &SolveSettings,
) -> Result<Result<FunnelSolution, SolveStatus>, CliError> {
    match built.alpha {
        AlphaConfig::Fixed(_) => {
            let sol = solve(&built.problem, backend, settings)?;
            match sol.status {
                SolveStatus::Optimal | SolveStatus::AlmostOptimal => Ok(Ok(sol)),
                SolveStatus::PrimalInfeasible | SolveStatus::DualInfeasible => {
                    Ok(Err(sol.status))
                }
                other => Err(CliError::Run(format!(
                    "solver did not reach a conclusion: {other:?}"
                ))),
            }
        }
        AlphaConfig::Search { search: [lo, hi], iterations } => {
            match line_search_alpha(&built.problem, backend, settings, lo, hi, iterations) {
                Ok((alpha, sol)) => {
                    log_info(format!("decay-rate search settled at alpha = {alpha}"));
                    Ok(Ok(sol))
                }
                Err(SynthError::SolverFailure(_)) => Ok(Err(SolveStatus::PrimalInfeasible)),
                Err(e) => Err(e.into()),
            }
        }
    }
}

/// Run verification on a solved problem and stage its outputs.
fn stage_verification(
    problem: &SynthesisProblem,
    sol: &FunnelSolution,
    config: &ProblemConfig,
    bundle: &mut ResultBundle,
    manifest: &mut Manifest,
) -> Result<(), CliError> {
    let t = Instant::now();
    let report = invariance_report(
        problem,
        sol,
        config.rollouts,
        config.policy.policy(),
        config.seed,
        config.sim_steps,
    )?;
    manifest.verify = Some(report_from(&report, config.rollouts));
    bundle.add("rollouts.csv", report.csv());
    manifest.wall_times.insert("rollouts".into(), t.elapsed().as_secs_f64());

    let t = Instant::now();
    let traces = eig_traces(problem, sol, config.dense_grid)?;
    for trace in &traces {
        manifest.eig_families.push(FamilyEntry {
            index: trace.family,
            label: trace.label.clone(),
            max_lambda: trace.max_value(),
        });
        bundle.add(format!("eig_trace_{}.csv", trace.family), trace.csv());
    }
    manifest.wall_times.insert("eig_traces".into(), t.elapsed().as_secs_f64());
    Ok(())
}

fn finish(
    mut bundle: ResultBundle,
    mut manifest: Manifest,
    dir: &Path,
    total: Instant,
) -> Result<(), CliError> {
    manifest.wall_times.insert("total".into(), total.elapsed().as_secs_f64());
    let mut files = bundle.names();
    files.push("manifest.json".into());
    manifest.files = files;
    bundle.add("manifest.json", to_json_pretty(&manifest));
    bundle
        .write(dir)
        .map_err(|source| CliError::Io { path: dir.display().to_string(), source })?;
    Ok(())
}

pub fn run_synth(inputs: &RunInputs) -> Result<Outcome, CliError> {
    let total = Instant::now();
    let loaded = load_config(inputs)?;
    let built = config::build(&loaded.config)?;
    let backend = backend_for(&inputs.backend)?;
    let dir = out_dir(inputs, &loaded.config)?;

    let mut manifest = Manifest::new("synth", loaded.value.clone(), &loaded.raw);
    manifest.overrides = loaded.overrides.clone();
    let mut bundle = ResultBundle::default();

    log_info("solving the synthesis program");
    let t = Instant::now();
    let staged = solve_stage(&built, &backend, &SolveSettings::default())?;
    manifest.wall_times.insert("solve".into(), t.elapsed().as_secs_f64());

    let sol = match staged {
        Ok(sol) => sol,
        Err(status) => {
            manifest.solver = Some(SolverStats {
                status,
                objective: f64::NAN,
                iterations: 0,
                solve_time: 0.0,
                alpha: built.problem.alpha,
            });
            finish(bundle, manifest, &dir, total)?;
            println!("synth status={status:?} out={}", dir.display());
            return Ok(Outcome::Infeasible);
        }
    };
    manifest.solver = Some(SolverStats {
        status: sol.status,
        objective: sol.objective,
        iterations: sol.iterations,
        solve_time: sol.solve_time,
        alpha: sol.alpha,
    });

    let mut problem = built.problem;
    problem.alpha = sol.alpha;
    bundle.add("solution.json", to_json_pretty(&SolutionFile::from_solution(&sol)));
    log_info("running rollouts and dense traces");
    stage_verification(&problem, &sol, &loaded.config, &mut bundle, &mut manifest)?;
    finish(bundle, manifest, &dir, total)?;
    println!(
        "synth status={:?} objective={} alpha={} out={}",
        sol.status,
        sol.objective,
        sol.alpha,
        dir.display()
    );
    Ok(Outcome::Success)
}

pub fn run_scvx(inputs: &RunInputs) -> Result<Outcome, CliError> {
    let total = Instant::now();
    let loaded = load_config(inputs)?;
    let built = config::build(&loaded.config)?;
    let (scvx_config, constraints) = built
        .scvx
        .clone()
        .ok_or_else(|| ConfigError {
            path: "/scvx".into(),
            message: "the scvx subcommand needs an scvx block".into(),
        })?;
    let backend = backend_for(&inputs.backend)?;
    let dir = out_dir(inputs, &loaded.config)?;
    let settings = SolveSettings::default();

    let mut manifest = Manifest::new("scvx", loaded.value.clone(), &loaded.raw);
    manifest.overrides = loaded.overrides.clone();
    let mut bundle = ResultBundle::default();

    log_info("solving the stage-one program");
    let t = Instant::now();
    let staged = solve_stage(&built, &backend, &settings)?;
    manifest.wall_times.insert("solve".into(), t.elapsed().as_secs_f64());
    let initial = match staged {
        Ok(sol) => sol,
        Err(status) => {
            manifest.solver = Some(SolverStats {
                status,
                objective: f64::NAN,
                iterations: 0,
                solve_time: 0.0,
                alpha: built.problem.alpha,
            });
            finish(bundle, manifest, &dir, total)?;
            println!("scvx status={status:?} out={}", dir.display());
            return Ok(Outcome::Infeasible);
        }
    };
    manifest.solver = Some(SolverStats {
        status: initial.status,
        objective: initial.objective,
        iterations: initial.iterations,
        solve_time: initial.solve_time,
        alpha: initial.alpha,
    });

    let mut problem = built.problem;
    problem.alpha = initial.alpha;

    log_info(format!(
        "refining between nodes: {} iterations at most",
        scvx_config.max_iterations
    ));
    let t = Instant::now();
    let run = scvx_iterate(&problem, &constraints, &initial, &backend, &settings, &scvx_config)?;
    manifest.wall_times.insert("scvx".into(), t.elapsed().as_secs_f64());

    let trust_ratio = match (run.trace.first(), run.trace.last()) {
        (Some(first), Some(last)) if first.trust > 0.0 => last.trust / first.trust,
        _ => 0.0,
    };
    let final_violation = run.trace.last().map(|r| r.max_violation).unwrap_or(f64::NAN);
    manifest.scvx = Some(ScvxStats {
        iterations: run.trace.len(),
        stop: stop_label(&run.stop),
        final_max_violation: final_violation,
        trust_ratio,
    });
    bundle.add("scvx_trace.csv", scvx_trace_csv(&run.trace));
    bundle.add("solution.json", to_json_pretty(&SolutionFile::from_solution(&run.solution)));

    if let funnel_synth::ctcs::ScvxStop::SubproblemFailed(status) = run.stop {
        finish(bundle, manifest, &dir, total)?;
        return Err(CliError::Run(format!(
            "refinement stopped early: subproblem returned {status:?} (trace written to {})",
            dir.display()
        )));
    }

    log_info("running rollouts and dense traces");
    stage_verification(&problem, &run.solution, &loaded.config, &mut bundle, &mut manifest)?;
    finish(bundle, manifest, &dir, total)?;
    println!(
        "scvx status={:?} iterations={} final_violation={} trust_ratio={} out={}",
        run.stop,
        run.trace.len(),
        final_violation,
        trust_ratio,
        dir.display()
    );
    Ok(Outcome::Success)
}

/// Load a stored solution and cross-check it against the config's problem.
fn load_solution(
    path: &Path,
    problem: &SynthesisProblem,
) -> Result<FunnelSolution, CliError> {
    let raw = read_file(path)?;
    let file: SolutionFile = serde_json::from_slice(&raw)
        .map_err(|e| CliError::Mismatch(format!("cannot parse {}: {e}", path.display())))?;
    let sol = file.into_solution()?;

    let n_x = problem.model.n_x();
    if sol.q[0].nrows() != n_x {
        return Err(CliError::Mismatch(format!(
            "solution certificates are {}x{} but the model has {n_x} states",
            sol.q[0].nrows(),
            sol.q[0].nrows()
        )));
    }
    let grid = &problem.grid;
    if sol.times.len() != grid.num_nodes() {
        return Err(CliError::Mismatch(format!(
            "solution has {} node times but the config grid has {}",
            sol.times.len(),
            grid.num_nodes()
        )));
    }
    for (k, t) in sol.times.iter().enumerate() {
        if (t - grid.node(k)).abs() > 1e-9 {
            return Err(CliError::Mismatch(format!(
                "node {k} time {t} differs from the config grid time {}",
                grid.node(k)
            )));
        }
    }
    if sol.dynamics != problem.dynamics {
        return Err(CliError::Mismatch(
            "solution and config disagree on the funnel dynamics kind".into(),
        ));
    }
    Ok(sol)
}

pub fn run_verify(inputs: &RunInputs, solution_path: &Path) -> Result<Outcome, CliError> {
    let total = Instant::now();
    let loaded = load_config(inputs)?;
    let built = config::build(&loaded.config)?;
    let dir = out_dir(inputs, &loaded.config)?;
    let mut problem = built.problem;
    let sol = load_solution(solution_path, &problem)?;
    problem.alpha = sol.alpha;

    let mut manifest = Manifest::new("verify", loaded.value.clone(), &loaded.raw);
    manifest.overrides = loaded.overrides.clone();
    let mut bundle = ResultBundle::default();

    log_info(format!("verifying {} rollouts", loaded.config.rollouts));
    stage_verification(&problem, &sol, &loaded.config, &mut bundle, &mut manifest)?;
    let stats = manifest_stats(&manifest);
    finish(bundle, manifest, &dir, total)?;
    println!("verify {stats} out={}", dir.display());
    Ok(Outcome::Success)
}

pub fn run_trace(inputs: &RunInputs, solution_path: &Path) -> Result<Outcome, CliError> {
    let total = Instant::now();
    let loaded = load_config(inputs)?;
    let built = config::build(&loaded.config)?;
    let dir = out_dir(inputs, &loaded.config)?;
    let mut problem = built.problem;
    let sol = load_solution(solution_path, &problem)?;
    problem.alpha = sol.alpha;

    let mut manifest = Manifest::new("trace", loaded.value.clone(), &loaded.raw);
    manifest.overrides = loaded.overrides.clone();
    let mut bundle = ResultBundle::default();

    let t = Instant::now();
    let traces = eig_traces(&problem, &sol, loaded.config.dense_grid)?;
    let mut worst = f64::NEG_INFINITY;
    for trace in &traces {
        worst = worst.max(trace.max_value());
        manifest.eig_families.push(FamilyEntry {
            index: trace.family,
            label: trace.label.clone(),
            max_lambda: trace.max_value(),
        });
        bundle.add(format!("eig_trace_{}.csv", trace.family), trace.csv());
    }
    manifest.wall_times.insert("eig_traces".into(), t.elapsed().as_secs_f64());
    finish(bundle, manifest, &dir, total)?;
    println!("trace families={} max_lambda={worst} out={}", traces.len(), dir.display());
    Ok(Outcome::Success)
}

fn manifest_stats(manifest: &Manifest) -> String {
    match &manifest.verify {
        Some(v) => format!(
            "rollouts={} exceedances={} worst_level={}",
            v.rollouts, v.exceedances, v.worst_level
        ),
        None => String::new(),
    }
}
