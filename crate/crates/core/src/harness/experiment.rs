use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::scenario::{generate, Scenario};
use crate::centralized::{solve, CentralizedSolution};
use crate::error::{Error, Result};
use crate::game::{
    construct_candidate_ne, outcome, run_dynamics, verify_epsilon_ne, DynamicsOptions, MessageProfile, NeReport,
    Snapshot, VerifyOptions,
};
use crate::model::{Instance, Problem};
use crate::taxation::GameVariant;

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InstanceSource {
    File { path: PathBuf },
    Inline { instance: Instance },
    /// One run per seed.
    Generate { scenario: Scenario, seeds: Vec<u64> },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "init", rename_all = "snake_case")]
pub enum InitSpec {
    /// `y = d + 0.1`, all prices zero.
    #[default]
    Default,
    CandidateNe,
    Profile { profile: MessageProfile },
    File { path: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Assertions {
    pub converged: bool,
    pub equilibrium: bool,
    /// Bound on `|x - x*|_inf / (1 + |x*|_inf)`.
    pub allocation_tol: Option<f64>,
    /// Bound on `|p_i^l - lambda*_l|` over rows active at the optimum with
    /// a unique multiplier.
    pub price_tol: Option<f64>,
}

impl Default for Assertions {
    fn default() -> Self {
        Assertions {
            converged: true,
            equilibrium: true,
            allocation_tol: Some(1e-3),
            price_tol: Some(1e-3),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub source: InstanceSource,
    #[serde(default)]
    pub variant: GameVariant,
    #[serde(default = "default_solver_tol")]
    pub solver_tol: f64,
    #[serde(default)]
    pub init: InitSpec,
    #[serde(default)]
    pub dynamics: DynamicsOptions,
    #[serde(default)]
    pub verify: VerifyOptions,
    /// Embed every recorded snapshot in the report.
    #[serde(default)]
    pub include_trace: bool,
    #[serde(default)]
    pub assertions: Assertions,
}

fn default_solver_tol() -> f64 {
    1e-10
}

impl ExperimentConfig {
    pub fn new(name: impl Into<String>, source: InstanceSource, variant: GameVariant) -> Self {
        ExperimentConfig {
            name: name.into(),
            source,
            variant,
            solver_tol: default_solver_tol(),
            init: InitSpec::Default,
            dynamics: DynamicsOptions::default(),
            verify: VerifyOptions::default(),
            include_trace: false,
            assertions: Assertions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsSummary {
    pub rounds: usize,
    pub converged: bool,
    pub final_change: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunDiagnostics {
    /// `|x - x*|_inf / (1 + |x*|_inf)`
    pub allocation_error: f64,
    /// Over `compared_rows`; `None` when no row qualifies.
    pub price_error: Option<f64>,
    pub compared_rows: Vec<usize>,
    pub max_violation: f64,
    pub budget_imbalance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub label: String,
    pub instance_digest: String,
    pub instance: Instance,
    pub variant: GameVariant,
    pub init: InitSpec,
    pub solution: CentralizedSolution,
    pub dynamics: DynamicsSummary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<Snapshot>>,
    pub final_profile: MessageProfile,
    pub final_allocation: Vec<f64>,
    pub ne_report: NeReport,
    pub diagnostics: RunDiagnostics,
    pub failures: Vec<String>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub runs: usize,
    pub passed: usize,
    pub converged: usize,
    pub max_allocation_error: f64,
    pub max_price_error: Option<f64>,
}

/// Wall-clock facts kept apart from the reproducible part of a bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub elapsed_seconds: f64,
    pub threads: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub config: ExperimentConfig,
    pub reports: Vec<RunReport>,
    pub summary: Summary,
    pub metadata: Metadata,
}

#[derive(Serialize)]
struct Reproducible<'a> {
    config: &'a ExperimentConfig,
    reports: &'a [RunReport],
    summary: &'a Summary,
}

impl ReportBundle {
    pub fn passed(&self) -> bool {
        self.reports.iter().all(|r| r.passed)
    }

    /// Everything except `metadata`; identical for identical configs.
    pub fn reproducible_json(&self) -> String {
        serde_json::to_string_pretty(&Reproducible {
            config: &self.config,
            reports: &self.reports,
            summary: &self.summary,
        })
        .expect("report serializes")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Solves, builds the candidate equilibrium, runs the dynamics from the
/// configured start, certifies the end point and checks the assertions.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ReportBundle> {
    let start = std::time::Instant::now();
    let instances: Vec<(String, Instance)> = match &config.source {
        InstanceSource::File { path } => vec![(path.display().to_string(), Instance::from_json(&std::fs::read_to_string(path)?)?)],
        InstanceSource::Inline { instance } => vec![(config.name.clone(), instance.clone())],
        InstanceSource::Generate { scenario, seeds } => seeds
            .iter()
            .map(|&s| Ok((format!("seed {s}"), generate(scenario, s)?.instance)))
            .collect::<Result<_>>()?,
    };
    let reports = instances
        .into_par_iter()
        .map(|(label, instance)| run_one(config, label, instance))
        .collect::<Result<Vec<_>>>()?;
    let price_errors: Vec<f64> = reports.iter().filter_map(|r| r.diagnostics.price_error).collect();
    let summary = Summary {
        runs: reports.len(),
        passed: reports.iter().filter(|r| r.passed).count(),
        converged: reports.iter().filter(|r| r.dynamics.converged).count(),
        max_allocation_error: reports.iter().map(|r| r.diagnostics.allocation_error).fold(0.0, f64::max),
        max_price_error: (!price_errors.is_empty()).then(|| price_errors.iter().copied().fold(0.0, f64::max)),
    };
    Ok(ReportBundle {
        config: config.clone(),
        reports,
        summary,
        metadata: Metadata {
            elapsed_seconds: start.elapsed().as_secs_f64(),
            threads: rayon::current_num_threads(),
        },
    })
}

fn run_one(config: &ExperimentConfig, label: String, instance: Instance) -> Result<RunReport> {
    let problem = Problem::new(instance)?;
    let solution = solve(&problem, config.solver_tol)?;
    let candidate = construct_candidate_ne(&problem, &solution)?;
    let init = match &config.init {
        InitSpec::Default => MessageProfile::default_init(&problem),
        InitSpec::CandidateNe => candidate,
        InitSpec::Profile { profile } => profile.clone(),
        InitSpec::File { path } => read_json(path)?,
    };
    let trace = run_dynamics(&problem, config.variant, &init, &config.dynamics)?;
    let last = outcome(&problem, config.variant, &trace.final_profile)?;
    let ne_report = verify_epsilon_ne(&problem, config.variant, &trace.final_profile, &config.verify)?;
    let x = last.allocation.x;
    let diagnostics = compare(&problem, &solution, &trace.final_profile, &x, last.budget_imbalance);

    let mut failures = Vec::new();
    let a = &config.assertions;
    if a.converged && !trace.converged {
        failures.push(format!("dynamics did not converge in {} rounds", trace.rounds));
    }
    if a.equilibrium && !ne_report.passed {
        failures.push(format!("final profile is not an eps-NE (gain {:e})", ne_report.max_gain));
    }
    if let Some(tol) = a.allocation_tol {
        if !(diagnostics.allocation_error <= tol) {
            failures.push(format!("allocation error {:e} exceeds {tol:e}", diagnostics.allocation_error));
        }
    }
    if let (Some(tol), Some(err)) = (a.price_tol, diagnostics.price_error) {
        if !(err <= tol) {
            failures.push(format!("price error {err:e} exceeds {tol:e}"));
        }
    }
    Ok(RunReport {
        label,
        instance_digest: problem.instance.digest(),
        instance: problem.instance.clone(),
        variant: config.variant,
        init: config.init.clone(),
        solution,
        dynamics: DynamicsSummary {
            rounds: trace.rounds,
            converged: trace.converged,
            final_change: trace.final_change,
        },
        trace: config.include_trace.then_some(trace.snapshots),
        final_profile: trace.final_profile,
        final_allocation: x,
        ne_report,
        diagnostics,
        passed: failures.is_empty(),
        failures,
    })
}

/// Allocation and price distance from the centralized optimum.
pub fn compare(
    problem: &Problem,
    solution: &CentralizedSolution,
    profile: &MessageProfile,
    x: &[f64],
    budget_imbalance: f64,
) -> RunDiagnostics {
    let scale = 1.0 + solution.x_star.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let allocation_error = x
        .iter()
        .zip(&solution.x_star)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
        / scale;
    let compared_rows: Vec<usize> = (0..problem.l())
        .filter(|&l| {
            let c = problem.cap(l);
            let active = (c - problem.row_dot(l, &solution.x_star)).abs() <= 1e-7 * (1.0 + c.abs());
            active && solution.multiplier_unique[l]
        })
        .collect();
    let price_error = (!compared_rows.is_empty()).then(|| {
        compared_rows
            .iter()
            .flat_map(|&l| {
                problem.index.agents_on_constraint[l]
                    .iter()
                    .map(move |&i| (profile.prices[i][l] - solution.lambda_star[l]).abs())
            })
            .fold(0.0, f64::max)
    });
    RunDiagnostics {
        allocation_error,
        price_error,
        compared_rows,
        max_violation: problem.instance.max_violation(x),
        budget_imbalance,
    }
}

/// Reads an instance file, mapping any failure to a message naming the file.
pub fn load_instance(path: impl AsRef<Path>) -> Result<Instance> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    Instance::from_json(&text).map_err(|e| match e {
        Error::Json(j) => Error::InvalidInstance(format!("{}: {j}", path.display())),
        other => other,
    })
}
