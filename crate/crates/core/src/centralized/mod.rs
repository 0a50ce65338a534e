//! The benchmark optimum of the social problem and its multipliers.

mod nnls;
mod oracle;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::model::{validate_solution, CheckStatus, Problem, RowKind, Valuation};
use crate::numeric::{csum, decreasing_root};

pub use oracle::{brute_force_oracle, oracle_tolerance, OracleResult, ORACLE_POINT_LIMIT};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ResidualRecord {
    pub primal: f64,
    pub dual: f64,
    pub slack: f64,
    pub stationarity: f64,
}

impl ResidualRecord {
    pub fn max(&self) -> f64 {
        self.primal
            .max(self.dual)
            .max(self.slack)
            .max(self.stationarity)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentralizedSolution {
    pub x_star: Vec<f64>,
    pub lambda_star: Vec<f64>,
    pub residuals: ResidualRecord,
    pub iterations: usize,
    /// Per constraint: false when the active rows leave this multiplier free.
    pub multiplier_unique: Vec<bool>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl CentralizedSolution {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("solution serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DualMethod {
    /// Projected Newton on the dual with an Armijo line search.
    ProjectedNewton,
    /// Projected gradient with steps `initial_step / sqrt(k + 1)`.
    DiminishingGradient { initial_step: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iterations: usize,
    pub method: DualMethod,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tol: 1e-8,
            max_iterations: 100_000,
            method: DualMethod::ProjectedNewton,
        }
    }
}

/// Sum of the members' valuations, as a function of the common allocation.
#[derive(Debug, Clone)]
pub(crate) struct GroupValuation(pub Vec<Valuation>);

impl GroupValuation {
    pub(crate) fn of(problem: &Problem) -> Vec<GroupValuation> {
        problem
            .reduced
            .groups
            .iter()
            .map(|g| GroupValuation(g.iter().map(|&i| *problem.instance.valuation(i)).collect()))
            .collect()
    }

    pub(crate) fn value(&self, x: f64) -> f64 {
        csum(self.0.iter().map(|v| v.value_unchecked(x)))
    }

    pub(crate) fn derivative(&self, x: f64) -> f64 {
        csum(self.0.iter().map(|v| v.derivative_unchecked(x)))
    }

    pub(crate) fn second_derivative(&self, x: f64) -> f64 {
        csum(self.0.iter().map(|v| v.second_derivative_unchecked(x)))
    }

    /// Maximizer of `V(x) - q x` over `[0, upper]`.
    pub(crate) fn demand(&self, q: f64, upper: f64) -> f64 {
        decreasing_root(
            |x| self.derivative(x) - q,
            |x| self.second_derivative(x),
            0.0,
            upper,
            1e-16,
        )
    }
}

struct Dual<'a> {
    problem: &'a Problem,
    groups: Vec<GroupValuation>,
    /// Inequality rows in the reduced space.
    rows: Vec<usize>,
}

struct DualPoint {
    lambda: Vec<f64>,
    x: Vec<f64>,
    grad: Vec<f64>,
    value: f64,
}

impl<'a> Dual<'a> {
    fn coeff(&self, r: usize, k: usize) -> f64 {
        self.problem.reduced.reduced_coeffs[self.rows[r]][k]
    }

    fn cap(&self, r: usize) -> f64 {
        self.problem.reduced.reduced_caps[self.rows[r]]
    }

    fn eval(&self, lambda: Vec<f64>) -> DualPoint {
        let upper = self.problem.instance.upper;
        let x: Vec<f64> = (0..self.groups.len())
            .map(|k| {
                let q = csum((0..self.rows.len()).map(|r| lambda[r] * self.coeff(r, k)));
                self.groups[k].demand(q, upper)
            })
            .collect();
        let grad: Vec<f64> = (0..self.rows.len())
            .map(|r| self.cap(r) - self.problem.reduced.row_dot(self.rows[r], &x))
            .collect();
        let value = csum(
            self.groups
                .iter()
                .zip(&x)
                .map(|(g, &xk)| g.value(xk))
                .chain(lambda.iter().zip(&grad).map(|(l, g)| l * g)),
        );
        DualPoint {
            lambda,
            x,
            grad,
            value,
        }
    }

    fn converged(&self, pt: &DualPoint, tol: f64) -> bool {
        pt.grad
            .iter()
            .zip(&pt.lambda)
            .all(|(&g, &l)| -g <= tol && (l * g).abs() <= tol)
    }

    fn initial(&self) -> Vec<f64> {
        // price each row at the marginal value of an even share of its cap
        (0..self.rows.len())
            .map(|r| {
                let members: Vec<usize> = (0..self.groups.len())
                    .filter(|&k| self.coeff(r, k) > 0.0)
                    .collect();
                let share = self.cap(r) / members.len() as f64;
                let s = csum(members.iter().map(|&k| {
                    let a = self.coeff(r, k);
                    self.groups[k].derivative((share / a).min(self.problem.instance.upper)) / a
                }));
                (s / members.len() as f64).max(0.0)
            })
            .collect()
    }

    fn newton_direction(&self, pt: &DualPoint, mu: f64, free: &[usize]) -> Vec<f64> {
        let upper = self.problem.instance.upper;
        let weights: Vec<f64> = self
            .groups
            .iter()
            .zip(&pt.x)
            .map(|(g, &x)| {
                if x > 0.0 && x < upper {
                    1.0 / g.second_derivative(x).abs()
                } else {
                    0.0
                }
            })
            .collect();
        let f = free.len();
        let mut h = DMatrix::<f64>::zeros(f, f);
        for (a, &ra) in free.iter().enumerate() {
            for (b, &rb) in free.iter().enumerate().skip(a) {
                let v = csum(
                    weights
                        .iter()
                        .enumerate()
                        .map(|(k, w)| w * self.coeff(ra, k) * self.coeff(rb, k)),
                );
                h[(a, b)] = v;
                h[(b, a)] = v;
            }
            h[(a, a)] += mu;
        }
        let rhs = DVector::from_iterator(f, free.iter().map(|&r| -pt.grad[r]));
        match h.clone().cholesky() {
            Some(ch) => ch.solve(&rhs).iter().copied().collect(),
            None => rhs.iter().map(|v| v / mu.max(1e-300)).collect(),
        }
    }

    fn solve_newton(&self, opts: &SolveOptions) -> Result<(DualPoint, usize)> {
        let m = self.rows.len();
        let mut pt = self.eval(self.initial());
        let mut nu = 1e-3;
        for it in 0..opts.max_iterations {
            if self.converged(&pt, 0.1 * opts.tol) {
                return Ok((pt, it));
            }
            let proj_gap = (0..m)
                .map(|r| (pt.lambda[r] - (pt.lambda[r] - pt.grad[r]).max(0.0)).abs())
                .fold(0.0, f64::max);
            let eps_active = proj_gap.min(1e-8);
            let (free, active): (Vec<usize>, Vec<usize>) =
                (0..m).partition(|&r| !(pt.lambda[r] <= eps_active && pt.grad[r] > 0.0));
            let gnorm = free.iter().map(|&r| pt.grad[r].abs()).fold(0.0, f64::max);
            let mu = (nu * gnorm).max(1e-14);
            let dir = self.newton_direction(&pt, mu, &free);
            let mut step = 1.0;
            let mut accepted = None;
            for _ in 0..60 {
                let mut lam = pt.lambda.clone();
                for (a, &r) in free.iter().enumerate() {
                    lam[r] = (pt.lambda[r] + step * dir[a]).max(0.0);
                }
                for &r in &active {
                    lam[r] = 0.0;
                }
                let decrease = csum((0..m).map(|r| pt.grad[r] * (lam[r] - pt.lambda[r])));
                let cand = self.eval(lam);
                if cand.value <= pt.value + 1e-4 * decrease + 1e-15 * (1.0 + pt.value.abs()) {
                    accepted = Some(cand);
                    break;
                }
                step *= 0.5;
            }
            match accepted {
                Some(cand) => {
                    nu = if step == 1.0 { (nu * 0.25).max(1e-12) } else { (nu * 4.0).min(1e6) };
                    pt = cand;
                }
                None => nu = (nu * 16.0).min(1e12),
            }
        }
        if self.converged(&pt, opts.tol) {
            Ok((pt, opts.max_iterations))
        } else {
            Err(Error::NoConvergence(opts.max_iterations))
        }
    }

    fn solve_gradient(&self, opts: &SolveOptions, initial_step: f64) -> Result<(DualPoint, usize)> {
        let mut pt = self.eval(vec![0.0; self.rows.len()]);
        for it in 0..opts.max_iterations {
            if self.converged(&pt, 0.1 * opts.tol) {
                return Ok((pt, it));
            }
            let s = initial_step / ((it + 1) as f64).sqrt();
            let lam = pt
                .lambda
                .iter()
                .zip(&pt.grad)
                .map(|(l, g)| (l - s * g).max(0.0))
                .collect();
            pt = self.eval(lam);
        }
        Err(Error::NoConvergence(opts.max_iterations))
    }
}

/// Solves the social problem with the default options at tolerance `tol`.
pub fn solve(problem: &Problem, tol: f64) -> Result<CentralizedSolution> {
    solve_with(
        problem,
        &SolveOptions {
            tol,
            ..SolveOptions::default()
        },
    )
}

pub fn solve_with(problem: &Problem, opts: &SolveOptions) -> Result<CentralizedSolution> {
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidInstance(format!("tolerance {} must be positive", opts.tol)));
    }
    let dual = Dual {
        problem,
        groups: GroupValuation::of(problem),
        rows: problem.reduced.inequality_rows().collect(),
    };
    let (pt, iterations) = match opts.method {
        DualMethod::ProjectedNewton => dual.solve_newton(opts)?,
        DualMethod::DiminishingGradient { initial_step } => dual.solve_gradient(opts, initial_step)?,
    };
    let x = problem.reduced.expand(&pt.x);
    let mut lambda = vec![0.0; problem.l()];
    for (r, &l) in dual.rows.iter().enumerate() {
        lambda[l] = pt.lambda[r];
    }
    equality_multipliers(problem, &x, &mut lambda);
    let residuals = kkt_residuals(problem, &x, &lambda)?;
    let mut warnings = Vec::new();
    let a2 = validate_solution(&problem.instance, &x);
    if a2.status == CheckStatus::Fail {
        warnings.push(format!("A2: {}", a2.detail));
    }
    let multiplier_unique = multiplier_uniqueness(problem, &x, &lambda);
    Ok(CentralizedSolution {
        x_star: x,
        lambda_star: lambda,
        residuals,
        iterations,
        multiplier_unique,
        warnings,
    })
}

/// Splits each agent's stationarity gap over the equality rows with
/// nonnegative weights.
fn equality_multipliers(problem: &Problem, x: &[f64], lambda: &mut [f64]) {
    let eq_rows: Vec<usize> = (0..problem.l())
        .filter(|&l| problem.reduced.kinds[l] == RowKind::Equality)
        .collect();
    if eq_rows.is_empty() {
        return;
    }
    let agents: Vec<usize> = (0..problem.n())
        .filter(|&i| problem.reduced.groups[problem.reduced.group_of[i]].len() > 1)
        .collect();
    let m = DMatrix::from_fn(agents.len(), eq_rows.len(), |a, e| {
        problem.coeff(eq_rows[e], agents[a])
    });
    let b = DVector::from_iterator(
        agents.len(),
        agents.iter().map(|&i| {
            let v = problem.instance.valuation(i).derivative_unchecked(x[i]);
            v - csum(
                problem.index.constraints_of_agent[i]
                    .iter()
                    .filter(|&&l| problem.reduced.kinds[l] != RowKind::Equality)
                    .map(|&l| problem.coeff(l, i) * lambda[l]),
            )
        }),
    );
    let z = nnls::nnls(&m, &b);
    for (e, &l) in eq_rows.iter().enumerate() {
        lambda[l] = z[e];
    }
}

/// A multiplier is unique when no direction in the null space of the
/// active rows (transposed) moves it.
fn multiplier_uniqueness(problem: &Problem, x: &[f64], lambda: &[f64]) -> Vec<bool> {
    let upper = problem.instance.upper;
    let active: Vec<usize> = (0..problem.l())
        .filter(|&l| {
            let c = problem.cap(l);
            lambda[l] > 0.0 || (problem.row_dot(l, x) - c).abs() <= 1e-7 * (1.0 + c.abs())
        })
        .collect();
    let agents: Vec<usize> = (0..problem.n()).filter(|&i| x[i] > 0.0 && x[i] < upper).collect();
    let mut unique = vec![true; problem.l()];
    if active.is_empty() {
        return unique;
    }
    let m = DMatrix::from_fn(agents.len(), active.len(), |a, r| problem.coeff(active[r], agents[a]));
    let gram = m.transpose() * &m;
    let eig = SymmetricEigen::new(gram);
    let top = eig.eigenvalues.amax().max(1.0);
    for (j, &ev) in eig.eigenvalues.iter().enumerate() {
        if ev <= 1e-10 * top {
            let v = eig.eigenvectors.column(j);
            for (r, &l) in active.iter().enumerate() {
                if v[r].abs() > 1e-8 {
                    unique[l] = false;
                }
            }
        }
    }
    unique
}

/// Primal, dual, complementary-slackness and stationarity residuals.
/// Stationarity is measured per equality group with reduced coefficients.
pub fn kkt_residuals(problem: &Problem, x: &[f64], lambda: &[f64]) -> Result<ResidualRecord> {
    check_len("allocation", problem.n(), x.len())?;
    check_len("multipliers", problem.l(), lambda.len())?;
    if let Some(&v) = x.iter().find(|&&v| v < 0.0) {
        return Err(Error::Domain(v));
    }
    let mut r = ResidualRecord::default();
    for l in 0..problem.l() {
        let excess = problem.row_dot(l, x) - problem.cap(l);
        r.primal = r.primal.max(excess.max(0.0));
        r.dual = r.dual.max((-lambda[l]).max(0.0));
        r.slack = r.slack.max((lambda[l] * excess).abs());
    }
    let red = &problem.reduced;
    for (k, g) in red.groups.iter().enumerate() {
        let marginal = csum(
            g.iter()
                .map(|&i| problem.instance.valuation(i).derivative_unchecked(x[i])),
        );
        let price = csum((0..problem.l()).map(|l| red.reduced_coeffs[l][k] * lambda[l]));
        r.stationarity = r.stationarity.max((marginal - price).abs());
    }
    Ok(r)
}
