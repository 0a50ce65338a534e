use serde::{Deserialize, Serialize};

use super::GroupValuation;
use crate::error::{Error, Result};
use crate::model::Problem;

/// Most outer grid points the oracle will enumerate.
pub const ORACLE_POINT_LIMIT: f64 = 1e8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub grid_points: f64,
}

/// Exhaustive search over the grid `step * Z^K` inside `[0, D]^K` and the
/// reduced polytope. The last coordinate is resolved with a running argmax
/// table, so only the first `K - 1` coordinates are enumerated.
pub fn brute_force_oracle(problem: &Problem, step: f64) -> Result<OracleResult> {
    if !(step > 0.0) {
        return Err(Error::InvalidInstance(format!("grid step {step} must be positive")));
    }
    let red = &problem.reduced;
    let k_dim = red.dim();
    if k_dim > 4 {
        return Err(Error::InvalidInstance(format!(
            "oracle handles at most 4 free variables, got {k_dim}"
        )));
    }
    let rows: Vec<usize> = red.inequality_rows().collect();
    let bound: Vec<f64> = (0..k_dim)
        .map(|k| {
            rows.iter()
                .filter(|&&l| red.reduced_coeffs[l][k] > 0.0)
                .map(|&l| red.reduced_caps[l] / red.reduced_coeffs[l][k])
                .fold(problem.instance.upper, f64::min)
        })
        .collect();
    let counts: Vec<usize> = bound.iter().map(|&u| (u / step).floor() as usize + 1).collect();
    let outer: f64 = counts[..k_dim - 1].iter().map(|&c| c as f64).product();
    if outer > ORACLE_POINT_LIMIT {
        return Err(Error::TooLarge {
            points: outer,
            limit: ORACLE_POINT_LIMIT,
        });
    }
    let groups = GroupValuation::of(problem);
    let last = k_dim - 1;
    let last_values: Vec<f64> = (0..counts[last])
        .map(|j| groups[last].value(j as f64 * step))
        .collect();
    let mut best_upto = Vec::with_capacity(counts[last]);
    for (j, &v) in last_values.iter().enumerate() {
        match best_upto.last() {
            Some(&b) if last_values[b] >= v => best_upto.push(b),
            _ => best_upto.push(j),
        }
    }
    let tol = |c: f64| 1e-12 * (1.0 + c.abs());

    let mut search = Search {
        problem,
        rows: &rows,
        groups: &groups,
        counts: &counts,
        step,
        last_values: &last_values,
        best_upto: &best_upto,
        point: vec![0usize; k_dim],
        usage: vec![0.0; rows.len()],
        best: (vec![0usize; k_dim], f64::NEG_INFINITY),
        tol: &tol,
    };
    search.descend(0, 0.0);
    let (idx, _) = search.best;
    let reduced_x: Vec<f64> = idx.iter().map(|&j| j as f64 * step).collect();
    let x = red.expand(&reduced_x);
    let value = problem.instance.objective(&x)?;
    Ok(OracleResult {
        x,
        value,
        grid_points: outer * counts[last] as f64,
    })
}

struct Search<'a, T: Fn(f64) -> f64> {
    problem: &'a Problem,
    rows: &'a [usize],
    groups: &'a [GroupValuation],
    counts: &'a [usize],
    step: f64,
    last_values: &'a [f64],
    best_upto: &'a [usize],
    point: Vec<usize>,
    usage: Vec<f64>,
    best: (Vec<usize>, f64),
    tol: &'a T,
}

impl<T: Fn(f64) -> f64> Search<'_, T> {
    fn coeff(&self, r: usize, k: usize) -> f64 {
        self.problem.reduced.reduced_coeffs[self.rows[r]][k]
    }

    fn cap(&self, r: usize) -> f64 {
        self.problem.reduced.reduced_caps[self.rows[r]]
    }

    fn descend(&mut self, k: usize, partial: f64) {
        let last = self.counts.len() - 1;
        if k == last {
            let mut jmax = self.counts[last] - 1;
            for r in 0..self.rows.len() {
                let room = self.cap(r) - self.usage[r];
                if room < -(self.tol)(self.cap(r)) {
                    return;
                }
                let a = self.coeff(r, last);
                if a > 0.0 {
                    let fit = ((room + (self.tol)(self.cap(r))) / (a * self.step)).floor();
                    if fit < 0.0 {
                        return;
                    }
                    jmax = jmax.min(fit as usize);
                }
            }
            let j = self.best_upto[jmax];
            let total = partial + self.last_values[j];
            if total > self.best.1 {
                self.point[last] = j;
                self.best = (self.point.clone(), total);
            }
            return;
        }
        for j in 0..self.counts[k] {
            let x = j as f64 * self.step;
            let mut feasible = true;
            for r in 0..self.rows.len() {
                self.usage[r] += self.coeff(r, k) * x;
                if self.usage[r] > self.cap(r) + (self.tol)(self.cap(r)) {
                    feasible = false;
                }
            }
            if feasible {
                self.point[k] = j;
                let v = partial + self.groups[k].value(x);
                self.descend(k + 1, v);
            }
            for r in 0..self.rows.len() {
                self.usage[r] -= self.coeff(r, k) * x;
            }
            if !feasible {
                break;
            }
        }
    }
}

/// Bound on how much objective the grid can lose to the continuum optimum:
/// one grid step per free variable, priced at the steepest slope on its box.
pub fn oracle_tolerance(problem: &Problem, step: f64) -> f64 {
    let red = &problem.reduced;
    GroupValuation::of(problem)
        .iter()
        .enumerate()
        .map(|(k, g)| {
            let u = red
                .inequality_rows()
                .filter(|&l| red.reduced_coeffs[l][k] > 0.0)
                .map(|l| red.reduced_caps[l] / red.reduced_coeffs[l][k])
                .fold(problem.instance.upper, f64::min);
            let rise = g.value(step) - g.value(0.0);
            let fall = g.derivative(u).abs() * step;
            rise.max(fall)
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Agent, Constraint, Instance, Valuation};

    fn canonical() -> Problem {
        Problem::new(Instance {
            agents: vec![
                Agent {
                    valuation: Valuation::LogShift { a: 1.0, b: 1.0 }
                };
                2
            ],
            constraints: vec![Constraint::new([(0, 1.0), (1, 1.0)], 1.0)],
            equality_groups: vec![],
            d: vec![0.01, 0.01],
            upper: 10.0,
            eta: 1.0,
            theta: None,
        })
        .unwrap()
    }

    /// Plain double loop over the same grid.
    fn naive(problem: &Problem, step: f64) -> f64 {
        let mut best = f64::NEG_INFINITY;
        let n = (1.0 / step).round() as usize;
        for a in 0..=n {
            for b in 0..=n - a {
                let x = [a as f64 * step, b as f64 * step];
                best = best.max(problem.instance.objective(&x).unwrap());
            }
        }
        best
    }

    #[test]
    fn canonical_grid_optimum() {
        let p = canonical();
        let r = brute_force_oracle(&p, 1e-3).unwrap();
        assert!((r.x[0] - 0.5).abs() <= 1e-3 && (r.x[1] - 0.5).abs() <= 1e-3);
        assert!((r.value - naive(&p, 1e-2)).abs() < 1e-2);
        let coarse = brute_force_oracle(&p, 1e-2).unwrap();
        assert!((coarse.value - naive(&p, 1e-2)).abs() < 1e-12);
    }

    #[test]
    fn tiny_cap_gives_zero() {
        let mut inst = canonical().instance;
        inst.constraints[0].cap = 1e-4;
        inst.d = vec![1e-5, 1e-5];
        let p = Problem::new(inst).unwrap();
        let r = brute_force_oracle(&p, 1e-3).unwrap();
        assert_eq!(r.x, vec![0.0, 0.0]);
    }

    #[test]
    fn too_large_grid() {
        let mut inst = canonical().instance;
        inst.constraints[0].cap = 1e9;
        inst.upper = 1e9;
        let p = Problem::new(inst).unwrap();
        assert!(matches!(brute_force_oracle(&p, 1.0), Err(Error::TooLarge { .. })));
    }
}
