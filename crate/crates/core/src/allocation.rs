//! The allocation map: demands to a feasible allocation along the ray from
//! the anchor point.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::model::Problem;

/// Rows whose denominator falls below this are treated as parallel to the ray.
const PARALLEL_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationResult {
    pub x: Vec<f64>,
    pub alpha0: f64,
    pub binding_constraint: Option<usize>,
    pub was_interior: bool,
}

fn feasibility_slack(cap: f64) -> f64 {
    1e-12 * (1.0 + cap.abs())
}

/// Smallest positive ray scale hitting a face, with the lowest-index face
/// on ties. Returns `(1, None)` when every face is beyond `y`.
pub fn alpha0(problem: &Problem, theta_reduced: &[f64], y_reduced: &[f64]) -> (f64, Option<usize>) {
    let red = &problem.reduced;
    let mut best = (f64::INFINITY, None);
    for l in red.inequality_rows() {
        let c = red.reduced_caps[l];
        let num = c - red.row_dot(l, theta_reduced);
        let den = crate::numeric::csum(
            red.reduced_coeffs[l]
                .iter()
                .zip(y_reduced.iter().zip(theta_reduced))
                .map(|(a, (y, t))| a * (y - t)),
        );
        if den > PARALLEL_EPS {
            let alpha = num / den;
            if alpha > 0.0 && alpha < best.0 {
                best = (alpha, Some(l));
            }
        }
    }
    if best.0 > 1.0 {
        (1.0, None)
    } else {
        best
    }
}

fn check_demand(problem: &Problem, y: &[f64]) -> Result<()> {
    check_len("demand", problem.n(), y.len())?;
    for (i, (&yi, &di)) in y.iter().zip(&problem.instance.d).enumerate() {
        if !(yi > di) || !yi.is_finite() {
            return Err(Error::DemandOutOfBox {
                agent: i,
                demand: yi,
                floor: di,
            });
        }
    }
    Ok(())
}

fn reduced_allocation(problem: &Problem, y_reduced: &[f64]) -> (Vec<f64>, f64, Option<usize>, bool) {
    let red = &problem.reduced;
    let interior = red.inequality_rows().all(|l| {
        let c = red.reduced_caps[l];
        red.row_dot(l, y_reduced) <= c + feasibility_slack(c)
    });
    let theta = &problem.theta_reduced;
    let (alpha, binding) = alpha0(problem, theta, y_reduced);
    if interior {
        return (y_reduced.to_vec(), 1.0, binding, true);
    }
    let x = theta
        .iter()
        .zip(y_reduced)
        .map(|(t, y)| t + alpha * (y - t))
        .collect();
    (x, alpha, binding, false)
}

/// Allocation for a demand vector. Instances with equality groups are
/// routed through [`allocate_degenerate`].
pub fn allocate(problem: &Problem, y: &[f64]) -> Result<AllocationResult> {
    if problem.instance.is_degenerate() {
        return allocate_degenerate(problem, y);
    }
    check_demand(problem, y)?;
    let (x, alpha0, binding_constraint, was_interior) = reduced_allocation(problem, y);
    Ok(AllocationResult {
        x,
        alpha0,
        binding_constraint,
        was_interior,
    })
}

/// Averages demands within each group, allocates in the reduced space and
/// gives every member its group's allocation.
pub fn allocate_degenerate(problem: &Problem, y: &[f64]) -> Result<AllocationResult> {
    check_demand(problem, y)?;
    let y_reduced = problem.reduced.average(y);
    let (xr, alpha0, binding_constraint, was_interior) = reduced_allocation(problem, &y_reduced);
    Ok(AllocationResult {
        x: problem.reduced.expand(&xr),
        alpha0,
        binding_constraint,
        was_interior,
    })
}

/// Forward-difference slope of `x_i` in `y_i` with step `1e-7`.
pub fn allocation_slope(problem: &Problem, y: &[f64], i: usize) -> Result<f64> {
    const H: f64 = 1e-7;
    let base = allocate(problem, y)?.x[i];
    let mut moved = y.to_vec();
    moved[i] += H;
    Ok((allocate(problem, &moved)?.x[i] - base) / H)
}

/// Sign of [`allocation_slope`]: `1`, `0` or `-1`.
pub fn allocation_gradient_sign(problem: &Problem, y: &[f64], i: usize) -> Result<i8> {
    let s = allocation_slope(problem, y, i)?;
    Ok(if s > 0.0 {
        1
    } else if s < 0.0 {
        -1
    } else {
        0
    })
}
