use super::{GameVariant, MessageProfile};
use crate::allocation::allocate;
use crate::error::{Error, Result};
use crate::model::Problem;
use crate::numeric::{csum, decreasing_root, golden_max};
use crate::taxation::{check_offeq_support, pbar_unchecked};

/// Price on `l` that minimizes agent `i`'s tax with everything else fixed:
/// `max(0, pbar - eta pbar delta^2 / 2)`.
pub fn best_response_price(
    problem: &Problem,
    variant: GameVariant,
    profile: &MessageProfile,
    i: usize,
    l: usize,
) -> Result<f64> {
    check_variant(problem, variant)?;
    if !problem.index.constraints_of_agent[i].contains(&l) {
        return Err(Error::AgentNotOnConstraint {
            agent: i,
            constraint: l,
        });
    }
    let x = allocate(problem, &profile.y)?.x;
    Ok(price_response(problem, &profile.prices, &x, i, l))
}

pub(crate) fn price_response(problem: &Problem, prices: &[Vec<f64>], x: &[f64], i: usize, l: usize) -> f64 {
    let pb = pbar_unchecked(&problem.index.agents_on_constraint[l], prices, i, l);
    let delta = problem.cap(l) - problem.row_dot(l, x);
    (pb - 0.5 * problem.instance.eta * pb * delta * delta).max(0.0)
}

fn check_variant(problem: &Problem, variant: GameVariant) -> Result<()> {
    if variant == GameVariant::SbbOffEq {
        check_offeq_support(problem)?;
    }
    Ok(())
}

/// The part of agent `i`'s utility that depends on its own message, with
/// demand `y_i` substituted: `v_i(x_i) - t_i` under the base tax. Rebates
/// are functions of the other agents' messages only, so they shift every
/// variant's utility by the same constant and are left out.
pub fn own_objective(problem: &Problem, profile: &MessageProfile, i: usize, y_i: f64) -> Result<f64> {
    let ctx = DemandContext::new(problem, profile, i);
    ctx.value(y_i)
}

struct DemandContext<'a> {
    problem: &'a Problem,
    i: usize,
    group: usize,
    members: f64,
    /// Sum of the other group members' demands.
    others_in_group: f64,
    y: Vec<f64>,
    /// `(l, A_li, pbar, p_i^l)` for each constraint of `i`.
    rows: Vec<(usize, f64, f64, f64)>,
}

impl<'a> DemandContext<'a> {
    fn new(problem: &'a Problem, profile: &MessageProfile, i: usize) -> Self {
        let red = &problem.reduced;
        let group = red.group_of[i];
        let g = &red.groups[group];
        let rows = problem.index.constraints_of_agent[i]
            .iter()
            .map(|&l| {
                let pb = pbar_unchecked(&problem.index.agents_on_constraint[l], &profile.prices, i, l);
                (l, problem.coeff(l, i), pb, profile.prices[i][l])
            })
            .collect();
        DemandContext {
            problem,
            i,
            group,
            members: g.len() as f64,
            others_in_group: csum(g.iter().filter(|&&j| j != i).map(|&j| profile.y[j])),
            y: profile.y.clone(),
            rows,
        }
    }

    fn value(&self, y_i: f64) -> Result<f64> {
        let mut y = self.y.clone();
        y[self.i] = y_i;
        let x = allocate(self.problem, &y)?.x;
        let xi = x[self.i];
        let eta = self.problem.instance.eta;
        let mut terms = Vec::with_capacity(1 + 3 * self.rows.len());
        terms.push(self.problem.instance.valuation(self.i).value_unchecked(xi));
        for &(l, a, pb, p) in &self.rows {
            let delta = self.problem.cap(l) - self.problem.row_dot(l, &x);
            let gap = p - pb;
            terms.push(-a * xi * pb);
            terms.push(-gap * gap);
            terms.push(-eta * pb * p * delta * delta);
        }
        Ok(csum(terms))
    }

    /// Upper end, in `y_i`, of the demands that keep the profile inside the
    /// constraint set.
    fn interior_limit(&self) -> f64 {
        let red = &self.problem.reduced;
        let k = self.group;
        let mut yr = red.average(&self.y);
        yr[k] = 0.0;
        red.inequality_rows()
            .filter(|&l| red.reduced_coeffs[l][k] > 0.0)
            .map(|l| {
                let room = red.reduced_caps[l] - red.row_dot(l, &yr);
                self.members * room / red.reduced_coeffs[l][k] - self.others_in_group
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Slope of the interior objective in `y_i`, and its derivative.
    fn interior_slope(&self, y_i: f64) -> (f64, f64) {
        let red = &self.problem.reduced;
        let k = self.group;
        let xk = (self.others_in_group + y_i) / self.members;
        let mut yr = red.average(&self.y);
        yr[k] = xk;
        let v = self.problem.instance.valuation(self.i);
        let eta = self.problem.instance.eta;
        let mut g = vec![v.derivative_unchecked(xk)];
        let mut dg = vec![v.second_derivative_unchecked(xk)];
        for &(l, a, pb, p) in &self.rows {
            let ak = red.reduced_coeffs[l][k];
            g.push(-a * pb);
            if ak != 0.0 && pb * p != 0.0 {
                let delta = red.reduced_caps[l] - red.row_dot(l, &yr);
                g.push(2.0 * eta * pb * p * delta * ak);
                dg.push(-2.0 * eta * pb * p * ak * ak);
            }
        }
        (csum(g) / self.members, csum(dg) / (self.members * self.members))
    }
}

/// Largest demand of agent `i` that keeps the quoted profile inside the
/// constraint set, others fixed.
pub fn feasible_demand_limit(problem: &Problem, profile: &MessageProfile, i: usize) -> f64 {
    DemandContext::new(problem, profile, i).interior_limit()
}

/// Allocation level of agent `i`'s group at which its feasible-side
/// marginal utility vanishes, extended past the boundary of the constraint
/// set and below the demand floor, within `[0, D + 1]`.
pub fn notional_level(problem: &Problem, profile: &MessageProfile, i: usize) -> f64 {
    let ctx = DemandContext::new(problem, profile, i);
    let to_y = |x: f64| ctx.members * x - ctx.others_in_group;
    decreasing_root(
        |x| ctx.interior_slope(to_y(x)).0,
        |x| ctx.interior_slope(to_y(x)).1 * ctx.members,
        0.0,
        problem.instance.upper + 1.0,
        1e-15,
    )
}

/// Demand maximizing agent `i`'s utility with everything else fixed, over
/// `bracket` (default `(d_i + 1e-12, D + 1]`). The concave piece where the
/// profile stays feasible is solved by a safeguarded Newton iteration; the
/// piece beyond the boundary by a log-spaced scan refined with golden
/// section. The better of the two wins.
pub fn best_response_demand(
    problem: &Problem,
    variant: GameVariant,
    profile: &MessageProfile,
    i: usize,
    bracket: Option<(f64, f64)>,
) -> Result<f64> {
    check_variant(problem, variant)?;
    let d = problem.instance.d[i];
    let (lo, hi) = bracket.unwrap_or((d + 1e-12, problem.instance.upper + 1.0));
    if !(lo > d && lo < hi && hi.is_finite()) {
        return Err(Error::BracketInvalid { lo, hi });
    }
    let ctx = DemandContext::new(problem, profile, i);
    Ok(search(&ctx, lo, hi)?.0)
}

fn search(ctx: &DemandContext, lo: f64, hi: f64) -> Result<(f64, f64)> {
    let limit = ctx.interior_limit();
    let mut best: Option<(f64, f64)> = None;
    if limit > lo {
        let top = limit.min(hi);
        let y = decreasing_root(
            |y| ctx.interior_slope(y).0,
            |y| ctx.interior_slope(y).1,
            lo,
            top,
            1e-15,
        );
        best = Some((y, ctx.value(y)?));
    }
    if limit < hi {
        let start = limit.max(lo);
        let ext = exterior(ctx, start, hi)?;
        best = match best {
            Some(b) if ext.1 <= b.1 + 1e-12 * (1.0 + b.1.abs()) => Some(b),
            _ => Some(ext),
        };
    }
    Ok(best.expect("bracket is nonempty"))
}

fn exterior(ctx: &DemandContext, a: f64, b: f64) -> Result<(f64, f64)> {
    const POINTS: usize = 24;
    let offset = 1e-9 * (1.0 + a.abs());
    let ratio = ((b - a + offset) / offset).powf(1.0 / POINTS as f64);
    let grid: Vec<f64> = (0..=POINTS)
        .map(|j| {
            if j == POINTS {
                b
            } else {
                (a + offset * (ratio.powi(j as i32) - 1.0)).min(b)
            }
        })
        .collect();
    let values = grid.iter().map(|&y| ctx.value(y)).collect::<Result<Vec<f64>>>()?;
    let j = (0..grid.len())
        .max_by(|&p, &q| values[p].total_cmp(&values[q]).then(q.cmp(&p)))
        .unwrap();
    let left = grid[j.saturating_sub(1)];
    let right = grid[(j + 1).min(grid.len() - 1)];
    let (y, v) = golden_max(|y| ctx.value(y).unwrap_or(f64::NEG_INFINITY), left, right, 1e-13);
    Ok(if v >= values[j] { (y, v) } else { (grid[j], values[j]) })
}
