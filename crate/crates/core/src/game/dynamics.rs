use serde::{Deserialize, Serialize};

use super::best_response::{feasible_demand_limit, notional_level, price_response};
use super::{best_response_demand, outcome, GameVariant, MessageProfile};
use crate::allocation::allocate;
use crate::centralized::GroupValuation;
use crate::error::Result;
use crate::model::{Problem, RowKind};
use crate::taxation::pbar_unchecked;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum PriceRule {
    /// Closed-form tax-minimizing price only.
    BestResponse,
    /// Best-response price plus `gain * (A_l^T y - c_l)`, the excess of the
    /// quoted demands over the cap. Each agent halves its gain on a row when
    /// the excess changes sign and grows it by `growth` otherwise.
    ExcessDemand { gain: f64, growth: f64 },
}

impl Default for PriceRule {
    fn default() -> Self {
        PriceRule::ExcessDemand {
            gain: 1.0,
            growth: 1.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DynamicsOptions {
    pub max_rounds: usize,
    /// Converged once a full round moves no message by this much.
    pub tol: f64,
    pub price_rule: PriceRule,
    /// Keep a snapshot every this many rounds; 0 keeps only the last.
    pub record_every: usize,
    /// Demands stay at their initial values until the price-taking excess
    /// on every priced row is below this. Ignored by `BestResponse`.
    pub price_lead: f64,
    /// After each round, replace quoted demands outside the feasible set by
    /// the allocation they induce when that allocation is a valid message.
    /// The allocation, taxes and utilities are unchanged by the swap.
    pub requote_exterior: bool,
    /// Restrict each demand step to quotes that keep the profile feasible.
    pub feasible_quotes: bool,
}

impl Default for DynamicsOptions {
    fn default() -> Self {
        DynamicsOptions {
            max_rounds: 100_000,
            tol: 1e-8,
            price_rule: PriceRule::default(),
            record_every: 1,
            price_lead: 1e-2,
            requote_exterior: true,
            feasible_quotes: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub round: usize,
    pub max_change: f64,
    pub profile: MessageProfile,
    pub x: Vec<f64>,
    pub taxes: Vec<f64>,
    pub utilities: Vec<f64>,
    /// `c_l - A_l^T x`
    pub slacks: Vec<f64>,
    pub budget_imbalance: f64,
    pub max_violation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub variant: GameVariant,
    pub rounds: usize,
    pub converged: bool,
    pub final_change: f64,
    pub final_profile: MessageProfile,
    pub snapshots: Vec<Snapshot>,
}

impl RunTrace {
    /// One CSV row per snapshot: round, change, allocation, imbalance and
    /// worst violation.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let n = self.final_profile.y.len();
        let mut header = vec!["round".to_string(), "max_change".to_string()];
        header.extend((0..n).map(|i| format!("x{i}")));
        header.push("budget_imbalance".into());
        header.push("max_violation".into());
        w.write_record(&header)?;
        for s in &self.snapshots {
            let mut row = vec![s.round.to_string(), format!("{:e}", s.max_change)];
            row.extend(s.x.iter().map(|v| v.to_string()));
            row.push(format!("{:e}", s.budget_imbalance));
            row.push(format!("{:e}", s.max_violation));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn snapshot(
    problem: &Problem,
    variant: GameVariant,
    profile: &MessageProfile,
    round: usize,
    max_change: f64,
) -> Result<Snapshot> {
    let o = outcome(problem, variant, profile)?;
    let slacks = (0..problem.l())
        .map(|l| problem.cap(l) - problem.row_dot(l, &o.allocation.x))
        .collect();
    Ok(Snapshot {
        round,
        max_change,
        profile: profile.clone(),
        max_violation: problem.instance.max_violation(&o.allocation.x),
        taxes: o.taxes.totals(),
        x: o.allocation.x,
        utilities: o.utilities,
        slacks,
        budget_imbalance: o.budget_imbalance,
    })
}

/// Relative excess of price-taking demand over each cap, at the mean
/// quoted prices.
fn tatonnement_excess(problem: &Problem, groups: &[GroupValuation], prices: &[Vec<f64>]) -> Vec<f64> {
    let pbar: Vec<f64> = (0..problem.l())
        .map(|l| {
            let on = &problem.index.agents_on_constraint[l];
            on.iter().map(|&j| prices[j][l]).sum::<f64>() / on.len().max(1) as f64
        })
        .collect();
    let upper = problem.instance.upper;
    let demand: Vec<f64> = groups
        .iter()
        .enumerate()
        .map(|(k, g)| {
            let q: f64 = (0..problem.l())
                .map(|l| problem.reduced.reduced_coeffs[l][k] * pbar[l])
                .sum();
            g.demand(q.max(0.0), upper)
        })
        .collect();
    relative_excess(problem, &problem.reduced.expand(&demand))
}

/// Relative excess of the allocation levels each agent would pick for its
/// group, at the current profile.
fn notional_excess(problem: &Problem, profile: &MessageProfile) -> Vec<f64> {
    let x: Vec<f64> = (0..problem.n()).map(|j| notional_level(problem, profile, j)).collect();
    relative_excess(problem, &x)
}

fn relative_excess(problem: &Problem, x: &[f64]) -> Vec<f64> {
    (0..problem.l())
        .map(|l| {
            let c = problem.cap(l);
            let scale = c.abs() + problem.rows[l].iter().map(|&(j, a)| (a * x[j]).abs()).sum::<f64>();
            if scale == 0.0 || problem.reduced.kinds[l] == RowKind::Vacuous {
                0.0
            } else {
                (problem.row_dot(l, x) - c) / scale
            }
        })
        .collect()
}

/// Round-robin play: each agent in index order updates its prices, then
/// its demand, holding everyone else fixed.
pub fn run_dynamics(
    problem: &Problem,
    variant: GameVariant,
    init: &MessageProfile,
    opts: &DynamicsOptions,
) -> Result<RunTrace> {
    init.check(problem)?;
    let mut profile = init.clone();
    let mut snapshots = Vec::new();
    let mut gains: Vec<Vec<f64>> = vec![vec![0.0; problem.l()]; problem.n()];
    let mut last_sign: Vec<Vec<f64>> = vec![vec![0.0; problem.l()]; problem.n()];
    if let PriceRule::ExcessDemand { gain, .. } = opts.price_rule {
        for g in &mut gains {
            g.iter_mut().for_each(|v| *v = gain);
        }
    }
    let groups = GroupValuation::of(problem);
    let ready = |profile: &MessageProfile| {
        let excess = tatonnement_excess(problem, &groups, &profile.prices);
        (0..problem.l()).all(|l| {
            let priced = problem.index.agents_on_constraint[l].iter().any(|&j| profile.prices[j][l] > 0.0);
            excess[l] <= 1e-9 && (!priced || excess[l] >= -opts.price_lead)
        })
    };
    let mut demands_live = matches!(opts.price_rule, PriceRule::BestResponse) || ready(&profile);
    let mut converged = false;
    let mut change = f64::INFINITY;
    let mut rounds = 0;
    while rounds < opts.max_rounds {
        let before = profile.clone();
        let live_this_round = demands_live;
        for i in 0..problem.n() {
            let x = allocate(problem, &profile.y)?.x;
            let excess = match opts.price_rule {
                PriceRule::ExcessDemand { .. } if demands_live => notional_excess(problem, &profile),
                PriceRule::ExcessDemand { .. } => tatonnement_excess(problem, &groups, &profile.prices),
                PriceRule::BestResponse => Vec::new(),
            };
            for &l in &problem.index.constraints_of_agent[i] {
                let br = if demands_live {
                    price_response(problem, &profile.prices, &x, i, l)
                } else {
                    pbar_unchecked(&problem.index.agents_on_constraint[l], &profile.prices, i, l)
                };
                profile.prices[i][l] = match opts.price_rule {
                    PriceRule::BestResponse => br,
                    PriceRule::ExcessDemand { gain, growth } => {
                        let excess = excess[l];
                        let sign = excess.signum();
                        let g = &mut gains[i][l];
                        if sign * last_sign[i][l] < 0.0 {
                            *g *= 0.5;
                        } else if excess != 0.0 && !demands_live {
                            *g = (*g * growth).min(gain * 1e3);
                        }
                        if excess != 0.0 {
                            last_sign[i][l] = sign;
                        }
                        (br + *g * excess).max(0.0)
                    }
                };
            }
            if demands_live {
                let lo = problem.instance.d[i] + 1e-12;
                profile.y[i] = if opts.feasible_quotes {
                    let hi = feasible_demand_limit(problem, &profile, i).min(problem.instance.upper + 1.0);
                    if hi > lo {
                        best_response_demand(problem, variant, &profile, i, Some((lo, hi)))?
                    } else {
                        lo
                    }
                } else {
                    best_response_demand(problem, variant, &profile, i, None)?
                };
            }
        }
        if opts.requote_exterior && demands_live {
            let a = allocate(problem, &profile.y)?;
            let floor = &problem.instance.d;
            if !a.was_interior && a.x.iter().zip(floor).all(|(x, d)| x > d) {
                profile.y = a.x;
            }
        }
        if !demands_live {
            demands_live = ready(&profile);
        }
        rounds += 1;
        change = profile.max_change(&before, problem);
        converged = live_this_round && change < opts.tol;
        if opts.record_every > 0 && (rounds % opts.record_every == 0 || converged) {
            snapshots.push(snapshot(problem, variant, &profile, rounds, change)?);
        }
        if converged {
            break;
        }
    }
    if snapshots.last().map(|s| s.round) != Some(rounds) {
        snapshots.push(snapshot(problem, variant, &profile, rounds, change)?);
    }
    Ok(RunTrace {
        variant,
        rounds,
        converged,
        final_change: change,
        final_profile: profile,
        snapshots,
    })
}
