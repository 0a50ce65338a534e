use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::best_response::price_response;
use super::{best_response_demand, outcome, GameVariant, MessageProfile};
use crate::error::Result;
use crate::model::Problem;
use crate::numeric::csum;
use crate::taxation::pbar_unchecked;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifyOptions {
    pub eps: f64,
    /// Random joint deviations per agent.
    pub deviations: usize,
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            eps: 1e-6,
            deviations: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deviation {
    pub kind: String,
    pub y: f64,
    pub prices: Vec<f64>,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentCheck {
    pub agent: usize,
    pub utility: f64,
    pub max_gain: f64,
    pub best_deviation: Option<Deviation>,
    /// `u_i - v_i(0)`
    pub ir_margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeDiagnostics {
    /// Per constraint: `max_i (p_i - pbar_{-i})^+`.
    pub price_spread: Vec<f64>,
    /// `max_l |mean price_l * (c_l - A_l^T x)|`
    pub complementary_slackness: f64,
    /// `max_i |v_i'(x_i) - sum_l A_li * mean price_l|`
    pub stationarity: f64,
    pub min_ir_margin: f64,
    pub max_violation: f64,
    pub budget_imbalance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeReport {
    pub variant: GameVariant,
    pub eps: f64,
    pub passed: bool,
    pub max_gain: f64,
    pub agents: Vec<AgentCheck>,
    pub diagnostics: NeDiagnostics,
}

/// Certifies an epsilon-Nash equilibrium: for every agent, exact price and
/// demand best responses, the downward price moves that undercut a
/// disagreeing or slack-priced quote, and random joint deviations.
pub fn verify_epsilon_ne(
    problem: &Problem,
    variant: GameVariant,
    profile: &MessageProfile,
    opts: &VerifyOptions,
) -> Result<NeReport> {
    let base = outcome(problem, variant, profile)?;
    let agents = (0..problem.n())
        .into_par_iter()
        .map(|i| check_agent(problem, variant, profile, &base.utilities, &base.allocation.x, i, opts))
        .collect::<Result<Vec<AgentCheck>>>()?;
    let max_gain = agents.iter().map(|a| a.max_gain).fold(f64::NEG_INFINITY, f64::max);
    let diagnostics = diagnostics(problem, profile, &base.allocation.x, &agents, base.budget_imbalance);
    Ok(NeReport {
        variant,
        eps: opts.eps,
        passed: agents.iter().all(|a| a.max_gain <= opts.eps),
        max_gain,
        agents,
        diagnostics,
    })
}

fn check_agent(
    problem: &Problem,
    variant: GameVariant,
    profile: &MessageProfile,
    utilities: &[f64],
    x: &[f64],
    i: usize,
    opts: &VerifyOptions,
) -> Result<AgentCheck> {
    let u0 = utilities[i];
    let rows = &problem.index.constraints_of_agent[i];
    let mut best: Option<Deviation> = None;
    let mut consider = |kind: &str, y: f64, prices: Vec<f64>| -> Result<()> {
        let mut dev = profile.clone();
        dev.y[i] = y;
        dev.prices[i] = prices;
        let gain = outcome(problem, variant, &dev)?.utilities[i] - u0;
        if best.as_ref().is_none_or(|b| gain > b.gain) {
            best = Some(Deviation {
                kind: kind.to_string(),
                y,
                prices: dev.prices[i].clone(),
                gain,
            });
        }
        Ok(())
    };
    let own_y = profile.y[i];
    let own_p = profile.prices[i].clone();

    // exact coordinate best responses
    let mut joint_p = own_p.clone();
    for &l in rows {
        let p = price_response(problem, &profile.prices, x, i, l);
        joint_p[l] = p;
        let mut single = own_p.clone();
        single[l] = p;
        consider("price_best_response", own_y, single)?;
    }
    consider("joint_price_best_response", own_y, joint_p.clone())?;
    let y_br = best_response_demand(problem, variant, profile, i, None)?;
    consider("demand_best_response", y_br, own_p.clone())?;
    let mut repriced = profile.clone();
    repriced.prices[i] = joint_p.clone();
    let y_joint = best_response_demand(problem, variant, &repriced, i, None)?;
    consider("joint_best_response", y_joint, joint_p)?;

    // the undercutting moves used to rule out disagreement and slack prices
    let eta = problem.instance.eta;
    for &l in rows {
        let on = &problem.index.agents_on_constraint[l];
        let pb = pbar_unchecked(on, &profile.prices, i, l);
        let p = own_p[l];
        if p > pb {
            let mut moved = own_p.clone();
            moved[l] = pb;
            consider("undercut_to_mean", own_y, moved)?;
        }
        let delta = problem.cap(l) - problem.row_dot(l, x);
        let a = eta * pb * delta * delta;
        if p > 0.0 && a > 0.0 {
            let mut moved = own_p.clone();
            moved[l] = p - 0.5 * a.min(p);
            consider("undercut_on_slack", own_y, moved)?;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let d = problem.instance.d[i];
    let hi = problem.instance.upper + 1.0;
    let price_scale = 1.0
        + rows
            .iter()
            .flat_map(|&l| problem.index.agents_on_constraint[l].iter().map(move |&j| (j, l)))
            .map(|(j, l)| profile.prices[j][l])
            .fold(0.0, f64::max);
    for s in 0..opts.deviations {
        let local = s % 2 == 0;
        let y = if local {
            (own_y * (1.0 + rng.random_range(-0.05..0.05))).clamp(d * (1.0 + 1e-9) + 1e-12, hi)
        } else {
            let t: f64 = rng.random();
            (d + 1e-12) * ((hi / (d + 1e-12)).powf(t))
        };
        let mut prices = own_p.clone();
        for &l in rows {
            prices[l] = if local {
                (own_p[l] * (1.0 + rng.random_range(-0.05..0.05)) + rng.random_range(-1e-3..1e-3)).max(0.0)
            } else {
                rng.random_range(0.0..2.0 * price_scale)
            };
        }
        consider("random", y, prices)?;
    }
    let best = best.expect("at least one deviation");
    Ok(AgentCheck {
        agent: i,
        utility: u0,
        max_gain: best.gain,
        ir_margin: u0 - problem.instance.valuation(i).value_unchecked(0.0),
        best_deviation: Some(best),
    })
}

fn diagnostics(
    problem: &Problem,
    profile: &MessageProfile,
    x: &[f64],
    agents: &[AgentCheck],
    budget_imbalance: f64,
) -> NeDiagnostics {
    let mean_price: Vec<f64> = problem
        .index
        .agents_on_constraint
        .iter()
        .enumerate()
        .map(|(l, on)| csum(on.iter().map(|&i| profile.prices[i][l])) / on.len().max(1) as f64)
        .collect();
    let price_spread = problem
        .index
        .agents_on_constraint
        .iter()
        .enumerate()
        .map(|(l, on)| {
            on.iter()
                .map(|&i| (profile.prices[i][l] - pbar_unchecked(on, &profile.prices, i, l)).max(0.0))
                .fold(0.0, f64::max)
        })
        .collect();
    let complementary_slackness = (0..problem.l())
        .map(|l| (mean_price[l] * (problem.cap(l) - problem.row_dot(l, x))).abs())
        .fold(0.0, f64::max);
    let stationarity = (0..problem.n())
        .map(|i| {
            let marginal = problem.instance.valuation(i).derivative_unchecked(x[i]);
            let price = csum(
                problem.index.constraints_of_agent[i]
                    .iter()
                    .map(|&l| problem.coeff(l, i) * mean_price[l]),
            );
            (marginal - price).abs()
        })
        .fold(0.0, f64::max);
    NeDiagnostics {
        price_spread,
        complementary_slackness,
        stationarity,
        min_ir_margin: agents.iter().map(|a| a.ir_margin).fold(f64::INFINITY, f64::min),
        max_violation: problem.instance.max_violation(x),
        budget_imbalance,
    }
}
