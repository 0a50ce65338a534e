//! The induced game: messages, outcomes, best responses, learning dynamics
//! and equilibrium certification.

mod best_response;
mod dynamics;
mod verify;

use serde::{Deserialize, Serialize};

use crate::allocation::{allocate, AllocationResult};
use crate::centralized::CentralizedSolution;
use crate::error::{check_len, Error, Result};
use crate::model::Problem;
use crate::taxation::{tax, total_tax, TaxBreakdown};

pub use crate::taxation::GameVariant;
pub use best_response::{best_response_demand, best_response_price, feasible_demand_limit, own_objective};
pub use dynamics::{run_dynamics, DynamicsOptions, PriceRule, RunTrace, Snapshot};
pub use verify::{verify_epsilon_ne, AgentCheck, Deviation, NeDiagnostics, NeReport, VerifyOptions};

/// Every agent's demand and its price on each constraint (dense, `N x L`;
/// entries for constraints the agent is not on are ignored).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageProfile {
    pub y: Vec<f64>,
    pub prices: Vec<Vec<f64>>,
}

impl MessageProfile {
    /// `y = d + 0.1`, all prices zero.
    pub fn default_init(problem: &Problem) -> Self {
        MessageProfile {
            y: problem.instance.d.iter().map(|d| d + 0.1).collect(),
            prices: vec![vec![0.0; problem.l()]; problem.n()],
        }
    }

    pub fn check(&self, problem: &Problem) -> Result<()> {
        check_len("demand", problem.n(), self.y.len())?;
        check_len("prices", problem.n(), self.prices.len())?;
        for (i, (&y, &d)) in self.y.iter().zip(&problem.instance.d).enumerate() {
            if !(y > d && y.is_finite()) {
                return Err(Error::InvalidProfile(format!(
                    "demand of agent {i} is {y}, must exceed {d}"
                )));
            }
            check_len("price vector", problem.l(), self.prices[i].len())?;
            if let Some(p) = self.prices[i].iter().find(|p| !(**p >= 0.0 && p.is_finite())) {
                return Err(Error::InvalidProfile(format!(
                    "agent {i} quotes price {p}; prices must be nonnegative"
                )));
            }
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("profile serializes")
    }

    /// Largest absolute difference over demands and on-support prices.
    pub fn max_change(&self, other: &MessageProfile, problem: &Problem) -> f64 {
        let mut m = 0.0f64;
        for i in 0..problem.n() {
            m = m.max((self.y[i] - other.y[i]).abs());
            for &l in &problem.index.constraints_of_agent[i] {
                m = m.max((self.prices[i][l] - other.prices[i][l]).abs());
            }
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub allocation: AllocationResult,
    pub taxes: TaxBreakdown,
    pub utilities: Vec<f64>,
    /// `sum_i T_i`
    pub budget_imbalance: f64,
}

pub fn outcome(problem: &Problem, variant: GameVariant, profile: &MessageProfile) -> Result<Outcome> {
    profile.check(problem)?;
    let allocation = allocate(problem, &profile.y)?;
    let taxes = tax(problem, variant, &profile.y, &allocation.x, &profile.prices)?;
    let utilities = (0..problem.n())
        .map(|i| problem.instance.valuation(i).value_unchecked(allocation.x[i]) - taxes.agents[i].total)
        .collect();
    let budget_imbalance = total_tax(&taxes);
    Ok(Outcome {
        allocation,
        taxes,
        utilities,
        budget_imbalance,
    })
}

/// `v_i(x_i) - T_i` at `profile`.
pub fn utility(problem: &Problem, variant: GameVariant, profile: &MessageProfile, i: usize) -> Result<f64> {
    Ok(outcome(problem, variant, profile)?.utilities[i])
}

/// Demands at the optimum and every price at its constraint's multiplier.
pub fn construct_candidate_ne(problem: &Problem, solution: &CentralizedSolution) -> Result<MessageProfile> {
    check_len("x_star", problem.n(), solution.x_star.len())?;
    check_len("lambda_star", problem.l(), solution.lambda_star.len())?;
    let inst = &problem.instance;
    for (i, &x) in solution.x_star.iter().enumerate() {
        if !(x > inst.d[i] && x < inst.upper) {
            return Err(Error::A2Violation {
                agent: i,
                value: x,
                floor: inst.d[i],
                ceiling: inst.upper,
            });
        }
    }
    let mut prices = vec![vec![0.0; problem.l()]; problem.n()];
    for (l, on) in problem.index.agents_on_constraint.iter().enumerate() {
        for &i in on {
            prices[i][l] = solution.lambda_star[l];
        }
    }
    Ok(MessageProfile {
        y: solution.x_star.clone(),
        prices,
    })
}
