//! Taxes for the three game variants: the base contract, budget balance at
//! equilibrium, and budget balance wherever demand is feasible.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::model::{Problem, RowKind};
use crate::numeric::{csum, CompensatedSum};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum GameVariant {
    #[default]
    #[serde(rename = "base")]
    Base,
    #[serde(rename = "sbb-ne")]
    SbbNe,
    #[serde(rename = "sbb-offeq")]
    SbbOffEq,
}

impl GameVariant {
    pub const ALL: [GameVariant; 3] = [GameVariant::Base, GameVariant::SbbNe, GameVariant::SbbOffEq];

    pub fn name(&self) -> &'static str {
        match self {
            GameVariant::Base => "base",
            GameVariant::SbbNe => "sbb-ne",
            GameVariant::SbbOffEq => "sbb-offeq",
        }
    }

    /// Slackness weight used when none is given.
    pub fn default_eta(&self) -> f64 {
        match self {
            GameVariant::SbbOffEq => 1e-3,
            _ => 1.0,
        }
    }
}

impl std::str::FromStr for GameVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        GameVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidProfile(format!("unknown variant `{s}`")))
    }
}

/// The four parts of one agent's tax on one constraint.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TaxTerms {
    pub constraint: usize,
    pub payment: f64,
    pub disagreement: f64,
    pub slackness: f64,
    pub rebate: f64,
}

impl TaxTerms {
    pub fn gross(&self) -> f64 {
        csum([self.payment, self.disagreement, self.slackness])
    }

    pub fn net(&self) -> f64 {
        csum([self.payment, self.disagreement, self.slackness, -self.rebate])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTax {
    pub terms: Vec<TaxTerms>,
    /// Tax before rebates.
    pub gross: f64,
    /// Tax after rebates.
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaxBreakdown {
    pub agents: Vec<AgentTax>,
}

impl TaxBreakdown {
    pub fn totals(&self) -> Vec<f64> {
        self.agents.iter().map(|a| a.total).collect()
    }

    /// `sum_i |gross t_i|`
    pub fn gross_scale(&self) -> f64 {
        csum(self.agents.iter().map(|a| a.gross.abs()))
    }
}

/// Sum of all agents' net taxes.
pub fn total_tax(breakdown: &TaxBreakdown) -> f64 {
    breakdown
        .agents
        .iter()
        .flat_map(|a| a.terms.iter())
        .flat_map(|t| [t.payment, t.disagreement, t.slackness, -t.rebate])
        .collect::<CompensatedSum>()
        .value()
}

/// Mean price quoted on constraint `l` by everyone on it except `i`.
pub fn pbar(problem: &Problem, prices: &[Vec<f64>], i: usize, l: usize) -> Result<f64> {
    let on = &problem.index.agents_on_constraint[l];
    if !on.contains(&i) {
        return Err(Error::AgentNotOnConstraint {
            agent: i,
            constraint: l,
        });
    }
    Ok(pbar_unchecked(on, prices, i, l))
}

#[inline]
pub(crate) fn pbar_unchecked(on: &[usize], prices: &[Vec<f64>], i: usize, l: usize) -> f64 {
    let s = csum(on.iter().filter(|&&j| j != i).map(|&j| prices[j][l]));
    s / (on.len() - 1) as f64
}

fn check_prices(problem: &Problem, prices: &[Vec<f64>]) -> Result<()> {
    check_len("prices", problem.n(), prices.len())?;
    for p in prices {
        check_len("price vector", problem.l(), p.len())?;
    }
    Ok(())
}

/// Base-tax parts for agent `i` on constraint `l`, given the slack `delta`.
#[inline]
pub(crate) fn base_terms(
    problem: &Problem,
    x: &[f64],
    prices: &[Vec<f64>],
    delta: f64,
    i: usize,
    l: usize,
) -> TaxTerms {
    let on = &problem.index.agents_on_constraint[l];
    let pb = pbar_unchecked(on, prices, i, l);
    let p = prices[i][l];
    let gap = p - pb;
    TaxTerms {
        constraint: l,
        payment: problem.coeff(l, i) * x[i] * pb,
        disagreement: gap * gap,
        slackness: problem.instance.eta * pb * p * delta * delta,
        rebate: 0.0,
    }
}

fn slacks(problem: &Problem, x: &[f64]) -> Vec<f64> {
    (0..problem.l())
        .map(|l| problem.cap(l) - problem.row_dot(l, x))
        .collect()
}

fn assemble<F>(problem: &Problem, x: &[f64], prices: &[Vec<f64>], mut rebate: F) -> Result<TaxBreakdown>
where
    F: FnMut(usize, usize) -> f64,
{
    check_len("allocation", problem.n(), x.len())?;
    check_prices(problem, prices)?;
    let delta = slacks(problem, x);
    let agents = (0..problem.n())
        .map(|i| {
            let terms: Vec<TaxTerms> = problem.index.constraints_of_agent[i]
                .iter()
                .map(|&l| {
                    let mut t = base_terms(problem, x, prices, delta[l], i, l);
                    t.rebate = rebate(i, l);
                    t
                })
                .collect();
            let gross = csum(terms.iter().flat_map(|t| [t.payment, t.disagreement, t.slackness]));
            let total = csum(
                terms
                    .iter()
                    .flat_map(|t| [t.payment, t.disagreement, t.slackness, -t.rebate]),
            );
            AgentTax { terms, gross, total }
        })
        .collect();
    Ok(TaxBreakdown { agents })
}

/// `t_i^l = A_li x_i pbar + (p_i - pbar)^2 + eta pbar p_i (c_l - A_l^T x)^2`.
pub fn base_tax(problem: &Problem, x: &[f64], prices: &[Vec<f64>]) -> Result<TaxBreakdown> {
    assemble(problem, x, prices, |_, _| 0.0)
}

/// Base tax minus the equilibrium redistribution of payments.
pub fn sbb_ne_tax(problem: &Problem, y: &[f64], x: &[f64], prices: &[Vec<f64>]) -> Result<TaxBreakdown> {
    check_len("demand", problem.n(), y.len())?;
    check_prices(problem, prices)?;
    assemble(problem, x, prices, |i, l| payment_rebate(problem, y, prices, i, l))
}

/// Base tax minus redistributions of all three terms. Needs at least five
/// agents on every constraint and nonnegative rows without equality groups.
pub fn sbb_offeq_tax(problem: &Problem, y: &[f64], x: &[f64], prices: &[Vec<f64>]) -> Result<TaxBreakdown> {
    check_len("demand", problem.n(), y.len())?;
    check_prices(problem, prices)?;
    check_offeq_support(problem)?;
    assemble(problem, x, prices, |i, l| offeq_rebate(problem, y, prices, i, l))
}

/// Tax breakdown for `variant`.
pub fn tax(
    problem: &Problem,
    variant: GameVariant,
    y: &[f64],
    x: &[f64],
    prices: &[Vec<f64>],
) -> Result<TaxBreakdown> {
    match variant {
        GameVariant::Base => base_tax(problem, x, prices),
        GameVariant::SbbNe => sbb_ne_tax(problem, y, x, prices),
        GameVariant::SbbOffEq => sbb_offeq_tax(problem, y, x, prices),
    }
}

/// Rebate paid to agent `i` on constraint `l`. Built only from the other
/// agents' messages.
pub fn rebate(
    problem: &Problem,
    variant: GameVariant,
    y: &[f64],
    prices: &[Vec<f64>],
    i: usize,
    l: usize,
) -> f64 {
    match variant {
        GameVariant::Base => 0.0,
        GameVariant::SbbNe => payment_rebate(problem, y, prices, i, l),
        GameVariant::SbbOffEq => offeq_rebate(problem, y, prices, i, l),
    }
}

pub fn check_offeq_support(problem: &Problem) -> Result<()> {
    for l in 0..problem.l() {
        let n = problem.index.n_on(l);
        if n < 5 {
            return Err(Error::AssumptionA4PrimeViolated {
                constraint: l,
                agents: n,
            });
        }
        let degenerate = problem.reduced.kinds[l] != RowKind::Inequality
            || problem.rows[l].iter().any(|&(i, a)| {
                a < 0.0 || problem.reduced.groups[problem.reduced.group_of[i]].len() > 1
            });
        if degenerate {
            return Err(Error::DegenerateRowUnsupported { constraint: l });
        }
    }
    Ok(())
}

/// Redistribution of the payment term.
fn payment_rebate(problem: &Problem, y: &[f64], prices: &[Vec<f64>], i: usize, l: usize) -> f64 {
    if problem.reduced.kinds[l] == RowKind::Equality {
        return 0.0;
    }
    let row = &problem.rows[l];
    let split = &problem.split_coeffs[l];
    let n = row.len();
    if n == 2 {
        return row
            .iter()
            .zip(split)
            .find(|((j, _), _)| *j != i)
            .map(|(&(j, _), a)| a * y[j] * prices[j][l])
            .unwrap_or(0.0);
    }
    let on = &problem.index.agents_on_constraint[l];
    let pb = pbar_unchecked(on, prices, i, l);
    let nf = n as f64;
    let s = csum(
        row.iter()
            .zip(split)
            .filter(|((j, _), _)| *j != i)
            .map(|(&(j, _), a)| a * y[j] * (pb - prices[j][l] / (nf - 1.0))),
    );
    s / (nf - 2.0)
}

/// Redistribution of payment, disagreement and slackness terms.
fn offeq_rebate(problem: &Problem, y: &[f64], prices: &[Vec<f64>], i: usize, l: usize) -> f64 {
    let f1 = payment_rebate(problem, y, prices, i, l);
    let others: Vec<(f64, f64)> = problem.rows[l]
        .iter()
        .filter(|&&(j, _)| j != i)
        .map(|&(j, a)| (prices[j][l], a * y[j]))
        .collect();
    let n = (others.len() + 1) as f64;
    let c = problem.cap(l);
    let m = others.len();

    let mut f2 = CompensatedSum::new();
    let mut f3a = CompensatedSum::new();
    let mut f3b = CompensatedSum::new();
    let mut f3c = CompensatedSum::new();
    let phi = |ay: f64| ay * ay - 2.0 * c * ay;
    for j in 0..m {
        for q in 0..j {
            let pj = others[j].0;
            let pq = others[q].0;
            let d = pj - pq;
            f2.add(d * d);
            let pp = pj * pq;
            f3a.add(pp);
            for (k, &(_, ayk)) in others.iter().enumerate() {
                if k == j || k == q {
                    f3b.add(pp * phi(ayk) / (n - 2.0));
                } else {
                    f3b.add(pp * phi(ayk) / (n - 3.0));
                }
            }
            for k in 0..m {
                for s in 0..k {
                    let overlap = [k, s].iter().filter(|&&v| v == j || v == q).count();
                    let w = match overlap {
                        0 => n - 4.0,
                        1 => n - 3.0,
                        _ => n - 2.0,
                    };
                    f3c.add(pp * others[k].1 * others[s].1 / w);
                }
            }
        }
    }
    let f2 = n / ((n - 1.0) * (n - 1.0) * (n - 2.0)) * f2.value();
    let f3a = 2.0 * c * c / ((n - 1.0) * (n - 2.0)) * f3a.value();
    let f3b = 2.0 / (n - 1.0) * f3b.value();
    let f3c = 4.0 / (n - 1.0) * f3c.value();
    csum([f1, f2, problem.instance.eta * csum([f3a, f3b, f3c])])
}
