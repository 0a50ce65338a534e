use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::scenario::{generate, FamilyMix, Scenario};
use super::suite::{canonical, chain3, slack_quadcap};
use crate::allocation::allocate;
use crate::centralized::{brute_force_oracle, oracle_tolerance, solve};
use crate::error::{Error, Result};
use crate::game::{best_response_demand, best_response_price, construct_candidate_ne, MessageProfile};
use crate::model::{Agent, Constraint, Instance, Problem, Valuation};
use crate::taxation::{check_offeq_support, rebate, tax, total_tax, GameVariant};

pub const SUITES: [&str; 6] = [
    "feasibility",
    "budget_offeq",
    "budget_ne",
    "rebate_independence",
    "valuation_derivatives",
    "oracle_equivalence",
];

const FAILING_SEEDS_KEPT: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub name: String,
    pub samples: usize,
    pub seed: u64,
    /// Worst violation, each already divided by its own tolerance scale.
    pub max_violation: f64,
    pub tolerance: f64,
    /// Sample seeds whose violation exceeded the tolerance, first few only.
    pub failing_seeds: Vec<u64>,
    pub failures: usize,
    pub passed: bool,
}

/// Seed of sample `k`; rerunning a sample needs only this number.
pub fn sample_seed(seed: u64, k: usize) -> u64 {
    seed ^ (k as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Runs the named invariant on `samples` pseudorandom cases.
pub fn property_suite(name: &str, samples: usize, seed: u64) -> Result<SuiteReport> {
    let (tolerance, check): (f64, fn(&Pools, u64) -> Result<f64>) = match name {
        "feasibility" => (1e-9, feasibility),
        "budget_offeq" => (1e-9, budget_offeq),
        "budget_ne" => (1e-9, budget_ne),
        "rebate_independence" => (0.0, rebate_independence),
        "valuation_derivatives" => (1e-6, valuation_derivatives),
        "oracle_equivalence" => (1.0, oracle_equivalence),
        other => return Err(Error::UnknownSuite(other.to_string())),
    };
    let pools = Pools::build(name)?;
    let results = (0..samples)
        .into_par_iter()
        .map(|k| {
            let s = sample_seed(seed, k);
            check(&pools, s).map(|v| (s, v))
        })
        .collect::<Result<Vec<_>>>()?;
    let failing: Vec<u64> = results
        .iter()
        .filter(|(_, v)| !(*v <= tolerance))
        .map(|(s, _)| *s)
        .collect();
    Ok(SuiteReport {
        name: name.to_string(),
        samples,
        seed,
        max_violation: results.iter().map(|(_, v)| *v).fold(0.0, f64::max),
        tolerance,
        failures: failing.len(),
        passed: failing.is_empty(),
        failing_seeds: failing.into_iter().take(FAILING_SEEDS_KEPT).collect(),
    })
}

/// Instances shared by all samples of a suite.
struct Pools {
    problems: Vec<Problem>,
}

impl Pools {
    fn build(name: &str) -> Result<Pools> {
        let instances = match name {
            "feasibility" => feasibility_pool()?,
            "budget_offeq" => offeq_pool()?,
            "rebate_independence" => {
                let mut v = offeq_pool()?;
                v.push(canonical());
                v.push(chain3());
                v
            }
            _ => Vec::new(),
        };
        Ok(Pools {
            problems: instances.into_iter().map(Problem::new).collect::<Result<_>>()?,
        })
    }

    fn pick(&self, rng: &mut ChaCha8Rng) -> &Problem {
        &self.problems[rng.random_range(0..self.problems.len())]
    }
}

/// One unicast, one public-good and one local-public-goods instance per
/// seed, so samples rotate through the three classes.
pub fn feasibility_pool() -> Result<Vec<Instance>> {
    let mut out = Vec::new();
    for seed in 0..3u64 {
        out.push(
            generate(
                &Scenario::Unicast {
                    agents: 6 + 2 * seed as usize,
                    links: 2 + seed as usize,
                    min_per_link: 2,
                    unit: false,
                    families: FamilyMix::Mixed,
                    eta: 1.0,
                },
                seed,
            )?
            .instance,
        );
        out.push(
            generate(
                &Scenario::PublicGood {
                    agents: 3 + seed as usize,
                    cap: 2.5,
                    families: FamilyMix::Mixed,
                    eta: 1.0,
                },
                seed,
            )?
            .instance,
        );
        out.push(
            generate(
                &Scenario::LocalPublicGoods {
                    groups: 2 + seed as usize,
                    min_size: 2,
                    max_size: 4,
                    families: FamilyMix::Mixed,
                    eta: 1.0,
                },
                seed,
            )?
            .instance,
        );
    }
    Ok(out)
}

/// Unicast instances with at least five agents on every link.
pub fn offeq_pool() -> Result<Vec<Instance>> {
    [(5, 1, 0u64), (8, 2, 1), (8, 4, 7), (10, 3, 2)]
        .into_iter()
        .map(|(agents, links, seed)| {
            Ok(generate(
                &Scenario::Unicast {
                    agents,
                    links,
                    min_per_link: 5,
                    unit: false,
                    families: FamilyMix::Mixed,
                    eta: 1.0,
                },
                seed,
            )?
            .instance)
        })
        .collect()
}

/// Demand drawn log-uniformly from `(d_i, D + 1]`.
pub fn random_demand(problem: &Problem, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let top = (problem.instance.upper + 1.0).ln();
    problem
        .instance
        .d
        .iter()
        .map(|&d| {
            let span = rng.random_range((1e-6f64).ln()..top).exp();
            d + span.min(problem.instance.upper + 1.0 - d)
        })
        .collect()
}

/// Demand inside the constraint set: a random direction from the floor,
/// shared within each equality group,
/// scaled to a random fraction of the distance to the boundary; a quarter of
/// the draws land exactly on the boundary.
pub fn random_feasible_demand(problem: &Problem, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let d = &problem.instance.d;
    let per_group: Vec<f64> = (0..problem.reduced.dim()).map(|_| rng.random_range(0.05..1.0)).collect();
    let dir: Vec<f64> = (0..problem.n()).map(|i| per_group[problem.reduced.group_of[i]]).collect();
    let reach = (0..problem.l())
        .filter_map(|l| {
            let slope = problem.row_dot(l, &dir);
            (slope > 0.0).then(|| (problem.cap(l) - problem.row_dot(l, d)) / slope)
        })
        .fold(problem.instance.upper, f64::min);
    let t = if rng.random_bool(0.25) {
        reach
    } else {
        reach * rng.random_range(0.01..1.0)
    };
    d.iter().zip(&dir).map(|(d, u)| d + t * u).collect()
}

/// Prices on each agent's own constraints: zero with probability 0.2,
/// otherwise uniform on `[0, 2)`.
pub fn random_prices(problem: &Problem, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut prices = vec![vec![0.0; problem.l()]; problem.n()];
    for (i, row) in prices.iter_mut().enumerate() {
        for &l in &problem.index.constraints_of_agent[i] {
            if !rng.random_bool(0.2) {
                row[l] = rng.random_range(0.0..2.0);
            }
        }
    }
    prices
}

fn feasibility(pools: &Pools, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let problem = pools.pick(&mut rng);
    let y = random_demand(problem, &mut rng);
    let x = allocate(problem, &y)?.x;
    if x.iter().any(|v| !(*v >= 0.0)) {
        return Ok(f64::INFINITY);
    }
    for g in &problem.reduced.groups {
        if g.iter().any(|&i| x[i].to_bits() != x[g[0]].to_bits()) {
            return Ok(f64::INFINITY);
        }
    }
    Ok(problem.instance.max_violation(&x))
}

fn budget_offeq(pools: &Pools, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let problem = pools.pick(&mut rng);
    let y = random_feasible_demand(problem, &mut rng);
    let prices = random_prices(problem, &mut rng);
    let x = allocate(problem, &y)?.x;
    let t = tax(problem, GameVariant::SbbOffEq, &y, &x, &prices)?;
    Ok(total_tax(&t).abs() / t.gross_scale().max(1.0))
}

fn budget_ne(_: &Pools, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scenario = match rng.random_range(0..3) {
        0 => Scenario::Unicast {
            agents: rng.random_range(2..=10),
            links: rng.random_range(1..=4),
            min_per_link: 2,
            unit: false,
            families: FamilyMix::Mixed,
            eta: 1.0,
        },
        1 => Scenario::PublicGood {
            agents: rng.random_range(2..=5),
            cap: rng.random_range(1.0..5.0),
            families: FamilyMix::Mixed,
            eta: 1.0,
        },
        _ => Scenario::LocalPublicGoods {
            groups: rng.random_range(1..=3),
            min_size: 2,
            max_size: 4,
            families: FamilyMix::Mixed,
            eta: 1.0,
        },
    };
    let problem = Problem::new(generate(&scenario, rng.random())?.instance)?;
    let solution = solve(&problem, 1e-10)?;
    let ne = construct_candidate_ne(&problem, &solution)?;
    let x = allocate(&problem, &ne.y)?.x;
    let t = tax(&problem, GameVariant::SbbNe, &ne.y, &x, &ne.prices)?;
    Ok(total_tax(&t).abs() / t.gross_scale().max(1.0))
}

/// 0 when best responses agree bitwise across variants and an agent's own
/// message leaves its rebates untouched, 1 otherwise.
fn rebate_independence(pools: &Pools, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let problem = pools.pick(&mut rng);
    let profile = MessageProfile {
        y: random_demand(problem, &mut rng),
        prices: random_prices(problem, &mut rng),
    };
    let variants: Vec<GameVariant> = if check_offeq_support(problem).is_ok() {
        GameVariant::ALL.to_vec()
    } else {
        vec![GameVariant::Base, GameVariant::SbbNe]
    };
    let i = rng.random_range(0..problem.n());
    let demand: Vec<u64> = variants
        .iter()
        .map(|&v| best_response_demand(problem, v, &profile, i, None).map(f64::to_bits))
        .collect::<Result<_>>()?;
    if demand.windows(2).any(|w| w[0] != w[1]) {
        return Ok(1.0);
    }
    let mut moved = profile.clone();
    moved.y[i] = random_demand(problem, &mut rng)[i];
    for &l in &problem.index.constraints_of_agent[i] {
        moved.prices[i][l] = rng.random_range(0.0..3.0);
        let price: Vec<u64> = variants
            .iter()
            .map(|&v| best_response_price(problem, v, &profile, i, l).map(f64::to_bits))
            .collect::<Result<_>>()?;
        if price.windows(2).any(|w| w[0] != w[1]) {
            return Ok(1.0);
        }
    }
    for &v in &variants {
        for &l in &problem.index.constraints_of_agent[i] {
            let before = rebate(problem, v, &profile.y, &profile.prices, i, l);
            let after = rebate(problem, v, &moved.y, &moved.prices, i, l);
            if before.to_bits() != after.to_bits() {
                return Ok(1.0);
            }
        }
    }
    Ok(0.0)
}

/// Relative gap between analytic and central-difference derivatives.
fn valuation_derivatives(_: &Pools, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = match rng.random_range(0..3) {
        0 => Valuation::LogShift {
            a: rng.random_range(0.1..5.0),
            b: rng.random_range(0.1..5.0),
        },
        1 => Valuation::Power {
            a: rng.random_range(0.1..5.0),
            b: rng.random_range(0.05..0.95),
        },
        _ => Valuation::QuadCap {
            a: rng.random_range(0.1..5.0),
            m: rng.random_range(0.1..10.0),
        },
    };
    let x = rng.random_range((1e-2f64).ln()..(100f64).ln()).exp();
    let h = 1e-5 * x;
    let fd1 = (v.value(x + h)? - v.value(x - h)?) / (2.0 * h);
    let fd2 = (v.derivative(x + h)? - v.derivative(x - h)?) / (2.0 * h);
    let d1 = v.derivative(x)?;
    let d2 = v.second_derivative(x)?;
    let gap1 = (fd1 - d1).abs() / (1.0 + d1.abs());
    let gap2 = (fd2 - d2).abs() / (1.0 + d2.abs());
    Ok(gap1.max(gap2))
}

/// Gap between the solver's objective and the grid oracle's, in units of
/// the oracle's own Lipschitz tolerance at step 1e-3.
fn oracle_equivalence(_: &Pools, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let instance = match rng.random_range(0..4) {
        0 => canonical(),
        1 => slack_quadcap(),
        2 => chain3(),
        _ => small_random_instance(&mut rng),
    };
    let problem = Problem::new(instance)?;
    let step = 1e-3;
    let solution = solve(&problem, 1e-10)?;
    let oracle = brute_force_oracle(&problem, step)?;
    let gap = (problem.instance.objective(&solution.x_star)? - oracle.value).abs();
    Ok(gap / oracle_tolerance(&problem, step).max(f64::MIN_POSITIVE))
}

/// Two or three agents on one or two links, small enough for the oracle.
pub fn small_random_instance(rng: &mut ChaCha8Rng) -> Instance {
    let n = rng.random_range(2..=3);
    let families = [FamilyMix::LogShift, FamilyMix::Power, FamilyMix::QuadCap];
    let agents = (0..n)
        .map(|_| Agent {
            valuation: match families[rng.random_range(0..3)] {
                FamilyMix::LogShift => Valuation::LogShift {
                    a: rng.random_range(0.5..2.0),
                    b: rng.random_range(0.5..2.0),
                },
                FamilyMix::Power => Valuation::Power {
                    a: rng.random_range(0.5..2.0),
                    b: rng.random_range(0.3..0.7),
                },
                _ => Valuation::QuadCap {
                    a: rng.random_range(0.5..2.0),
                    m: rng.random_range(0.5..3.0),
                },
            },
        })
        .collect();
    let weight = |rng: &mut ChaCha8Rng| rng.random_range(0.5..2.0);
    let constraints = if n == 2 {
        vec![Constraint::new([(0, weight(rng)), (1, weight(rng))], rng.random_range(0.5..2.0))]
    } else {
        vec![
            Constraint::new([(0, weight(rng)), (1, weight(rng))], rng.random_range(0.5..2.0)),
            Constraint::new([(1, weight(rng)), (2, weight(rng))], rng.random_range(0.5..2.0)),
        ]
    };
    Instance {
        agents,
        constraints,
        equality_groups: vec![],
        d: vec![0.0; n],
        upper: 10.0,
        eta: 1.0,
        theta: None,
    }
}
