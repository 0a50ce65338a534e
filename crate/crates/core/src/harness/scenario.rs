use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::centralized::solve;
use crate::error::{Error, Result};
use crate::model::{validate, validate_solution, Agent, CheckStatus, Constraint, Instance, Problem, Valuation};

/// Valuation families drawn by the generators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyMix {
    #[default]
    Mixed,
    LogShift,
    Power,
    QuadCap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scenario {
    /// Agents routed over shared links, one private rate each.
    Unicast {
        agents: usize,
        links: usize,
        /// Minimum agents per link: 2, or 5 for off-equilibrium budget balance.
        #[serde(default = "two")]
        min_per_link: usize,
        /// Unit weights and caps with `ln(1 + x)` valuations.
        #[serde(default)]
        unit: bool,
        #[serde(default)]
        families: FamilyMix,
        #[serde(default = "one")]
        eta: f64,
    },
    /// One good used by everyone at a common level, capped.
    PublicGood {
        agents: usize,
        cap: f64,
        #[serde(default)]
        families: FamilyMix,
        #[serde(default = "one")]
        eta: f64,
    },
    /// Disjoint groups sharing a level within each group, one cap per group.
    LocalPublicGoods {
        groups: usize,
        #[serde(default = "two")]
        min_size: usize,
        #[serde(default = "four")]
        max_size: usize,
        #[serde(default)]
        families: FamilyMix,
        #[serde(default = "one")]
        eta: f64,
    },
    /// A fixed instance.
    Custom { instance: Instance },
}

fn one() -> f64 {
    1.0
}
fn two() -> usize {
    2
}
fn four() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generated {
    pub instance: Instance,
    /// Draws rejected because the optimum left the demand box.
    pub resamples: usize,
}

const FLOOR: f64 = 0.01;
const CEILING: f64 = 100.0;
const MAX_RESAMPLES: usize = 64;

/// Deterministic instance for `(scenario, seed)`. Draws whose optimum is not
/// strictly inside `(d, D)` are redrawn from the next subseed.
pub fn generate(scenario: &Scenario, seed: u64) -> Result<Generated> {
    check_params(scenario)?;
    if let Scenario::Custom { instance } = scenario {
        return Ok(Generated {
            instance: instance.clone(),
            resamples: 0,
        });
    }
    for attempt in 0..MAX_RESAMPLES {
        let subseed = seed.wrapping_add((attempt as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let mut rng = ChaCha8Rng::seed_from_u64(subseed);
        let instance = draw(scenario, &mut rng)?;
        if accept(&instance, scenario)? {
            return Ok(Generated {
                instance,
                resamples: attempt,
            });
        }
    }
    Err(Error::InfeasibleParams(format!(
        "no draw with an interior optimum in {MAX_RESAMPLES} attempts"
    )))
}

fn check_params(scenario: &Scenario) -> Result<()> {
    let bad = |m: String| Err(Error::InfeasibleParams(m));
    match *scenario {
        Scenario::Unicast {
            agents,
            links,
            min_per_link,
            eta,
            ..
        } => {
            if links == 0 {
                return bad("at least one link is needed".into());
            }
            if min_per_link < 2 {
                return bad("every link needs at least two agents".into());
            }
            if agents < min_per_link {
                return bad(format!("{agents} agents cannot put {min_per_link} on every link"));
            }
            if !(eta > 0.0) {
                return bad(format!("eta = {eta} must be positive"));
            }
        }
        Scenario::PublicGood { agents, cap, eta, .. } => {
            if agents < 2 {
                return bad("a public good needs at least two agents".into());
            }
            if !(cap > 0.0) || !(eta > 0.0) {
                return bad("cap and eta must be positive".into());
            }
        }
        Scenario::LocalPublicGoods {
            groups,
            min_size,
            max_size,
            eta,
            ..
        } => {
            if groups == 0 || min_size < 2 || max_size < min_size {
                return bad(format!(
                    "need at least one group and 2 <= min_size <= max_size, got {groups} groups of {min_size}..={max_size}"
                ));
            }
            if !(eta > 0.0) {
                return bad(format!("eta = {eta} must be positive"));
            }
        }
        Scenario::Custom { .. } => {}
    }
    Ok(())
}

fn valuation(rng: &mut ChaCha8Rng, families: FamilyMix) -> Valuation {
    let family = match families {
        FamilyMix::Mixed => [FamilyMix::LogShift, FamilyMix::Power, FamilyMix::QuadCap][rng.random_range(0..3)],
        f => f,
    };
    let a = rng.random_range(0.5..2.0);
    match family {
        FamilyMix::Power => Valuation::Power {
            a,
            b: rng.random_range(0.3..0.7),
        },
        FamilyMix::QuadCap => Valuation::QuadCap {
            a,
            m: rng.random_range(1.0..5.0),
        },
        _ => Valuation::LogShift {
            a,
            b: rng.random_range(0.5..2.0),
        },
    }
}

fn draw(scenario: &Scenario, rng: &mut ChaCha8Rng) -> Result<Instance> {
    match *scenario {
        Scenario::Unicast {
            agents,
            links,
            min_per_link,
            unit,
            families,
            eta,
        } => Ok(unicast(rng, agents, links, min_per_link, unit, families, eta)),
        Scenario::PublicGood {
            agents,
            cap,
            families,
            eta,
        } => {
            let vals = (0..agents).map(|_| valuation(rng, families)).collect();
            Ok(grouped(vals, &[(0..agents).collect()], &[cap], eta))
        }
        Scenario::LocalPublicGoods {
            groups,
            min_size,
            max_size,
            families,
            eta,
        } => {
            let mut members = Vec::new();
            let mut caps = Vec::new();
            let mut next = 0;
            for _ in 0..groups {
                let size = rng.random_range(min_size..=max_size);
                members.push((next..next + size).collect::<Vec<_>>());
                next += size;
                caps.push(rng.random_range(1.0..5.0));
            }
            let vals = (0..next).map(|_| valuation(rng, families)).collect();
            Ok(grouped(vals, &members, &caps, eta))
        }
        Scenario::Custom { ref instance } => Ok(instance.clone()),
    }
}

fn unicast(
    rng: &mut ChaCha8Rng,
    n: usize,
    links: usize,
    min_per_link: usize,
    unit: bool,
    families: FamilyMix,
    eta: f64,
) -> Instance {
    let mut on_link: Vec<Vec<usize>> = vec![Vec::new(); links];
    for i in 0..n {
        // a route is a run of consecutive links
        let len = rng.random_range(1..=links.min(3));
        let start = rng.random_range(0..=links - len);
        for link in &mut on_link[start..start + len] {
            link.push(i);
        }
    }
    for link in &mut on_link {
        let mut outside: Vec<usize> = (0..n).filter(|i| !link.contains(i)).collect();
        outside.shuffle(rng);
        while link.len() < min_per_link {
            link.push(outside.pop().expect("enough agents"));
        }
        link.sort_unstable();
    }
    let constraints = on_link
        .iter()
        .map(|members| {
            let coeffs: Vec<(usize, f64)> = members
                .iter()
                .map(|&i| (i, if unit { 1.0 } else { rng.random_range(0.5..2.0) }))
                .collect();
            let cap = if unit {
                1.0
            } else {
                rng.random_range(1.0..5.0) * members.len() as f64 / 2.0
            };
            Constraint::new(coeffs, cap)
        })
        .collect();
    let agents = (0..n)
        .map(|_| Agent {
            valuation: if unit {
                Valuation::LogShift { a: 1.0, b: 1.0 }
            } else {
                valuation(rng, families)
            },
        })
        .collect();
    Instance {
        agents,
        constraints,
        equality_groups: vec![],
        d: vec![FLOOR; n],
        upper: CEILING,
        eta,
        theta: None,
    }
}

/// Groups tied by cycle rows `x_next - x_i <= 0` plus a mean-level cap row.
fn grouped(vals: Vec<Valuation>, members: &[Vec<usize>], caps: &[f64], eta: f64) -> Instance {
    let mut constraints = Vec::new();
    for (g, &cap) in members.iter().zip(caps) {
        for (pos, &i) in g.iter().enumerate() {
            let j = g[(pos + 1) % g.len()];
            constraints.push(Constraint::new([(i, -1.0), (j, 1.0)], 0.0));
        }
        let share = 1.0 / g.len() as f64;
        constraints.push(Constraint::new(g.iter().map(|&i| (i, share)), cap));
    }
    let n = vals.len();
    Instance {
        agents: vals.into_iter().map(|valuation| Agent { valuation }).collect(),
        constraints,
        equality_groups: members.to_vec(),
        d: vec![FLOOR; n],
        upper: CEILING,
        eta,
        theta: None,
    }
}

fn accept(instance: &Instance, scenario: &Scenario) -> Result<bool> {
    let offeq = matches!(scenario, Scenario::Unicast { min_per_link, .. } if *min_per_link >= 5);
    if !validate(instance).is_valid(offeq) {
        return Ok(false);
    }
    let problem = Problem::new(instance.clone())?;
    let sol = match solve(&problem, 1e-10) {
        Ok(s) => s,
        Err(Error::NoConvergence(_)) => return Ok(false),
        Err(e) => return Err(e),
    };
    Ok(validate_solution(instance, &sol.x_star).status == CheckStatus::Pass)
}
