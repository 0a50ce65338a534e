//! Problem instances, index sets and the equality-group reduction.

mod valuation;
mod validate;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{check_len, Error, Result};

pub use valuation::Valuation;
pub use validate::{derive_theta, validate, validate_solution, Check, CheckStatus, ValidationReport};

/// Relative tolerance deciding when a reduced coefficient counts as zero.
pub(crate) const COEFF_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub valuation: Valuation,
}

/// One linear constraint `sum_i coeffs[i] * x_i <= cap`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    #[serde(deserialize_with = "agent_keys")]
    pub coeffs: BTreeMap<usize, f64>,
    pub cap: f64,
}

/// Agent indices arrive as JSON object keys, which are strings.
fn agent_keys<'de, D: serde::Deserializer<'de>>(de: D) -> std::result::Result<BTreeMap<usize, f64>, D::Error> {
    let raw = BTreeMap::<String, f64>::deserialize(de)?;
    raw.into_iter()
        .map(|(k, v)| {
            k.trim()
                .parse::<usize>()
                .map(|i| (i, v))
                .map_err(|_| serde::de::Error::custom(format!("agent index `{k}` is not a nonnegative integer")))
        })
        .collect()
}

impl Constraint {
    pub fn new<I: IntoIterator<Item = (usize, f64)>>(coeffs: I, cap: f64) -> Self {
        Constraint {
            coeffs: coeffs.into_iter().collect(),
            cap,
        }
    }
}

fn unit_eta() -> f64 {
    1.0
}

/// The full problem datum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub agents: Vec<Agent>,
    pub constraints: Vec<Constraint>,
    /// Partition of the agents. Empty means all singletons.
    #[serde(default)]
    pub equality_groups: Vec<Vec<usize>>,
    pub d: Vec<f64>,
    #[serde(rename = "D")]
    pub upper: f64,
    #[serde(default = "unit_eta")]
    pub eta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<Vec<f64>>,
}

impl Instance {
    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn n_constraints(&self) -> usize {
        self.constraints.len()
    }

    pub fn valuation(&self, i: usize) -> &Valuation {
        &self.agents[i].valuation
    }

    /// Groups with singletons filled in, each sorted, ordered by representative.
    pub fn groups(&self) -> Vec<Vec<usize>> {
        let mut groups: Vec<Vec<usize>> = if self.equality_groups.is_empty() {
            (0..self.n_agents()).map(|i| vec![i]).collect()
        } else {
            self.equality_groups.clone()
        };
        for g in &mut groups {
            g.sort_unstable();
        }
        groups.sort_by_key(|g| g.first().copied().unwrap_or(usize::MAX));
        groups
    }

    pub fn is_degenerate(&self) -> bool {
        self.equality_groups.iter().any(|g| g.len() > 1)
    }

    /// Social objective `sum_i v_i(x_i)`.
    pub fn objective(&self, x: &[f64]) -> Result<f64> {
        check_len("allocation", self.n_agents(), x.len())?;
        let mut acc = crate::numeric::CompensatedSum::new();
        for (a, &xi) in self.agents.iter().zip(x) {
            acc.add(a.valuation.value(xi)?);
        }
        Ok(acc.value())
    }

    /// `A_l^T x` for constraint `l`.
    pub fn row_dot(&self, l: usize, x: &[f64]) -> f64 {
        crate::numeric::csum(self.constraints[l].coeffs.iter().map(|(&i, &a)| a * x[i]))
    }

    /// Largest violation `max_l (A_l^T x - c_l)^+`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        (0..self.n_constraints())
            .map(|l| (self.row_dot(l, x) - self.constraints[l].cap).max(0.0))
            .fold(0.0, f64::max)
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("instance serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("instance serializes")
    }
}

/// Which agents sit on which constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexSets {
    pub agents_on_constraint: Vec<Vec<usize>>,
    pub constraints_of_agent: Vec<Vec<usize>>,
}

impl IndexSets {
    pub fn new(instance: &Instance) -> Self {
        let n = instance.n_agents();
        let mut agents_on_constraint = Vec::with_capacity(instance.n_constraints());
        let mut constraints_of_agent = vec![Vec::new(); n];
        for (l, row) in instance.constraints.iter().enumerate() {
            let members: Vec<usize> = row
                .coeffs
                .iter()
                .filter(|(&i, &a)| a != 0.0 && i < n)
                .map(|(&i, _)| i)
                .collect();
            for &i in &members {
                constraints_of_agent[i].push(l);
            }
            agents_on_constraint.push(members);
        }
        IndexSets {
            agents_on_constraint,
            constraints_of_agent,
        }
    }

    /// `N^l`
    pub fn n_on(&self, l: usize) -> usize {
        self.agents_on_constraint[l].len()
    }

    /// `L_i`
    pub fn n_of(&self, i: usize) -> usize {
        self.constraints_of_agent[i].len()
    }

    pub fn nonzeros(&self) -> usize {
        self.agents_on_constraint.iter().map(Vec::len).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowKind {
    /// A genuine inequality in the reduced space.
    Inequality,
    /// Vanishes after reduction with zero cap: encodes equality of a group.
    Equality,
    /// Vanishes after reduction with positive cap: always satisfied.
    Vacuous,
}

/// The constraint set written in the free variables, one per group.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedInstance {
    pub groups: Vec<Vec<usize>>,
    /// Lowest agent index of each group.
    pub representative: Vec<usize>,
    /// Agent to group.
    pub group_of: Vec<usize>,
    /// Dense `L x K` reduced coefficients.
    pub reduced_coeffs: Vec<Vec<f64>>,
    pub reduced_caps: Vec<f64>,
    pub kinds: Vec<RowKind>,
}

impl ReducedInstance {
    pub fn dim(&self) -> usize {
        self.groups.len()
    }

    /// Copies each group value to all of its members.
    pub fn expand(&self, reduced: &[f64]) -> Vec<f64> {
        self.group_of.iter().map(|&k| reduced[k]).collect()
    }

    /// Group means of a full vector.
    pub fn average(&self, full: &[f64]) -> Vec<f64> {
        self.groups
            .iter()
            .map(|g| {
                if g.len() == 1 {
                    full[g[0]]
                } else {
                    crate::numeric::csum(g.iter().map(|&i| full[i])) / g.len() as f64
                }
            })
            .collect()
    }

    /// Restriction of a full vector to the representatives.
    pub fn restrict(&self, full: &[f64]) -> Vec<f64> {
        self.representative.iter().map(|&r| full[r]).collect()
    }

    pub fn row_dot(&self, l: usize, reduced: &[f64]) -> f64 {
        crate::numeric::csum(self.reduced_coeffs[l].iter().zip(reduced).map(|(a, x)| a * x))
    }

    pub fn inequality_rows(&self) -> impl Iterator<Item = usize> + '_ {
        self.kinds
            .iter()
            .enumerate()
            .filter(|(_, k)| **k == RowKind::Inequality)
            .map(|(l, _)| l)
    }
}

/// Sums each group's columns into its representative.
pub fn reduce_equalities(instance: &Instance) -> Result<ReducedInstance> {
    let n = instance.n_agents();
    let groups = instance.groups();
    let mut group_of = vec![usize::MAX; n];
    for (k, g) in groups.iter().enumerate() {
        if g.is_empty() {
            return Err(Error::InvalidInstance("empty equality group".into()));
        }
        for &i in g {
            if i >= n {
                return Err(Error::InvalidInstance(format!(
                    "equality group names agent {i} but there are {n} agents"
                )));
            }
            if group_of[i] != usize::MAX {
                return Err(Error::InvalidInstance(format!(
                    "agent {i} appears in more than one equality group"
                )));
            }
            group_of[i] = k;
        }
    }
    if let Some(i) = group_of.iter().position(|&k| k == usize::MAX) {
        return Err(Error::InvalidInstance(format!(
            "agent {i} belongs to no equality group"
        )));
    }
    let k_dim = groups.len();
    let mut reduced_coeffs = Vec::with_capacity(instance.n_constraints());
    let mut kinds = Vec::with_capacity(instance.n_constraints());
    for (l, row) in instance.constraints.iter().enumerate() {
        let mut dense = vec![0.0; k_dim];
        let mut scale = 0.0f64;
        for (&i, &a) in &row.coeffs {
            if i >= n {
                return Err(Error::InvalidInstance(format!(
                    "constraint {l} names agent {i} but there are {n} agents"
                )));
            }
            dense[group_of[i]] += a;
            scale = scale.max(a.abs());
        }
        let tiny = COEFF_EPS * scale.max(1.0);
        for v in &mut dense {
            if v.abs() <= tiny {
                *v = 0.0;
            }
        }
        if let Some((k, &v)) = dense.iter().enumerate().find(|(_, v)| **v < 0.0) {
            return Err(Error::NegativeReducedCoefficient {
                constraint: l,
                group: k,
                value: v,
            });
        }
        let kind = if dense.iter().all(|&v| v == 0.0) {
            if row.cap <= COEFF_EPS {
                RowKind::Equality
            } else {
                RowKind::Vacuous
            }
        } else {
            RowKind::Inequality
        };
        reduced_coeffs.push(dense);
        kinds.push(kind);
    }
    Ok(ReducedInstance {
        representative: groups.iter().map(|g| g[0]).collect(),
        groups,
        group_of,
        reduced_coeffs,
        reduced_caps: instance.constraints.iter().map(|c| c.cap).collect(),
        kinds,
    })
}

/// An instance together with everything derived from it once.
#[derive(Debug, Clone)]
pub struct Problem {
    pub instance: Instance,
    pub index: IndexSets,
    pub reduced: ReducedInstance,
    pub theta: Vec<f64>,
    /// `theta` restricted to the group representatives.
    pub theta_reduced: Vec<f64>,
    /// Sparse rows `(agent, A_li)` in agent order.
    pub rows: Vec<Vec<(usize, f64)>>,
    /// Aligned with `rows`: the reduced coefficient of each agent's group
    /// split evenly over the group members on the row.
    pub split_coeffs: Vec<Vec<f64>>,
}

impl Problem {
    /// Checks structure, reduces equalities and fixes the anchor point.
    pub fn new(instance: Instance) -> Result<Self> {
        let n = instance.n_agents();
        if n == 0 {
            return Err(Error::InvalidInstance("no agents".into()));
        }
        check_len("d", n, instance.d.len())?;
        if let Some(t) = &instance.theta {
            check_len("theta", n, t.len())?;
        }
        let reduced = reduce_equalities(&instance)?;
        let theta = match &instance.theta {
            Some(t) => t.clone(),
            None => derive_theta(&instance)?,
        };
        let theta_reduced = reduced.restrict(&theta);
        let index = IndexSets::new(&instance);
        let rows = instance
            .constraints
            .iter()
            .map(|c| {
                c.coeffs
                    .iter()
                    .filter(|(_, &a)| a != 0.0)
                    .map(|(&i, &a)| (i, a))
                    .collect()
            })
            .collect::<Vec<Vec<(usize, f64)>>>();
        let split_coeffs = rows
            .iter()
            .enumerate()
            .map(|(l, row)| {
                let mut on_row = vec![0usize; reduced.dim()];
                for &(i, _) in row {
                    on_row[reduced.group_of[i]] += 1;
                }
                row.iter()
                    .map(|&(i, _)| {
                        let k = reduced.group_of[i];
                        reduced.reduced_coeffs[l][k] / on_row[k] as f64
                    })
                    .collect()
            })
            .collect();
        Ok(Problem {
            instance,
            index,
            reduced,
            theta,
            theta_reduced,
            rows,
            split_coeffs,
        })
    }

    pub fn n(&self) -> usize {
        self.instance.n_agents()
    }

    pub fn l(&self) -> usize {
        self.instance.n_constraints()
    }

    pub fn cap(&self, l: usize) -> f64 {
        self.instance.constraints[l].cap
    }

    pub fn row_dot(&self, l: usize, x: &[f64]) -> f64 {
        crate::numeric::csum(self.rows[l].iter().map(|&(i, a)| a * x[i]))
    }

    pub fn coeff(&self, l: usize, i: usize) -> f64 {
        self.instance.constraints[l]
            .coeffs
            .get(&i)
            .copied()
            .unwrap_or(0.0)
    }
}
