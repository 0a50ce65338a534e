use thiserror::Error;

/// Errors raised across the mechanism pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    #[error("valuation evaluated outside its domain at x = {0}")]
    Domain(f64),

    #[error("no strictly interior anchor point exists (scale fell below {min_scale:e})")]
    NoInteriorPoint { min_scale: f64 },

    #[error("reduced coefficient of constraint {constraint} on group {group} is negative ({value})")]
    NegativeReducedCoefficient {
        constraint: usize,
        group: usize,
        value: f64,
    },

    #[error("dimension mismatch: {what} has length {got}, expected {expected}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("dual ascent did not converge after {0} iterations")]
    NoConvergence(usize),

    #[error("oracle grid too large: {points} points (limit {limit})")]
    TooLarge { points: f64, limit: f64 },

    #[error("demand of agent {agent} is {demand}, must exceed floor {floor}")]
    DemandOutOfBox { agent: usize, demand: f64, floor: f64 },

    #[error("agent {agent} is not on constraint {constraint}")]
    AgentNotOnConstraint { agent: usize, constraint: usize },

    #[error("constraint {constraint} has {agents} agents; off-equilibrium budget balance needs at least 5")]
    AssumptionA4PrimeViolated { constraint: usize, agents: usize },

    #[error("constraint {constraint} is degenerate or has negative coefficients; off-equilibrium rebates are defined for nonnegative rows only")]
    DegenerateRowUnsupported { constraint: usize },

    #[error("optimal allocation of agent {agent} is {value}, outside ({floor}, {ceiling})")]
    A2Violation {
        agent: usize,
        value: f64,
        floor: f64,
        ceiling: f64,
    },

    #[error("invalid search bracket [{lo}, {hi}]")]
    BracketInvalid { lo: f64, hi: f64 },

    #[error("invalid message profile: {0}")]
    InvalidProfile(String),

    #[error("infeasible generator parameters: {0}")]
    InfeasibleParams(String),

    #[error("unknown property suite `{0}`")]
    UnknownSuite(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            got,
        })
    }
}
