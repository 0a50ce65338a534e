//! Proportional allocation with taxes that Nash-implement the social optimum
//! of a linearly constrained resource allocation problem.

pub mod allocation;
pub mod centralized;
pub mod error;
pub mod game;
pub mod harness;
pub mod model;
pub mod numeric;
pub mod taxation;

pub use error::{Error, Result};
pub use model::{
    derive_theta, reduce_equalities, validate, Agent, Constraint, IndexSets, Instance, Problem,
    ReducedInstance, RowKind, ValidationReport, Valuation,
};
pub use centralized::{
    brute_force_oracle, kkt_residuals, solve, solve_with, CentralizedSolution, ResidualRecord,
    SolveOptions,
};
pub use allocation::{allocate, AllocationResult};
pub use taxation::{GameVariant, TaxBreakdown};
pub use game::{
    construct_candidate_ne, run_dynamics, verify_epsilon_ne, DynamicsOptions, MessageProfile, NeReport,
    RunTrace, VerifyOptions,
};
