//! Scenario generators, persistence, experiment runs and property suites.

mod experiment;
mod properties;
mod scenario;
mod suite;

pub use experiment::{
    compare, load_instance, read_json, run_experiment, write_json, Assertions, DynamicsSummary, ExperimentConfig,
    InitSpec, InstanceSource, Metadata, ReportBundle, RunDiagnostics, RunReport, Summary,
};
pub use properties::{
    feasibility_pool, offeq_pool, property_suite, random_demand, random_feasible_demand, random_prices, sample_seed,
    small_random_instance, SuiteReport, SUITES,
};
pub use scenario::{generate, FamilyMix, Generated, Scenario};
pub use suite::{bundled, canonical, chain3, slack_quadcap, BundledScenario};
