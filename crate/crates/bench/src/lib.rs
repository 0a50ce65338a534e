//! Fixtures shared by the benchmarks.

use propmech_core::harness::{generate, FamilyMix, Scenario};
use propmech_core::{construct_candidate_ne, solve, MessageProfile, Problem};

/// Mixed-family unicast instance with `agents` agents on `links` links.
pub fn unicast(agents: usize, links: usize, seed: u64) -> Problem {
    let s = Scenario::Unicast {
        agents,
        links,
        min_per_link: 2,
        unit: false,
        families: FamilyMix::Mixed,
        eta: 1.0,
    };
    Problem::new(generate(&s, seed).expect("generator parameters are valid").instance).expect("valid instance")
}

pub fn local_public_goods(groups: usize, seed: u64) -> Problem {
    let s = Scenario::LocalPublicGoods {
        groups,
        min_size: 2,
        max_size: 4,
        families: FamilyMix::Mixed,
        eta: 1.0,
    };
    Problem::new(generate(&s, seed).expect("generator parameters are valid").instance).expect("valid instance")
}

pub fn candidate(problem: &Problem) -> MessageProfile {
    construct_candidate_ne(problem, &solve(problem, 1e-10).expect("solvable")).expect("interior optimum")
}
