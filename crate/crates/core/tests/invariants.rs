use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use propmech_core::game::{best_response_price, outcome};
use propmech_core::harness::{
    generate, offeq_pool, random_demand, random_feasible_demand, random_prices, FamilyMix, Scenario,
};
use propmech_core::taxation::{rebate, tax};
use propmech_core::{allocate, solve, GameVariant, Instance, MessageProfile, Problem, Valuation};

fn instance_for(kind: u8, seed: u64) -> Instance {
    let s = match kind % 3 {
        0 => Scenario::Unicast {
            agents: 3 + (seed % 6) as usize,
            links: 1 + (seed % 4) as usize,
            min_per_link: 2,
            unit: false,
            families: FamilyMix::Mixed,
            eta: 1.0,
        },
        1 => Scenario::PublicGood {
            agents: 2 + (seed % 4) as usize,
            cap: 2.5,
            families: FamilyMix::Mixed,
            eta: 1.0,
        },
        _ => Scenario::LocalPublicGoods {
            groups: 1 + (seed % 3) as usize,
            min_size: 2,
            max_size: 4,
            families: FamilyMix::Mixed,
            eta: 1.0,
        },
    };
    generate(&s, seed).unwrap().instance
}

fn valuation() -> impl Strategy<Value = Valuation> {
    prop_oneof![
        (0.1f64..5.0, 0.1f64..5.0).prop_map(|(a, b)| Valuation::LogShift { a, b }),
        (0.1f64..5.0, 0.05f64..0.95).prop_map(|(a, b)| Valuation::Power { a, b }),
        (0.1f64..5.0, 0.5f64..10.0).prop_map(|(a, m)| Valuation::QuadCap { a, m }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn allocation_is_feasible_and_respects_groups(kind in 0u8..3, seed in 0u64..40, draw in any::<u64>()) {
        let problem = Problem::new(instance_for(kind, seed)).unwrap();
        let y = random_demand(&problem, &mut ChaCha8Rng::seed_from_u64(draw));
        let x = allocate(&problem, &y).unwrap().x;
        for c in &problem.instance.constraints {
            let lhs: f64 = c.coeffs.iter().map(|(&i, &a)| a * x[i]).sum();
            prop_assert!(lhs <= c.cap + 1e-9, "{lhs} > {}", c.cap);
        }
        for g in &problem.instance.equality_groups {
            prop_assert!(g.iter().all(|&i| x[i] == x[g[0]]));
        }
    }

    #[test]
    fn feasible_demands_are_allocated_as_quoted(kind in 0u8..3, seed in 0u64..40, draw in any::<u64>()) {
        let problem = Problem::new(instance_for(kind, seed)).unwrap();
        let y = random_feasible_demand(&problem, &mut ChaCha8Rng::seed_from_u64(draw));
        let x = allocate(&problem, &y).unwrap().x;
        for (a, b) in x.iter().zip(&y) {
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn off_equilibrium_budget_balances(which in 0usize..4, draw in any::<u64>()) {
        let problem = Problem::new(offeq_pool().unwrap().swap_remove(which)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(draw);
        let y = random_feasible_demand(&problem, &mut rng);
        let prices = random_prices(&problem, &mut rng);
        let x = allocate(&problem, &y).unwrap().x;
        let t = tax(&problem, GameVariant::SbbOffEq, &y, &x, &prices).unwrap();
        let net: f64 = t.agents.iter().map(|a| a.total).sum();
        let gross: f64 = t.agents.iter().map(|a| a.gross.abs()).sum();
        prop_assert!(net.abs() <= 1e-9 * gross.max(1.0), "net {net}, gross {gross}");
    }

    #[test]
    fn rebates_ignore_own_message(
        which in 0usize..4,
        draw in any::<u64>(),
        new_y in 0.02f64..20.0,
        new_p in 0.0f64..3.0,
    ) {
        let problem = Problem::new(offeq_pool().unwrap().swap_remove(which)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(draw);
        let y = random_demand(&problem, &mut rng);
        let prices = random_prices(&problem, &mut rng);
        let i = (draw % problem.n() as u64) as usize;
        let mut y2 = y.clone();
        y2[i] = new_y.max(problem.instance.d[i] + 1e-6);
        let mut p2 = prices.clone();
        p2[i].iter_mut().for_each(|p| *p = new_p);
        for &l in &problem.index.constraints_of_agent[i] {
            for v in [GameVariant::SbbNe, GameVariant::SbbOffEq] {
                let a = rebate(&problem, v, &y, &prices, i, l);
                let b = rebate(&problem, v, &y2, &p2, i, l);
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn price_best_response_beats_any_other_price(
        kind in 0u8..3,
        seed in 0u64..40,
        draw in any::<u64>(),
        alt in 0.0f64..4.0,
    ) {
        let problem = Problem::new(instance_for(kind, seed)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(draw);
        let profile = MessageProfile {
            y: random_demand(&problem, &mut rng),
            prices: random_prices(&problem, &mut rng),
        };
        let i = (draw % problem.n() as u64) as usize;
        let Some(&l) = problem.index.constraints_of_agent[i].first() else { return Ok(()) };
        let x = allocate(&problem, &profile.y).unwrap().x;
        let on = &problem.index.agents_on_constraint[l];
        let pbar = on.iter().filter(|&&j| j != i).map(|&j| profile.prices[j][l]).sum::<f64>()
            / (on.len() - 1) as f64;
        let row = &problem.instance.constraints[l];
        let delta = row.cap - row.coeffs.iter().map(|(&j, &a)| a * x[j]).sum::<f64>();
        let expected = (pbar - 0.5 * problem.instance.eta * pbar * delta * delta).max(0.0);
        let got = best_response_price(&problem, GameVariant::Base, &profile, i, l).unwrap();
        prop_assert!((got - expected).abs() <= 1e-12 * (1.0 + expected), "{got} vs {expected}");

        let mut at_br = profile.clone();
        at_br.prices[i][l] = got;
        let mut at_alt = profile.clone();
        at_alt.prices[i][l] = alt;
        let u_br = outcome(&problem, GameVariant::Base, &at_br).unwrap().utilities[i];
        let u_alt = outcome(&problem, GameVariant::Base, &at_alt).unwrap().utilities[i];
        prop_assert!(u_br >= u_alt - 1e-12 * (1.0 + u_alt.abs()));
    }

    #[test]
    fn valuation_derivatives_match_differences(v in valuation(), x in 0.05f64..20.0) {
        let h = 1e-5;
        let fd = (v.value(x + h).unwrap() - v.value(x - h).unwrap()) / (2.0 * h);
        let d = v.derivative(x).unwrap();
        prop_assert!((fd - d).abs() <= 1e-5 * (1.0 + d.abs()), "{fd} vs {d}");
        let fd2 = (v.derivative(x + h).unwrap() - v.derivative(x - h).unwrap()) / (2.0 * h);
        let d2 = v.second_derivative(x).unwrap();
        prop_assert!((fd2 - d2).abs() <= 1e-4 * (1.0 + d2.abs()), "{fd2} vs {d2}");
        prop_assert!(d2 < 0.0);
    }

    #[test]
    fn solve_is_deterministic(kind in 0u8..3, seed in 0u64..40) {
        let problem = Problem::new(instance_for(kind, seed)).unwrap();
        let a = solve(&problem, 1e-10).unwrap();
        let b = solve(&problem, 1e-10).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn instance_and_profile_survive_json(kind in 0u8..3, seed in 0u64..40, draw in any::<u64>()) {
        let inst = instance_for(kind, seed);
        prop_assert_eq!(Instance::from_json(&inst.to_json()).unwrap(), inst.clone());
        let problem = Problem::new(inst).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(draw);
        let profile = MessageProfile {
            y: random_demand(&problem, &mut rng),
            prices: random_prices(&problem, &mut rng),
        };
        prop_assert_eq!(MessageProfile::from_json(&profile.to_json()).unwrap(), profile);
    }
}
