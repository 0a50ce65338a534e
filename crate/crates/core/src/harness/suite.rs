use serde::{Deserialize, Serialize};

use super::scenario::{generate, FamilyMix, Scenario};
use crate::error::Result;
use crate::model::{validate, Agent, Constraint, Instance, Valuation};
use crate::taxation::GameVariant;

/// A named instance together with the game variants it supports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundledScenario {
    pub name: String,
    pub instance: Instance,
    pub variants: Vec<GameVariant>,
}

impl BundledScenario {
    fn new(name: &str, instance: Instance) -> Self {
        let variants = if validate(&instance).is_valid(true) {
            GameVariant::ALL.to_vec()
        } else {
            vec![GameVariant::Base, GameVariant::SbbNe]
        };
        BundledScenario {
            name: name.to_string(),
            instance,
            variants,
        }
    }
}

fn pair(valuation: Valuation, cap: f64) -> Instance {
    Instance {
        agents: vec![Agent { valuation }; 2],
        constraints: vec![Constraint::new([(0, 1.0), (1, 1.0)], cap)],
        equality_groups: vec![],
        d: vec![0.01; 2],
        upper: 10.0,
        eta: 1.0,
        theta: None,
    }
}

/// Two-link chain: agent 1 crosses both links, agents 0 and 2 one each.
pub fn chain3() -> Instance {
    Instance {
        agents: [1.0, 2.0, 1.0]
            .into_iter()
            .map(|a| Agent {
                valuation: Valuation::LogShift { a, b: 1.0 },
            })
            .collect(),
        constraints: vec![
            Constraint::new([(0, 1.0), (1, 1.0)], 1.0),
            Constraint::new([(1, 1.0), (2, 1.0)], 1.0),
        ],
        equality_groups: vec![],
        d: vec![0.01; 3],
        upper: 10.0,
        eta: 1.0,
        theta: None,
    }
}

/// Two log agents sharing a unit link.
pub fn canonical() -> Instance {
    pair(Valuation::LogShift { a: 1.0, b: 1.0 }, 1.0)
}

/// Two QuadCap agents on a link too wide to bind.
pub fn slack_quadcap() -> Instance {
    pair(Valuation::QuadCap { a: 1.0, m: 2.0 }, 10.0)
}

/// The fixed scenarios the acceptance checks run on.
pub fn bundled() -> Result<Vec<BundledScenario>> {
    let unicast = |agents, links, min_per_link, seed| -> Result<Instance> {
        let s = Scenario::Unicast {
            agents,
            links,
            min_per_link,
            unit: false,
            families: FamilyMix::Mixed,
            eta: 1.0,
        };
        Ok(generate(&s, seed)?.instance)
    };
    Ok(vec![
        BundledScenario::new("canonical", canonical()),
        BundledScenario::new("slack_quadcap", slack_quadcap()),
        BundledScenario::new("chain3", chain3()),
        BundledScenario::new("unicast_small", unicast(4, 2, 2, 3)?),
        BundledScenario::new("unicast_five_per_link", unicast(8, 4, 5, 7)?),
        BundledScenario::new("single_link_five", unicast(5, 1, 5, 0)?),
        BundledScenario::new(
            "public_good",
            generate(
                &Scenario::PublicGood {
                    agents: 3,
                    cap: 2.5,
                    families: FamilyMix::Mixed,
                    eta: 1.0,
                },
                0,
            )?
            .instance,
        ),
        BundledScenario::new(
            "local_public_goods",
            generate(
                &Scenario::LocalPublicGoods {
                    groups: 2,
                    min_size: 2,
                    max_size: 4,
                    families: FamilyMix::Mixed,
                    eta: 1.0,
                },
                1,
            )?
            .instance,
        ),
    ])
}
