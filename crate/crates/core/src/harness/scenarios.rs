//! Built-in experiments. Each scenario is a set of labeled variants that are
//! meant to be compared against each other under the same seed.

use super::HarnessError;
use crate::learner::PartitionSpec;
use crate::ledger::Mode;
use crate::policy::{PolicyKind, PolicySpec};
use crate::sim::{Attack, DataConfig, SimConfig};

pub const SCENARIOS: [&str; 5] = ["collab-vs-self", "sync-vs-async", "byzantine-naive-vs-smart", "iid-baseline", "niid-dirichlet"];

#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub label: String,
    pub config: SimConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub variants: Vec<Variant>,
}

impl Scenario {
    pub fn variant(&self, label: &str) -> Option<&SimConfig> {
        self.variants.iter().find(|v| v.label == label).map(|v| &v.config)
    }
}

fn variant(label: &str, config: SimConfig) -> Variant {
    Variant { label: label.to_string(), config }
}

fn base(mode: Mode, aggregators: usize, rounds: usize, seed: u64) -> SimConfig {
    let mut c = SimConfig::new(mode, aggregators, rounds);
    c.seed = seed;
    c.clients_per_aggregator = 3;
    c.data = DataConfig { classes: 10, dims: 20, samples: 3000, eval_fraction: 0.2, test_fraction: 0.2 };
    c
}

/// Three non-IID clusters, each either alone or merging every peer.
fn collab_vs_self(seed: u64) -> Vec<Variant> {
    let mut c = base(Mode::Sync, 3, 40, seed);
    c.partition = PartitionSpec::Dirichlet { alpha: 0.5 };
    vec![
        variant("self", c.clone().with_policy(PolicySpec::new(PolicyKind::SelfOnly))),
        variant("all", c.with_policy(PolicySpec::new(PolicyKind::All))),
    ]
}

/// Four Pick-All aggregators; aggregator 3 doubles its compute time half the time.
fn sync_vs_async(seed: u64) -> Vec<Variant> {
    let mut c = base(Mode::Sync, 4, 30, seed);
    for a in &mut c.aggregators {
        a.delay.base_secs = 10.0;
        a.delay.jitter_secs = 1.0;
        a.delay.scoring_secs = 2.0;
    }
    let straggler = &mut c.aggregators[3].delay;
    straggler.straggler_multiplier = 2.0;
    straggler.straggle_prob = 0.5;
    c.phases.training_secs = 16.5;
    c.phases.scoring_secs = 3.0;
    let mut asynchronous = c.clone();
    asynchronous.mode = Mode::Async;
    vec![variant("sync", c), variant("async", asynchronous)]
}

/// Aggregator 2 submits sign-flipped models. Honest aggregators pick either
/// the three best-scored models or only those above the candidate average.
fn byzantine(seed: u64) -> Vec<Variant> {
    let mut c = base(Mode::Sync, 3, 30, seed);
    c.partition = PartitionSpec::Dirichlet { alpha: 0.5 };
    c.aggregators[2].attack = Some(Attack::SignFlip { scale: 4.0 });
    vec![
        variant("top-k", c.clone().with_policy(PolicySpec::new(PolicyKind::TopK(3)))),
        variant("above-average", c.with_policy(PolicySpec::new(PolicyKind::AboveAverage))),
    ]
}

fn iid_baseline(seed: u64) -> Vec<Variant> {
    vec![variant("all", base(Mode::Sync, 3, 20, seed))]
}

fn niid_dirichlet(seed: u64) -> Vec<Variant> {
    [0.1, 0.5, 1.0]
        .into_iter()
        .map(|alpha| {
            let mut c = base(Mode::Sync, 3, 20, seed);
            c.partition = PartitionSpec::Dirichlet { alpha };
            variant(&format!("alpha-{alpha}"), c)
        })
        .collect()
}

/// Looks up a built-in scenario with every variant seeded by `seed`.
pub fn scenario(name: &str, seed: u64) -> Result<Scenario, HarnessError> {
    let variants = match name {
        "collab-vs-self" => collab_vs_self(seed),
        "sync-vs-async" => sync_vs_async(seed),
        "byzantine-naive-vs-smart" => byzantine(seed),
        "iid-baseline" => iid_baseline(seed),
        "niid-dirichlet" => niid_dirichlet(seed),
        _ => return Err(HarnessError::UnknownScenario { name: name.to_string() }),
    };
    Ok(Scenario { name: name.to_string(), variants })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_scenario_validates() {
        for name in SCENARIOS {
            let s = scenario(name, 1).unwrap();
            assert!(!s.variants.is_empty());
            for v in &s.variants {
                v.config.validate().unwrap_or_else(|e| panic!("{name}/{}: {e}", v.label));
            }
        }
    }

    #[test]
    fn unknown_name_lists_valid_names() {
        let err = scenario("collab", 0).unwrap_err().to_string();
        for name in SCENARIOS {
            assert!(err.contains(name), "{err}");
        }
    }

    #[test]
    fn collab_setup() {
        let s = scenario("collab-vs-self", 3).unwrap();
        let all = s.variant("all").unwrap();
        assert_eq!(all.aggregators.len(), 3);
        assert_eq!(all.clients_per_aggregator, 3);
        assert_eq!(all.partition, PartitionSpec::Dirichlet { alpha: 0.5 });
        assert_eq!(all.rounds, 40);
        let own = s.variant("self").unwrap();
        assert!(own.aggregators.iter().all(|a| a.policy.kind == PolicyKind::SelfOnly));
    }
}
