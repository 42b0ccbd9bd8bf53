use std::fmt;

use serde::{Deserialize, Serialize};

use crate::aggregation::FedYogiParams;
use crate::learner::{PartitionSpec, TrainConfig};
use crate::ledger::Mode;
use crate::policy::{PolicyKind, PolicySpec};
use crate::scoring::ScoringAlgorithm;

/// A configuration constraint violation, addressed by its key path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self { path: path.into(), message: message.into() }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AggregationKind {
    #[default]
    FedAvg,
    FedYogi,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Attack {
    SignFlip { scale: f64 },
    GaussianNoise { sigma: f64 },
}

/// Per-round compute time of a cluster, in virtual seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DelayModel {
    pub base_secs: f64,
    /// Half-width of the uniform jitter added to `base_secs`.
    pub jitter_secs: f64,
    pub straggler_multiplier: f64,
    pub straggle_prob: f64,
    /// Time to score one model.
    pub scoring_secs: f64,
}

impl Default for DelayModel {
    fn default() -> Self {
        Self { base_secs: 10.0, jitter_secs: 1.0, straggler_multiplier: 1.0, straggle_prob: 0.0, scoring_secs: 2.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhaseDurations {
    pub training_secs: f64,
    pub scoring_secs: f64,
}

impl Default for PhaseDurations {
    /// About 1.5x the default non-straggler training and scoring times.
    fn default() -> Self {
        Self { training_secs: 16.5, scoring_secs: 3.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub classes: usize,
    pub dims: usize,
    pub samples: usize,
    /// Share of all samples held out as the common evaluation set for metrics.
    pub eval_fraction: f64,
    /// Share of each client's shard held out for its cluster's scoring set.
    pub test_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { classes: 10, dims: 20, samples: 3000, eval_fraction: 0.2, test_fraction: 0.2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self { epochs: 2, lr: 0.01, batch_size: 5 }
    }
}

impl TrainSettings {
    pub fn with_seed(&self, seed: u64) -> TrainConfig {
        TrainConfig { epochs: self.epochs, lr: self.lr, batch_size: self.batch_size, seed }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregatorSpec {
    pub policy: PolicySpec,
    pub aggregation: AggregationKind,
    pub delay: DelayModel,
    pub attack: Option<Attack>,
    /// Adversaries only: report `1 − score` instead of the honest score.
    pub dishonest_scoring: bool,
}

impl Default for AggregatorSpec {
    fn default() -> Self {
        Self {
            policy: PolicySpec::new(PolicyKind::All),
            aggregation: AggregationKind::FedAvg,
            delay: DelayModel::default(),
            attack: None,
            dishonest_scoring: false,
        }
    }
}

/// A fully resolved experiment description.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub mode: Mode,
    pub seed: u64,
    pub rounds: usize,
    pub clients_per_aggregator: usize,
    pub scoring: ScoringAlgorithm,
    /// Assumed Byzantine count for MultiKRUM; floor((n−1)/3) when unset.
    pub multikrum_f: Option<usize>,
    /// Rounds during which every aggregator merges only its own model.
    pub warmup_rounds: usize,
    pub data: DataConfig,
    pub partition: PartitionSpec,
    pub train: TrainSettings,
    pub phases: PhaseDurations,
    pub fedyogi: FedYogiParams,
    pub aggregators: Vec<AggregatorSpec>,
}

impl SimConfig {
    /// `n` identical aggregators with every other field at its default.
    pub fn new(mode: Mode, n: usize, rounds: usize) -> Self {
        Self {
            mode,
            seed: 0,
            rounds,
            clients_per_aggregator: 3,
            scoring: ScoringAlgorithm::Accuracy,
            multikrum_f: None,
            warmup_rounds: 0,
            data: DataConfig::default(),
            partition: PartitionSpec::Iid,
            train: TrainSettings::default(),
            phases: PhaseDurations::default(),
            fedyogi: FedYogiParams::default(),
            aggregators: vec![AggregatorSpec::default(); n],
        }
    }

    pub fn with_policy(mut self, policy: PolicySpec) -> Self {
        for a in &mut self.aggregators {
            a.policy = policy;
        }
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let n = self.aggregators.len();
        if n < 2 {
            return Err(ConfigError::new("aggregators", format!("need at least 2 aggregators to form a scoring majority, got {n}")));
        }
        if self.rounds == 0 {
            return Err(ConfigError::new("rounds", "must be >= 1"));
        }
        if self.clients_per_aggregator == 0 {
            return Err(ConfigError::new("clients_per_aggregator", "must be >= 1"));
        }
        if self.scoring == ScoringAlgorithm::Multikrum && self.mode == Mode::Async {
            return Err(ConfigError::new(
                "scoring",
                "multikrum (weight-similarity scoring) needs every model of a round and is not supported in async mode",
            ));
        }
        let d = &self.data;
        if d.classes < 2 || d.dims == 0 {
            return Err(ConfigError::new("data", "need classes >= 2 and dims >= 1"));
        }
        if !(d.eval_fraction > 0.0 && d.eval_fraction < 1.0) {
            return Err(ConfigError::new("data.eval_fraction", "must lie in (0, 1)"));
        }
        if !(0.0..1.0).contains(&d.test_fraction) {
            return Err(ConfigError::new("data.test_fraction", "must lie in [0, 1)"));
        }
        let clients = n * self.clients_per_aggregator;
        let pool = d.samples - (d.samples as f64 * d.eval_fraction).floor() as usize;
        if d.samples < d.classes || pool < clients {
            return Err(ConfigError::new(
                "data.samples",
                format!("{} samples leave {pool} for training, fewer than {clients} clients", d.samples),
            ));
        }
        self.partition.validate().map_err(|e| ConfigError::new("partition", e.to_string()))?;
        self.train.with_seed(0).validate().map_err(|e| ConfigError::new("train", e.to_string()))?;
        if self.mode == Mode::Sync {
            let p = &self.phases;
            if !(p.training_secs > 0.0 && p.training_secs.is_finite() && p.scoring_secs > 0.0 && p.scoring_secs.is_finite()) {
                return Err(ConfigError::new("phases", "phase durations must be positive"));
            }
        }
        self.fedyogi.validate().map_err(|e| ConfigError::new("fedyogi", e.to_string()))?;
        for (i, a) in self.aggregators.iter().enumerate() {
            let at = |field: &str| format!("aggregator[{i}].{field}");
            a.policy.validate().map_err(|e| ConfigError::new(at("policy"), e.to_string()))?;
            let dl = &a.delay;
            let non_negative = |v: f64| v >= 0.0 && v.is_finite();
            if !(non_negative(dl.base_secs) && non_negative(dl.jitter_secs) && non_negative(dl.scoring_secs)) {
                return Err(ConfigError::new(at("delay"), "times must be non-negative"));
            }
            if dl.jitter_secs > dl.base_secs {
                return Err(ConfigError::new(at("delay.jitter_secs"), "must not exceed base_secs"));
            }
            if !(dl.straggler_multiplier > 0.0 && dl.straggler_multiplier.is_finite()) {
                return Err(ConfigError::new(at("delay.straggler_multiplier"), "must be positive"));
            }
            if !(0.0..=1.0).contains(&dl.straggle_prob) {
                return Err(ConfigError::new(at("delay.straggle_prob"), "must lie in [0, 1]"));
            }
            match a.attack {
                Some(Attack::SignFlip { scale }) if !scale.is_finite() => {
                    return Err(ConfigError::new(at("attack.scale"), "must be finite"));
                }
                Some(Attack::GaussianNoise { sigma }) if !(sigma >= 0.0 && sigma.is_finite()) => {
                    return Err(ConfigError::new(at("attack.sigma"), "must be non-negative"));
                }
                _ => {}
            }
            if a.dishonest_scoring && a.attack.is_none() {
                return Err(ConfigError::new(at("dishonest_scoring"), "only adversaries may score dishonestly"));
            }
        }
        Ok(())
    }

    pub fn adversaries(&self) -> impl Iterator<Item = usize> + '_ {
        self.aggregators.iter().enumerate().filter(|(_, a)| a.attack.is_some()).map(|(i, _)| i)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        SimConfig::new(Mode::Sync, 3, 5).validate().unwrap();
        SimConfig::new(Mode::Async, 2, 1).validate().unwrap();
    }

    #[test]
    fn multikrum_requires_sync() {
        let mut c = SimConfig::new(Mode::Async, 4, 5);
        c.scoring = ScoringAlgorithm::Multikrum;
        let err = c.validate().unwrap_err();
        assert_eq!(err.path, "scoring");
        c.mode = Mode::Sync;
        c.validate().unwrap();
    }

    #[test]
    fn constraint_paths() {
        let mut c = SimConfig::new(Mode::Sync, 3, 5);
        c.aggregators[1].delay.straggle_prob = 2.0;
        assert_eq!(c.validate().unwrap_err().path, "aggregator[1].delay.straggle_prob");
        let mut c = SimConfig::new(Mode::Sync, 1, 5);
        assert_eq!(c.validate().unwrap_err().path, "aggregators");
        c = SimConfig::new(Mode::Sync, 3, 0);
        assert_eq!(c.validate().unwrap_err().path, "rounds");
        c = SimConfig::new(Mode::Sync, 3, 2);
        c.partition = PartitionSpec::Dirichlet { alpha: -1.0 };
        assert_eq!(c.validate().unwrap_err().path, "partition");
        c = SimConfig::new(Mode::Sync, 3, 2);
        c.aggregators[0].dishonest_scoring = true;
        assert_eq!(c.validate().unwrap_err().path, "aggregator[0].dishonest_scoring");
        c = SimConfig::new(Mode::Sync, 3, 2);
        c.data.samples = 10;
        assert_eq!(c.validate().unwrap_err().path, "data.samples");
    }
}
