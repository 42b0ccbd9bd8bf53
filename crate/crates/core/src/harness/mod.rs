//! Experiment harness: TOML configs, run directories and canned scenarios.
//!
//! A config file mirrors [`SimConfig`]. Only `mode`, `aggregators` and
//! `rounds` are required; every section falls back to documented defaults,
//! and unknown keys are errors.
//!
//! ```toml
//! mode = "sync"
//! aggregators = 3
//! rounds = 20
//! seed = 7
//!
//! [partition]
//! kind = "dirichlet"
//! alpha = 0.5
//!
//! [defaults]
//! policy = { kind = "above_average" }
//!
//! [[aggregator]]
//! id = 2
//! attack = { kind = "sign_flip", scale = 4.0 }
//! ```

mod scenarios;

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use scenarios::{scenario, Scenario, Variant, SCENARIOS};

use crate::aggregation::FedYogiParams;
use crate::cas::Cid;
use crate::learner::PartitionSpec;
use crate::ledger::Mode;
use crate::policy::{PolicyKind, PolicySpec};
use crate::scoring::ScoringAlgorithm;
use crate::sim::{
    self, AggregationKind, AggregatorSpec, Attack, ConfigError, DataConfig, DelayModel, PhaseDurations, SimConfig,
    SimError, SimOutput, TrainSettings,
};

pub const METRICS_FILE: &str = "metrics.csv";
pub const EVENTS_FILE: &str = "events.log";
pub const CONFIG_FILE: &str = "config.toml";
pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("cannot read config {path}: {source}")]
    ReadConfig { path: PathBuf, source: io::Error },
    #[error("config error at `{path}`: {message}")]
    Parse { path: String, message: String },
    #[error("config error at `{}`: {}", .0.path, .0.message)]
    Invalid(ConfigError),
    #[error("unknown scenario `{name}`; valid names: {}", SCENARIOS.join(", "))]
    UnknownScenario { name: String },
    #[error("simulation failed: {0}")]
    Sim(#[from] SimError),
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: io::Error },
}

impl HarnessError {
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            HarnessError::ReadConfig { .. }
                | HarnessError::Parse { .. }
                | HarnessError::Invalid(_)
                | HarnessError::UnknownScenario { .. }
                | HarnessError::Sim(SimError::Config(_))
        )
    }

    /// 2 for configuration problems, 3 for everything that fails at runtime.
    pub fn exit_code(&self) -> i32 {
        if self.is_config_error() {
            2
        } else {
            3
        }
    }
}

impl From<ConfigError> for HarnessError {
    fn from(e: ConfigError) -> Self {
        HarnessError::Invalid(e)
    }
}

fn default_clients() -> usize {
    3
}

fn default_partition() -> PartitionSpec {
    PartitionSpec::Iid
}

fn is_false(b: &bool) -> bool {
    !*b
}

/// Settings shared by every aggregator unless an `[[aggregator]]` entry
/// overrides them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AggregatorDefaults {
    pub policy: PolicySpec,
    pub aggregation: AggregationKind,
    pub delay: DelayModel,
}

impl Default for AggregatorDefaults {
    fn default() -> Self {
        Self { policy: PolicySpec::new(PolicyKind::All), aggregation: AggregationKind::FedAvg, delay: DelayModel::default() }
    }
}

/// Per-field delay overrides; unset fields keep the default delay model.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelayOverride {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_secs: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jitter_secs: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub straggler_multiplier: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub straggle_prob: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scoring_secs: Option<f64>,
}

impl DelayOverride {
    fn apply(&self, base: DelayModel) -> DelayModel {
        DelayModel {
            base_secs: self.base_secs.unwrap_or(base.base_secs),
            jitter_secs: self.jitter_secs.unwrap_or(base.jitter_secs),
            straggler_multiplier: self.straggler_multiplier.unwrap_or(base.straggler_multiplier),
            straggle_prob: self.straggle_prob.unwrap_or(base.straggle_prob),
            scoring_secs: self.scoring_secs.unwrap_or(base.scoring_secs),
        }
    }

    fn full(d: DelayModel) -> Self {
        Self {
            base_secs: Some(d.base_secs),
            jitter_secs: Some(d.jitter_secs),
            straggler_multiplier: Some(d.straggler_multiplier),
            straggle_prob: Some(d.straggle_prob),
            scoring_secs: Some(d.scoring_secs),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregatorOverride {
    pub id: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<PolicySpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aggregation: Option<AggregationKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delay: Option<DelayOverride>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attack: Option<Attack>,
    #[serde(default, skip_serializing_if = "is_false")]
    pub dishonest_scoring: bool,
}

/// The on-disk config layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub mode: Mode,
    pub aggregators: usize,
    pub rounds: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_clients")]
    pub clients_per_aggregator: usize,
    #[serde(default)]
    pub scoring: ScoringAlgorithm,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub multikrum_f: Option<usize>,
    #[serde(default)]
    pub warmup_rounds: usize,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default = "default_partition")]
    pub partition: PartitionSpec,
    #[serde(default)]
    pub train: TrainSettings,
    #[serde(default)]
    pub phases: PhaseDurations,
    #[serde(default)]
    pub fedyogi: FedYogiParams,
    #[serde(default)]
    pub defaults: AggregatorDefaults,
    #[serde(default, rename = "aggregator", skip_serializing_if = "Vec::is_empty")]
    pub overrides: Vec<AggregatorOverride>,
}

impl ConfigFile {
    /// Resolves defaults and overrides into a validated [`SimConfig`].
    pub fn resolve(&self) -> Result<SimConfig, ConfigError> {
        let base = AggregatorSpec {
            policy: self.defaults.policy,
            aggregation: self.defaults.aggregation,
            delay: self.defaults.delay,
            attack: None,
            dishonest_scoring: false,
        };
        let mut aggregators = vec![base; self.aggregators];
        let mut seen = vec![false; self.aggregators];
        for (i, o) in self.overrides.iter().enumerate() {
            let id = o.id as usize;
            if id >= self.aggregators {
                return Err(ConfigError::new(
                    format!("aggregator[{i}].id"),
                    format!("id {id} is not registered (aggregators = {})", self.aggregators),
                ));
            }
            if std::mem::replace(&mut seen[id], true) {
                return Err(ConfigError::new(format!("aggregator[{i}].id"), format!("id {id} appears twice")));
            }
            let a = &mut aggregators[id];
            if let Some(p) = o.policy {
                a.policy = p;
            }
            if let Some(k) = o.aggregation {
                a.aggregation = k;
            }
            if let Some(d) = o.delay {
                a.delay = d.apply(a.delay);
            }
            a.attack = o.attack;
            a.dishonest_scoring = o.dishonest_scoring;
        }
        let cfg = SimConfig {
            mode: self.mode,
            seed: self.seed,
            rounds: self.rounds,
            clients_per_aggregator: self.clients_per_aggregator,
            scoring: self.scoring,
            multikrum_f: self.multikrum_f,
            warmup_rounds: self.warmup_rounds,
            data: self.data,
            partition: self.partition,
            train: self.train,
            phases: self.phases,
            fedyogi: self.fedyogi,
            aggregators,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Fully explicit form of `cfg`: every aggregator gets its own entry.
    pub fn from_sim(cfg: &SimConfig) -> Self {
        let defaults = cfg
            .aggregators
            .first()
            .map(|a| AggregatorDefaults { policy: a.policy, aggregation: a.aggregation, delay: a.delay })
            .unwrap_or_default();
        let overrides = cfg
            .aggregators
            .iter()
            .enumerate()
            .map(|(i, a)| AggregatorOverride {
                id: i as u32,
                policy: Some(a.policy),
                aggregation: Some(a.aggregation),
                delay: Some(DelayOverride::full(a.delay)),
                attack: a.attack,
                dishonest_scoring: a.dishonest_scoring,
            })
            .collect();
        Self {
            mode: cfg.mode,
            aggregators: cfg.aggregators.len(),
            rounds: cfg.rounds,
            seed: cfg.seed,
            clients_per_aggregator: cfg.clients_per_aggregator,
            scoring: cfg.scoring,
            multikrum_f: cfg.multikrum_f,
            warmup_rounds: cfg.warmup_rounds,
            data: cfg.data,
            partition: cfg.partition,
            train: cfg.train,
            phases: cfg.phases,
            fedyogi: cfg.fedyogi,
            defaults,
            overrides,
        }
    }
}

/// Strictly parses TOML text into a [`ConfigFile`] without validating it.
pub fn parse_config_file(text: &str) -> Result<ConfigFile, HarnessError> {
    let de = toml::Deserializer::parse(text)
        .map_err(|e| HarnessError::Parse { path: "<document>".into(), message: e.message().to_string() })?;
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let message = e.into_inner().message().to_string();
        HarnessError::Parse { path, message }
    })
}

pub fn parse_config_str(text: &str) -> Result<SimConfig, HarnessError> {
    Ok(parse_config_file(text)?.resolve()?)
}

pub fn parse_config(path: &Path) -> Result<SimConfig, HarnessError> {
    let text = fs::read_to_string(path).map_err(|source| HarnessError::ReadConfig { path: path.to_path_buf(), source })?;
    parse_config_str(&text)
}

/// Canonical TOML for `cfg`. Parsing it yields `cfg` again.
pub fn canonical_config(cfg: &SimConfig) -> String {
    toml::to_string(&ConfigFile::from_sim(cfg)).expect("config types serialize to TOML")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputPaths {
    pub metrics: String,
    pub events: String,
    pub config: String,
}

/// Enough to reproduce a run: the config copy plus this digest and seed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    /// Cid of the stored config copy's bytes.
    pub config_digest: String,
    pub seed: u64,
    pub version: String,
    pub outputs: OutputPaths,
}

impl RunManifest {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes to TOML")
    }

    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Parse { path: MANIFEST_FILE.into(), message: e.message().to_string() })
    }
}

/// Runs `cfg` and writes metrics, the ledger event log, the canonical config
/// copy and the manifest into `out_dir`. On failure no output file is left.
pub fn run_experiment(cfg: &SimConfig, out_dir: &Path) -> Result<(RunManifest, SimOutput), HarnessError> {
    cfg.validate()?;
    let output = sim::run(cfg)?;
    let config_text = canonical_config(cfg);
    let manifest = RunManifest {
        config_digest: Cid::of(config_text.as_bytes()).to_string(),
        seed: cfg.seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        outputs: OutputPaths { metrics: METRICS_FILE.into(), events: EVENTS_FILE.into(), config: CONFIG_FILE.into() },
    };
    let files = [
        (METRICS_FILE, output.metrics_csv()),
        (EVENTS_FILE, output.event_log()),
        (CONFIG_FILE, config_text),
        (MANIFEST_FILE, manifest.to_toml()),
    ];
    let write_err = |path: PathBuf| move |source| HarnessError::Write { path, source };
    fs::create_dir_all(out_dir).map_err(write_err(out_dir.to_path_buf()))?;
    let mut written = Vec::new();
    for (name, contents) in &files {
        let path = out_dir.join(name);
        if let Err(e) = fs::write(&path, contents) {
            for p in &written {
                let _ = fs::remove_file(p);
            }
            let _ = fs::remove_file(&path);
            return Err(write_err(path)(e));
        }
        written.push(path);
    }
    Ok((manifest, output))
}

/// Recomputes the config digest from a run directory and compares it with
/// the manifest.
pub fn verify_run_dir(dir: &Path) -> Result<bool, HarnessError> {
    let read = |name: &str| {
        let path = dir.join(name);
        fs::read(&path).map_err(|source| HarnessError::ReadConfig { path, source })
    };
    let manifest = RunManifest::from_toml(&String::from_utf8_lossy(&read(MANIFEST_FILE)?))?;
    Ok(Cid::of(&read(CONFIG_FILE)?).as_str() == manifest.config_digest)
}
