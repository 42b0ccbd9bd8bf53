//! Aggregation policies: which peer models an aggregator merges each round.

use std::fmt;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cas::Cid;
use crate::ledger::AggregatorId;
use crate::scoring::{median, reduce_scores, ScoreReduce};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PolicyError {
    #[error("policy {0} requires k >= 1")]
    MissingK(&'static str),
    #[error("policy {0} does not take k")]
    UnexpectedK(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PolicyKind {
    All,
    /// Merge nothing: the local model only.
    SelfOnly,
    RandomK(usize),
    TopK(usize),
    AboveAverage,
    AboveMedian,
    AboveSelf,
}

impl PolicyKind {
    pub fn name(&self) -> &'static str {
        match self {
            PolicyKind::All => "all",
            PolicyKind::SelfOnly => "self",
            PolicyKind::RandomK(_) => "random_k",
            PolicyKind::TopK(_) => "top_k",
            PolicyKind::AboveAverage => "above_average",
            PolicyKind::AboveMedian => "above_median",
            PolicyKind::AboveSelf => "above_self",
        }
    }

    fn k(&self) -> Option<usize> {
        match *self {
            PolicyKind::RandomK(k) | PolicyKind::TopK(k) => Some(k),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum PolicyName {
    All,
    #[serde(rename = "self")]
    SelfOnly,
    RandomK,
    TopK,
    AboveAverage,
    AboveMedian,
    AboveSelf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicyTable {
    kind: PolicyName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    k: Option<usize>,
    #[serde(default)]
    reduce: ScoreReduce,
    #[serde(default)]
    seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "PolicyTable", into = "PolicyTable")]
pub struct PolicySpec {
    pub kind: PolicyKind,
    pub reduce: ScoreReduce,
    /// Seeds the RandomK draw.
    pub seed: u64,
}

impl PolicySpec {
    pub fn new(kind: PolicyKind) -> Self {
        Self { kind, reduce: ScoreReduce::Median, seed: 0 }
    }

    pub fn with_reduce(mut self, reduce: ScoreReduce) -> Self {
        self.reduce = reduce;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        match self.kind {
            PolicyKind::RandomK(0) | PolicyKind::TopK(0) => Err(PolicyError::MissingK(self.kind.name())),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for PolicySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind.k() {
            Some(k) => write!(f, "{}({k})/{}", self.kind.name(), self.reduce),
            None => write!(f, "{}/{}", self.kind.name(), self.reduce),
        }
    }
}

impl TryFrom<PolicyTable> for PolicySpec {
    type Error = PolicyError;

    fn try_from(t: PolicyTable) -> Result<Self, Self::Error> {
        let needs_k = |name| t.k.filter(|&k| k >= 1).ok_or(PolicyError::MissingK(name));
        let no_k = |name, kind| if t.k.is_some() { Err(PolicyError::UnexpectedK(name)) } else { Ok(kind) };
        let kind = match t.kind {
            PolicyName::RandomK => PolicyKind::RandomK(needs_k("random_k")?),
            PolicyName::TopK => PolicyKind::TopK(needs_k("top_k")?),
            PolicyName::All => no_k("all", PolicyKind::All)?,
            PolicyName::SelfOnly => no_k("self", PolicyKind::SelfOnly)?,
            PolicyName::AboveAverage => no_k("above_average", PolicyKind::AboveAverage)?,
            PolicyName::AboveMedian => no_k("above_median", PolicyKind::AboveMedian)?,
            PolicyName::AboveSelf => no_k("above_self", PolicyKind::AboveSelf)?,
        };
        Ok(PolicySpec { kind, reduce: t.reduce, seed: t.seed })
    }
}

impl From<PolicySpec> for PolicyTable {
    fn from(p: PolicySpec) -> Self {
        let kind = match p.kind {
            PolicyKind::All => PolicyName::All,
            PolicyKind::SelfOnly => PolicyName::SelfOnly,
            PolicyKind::RandomK(_) => PolicyName::RandomK,
            PolicyKind::TopK(_) => PolicyName::TopK,
            PolicyKind::AboveAverage => PolicyName::AboveAverage,
            PolicyKind::AboveMedian => PolicyName::AboveMedian,
            PolicyKind::AboveSelf => PolicyName::AboveSelf,
        };
        PolicyTable { kind, k: p.kind.k(), reduce: p.reduce, seed: p.seed }
    }
}

/// A peer model offered for merging, with the raw scores the ledger holds.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub cid: Cid,
    pub submitter: AggregatorId,
    pub scores: Vec<f64>,
}

impl Candidate {
    pub fn reduced(&self, r: ScoreReduce) -> Option<f64> {
        reduce_scores(&self.scores, r).ok()
    }
}

/// Picks the cids to merge. `own` is the aggregator's own submission and is
/// never selected. Unscored candidates are only reachable through All and
/// RandomK. Score thresholds are strict.
pub fn select_models<R: Rng + ?Sized>(
    candidates: &[Candidate],
    own: &Candidate,
    spec: &PolicySpec,
    rng: &mut R,
) -> Vec<Cid> {
    let pool: Vec<&Candidate> = candidates.iter().filter(|c| c.cid != own.cid).collect();
    let scored: Vec<(&Candidate, f64)> =
        pool.iter().filter_map(|c| c.reduced(spec.reduce).map(|s| (*c, s))).collect();
    let above = |threshold: f64| -> Vec<Cid> {
        scored.iter().filter(|(_, s)| *s > threshold).map(|(c, _)| c.cid.clone()).collect()
    };
    match spec.kind {
        PolicyKind::All => pool.iter().map(|c| c.cid.clone()).collect(),
        PolicyKind::SelfOnly => Vec::new(),
        PolicyKind::RandomK(k) => {
            let take = k.min(pool.len());
            let mut picked: Vec<usize> = index::sample(rng, pool.len(), take).into_vec();
            picked.sort_unstable();
            picked.into_iter().map(|i| pool[i].cid.clone()).collect()
        }
        PolicyKind::TopK(k) => {
            let mut ranked = scored.clone();
            ranked.sort_by(|(a, sa), (b, sb)| sb.total_cmp(sa).then_with(|| a.cid.cmp(&b.cid)));
            ranked.into_iter().take(k).map(|(c, _)| c.cid.clone()).collect()
        }
        PolicyKind::AboveAverage => {
            if scored.is_empty() {
                return Vec::new();
            }
            let mean = scored.iter().map(|(_, s)| s).sum::<f64>() / scored.len() as f64;
            above(mean)
        }
        PolicyKind::AboveMedian => {
            if scored.is_empty() {
                return Vec::new();
            }
            let values: Vec<f64> = scored.iter().map(|(_, s)| *s).collect();
            above(median(&values))
        }
        PolicyKind::AboveSelf => match own.reduced(spec.reduce) {
            Some(own_score) => above(own_score),
            None => Vec::new(),
        },
    }
}

/// A policy bound to its own seeded generator.
#[derive(Debug, Clone)]
pub struct Policy {
    spec: PolicySpec,
    rng: ChaCha8Rng,
}

impl Policy {
    pub fn new(spec: PolicySpec) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(spec.seed), spec }
    }

    pub fn spec(&self) -> &PolicySpec {
        &self.spec
    }

    pub fn select(&mut self, candidates: &[Candidate], own: &Candidate) -> Vec<Cid> {
        select_models(candidates, own, &self.spec, &mut self.rng)
    }
}
