//! Deterministic discrete-event simulation of N aggregator clusters
//! collaborating through the ledger and the content store.
//!
//! Only virtual time exists. Events are processed in `(time, kind rank,
//! aggregator, insertion order)` order, and every random draw comes from a
//! generator seeded by [`derive_seed`] from the master seed and a subsystem
//! label, so a run is a pure function of its [`SimConfig`].
//!
//! Per round each cluster trains its clients from its current global model,
//! averages them, optionally poisons the result (adversaries), stores it in
//! the CAS and submits the cid. Scorers assigned by the ledger score it after
//! their scoring delay. Aggregators then pull the latest scored models,
//! select peers with their policy and merge.
//!
//! * Sync: the ledger's global phases advance on fixed [`PhaseTick`]s.
//!   A cluster still training at a phase boundary is a straggler: its model
//!   is deferred to the next round, and it sits out that round's training
//!   because its slot is already taken.
//! * Async: each cluster loops on its own, pulling whatever scored models
//!   exist the moment it submits, then starting its next round.
//!
//! [`PhaseTick`]: EventKind::PhaseTick

mod config;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use config::{
    AggregationKind, AggregatorSpec, Attack, ConfigError, DataConfig, DelayModel, PhaseDurations, SimConfig,
    TrainSettings,
};

use crate::aggregation::{fedavg, merge_global, AggregationError, FedYogiState};
use crate::cas::{CasError, Cid, ContentStore, MemoryStore};
use crate::learner::{self, evaluate, local_train, make_synthetic, partition, Evaluation, LearnerError};
use crate::ledger::{AggregatorId, Ledger, LedgerError, LedgerEvent, LoggedEvent, Mode};
use crate::policy::{Candidate, Policy, PolicySpec};
use crate::scoring::{accuracy_score, default_byzantine_count, multikrum_scores, ScoringAlgorithm, ScoringError};
use crate::weights::{deserialize, WeightsError};
use crate::{Dataset, Weights};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid config: {0}")]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Aggregation(#[from] AggregationError),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error(transparent)]
    Weights(#[from] WeightsError),
    #[error(transparent)]
    Cas(#[from] CasError),
}

/// First 8 bytes (little-endian) of SHA-256(master ‖ label).
pub fn derive_seed(master: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(label.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// base + U(−jitter, jitter), times the straggler multiplier with probability
/// `straggle_prob`. Always consumes exactly two draws.
pub fn sample_delay<R: Rng + ?Sized>(model: &DelayModel, rng: &mut R) -> f64 {
    let u: f64 = rng.random();
    let s: f64 = rng.random();
    let base = model.base_secs + model.jitter_secs * (2.0 * u - 1.0);
    let t = if s < model.straggle_prob { base * model.straggler_multiplier } else { base };
    t.max(0.0)
}

fn sample_scoring_delay<R: Rng + ?Sized>(model: &DelayModel, rng: &mut R) -> f64 {
    let s: f64 = rng.random();
    if s < model.straggle_prob {
        model.scoring_secs * model.straggler_multiplier
    } else {
        model.scoring_secs
    }
}

/// Corrupts a model. SignFlip returns −scale·w; GaussianNoise adds seeded
/// N(0, σ²) noise to every element.
pub fn poison<R: Rng + ?Sized>(w: &Weights, attack: &Attack, rng: &mut R) -> Weights {
    match *attack {
        Attack::SignFlip { scale } => w.scale(-scale),
        Attack::GaussianNoise { sigma } => {
            let values = w
                .values()
                .iter()
                .map(|&v| {
                    let z: f64 = rng.sample(StandardNormal);
                    v + sigma * z
                })
                .collect();
            w.with_values(values).expect("same shape")
        }
    }
}

/// One output record per (round, aggregator).
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub round: u64,
    pub aggregator: AggregatorId,
    pub virtual_time_secs: f64,
    pub local_accuracy: f64,
    pub local_loss: f64,
    pub global_accuracy: f64,
    pub global_loss: f64,
    pub selected_cids: Vec<Cid>,
}

pub const METRICS_HEADER: &str =
    "round,aggregator,virtual_time_secs,local_accuracy,local_loss,global_accuracy,global_loss,selected_cids";

impl MetricsRow {
    /// CSV line matching [`METRICS_HEADER`]; cids are `;`-separated.
    pub fn to_csv(&self) -> String {
        let cids: Vec<&str> = self.selected_cids.iter().map(Cid::as_str).collect();
        format!(
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
            self.round,
            self.aggregator,
            self.virtual_time_secs,
            self.local_accuracy,
            self.local_loss,
            self.global_accuracy,
            self.global_loss,
            cids.join(";")
        )
    }
}

/// Simulator-side observations, kept for audits alongside the ledger log.
#[derive(Debug, Clone, PartialEq)]
pub enum TraceRecord {
    Trained { time: f64, aggregator: AggregatorId, round: u64, cid: Cid, poisoned: bool },
    Pulled { time: f64, aggregator: AggregatorId, round: u64, candidates: Vec<Cid>, selected: Vec<Cid> },
    /// Still training at the end of a Sync round; no pull happened.
    Busy { time: f64, aggregator: AggregatorId, round: u64 },
    ScoreRejected { time: f64, scorer: AggregatorId, cid: Cid },
    ScoreSkipped { time: f64, scorer: AggregatorId, cid: Cid, reason: String },
    SubmissionRejected { time: f64, aggregator: AggregatorId, cid: Cid, reason: String },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SimStats {
    pub submitted: usize,
    pub deferred: usize,
    pub late_scores: usize,
    pub skipped_scores: usize,
    pub rejected_submissions: usize,
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    /// Sorted by (round, aggregator).
    pub rows: Vec<MetricsRow>,
    pub events: Vec<LoggedEvent>,
    pub trace: Vec<TraceRecord>,
    pub stats: SimStats,
    /// Sync: end of the last round. Async: when the last aggregator finished.
    pub total_time: f64,
}

impl SimOutput {
    pub fn metrics_csv(&self) -> String {
        let mut out = String::from(METRICS_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.to_csv());
            out.push('\n');
        }
        out
    }

    pub fn event_log(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&e.to_string());
            out.push('\n');
        }
        out
    }

    pub fn final_rows(&self) -> Vec<&MetricsRow> {
        let last = self.rows.iter().map(|r| r.round).max();
        self.rows.iter().filter(|r| Some(r.round) == last).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseTick {
    ScoringStart,
    RoundEnd,
}

/// Event kinds in tie-break rank order.
#[derive(Debug, Clone, PartialEq)]
pub enum EventKind {
    ClusterAggregated { round: u64 },
    ModelSubmitted { round: u64, cid: Cid },
    ScoreComputed { cid: Cid },
    PhaseTick { round: u64, tick: PhaseTick },
    RoundStart { round: u64 },
}

impl EventKind {
    fn rank(&self) -> u8 {
        match self {
            EventKind::ClusterAggregated { .. } => 0,
            EventKind::ModelSubmitted { .. } => 1,
            EventKind::ScoreComputed { .. } => 2,
            EventKind::PhaseTick { .. } => 3,
            EventKind::RoundStart { .. } => 4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimEvent {
    pub time: f64,
    /// The acting aggregator; global Sync events use aggregator 0.
    pub aggregator: AggregatorId,
    pub kind: EventKind,
    seq: u64,
}

impl SimEvent {
    fn key(&self) -> (f64, u8, AggregatorId, u64) {
        (self.time, self.kind.rank(), self.aggregator, self.seq)
    }
}

impl PartialEq for SimEvent {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for SimEvent {}

impl PartialOrd for SimEvent {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for SimEvent {
    /// Reversed so `BinaryHeap` pops the earliest event.
    fn cmp(&self, other: &Self) -> Ordering {
        let (ta, ra, aa, sa) = self.key();
        let (tb, rb, ab, sb) = other.key();
        tb.total_cmp(&ta).then(rb.cmp(&ra)).then(ab.cmp(&aa)).then(sb.cmp(&sa))
    }
}

struct Cluster {
    id: AggregatorId,
    spec: AggregatorSpec,
    clients: Vec<Dataset>,
    test: Dataset,
    global: Weights,
    local: Weights,
    local_eval: Evaluation,
    global_eval: Evaluation,
    yogi: Option<FedYogiState<f64>>,
    policy: Policy,
    delay_rng: ChaCha8Rng,
    score_delay_rng: ChaCha8Rng,
    attack_rng: ChaCha8Rng,
    training: Option<(u64, Weights)>,
    last_cid: Option<Cid>,
    rounds_done: u64,
    finished_at: f64,
}

struct Simulation<'a> {
    cfg: &'a SimConfig,
    store: Arc<MemoryStore>,
    ledger: Ledger,
    clusters: Vec<Cluster>,
    eval: Dataset,
    queue: BinaryHeap<SimEvent>,
    next_seq: u64,
    rows: Vec<MetricsRow>,
    trace: Vec<TraceRecord>,
    stats: SimStats,
    krum_cache: BTreeMap<u64, BTreeMap<Cid, f64>>,
    done: bool,
    total_time: f64,
}

/// Runs the experiment described by `cfg`. The config is validated before
/// any event executes.
pub fn run(cfg: &SimConfig) -> Result<SimOutput, SimError> {
    cfg.validate()?;
    let mut sim = Simulation::new(cfg)?;
    sim.start();
    while let Some(ev) = sim.queue.pop() {
        sim.handle(ev)?;
        if sim.done {
            break;
        }
    }
    Ok(sim.finish())
}

impl<'a> Simulation<'a> {
    fn new(cfg: &'a SimConfig) -> Result<Self, SimError> {
        let seed = |label: &str| derive_seed(cfg.seed, label);
        let d = &cfg.data;
        let full: Dataset = make_synthetic(d.classes, d.dims, d.samples, seed("data"))?;
        let (pool, eval) = full.split(d.eval_fraction, seed("eval-split"));
        let k = cfg.clients_per_aggregator;
        let n = cfg.aggregators.len();
        let parts = partition(&pool, n * k, cfg.partition, seed("partition"))?;
        let init = learner::init_model::<f64>(d.dims, d.classes);
        let init_eval = evaluate(&init, &eval)?;
        let store = Arc::new(MemoryStore::new());
        let mut ledger = Ledger::new(cfg.mode, seed("ledger"), store.clone());
        let mut clusters = Vec::with_capacity(n);
        for (a, spec) in cfg.aggregators.iter().enumerate() {
            let id = AggregatorId(a as u32);
            ledger.register(id)?;
            let mut clients = Vec::with_capacity(k);
            let mut tests = Vec::with_capacity(k);
            for c in 0..k {
                let (train, test) = parts[a * k + c].split(d.test_fraction, seed(&format!("client-split/{a}/{c}")));
                clients.push(train);
                tests.push(test);
            }
            let test_refs: Vec<&Dataset> = tests.iter().filter(|t| !t.is_empty()).collect();
            let test = if test_refs.is_empty() {
                Dataset::concat(&clients.iter().collect::<Vec<_>>())?
            } else {
                Dataset::concat(&test_refs)?
            };
            let policy_spec = PolicySpec { seed: spec.policy.seed ^ seed(&format!("policy/{a}")), ..spec.policy };
            let yogi = (spec.aggregation == AggregationKind::FedYogi).then(|| FedYogiState::new(&init, cfg.fedyogi));
            clusters.push(Cluster {
                id,
                spec: spec.clone(),
                clients,
                test,
                global: init.clone(),
                local: init.clone(),
                local_eval: init_eval,
                global_eval: init_eval,
                yogi,
                policy: Policy::new(policy_spec),
                delay_rng: ChaCha8Rng::seed_from_u64(seed(&format!("delay/{a}"))),
                score_delay_rng: ChaCha8Rng::seed_from_u64(seed(&format!("score-delay/{a}"))),
                attack_rng: ChaCha8Rng::seed_from_u64(seed(&format!("adversary/{a}"))),
                training: None,
                last_cid: None,
                rounds_done: 0,
                finished_at: 0.0,
            });
        }
        Ok(Self {
            cfg,
            store,
            ledger,
            clusters,
            eval,
            queue: BinaryHeap::new(),
            next_seq: 0,
            rows: Vec::new(),
            trace: Vec::new(),
            stats: SimStats::default(),
            krum_cache: BTreeMap::new(),
            done: false,
            total_time: 0.0,
        })
    }

    fn schedule(&mut self, time: f64, aggregator: AggregatorId, kind: EventKind) {
        self.queue.push(SimEvent { time, aggregator, kind, seq: self.next_seq });
        self.next_seq += 1;
    }

    fn start(&mut self) {
        match self.cfg.mode {
            Mode::Sync => self.schedule(0.0, AggregatorId(0), EventKind::RoundStart { round: 0 }),
            Mode::Async => {
                for a in 0..self.clusters.len() {
                    self.schedule(0.0, AggregatorId(a as u32), EventKind::RoundStart { round: 0 });
                }
            }
        }
    }

    fn finish(mut self) -> SimOutput {
        self.rows.sort_by_key(|r| (r.round, r.aggregator));
        SimOutput {
            rows: self.rows,
            events: self.ledger.events().to_vec(),
            trace: self.trace,
            stats: self.stats,
            total_time: self.total_time,
        }
    }

    fn handle(&mut self, ev: SimEvent) -> Result<(), SimError> {
        self.ledger.advance_to(ev.time)?;
        let t = ev.time;
        let agg = ev.aggregator;
        match ev.kind {
            EventKind::RoundStart { round } => match self.cfg.mode {
                Mode::Sync => self.sync_round_start(t, round),
                Mode::Async => {
                    self.ledger.start_aggregator_training(agg, round)?;
                    self.begin_training(t, agg.index(), round);
                    Ok(())
                }
            },
            EventKind::ClusterAggregated { round } => self.cluster_aggregated(t, agg.index(), round),
            EventKind::ModelSubmitted { round, cid } => self.model_submitted(t, agg, round, cid),
            EventKind::ScoreComputed { cid } => self.score_computed(t, agg, cid),
            EventKind::PhaseTick { round, tick: PhaseTick::ScoringStart } => {
                let events = self.ledger.start_scoring(round)?;
                self.dispatch_assignments(t, &events);
                Ok(())
            }
            EventKind::PhaseTick { round, tick: PhaseTick::RoundEnd } => self.sync_round_end(t, round),
        }
    }

    fn sync_round_start(&mut self, t: f64, round: u64) -> Result<(), SimError> {
        self.ledger.start_training(round)?;
        for a in 0..self.clusters.len() {
            let id = self.clusters[a].id;
            let slot_taken = self.ledger.submissions(round).iter().any(|(s, _)| *s == id);
            if self.clusters[a].training.is_none() && !slot_taken {
                self.begin_training(t, a, round);
            }
        }
        let p = self.cfg.phases;
        let scoring_at = t + p.training_secs;
        self.schedule(scoring_at, AggregatorId(0), EventKind::PhaseTick { round, tick: PhaseTick::ScoringStart });
        self.schedule(
            scoring_at + p.scoring_secs,
            AggregatorId(0),
            EventKind::PhaseTick { round, tick: PhaseTick::RoundEnd },
        );
        Ok(())
    }

    fn begin_training(&mut self, t: f64, a: usize, round: u64) {
        let c = &mut self.clusters[a];
        c.training = Some((round, c.global.clone()));
        let delay = sample_delay(&c.spec.delay, &mut c.delay_rng);
        let id = c.id;
        self.schedule(t + delay, id, EventKind::ClusterAggregated { round });
    }

    fn cluster_aggregated(&mut self, t: f64, a: usize, round: u64) -> Result<(), SimError> {
        let master = self.cfg.seed;
        let train = self.cfg.train;
        let c = &mut self.clusters[a];
        let (_, base) = c.training.take().expect("aggregation follows a training start");
        // Clients train in parallel; results are collected in client order.
        let trained: Vec<Weights> = c
            .clients
            .par_iter()
            .enumerate()
            .map(|(j, ds)| {
                let cfg = train.with_seed(derive_seed(master, &format!("train/{a}/{j}/{round}")));
                local_train(&base, ds, &cfg)
            })
            .collect::<Result<_, _>>()?;
        let counts: Vec<usize> = c.clients.iter().map(Dataset::len).collect();
        let averaged = fedavg(&trained, &counts)?;
        let local = match c.yogi.take() {
            Some(state) => {
                let delta = averaged.sub(&base)?;
                let (next, stepped) = state.step(&base, &delta)?;
                c.yogi = Some(next);
                stepped
            }
            None => averaged,
        };
        c.local_eval = evaluate(&local, &self.eval)?;
        let submitted = match &c.spec.attack {
            Some(attack) => poison(&local, attack, &mut c.attack_rng),
            None => local.clone(),
        };
        c.local = local;
        let cid = self.store.put(submitted.to_bytes()?.as_bytes())?;
        c.last_cid = Some(cid.clone());
        let id = c.id;
        let poisoned = c.spec.attack.is_some();
        self.trace.push(TraceRecord::Trained { time: t, aggregator: id, round, cid: cid.clone(), poisoned });
        self.schedule(t, id, EventKind::ModelSubmitted { round, cid });
        Ok(())
    }

    fn model_submitted(&mut self, t: f64, agg: AggregatorId, round: u64, cid: Cid) -> Result<(), SimError> {
        match self.ledger.submit_model(agg, cid.clone(), round) {
            Ok(LedgerEvent::ModelDeferred { .. }) => self.stats.deferred += 1,
            Ok(_) => self.stats.submitted += 1,
            Err(e @ (LedgerError::DuplicateModel(_) | LedgerError::DuplicateSubmission { .. })) => {
                self.stats.rejected_submissions += 1;
                self.trace.push(TraceRecord::SubmissionRejected { time: t, aggregator: agg, cid, reason: e.to_string() });
            }
            Err(e) => return Err(e.into()),
        }
        if self.cfg.mode == Mode::Async {
            let assigned = self.ledger.scorers_for(&self.clusters[agg.index()].last_cid.clone().expect("just trained"));
            if let Some(scorers) = assigned {
                let scorers: Vec<AggregatorId> = scorers.iter().copied().collect();
                self.dispatch_scorers(t, &self.clusters[agg.index()].last_cid.clone().expect("just trained"), &scorers);
            }
            self.pull_and_merge(t, agg.index(), round)?;
            let c = &mut self.clusters[agg.index()];
            c.rounds_done = round + 1;
            c.finished_at = t;
            if c.rounds_done < self.cfg.rounds as u64 {
                self.schedule(t, agg, EventKind::RoundStart { round: round + 1 });
            } else if self.clusters.iter().all(|c| c.rounds_done == self.cfg.rounds as u64) {
                self.total_time = self.clusters.iter().map(|c| c.finished_at).fold(0.0, f64::max);
                self.done = true;
            }
        }
        Ok(())
    }

    fn dispatch_assignments(&mut self, t: f64, events: &[LedgerEvent]) {
        for e in events {
            if let LedgerEvent::ScoringAssigned { cid, scorers } = e {
                self.dispatch_scorers(t, cid, scorers);
            }
        }
    }

    fn dispatch_scorers(&mut self, t: f64, cid: &Cid, scorers: &[AggregatorId]) {
        for &s in scorers {
            let c = &mut self.clusters[s.index()];
            let delay = sample_scoring_delay(&c.spec.delay, &mut c.score_delay_rng);
            self.schedule(t + delay, s, EventKind::ScoreComputed { cid: cid.clone() });
        }
    }

    fn krum_score(&mut self, cid: &Cid) -> Result<Option<f64>, SimError> {
        let round = self.ledger.model_round(cid).expect("assigned models are known");
        if !self.krum_cache.contains_key(&round) {
            let cids: Vec<Cid> = self.ledger.submissions(round).iter().map(|(_, c)| c.clone()).collect();
            let models = cids
                .iter()
                .map(|c| Ok(deserialize::<f64>(&self.store.get(c)?)?))
                .collect::<Result<Vec<Weights>, SimError>>()?;
            let f = self.cfg.multikrum_f.unwrap_or_else(|| default_byzantine_count(models.len()));
            let scores = match multikrum_scores(&models, f) {
                Ok(s) => cids.into_iter().zip(s).collect(),
                Err(ScoringError::TooFewModels { .. }) => BTreeMap::new(),
                Err(e) => return Err(e.into()),
            };
            self.krum_cache.insert(round, scores);
        }
        Ok(self.krum_cache[&round].get(cid).copied())
    }

    fn score_computed(&mut self, t: f64, scorer: AggregatorId, cid: Cid) -> Result<(), SimError> {
        let value = match self.cfg.scoring {
            ScoringAlgorithm::Accuracy => {
                let model = deserialize::<f64>(&self.store.get(&cid)?)?;
                Some(accuracy_score(&model, &self.clusters[scorer.index()].test)?)
            }
            ScoringAlgorithm::Multikrum => self.krum_score(&cid)?,
        };
        let Some(mut value) = value else {
            self.stats.skipped_scores += 1;
            self.trace.push(TraceRecord::ScoreSkipped {
                time: t,
                scorer,
                cid,
                reason: "too few models in the round for multikrum".into(),
            });
            return Ok(());
        };
        if self.clusters[scorer.index()].spec.dishonest_scoring {
            value = 1.0 - value;
        }
        match self.ledger.submit_score(scorer, &cid, value) {
            Ok(_) => Ok(()),
            Err(LedgerError::RejectedLate { .. }) => {
                self.stats.late_scores += 1;
                self.trace.push(TraceRecord::ScoreRejected { time: t, scorer, cid });
                Ok(())
            }
            Err(e) => Err(e.into()),
        }
    }

    fn sync_round_end(&mut self, t: f64, round: u64) -> Result<(), SimError> {
        self.ledger.close_round(round)?;
        for a in 0..self.clusters.len() {
            if self.clusters[a].training.is_some() {
                let c = &self.clusters[a];
                self.trace.push(TraceRecord::Busy { time: t, aggregator: c.id, round });
                self.rows.push(MetricsRow {
                    round,
                    aggregator: c.id,
                    virtual_time_secs: t,
                    local_accuracy: c.local_eval.accuracy,
                    local_loss: c.local_eval.loss,
                    global_accuracy: c.global_eval.accuracy,
                    global_loss: c.global_eval.loss,
                    selected_cids: Vec::new(),
                });
            } else {
                self.pull_and_merge(t, a, round)?;
            }
        }
        if round + 1 < self.cfg.rounds as u64 {
            self.schedule(t, AggregatorId(0), EventKind::RoundStart { round: round + 1 });
        } else {
            self.total_time = t;
            self.done = true;
        }
        Ok(())
    }

    fn pull_and_merge(&mut self, t: f64, a: usize, round: u64) -> Result<(), SimError> {
        let id = self.clusters[a].id;
        let latest = self.ledger.latest_models_with_scores(id)?;
        let mut own = Candidate { cid: Cid::of(b""), submitter: id, scores: Vec::new() };
        if let Some(cid) = &self.clusters[a].last_cid {
            own.cid = cid.clone();
        }
        let mut candidates = Vec::new();
        for (cid, m) in &latest {
            let cand = Candidate { cid: cid.clone(), submitter: m.submitter, scores: m.scores.clone() };
            if m.submitter == id {
                own = cand;
            } else {
                candidates.push(cand);
            }
        }
        let c = &mut self.clusters[a];
        let mut selected = if (round as usize) < self.cfg.warmup_rounds {
            Vec::new()
        } else {
            c.policy.select(&candidates, &own)
        };
        // Merge in Cid order so the result does not depend on policy ranking.
        selected.sort();
        let models = selected
            .iter()
            .map(|cid| Ok(deserialize::<f64>(&self.store.get(cid)?)?))
            .collect::<Result<Vec<Weights>, SimError>>()?;
        c.global = merge_global(&c.local, &models)?;
        c.global_eval = evaluate(&c.global, &self.eval)?;
        self.trace.push(TraceRecord::Pulled {
            time: t,
            aggregator: id,
            round,
            candidates: latest.keys().cloned().collect(),
            selected: selected.clone(),
        });
        self.rows.push(MetricsRow {
            round,
            aggregator: id,
            virtual_time_secs: t,
            local_accuracy: c.local_eval.accuracy,
            local_loss: c.local_eval.loss,
            global_accuracy: c.global_eval.accuracy,
            global_loss: c.global_eval.loss,
            selected_cids: selected,
        });
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::PolicyKind;

    fn small(mode: Mode, n: usize, rounds: usize) -> SimConfig {
        let mut c = SimConfig::new(mode, n, rounds);
        c.clients_per_aggregator = 2;
        c.data = DataConfig { classes: 3, dims: 4, samples: 300, eval_fraction: 0.2, test_fraction: 0.2 };
        c.seed = 5;
        c
    }

    #[test]
    fn delay_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let fixed = DelayModel { base_secs: 10.0, jitter_secs: 0.0, straggle_prob: 0.0, ..DelayModel::default() };
        assert_eq!(sample_delay(&fixed, &mut rng), 10.0);
        let strag = DelayModel { straggler_multiplier: 2.0, straggle_prob: 1.0, ..fixed };
        assert_eq!(sample_delay(&strag, &mut rng), 20.0);
        let jittery = DelayModel { jitter_secs: 3.0, straggle_prob: 0.5, straggler_multiplier: 2.0, ..fixed };
        let seq = |seed| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            (0..50).map(|_| sample_delay(&jittery, &mut r)).collect::<Vec<_>>()
        };
        assert_eq!(seq(4), seq(4));
        assert!(seq(4).iter().all(|&d| (7.0..=26.0).contains(&d)));
    }

    #[test]
    fn poison_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let w = Weights::from_slice(&[1.0, -2.0]);
        let flip = Attack::SignFlip { scale: 1.0 };
        let flipped = poison(&w, &flip, &mut rng);
        assert_eq!(flipped.values(), &[-1.0, 2.0]);
        assert_eq!(poison(&flipped, &flip, &mut rng), w);
        assert_eq!(poison(&w, &Attack::GaussianNoise { sigma: 0.0 }, &mut rng), w);
        assert_ne!(poison(&w, &Attack::GaussianNoise { sigma: 1.0 }, &mut rng), w);
    }

    #[test]
    fn seeds_are_label_separated() {
        assert_eq!(derive_seed(1, "ledger"), derive_seed(1, "ledger"));
        assert_ne!(derive_seed(1, "ledger"), derive_seed(1, "policy/0"));
        assert_ne!(derive_seed(1, "ledger"), derive_seed(2, "ledger"));
    }

    #[test]
    fn event_order_breaks_ties_by_rank_then_aggregator() {
        let mk = |time, agg, kind, seq| SimEvent { time, aggregator: AggregatorId(agg), kind, seq };
        let mut heap = BinaryHeap::new();
        heap.push(mk(1.0, 0, EventKind::RoundStart { round: 1 }, 0));
        heap.push(mk(1.0, 2, EventKind::ClusterAggregated { round: 0 }, 1));
        heap.push(mk(1.0, 1, EventKind::ClusterAggregated { round: 0 }, 2));
        heap.push(mk(0.5, 3, EventKind::RoundStart { round: 0 }, 3));
        let order: Vec<u64> = std::iter::from_fn(|| heap.pop()).map(|e| e.seq).collect();
        assert_eq!(order, vec![3, 2, 1, 0]);
    }

    #[test]
    fn sync_run_emits_one_row_per_round_and_aggregator() {
        let out = run(&small(Mode::Sync, 3, 4)).unwrap();
        assert_eq!(out.rows.len(), 12);
        for (i, r) in out.rows.iter().enumerate() {
            assert_eq!(r.round as usize, i / 3);
            assert_eq!(r.aggregator.index(), i % 3);
        }
        assert!(out.total_time > 0.0);
    }

    #[test]
    fn async_run_completes_every_round() {
        let out = run(&small(Mode::Async, 3, 4)).unwrap();
        assert_eq!(out.rows.len(), 12);
        assert!(out.stats.submitted == 12);
    }

    #[test]
    fn invalid_config_fails_before_running() {
        let mut c = small(Mode::Async, 3, 2);
        c.scoring = ScoringAlgorithm::Multikrum;
        assert!(matches!(run(&c), Err(SimError::Config(_))));
    }

    #[test]
    fn self_policy_never_selects() {
        let c = small(Mode::Sync, 3, 3).with_policy(PolicySpec::new(PolicyKind::SelfOnly));
        let out = run(&c).unwrap();
        assert!(out.rows.iter().all(|r| r.selected_cids.is_empty()));
        assert!(out.rows.iter().all(|r| r.global_accuracy == r.local_accuracy));
    }

    #[test]
    fn multikrum_sync_run_scores_models() {
        let mut c = small(Mode::Sync, 4, 3);
        c.scoring = ScoringAlgorithm::Multikrum;
        let out = run(&c).unwrap();
        let scored = out.events.iter().filter(|e| matches!(e.event, LedgerEvent::ScoreSubmitted { .. })).count();
        assert_eq!(scored, 3 * 4 * 3);
    }
}
