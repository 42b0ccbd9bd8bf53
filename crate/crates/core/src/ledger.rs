//! The orchestrator: a deterministic state machine standing in for the
//! on-chain contract that coordinates rounds, model submissions, scorer
//! assignment and score collection.
//!
//! Two modes share one state type. In [`Mode::Sync`] every aggregator moves
//! through global Training → Scoring → Closed windows; late models are
//! deferred to the next training window and late scores are rejected. In
//! [`Mode::Async`] each aggregator starts its own rounds, and scorers are
//! assigned the moment a model is submitted.
//!
//! Every accepted mutation appends a [`LedgerEvent`] to an append-only log
//! stamped with the virtual time supplied through [`Ledger::advance_to`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{self, Write};
use std::sync::Arc;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cas::{CasError, Cid, ContentStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AggregatorId(pub u32);

impl AggregatorId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for AggregatorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Sync,
    Async,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Sync => "sync",
            Mode::Async => "async",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Training,
    Scoring,
    Closed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Availability {
    Idle,
    Busy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord {
    pub cid: Cid,
    pub scorer: AggregatorId,
    pub round: u64,
    pub value: f64,
    pub time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LedgerEvent {
    /// `aggregator` is `None` for the global Sync start.
    StartTraining { round: u64, aggregator: Option<AggregatorId> },
    ModelSubmitted { round: u64, aggregator: AggregatorId, cid: Cid },
    /// A Sync submission that missed its window and was moved to `to_round`.
    ModelDeferred { from_round: u64, to_round: u64, aggregator: AggregatorId, cid: Cid },
    StartScoring { round: u64 },
    ScoringAssigned { cid: Cid, scorers: Vec<AggregatorId> },
    ScoreSubmitted { round: u64, cid: Cid, scorer: AggregatorId, value: f64 },
    RoundFinalized { round: u64 },
}

impl LedgerEvent {
    pub fn name(&self) -> &'static str {
        match self {
            LedgerEvent::StartTraining { .. } => "StartTraining",
            LedgerEvent::ModelSubmitted { .. } => "ModelSubmitted",
            LedgerEvent::ModelDeferred { .. } => "ModelDeferred",
            LedgerEvent::StartScoring { .. } => "StartScoring",
            LedgerEvent::ScoringAssigned { .. } => "ScoringAssigned",
            LedgerEvent::ScoreSubmitted { .. } => "ScoreSubmitted",
            LedgerEvent::RoundFinalized { .. } => "RoundFinalized",
        }
    }
}

impl fmt::Display for LedgerEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.name())?;
        match self {
            LedgerEvent::StartTraining { round, aggregator } => {
                write!(f, "\tround={round}")?;
                if let Some(a) = aggregator {
                    write!(f, " aggregator={a}")?;
                }
                Ok(())
            }
            LedgerEvent::ModelSubmitted { round, aggregator, cid } => {
                write!(f, "\tround={round} aggregator={aggregator} cid={cid}")
            }
            LedgerEvent::ModelDeferred { from_round, to_round, aggregator, cid } => write!(
                f,
                "\tfrom_round={from_round} to_round={to_round} aggregator={aggregator} cid={cid}"
            ),
            LedgerEvent::StartScoring { round } => write!(f, "\tround={round}"),
            LedgerEvent::ScoringAssigned { cid, scorers } => {
                let ids: Vec<String> = scorers.iter().map(|s| s.to_string()).collect();
                write!(f, "\tcid={cid} scorers={}", ids.join(","))
            }
            LedgerEvent::ScoreSubmitted { round, cid, scorer, value } => {
                write!(f, "\tround={round} cid={cid} scorer={scorer} value={value:?}")
            }
            LedgerEvent::RoundFinalized { round } => write!(f, "\tround={round}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoggedEvent {
    pub index: u64,
    pub time: f64,
    pub event: LedgerEvent,
}

impl fmt::Display for LoggedEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{:.6}\t{}", self.index, self.time, self.event)
    }
}

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error("aggregator {0} is already registered")]
    AlreadyRegistered(AggregatorId),
    #[error("registration closed when training started")]
    RegistrationClosed,
    #[error("registered ids must be dense 0..{n}, found {found:?}")]
    NonDenseIds { n: usize, found: Vec<AggregatorId> },
    #[error("aggregator {0} is not registered")]
    NotRegistered(AggregatorId),
    #[error("no aggregators registered")]
    NoAggregators,
    #[error("operation {op} requires phase {expected:?}, ledger is in {found:?} (round {round})")]
    WrongPhase { op: &'static str, expected: Phase, found: Phase, round: u64 },
    #[error("operation {op} got round {got}, expected {expected}")]
    RoundOutOfOrder { op: &'static str, got: u64, expected: u64 },
    #[error("operation {0} is not supported in {1} mode")]
    Unsupported(&'static str, Mode),
    #[error("aggregator {aggregator} already submitted for round {round}")]
    DuplicateSubmission { aggregator: AggregatorId, round: u64 },
    #[error("model {0} was already submitted")]
    DuplicateModel(Cid),
    #[error("model {0} is not present in the content store")]
    MissingContent(Cid),
    #[error("need at least 2 registered aggregators to sample a scoring majority, have {0}")]
    TooFewAggregators(usize),
    #[error("model {0} was never submitted")]
    UnknownModel(Cid),
    #[error("model {0} already has scorers assigned")]
    AlreadyAssigned(Cid),
    #[error("aggregator {scorer} is not an assigned scorer of {cid}")]
    UnassignedScorer { scorer: AggregatorId, cid: Cid },
    #[error("score for {cid} from {scorer} arrived after the scoring window closed")]
    RejectedLate { scorer: AggregatorId, cid: Cid },
    #[error("score {0} is outside [0, 1]")]
    ScoreOutOfRange(f64),
    #[error("aggregator {scorer} already scored {cid}")]
    DuplicateScore { scorer: AggregatorId, cid: Cid },
    #[error("virtual time moved backwards: {now} -> {to}")]
    TimeWentBackwards { now: f64, to: f64 },
    #[error(transparent)]
    Cas(#[from] CasError),
}

/// One model as returned by [`Ledger::latest_models_with_scores`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredModel {
    pub submitter: AggregatorId,
    pub round: u64,
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone)]
struct ModelInfo {
    submitter: AggregatorId,
    round: u64,
    seq: u64,
}

/// floor(n/2) + 1.
pub fn majority(n: usize) -> usize {
    n / 2 + 1
}

pub struct Ledger {
    mode: Mode,
    store: Arc<dyn ContentStore>,
    rng: ChaCha8Rng,
    now: f64,
    registered: BTreeSet<AggregatorId>,
    registration_open: bool,
    round: u64,
    phase: Phase,
    started: bool,
    finalized: Option<u64>,
    submissions: BTreeMap<u64, Vec<(AggregatorId, Cid)>>,
    models: BTreeMap<Cid, ModelInfo>,
    next_seq: u64,
    assignments: BTreeMap<Cid, BTreeSet<AggregatorId>>,
    scores: BTreeMap<Cid, Vec<ScoreRecord>>,
    availability: BTreeMap<AggregatorId, Availability>,
    agg_round: BTreeMap<AggregatorId, u64>,
    deferred: Vec<(AggregatorId, Cid, u64)>,
    log: Vec<LoggedEvent>,
}

impl fmt::Debug for Ledger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Ledger")
            .field("mode", &self.mode)
            .field("round", &self.round)
            .field("phase", &self.phase)
            .field("aggregators", &self.registered.len())
            .field("events", &self.log.len())
            .finish()
    }
}

impl Ledger {
    pub fn new(mode: Mode, seed: u64, store: Arc<dyn ContentStore>) -> Self {
        Self {
            mode,
            store,
            rng: ChaCha8Rng::seed_from_u64(seed),
            now: 0.0,
            registered: BTreeSet::new(),
            registration_open: true,
            round: 0,
            phase: Phase::Closed,
            started: false,
            finalized: None,
            submissions: BTreeMap::new(),
            models: BTreeMap::new(),
            next_seq: 0,
            assignments: BTreeMap::new(),
            scores: BTreeMap::new(),
            availability: BTreeMap::new(),
            agg_round: BTreeMap::new(),
            deferred: Vec::new(),
            log: Vec::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn aggregator_count(&self) -> usize {
        self.registered.len()
    }

    pub fn events(&self) -> &[LoggedEvent] {
        &self.log
    }

    pub fn submissions(&self, round: u64) -> &[(AggregatorId, Cid)] {
        self.submissions.get(&round).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn scorers_for(&self, cid: &Cid) -> Option<&BTreeSet<AggregatorId>> {
        self.assignments.get(cid)
    }

    pub fn scores_for(&self, cid: &Cid) -> &[ScoreRecord] {
        self.scores.get(cid).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn model_round(&self, cid: &Cid) -> Option<u64> {
        self.models.get(cid).map(|m| m.round)
    }

    pub fn deferred(&self) -> impl Iterator<Item = (AggregatorId, &Cid)> {
        self.deferred.iter().map(|(a, c, _)| (*a, c))
    }

    pub fn availability(&self, agg: AggregatorId) -> Option<Availability> {
        self.availability.get(&agg).copied()
    }

    pub fn advance_to(&mut self, time: f64) -> Result<(), LedgerError> {
        if time < self.now || !time.is_finite() {
            return Err(LedgerError::TimeWentBackwards { now: self.now, to: time });
        }
        self.now = time;
        Ok(())
    }

    fn emit(&mut self, event: LedgerEvent) -> LedgerEvent {
        self.log.push(LoggedEvent { index: self.log.len() as u64, time: self.now, event: event.clone() });
        event
    }

    pub fn write_event_log<W: Write>(&self, mut out: W) -> io::Result<()> {
        for e in &self.log {
            writeln!(out, "{e}")?;
        }
        Ok(())
    }

    fn ensure_registered(&self, agg: AggregatorId) -> Result<(), LedgerError> {
        if self.registered.contains(&agg) {
            Ok(())
        } else {
            Err(LedgerError::NotRegistered(agg))
        }
    }

    pub fn register(&mut self, agg: AggregatorId) -> Result<(), LedgerError> {
        if !self.registration_open {
            return Err(LedgerError::RegistrationClosed);
        }
        if !self.registered.insert(agg) {
            return Err(LedgerError::AlreadyRegistered(agg));
        }
        if self.mode == Mode::Async {
            self.availability.insert(agg, Availability::Idle);
        }
        Ok(())
    }

    fn close_registration(&mut self) -> Result<(), LedgerError> {
        if !self.registration_open {
            return Ok(());
        }
        if self.registered.is_empty() {
            return Err(LedgerError::NoAggregators);
        }
        let n = self.registered.len();
        if self.registered.iter().enumerate().any(|(i, a)| a.index() != i) {
            return Err(LedgerError::NonDenseIds { n, found: self.registered.iter().copied().collect() });
        }
        self.registration_open = false;
        Ok(())
    }

    /// Opens the global training window for `round` (Sync) and admits models
    /// deferred from the previous window.
    pub fn start_training(&mut self, round: u64) -> Result<LedgerEvent, LedgerError> {
        if self.mode == Mode::Async {
            return Err(LedgerError::Unsupported("start_training", self.mode));
        }
        if self.phase != Phase::Closed {
            return Err(LedgerError::WrongPhase {
                op: "start_training",
                expected: Phase::Closed,
                found: self.phase,
                round: self.round,
            });
        }
        let expected = if self.started { self.round + 1 } else { 0 };
        if round != expected {
            return Err(LedgerError::RoundOutOfOrder { op: "start_training", got: round, expected });
        }
        self.close_registration()?;
        self.started = true;
        self.round = round;
        self.phase = Phase::Training;
        let start = self.emit(LedgerEvent::StartTraining { round, aggregator: None });
        for (agg, cid, _) in std::mem::take(&mut self.deferred) {
            self.record_submission(agg, cid, round);
        }
        Ok(start)
    }

    /// Per-aggregator training start (Async).
    pub fn start_aggregator_training(&mut self, agg: AggregatorId, round: u64) -> Result<LedgerEvent, LedgerError> {
        if self.mode == Mode::Sync {
            return Err(LedgerError::Unsupported("start_aggregator_training", self.mode));
        }
        self.close_registration()?;
        self.ensure_registered(agg)?;
        let expected = self.agg_round.get(&agg).map_or(0, |r| r + 1);
        if round != expected {
            return Err(LedgerError::RoundOutOfOrder { op: "start_aggregator_training", got: round, expected });
        }
        self.agg_round.insert(agg, round);
        self.started = true;
        Ok(self.emit(LedgerEvent::StartTraining { round, aggregator: Some(agg) }))
    }

    fn record_submission(&mut self, agg: AggregatorId, cid: Cid, round: u64) -> LedgerEvent {
        self.submissions.entry(round).or_default().push((agg, cid.clone()));
        self.models.insert(cid.clone(), ModelInfo { submitter: agg, round, seq: self.next_seq });
        self.next_seq += 1;
        self.emit(LedgerEvent::ModelSubmitted { round, aggregator: agg, cid })
    }

    fn submitted_in(&self, agg: AggregatorId, round: u64) -> bool {
        self.submissions(round).iter().any(|(a, _)| *a == agg)
    }

    /// Returns `ModelSubmitted` when recorded, or `ModelDeferred` when a Sync
    /// submission missed its window and was queued for the next one.
    pub fn submit_model(&mut self, agg: AggregatorId, cid: Cid, round: u64) -> Result<LedgerEvent, LedgerError> {
        self.ensure_registered(agg)?;
        if !self.store.has(&cid)? {
            return Err(LedgerError::MissingContent(cid));
        }
        if self.models.contains_key(&cid) || self.deferred.iter().any(|(_, c, _)| *c == cid) {
            return Err(LedgerError::DuplicateModel(cid));
        }
        match self.mode {
            Mode::Sync => self.submit_sync(agg, cid, round),
            Mode::Async => self.submit_async(agg, cid, round),
        }
    }

    fn submit_sync(&mut self, agg: AggregatorId, cid: Cid, round: u64) -> Result<LedgerEvent, LedgerError> {
        if !self.started || round > self.round {
            let expected = if self.started { self.round } else { 0 };
            return Err(LedgerError::RoundOutOfOrder { op: "submit_model", got: round, expected });
        }
        let in_window = round == self.round && self.phase == Phase::Training;
        if in_window {
            if self.submitted_in(agg, round) {
                return Err(LedgerError::DuplicateSubmission { aggregator: agg, round });
            }
            return Ok(self.record_submission(agg, cid, round));
        }
        if self.phase == Phase::Training {
            // A later window is already open: the model joins it directly.
            let to_round = self.round;
            if self.submitted_in(agg, to_round) {
                return Err(LedgerError::DuplicateSubmission { aggregator: agg, round: to_round });
            }
            let deferred = self.emit(LedgerEvent::ModelDeferred {
                from_round: round,
                to_round,
                aggregator: agg,
                cid: cid.clone(),
            });
            self.record_submission(agg, cid, to_round);
            return Ok(deferred);
        }
        let to_round = self.round + 1;
        if self.deferred.iter().any(|(a, _, _)| *a == agg) {
            return Err(LedgerError::DuplicateSubmission { aggregator: agg, round: to_round });
        }
        self.deferred.push((agg, cid.clone(), round));
        Ok(self.emit(LedgerEvent::ModelDeferred { from_round: round, to_round, aggregator: agg, cid }))
    }

    fn submit_async(&mut self, agg: AggregatorId, cid: Cid, round: u64) -> Result<LedgerEvent, LedgerError> {
        let current = self.agg_round.get(&agg).copied();
        if current != Some(round) {
            return Err(LedgerError::RoundOutOfOrder {
                op: "submit_model",
                got: round,
                expected: current.unwrap_or(0),
            });
        }
        if self.submitted_in(agg, round) {
            return Err(LedgerError::DuplicateSubmission { aggregator: agg, round });
        }
        let event = self.record_submission(agg, cid.clone(), round);
        self.availability.insert(agg, Availability::Busy);
        self.sample_scorers(&cid)?;
        Ok(event)
    }

    /// Draws floor(N/2)+1 distinct scorers uniformly from all registered
    /// aggregators (the submitter included) and records the assignment.
    pub fn sample_scorers(&mut self, cid: &Cid) -> Result<BTreeSet<AggregatorId>, LedgerError> {
        let n = self.registered.len();
        if n < 2 {
            return Err(LedgerError::TooFewAggregators(n));
        }
        if !self.models.contains_key(cid) {
            return Err(LedgerError::UnknownModel(cid.clone()));
        }
        if self.assignments.contains_key(cid) {
            return Err(LedgerError::AlreadyAssigned(cid.clone()));
        }
        let pool: Vec<AggregatorId> = self.registered.iter().copied().collect();
        let chosen: BTreeSet<AggregatorId> =
            index::sample(&mut self.rng, n, majority(n)).into_iter().map(|i| pool[i]).collect();
        self.assignments.insert(cid.clone(), chosen.clone());
        self.emit(LedgerEvent::ScoringAssigned { cid: cid.clone(), scorers: chosen.iter().copied().collect() });
        Ok(chosen)
    }

    /// Closes the training window and assigns scorers to every model of the round.
    pub fn start_scoring(&mut self, round: u64) -> Result<Vec<LedgerEvent>, LedgerError> {
        if self.mode == Mode::Async {
            return Err(LedgerError::Unsupported("start_scoring", self.mode));
        }
        if self.phase != Phase::Training {
            return Err(LedgerError::WrongPhase {
                op: "start_scoring",
                expected: Phase::Training,
                found: self.phase,
                round: self.round,
            });
        }
        if round != self.round {
            return Err(LedgerError::RoundOutOfOrder { op: "start_scoring", got: round, expected: self.round });
        }
        self.phase = Phase::Scoring;
        let mut events = vec![self.emit(LedgerEvent::StartScoring { round })];
        let cids: Vec<Cid> = self.submissions(round).iter().map(|(_, c)| c.clone()).collect();
        if !cids.is_empty() && self.registered.len() < 2 {
            return Err(LedgerError::TooFewAggregators(self.registered.len()));
        }
        for cid in cids {
            let scorers = self.sample_scorers(&cid)?;
            events.push(LedgerEvent::ScoringAssigned { cid, scorers: scorers.into_iter().collect() });
        }
        Ok(events)
    }

    /// Ends the scoring window (Sync). Scores arriving afterwards are rejected.
    pub fn close_round(&mut self, round: u64) -> Result<LedgerEvent, LedgerError> {
        if self.mode == Mode::Async {
            return Err(LedgerError::Unsupported("close_round", self.mode));
        }
        if self.phase != Phase::Scoring {
            return Err(LedgerError::WrongPhase {
                op: "close_round",
                expected: Phase::Scoring,
                found: self.phase,
                round: self.round,
            });
        }
        if round != self.round {
            return Err(LedgerError::RoundOutOfOrder { op: "close_round", got: round, expected: self.round });
        }
        self.phase = Phase::Closed;
        self.finalized = Some(round);
        Ok(self.emit(LedgerEvent::RoundFinalized { round }))
    }

    pub fn submit_score(&mut self, scorer: AggregatorId, cid: &Cid, value: f64) -> Result<LedgerEvent, LedgerError> {
        if !(0.0..=1.0).contains(&value) {
            return Err(LedgerError::ScoreOutOfRange(value));
        }
        let info = self.models.get(cid).ok_or_else(|| LedgerError::UnknownModel(cid.clone()))?;
        let round = info.round;
        let assigned = self.assignments.get(cid).is_some_and(|s| s.contains(&scorer));
        if !assigned {
            return Err(LedgerError::UnassignedScorer { scorer, cid: cid.clone() });
        }
        if self.mode == Mode::Sync && !(round == self.round && self.phase == Phase::Scoring) {
            return Err(LedgerError::RejectedLate { scorer, cid: cid.clone() });
        }
        let records = self.scores.entry(cid.clone()).or_default();
        if records.iter().any(|r| r.scorer == scorer) {
            return Err(LedgerError::DuplicateScore { scorer, cid: cid.clone() });
        }
        records.push(ScoreRecord { cid: cid.clone(), scorer, round, value, time: self.now });
        Ok(self.emit(LedgerEvent::ScoreSubmitted { round, cid: cid.clone(), scorer, value }))
    }

    /// Sync: the models of the most recently finalized round with all accepted
    /// scores. Async: each aggregator's most recent submission that has at
    /// least one score; the requester becomes eligible (idle) again.
    pub fn latest_models_with_scores(
        &mut self,
        requester: AggregatorId,
    ) -> Result<BTreeMap<Cid, ScoredModel>, LedgerError> {
        self.ensure_registered(requester)?;
        let mut out = BTreeMap::new();
        match self.mode {
            Mode::Sync => {
                if let Some(round) = self.finalized {
                    for (agg, cid) in self.submissions(round) {
                        let scores = self.scores_for(cid).iter().map(|r| r.value).collect();
                        out.insert(cid.clone(), ScoredModel { submitter: *agg, round, scores });
                    }
                }
            }
            Mode::Async => {
                let mut latest: BTreeMap<AggregatorId, (&Cid, &ModelInfo)> = BTreeMap::new();
                for (cid, info) in &self.models {
                    if self.scores_for(cid).is_empty() {
                        continue;
                    }
                    let newer = latest.get(&info.submitter).is_none_or(|(_, cur)| info.seq > cur.seq);
                    if newer {
                        latest.insert(info.submitter, (cid, info));
                    }
                }
                for (agg, (cid, info)) in latest {
                    let scores = self.scores_for(cid).iter().map(|r| r.value).collect();
                    out.insert(cid.clone(), ScoredModel { submitter: agg, round: info.round, scores });
                }
                self.availability.insert(requester, Availability::Idle);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cas::MemoryStore;

    fn ids(n: u32) -> Vec<AggregatorId> {
        (0..n).map(AggregatorId).collect()
    }

    fn ledger(mode: Mode, n: u32) -> (Ledger, Arc<MemoryStore>) {
        let store = Arc::new(MemoryStore::new());
        let mut l = Ledger::new(mode, 42, store.clone());
        for a in ids(n) {
            l.register(a).unwrap();
        }
        (l, store)
    }

    fn model(store: &MemoryStore, tag: &str) -> Cid {
        store.put(tag.as_bytes()).unwrap()
    }

    #[test]
    fn registration() {
        let (mut l, _) = ledger(Mode::Sync, 4);
        assert_eq!(l.aggregator_count(), 4);
        assert!(matches!(l.register(AggregatorId(0)), Err(LedgerError::AlreadyRegistered(_))));
        l.start_training(0).unwrap();
        assert!(matches!(l.register(AggregatorId(9)), Err(LedgerError::RegistrationClosed)));
    }

    #[test]
    fn sparse_ids_rejected_at_start() {
        let store = Arc::new(MemoryStore::new());
        let mut l = Ledger::new(Mode::Sync, 1, store);
        l.register(AggregatorId(0)).unwrap();
        l.register(AggregatorId(2)).unwrap();
        assert!(matches!(l.start_training(0), Err(LedgerError::NonDenseIds { .. })));
    }

    #[test]
    fn start_training_emits_and_gates() {
        let (mut l, _) = ledger(Mode::Sync, 3);
        assert_eq!(l.start_training(0).unwrap(), LedgerEvent::StartTraining { round: 0, aggregator: None });
        assert!(matches!(l.start_training(1), Err(LedgerError::WrongPhase { .. })));
        l.start_scoring(0).unwrap();
        assert!(matches!(l.start_training(1), Err(LedgerError::WrongPhase { .. })));
        l.close_round(0).unwrap();
        assert!(matches!(l.start_training(3), Err(LedgerError::RoundOutOfOrder { .. })));
        l.start_training(1).unwrap();
    }

    #[test]
    fn submission_rules() {
        let (mut l, store) = ledger(Mode::Sync, 4);
        l.start_training(0).unwrap();
        let a = model(&store, "a");
        let ev = l.submit_model(AggregatorId(0), a.clone(), 0).unwrap();
        assert_eq!(ev, LedgerEvent::ModelSubmitted { round: 0, aggregator: AggregatorId(0), cid: a });
        let b = model(&store, "b");
        assert!(matches!(
            l.submit_model(AggregatorId(0), b.clone(), 0),
            Err(LedgerError::DuplicateSubmission { .. })
        ));
        assert!(matches!(l.submit_model(AggregatorId(7), b.clone(), 0), Err(LedgerError::NotRegistered(_))));
        let absent = Cid::of(b"never stored");
        assert!(matches!(l.submit_model(AggregatorId(1), absent, 0), Err(LedgerError::MissingContent(_))));
        assert!(matches!(l.submit_model(AggregatorId(1), b, 1), Err(LedgerError::RoundOutOfOrder { .. })));
    }

    #[test]
    fn straggler_is_deferred_to_next_round() {
        let (mut l, store) = ledger(Mode::Sync, 4);
        l.start_training(0).unwrap();
        l.start_scoring(0).unwrap();
        let late = model(&store, "late");
        let ev = l.submit_model(AggregatorId(2), late.clone(), 0).unwrap();
        assert!(matches!(ev, LedgerEvent::ModelDeferred { from_round: 0, to_round: 1, .. }));
        assert!(l.submissions(0).is_empty());
        l.close_round(0).unwrap();
        l.start_training(1).unwrap();
        assert_eq!(l.submissions(1), &[(AggregatorId(2), late.clone())]);
        // The deferred model occupies the aggregator's slot for round 1.
        let fresh = model(&store, "fresh");
        assert!(matches!(
            l.submit_model(AggregatorId(2), fresh, 1),
            Err(LedgerError::DuplicateSubmission { .. })
        ));
        l.start_scoring(1).unwrap();
        let scorers: Vec<_> = l.scorers_for(&late).unwrap().iter().copied().collect();
        for s in scorers {
            l.submit_score(s, &late, 0.5).unwrap();
        }
        l.close_round(1).unwrap();
        let latest = l.latest_models_with_scores(AggregatorId(0)).unwrap();
        assert_eq!(latest[&late].scores.len(), 3);
        assert_eq!(latest[&late].round, 1);
    }

    #[test]
    fn very_late_model_joins_the_open_window() {
        let (mut l, store) = ledger(Mode::Sync, 2);
        l.start_training(0).unwrap();
        l.start_scoring(0).unwrap();
        l.close_round(0).unwrap();
        l.start_training(1).unwrap();
        let m = model(&store, "m");
        let ev = l.submit_model(AggregatorId(1), m.clone(), 0).unwrap();
        assert!(matches!(ev, LedgerEvent::ModelDeferred { from_round: 0, to_round: 1, .. }));
        assert_eq!(l.submissions(1), &[(AggregatorId(1), m)]);
    }

    #[test]
    fn sample_scorers_cardinality() {
        for n in 2..=7u32 {
            let (mut l, store) = ledger(Mode::Sync, n);
            l.start_training(0).unwrap();
            let c = model(&store, "x");
            l.submit_model(AggregatorId(0), c.clone(), 0).unwrap();
            let s = l.sample_scorers(&c).unwrap();
            assert_eq!(s.len(), majority(n as usize));
            assert!(matches!(l.sample_scorers(&c), Err(LedgerError::AlreadyAssigned(_))));
        }
        assert_eq!(majority(4), 3);
        assert_eq!(majority(2), 2);
        assert_eq!(majority(5), 3);
    }

    #[test]
    fn sample_scorers_needs_two() {
        let (mut l, store) = ledger(Mode::Sync, 1);
        l.start_training(0).unwrap();
        let c = model(&store, "x");
        l.submit_model(AggregatorId(0), c.clone(), 0).unwrap();
        assert!(matches!(l.sample_scorers(&c), Err(LedgerError::TooFewAggregators(1))));
    }

    #[test]
    fn sampling_is_seeded() {
        let draw = || {
            let (mut l, store) = ledger(Mode::Sync, 5);
            l.start_training(0).unwrap();
            let mut out = Vec::new();
            for i in 0..5u32 {
                let c = model(&store, &format!("m{i}"));
                l.submit_model(AggregatorId(i), c.clone(), 0).unwrap();
                out.push(l.sample_scorers(&c).unwrap());
            }
            out
        };
        assert_eq!(draw(), draw());
    }

    #[test]
    fn start_scoring_assigns_every_model() {
        let (mut l, store) = ledger(Mode::Sync, 4);
        l.start_training(0).unwrap();
        for i in 0..3u32 {
            let c = model(&store, &format!("m{i}"));
            l.submit_model(AggregatorId(i), c, 0).unwrap();
        }
        let events = l.start_scoring(0).unwrap();
        let assigned: Vec<_> = events
            .iter()
            .filter_map(|e| match e {
                LedgerEvent::ScoringAssigned { scorers, .. } => Some(scorers.len()),
                _ => None,
            })
            .collect();
        assert_eq!(assigned, vec![3, 3, 3]);
        assert!(matches!(l.start_scoring(0), Err(LedgerError::WrongPhase { .. })));
    }

    #[test]
    fn start_scoring_with_no_models() {
        let (mut l, _) = ledger(Mode::Sync, 4);
        l.start_training(0).unwrap();
        let events = l.start_scoring(0).unwrap();
        assert_eq!(events, vec![LedgerEvent::StartScoring { round: 0 }]);
        assert_eq!(l.phase(), Phase::Scoring);
    }

    #[test]
    fn async_rejects_sync_only_operations() {
        let (mut l, _) = ledger(Mode::Async, 3);
        assert!(matches!(l.start_scoring(0), Err(LedgerError::Unsupported(..))));
        assert!(matches!(l.start_training(0), Err(LedgerError::Unsupported(..))));
        assert!(matches!(l.close_round(0), Err(LedgerError::Unsupported(..))));
    }

    #[test]
    fn score_validation() {
        let (mut l, store) = ledger(Mode::Sync, 4);
        l.start_training(0).unwrap();
        let c = model(&store, "c");
        l.submit_model(AggregatorId(0), c.clone(), 0).unwrap();
        l.start_scoring(0).unwrap();
        let assigned: Vec<_> = l.scorers_for(&c).unwrap().iter().copied().collect();
        let outsider = ids(4).into_iter().find(|a| !assigned.contains(a)).unwrap();
        assert!(matches!(l.submit_score(outsider, &c, 0.5), Err(LedgerError::UnassignedScorer { .. })));
        assert!(matches!(l.submit_score(assigned[0], &c, 1.5), Err(LedgerError::ScoreOutOfRange(_))));
        assert!(matches!(l.submit_score(assigned[0], &c, f64::NAN), Err(LedgerError::ScoreOutOfRange(_))));
        l.submit_score(assigned[0], &c, 0.42).unwrap();
        assert!(matches!(l.submit_score(assigned[0], &c, 0.4), Err(LedgerError::DuplicateScore { .. })));
        l.close_round(0).unwrap();
        assert!(matches!(l.submit_score(assigned[1], &c, 0.4), Err(LedgerError::RejectedLate { .. })));
        assert_eq!(l.scores_for(&c).len(), 1);
    }

    #[test]
    fn latest_models_sync() {
        let (mut l, store) = ledger(Mode::Sync, 2);
        assert!(l.latest_models_with_scores(AggregatorId(0)).unwrap().is_empty());
        l.start_training(0).unwrap();
        let x = model(&store, "x");
        let y = model(&store, "y");
        l.submit_model(AggregatorId(0), x.clone(), 0).unwrap();
        l.submit_model(AggregatorId(1), y.clone(), 0).unwrap();
        l.start_scoring(0).unwrap();
        l.submit_score(AggregatorId(0), &x, 0.5).unwrap();
        l.submit_score(AggregatorId(1), &x, 0.6).unwrap();
        // Not visible until the round is finalized.
        assert!(l.latest_models_with_scores(AggregatorId(0)).unwrap().is_empty());
        l.close_round(0).unwrap();
        let latest = l.latest_models_with_scores(AggregatorId(1)).unwrap();
        assert_eq!(latest[&x].scores, vec![0.5, 0.6]);
        assert!(latest[&y].scores.is_empty());
        assert!(matches!(l.latest_models_with_scores(AggregatorId(5)), Err(LedgerError::NotRegistered(_))));
    }

    #[test]
    fn async_latest_wins() {
        let (mut l, store) = ledger(Mode::Async, 3);
        let agg = AggregatorId(2);
        let mut cids = Vec::new();
        for round in 0..=5u64 {
            l.start_aggregator_training(agg, round).unwrap();
            let c = model(&store, &format!("r{round}"));
            l.submit_model(agg, c.clone(), round).unwrap();
            assert_eq!(l.availability(agg), Some(Availability::Busy));
            if round == 3 || round == 5 {
                let s = *l.scorers_for(&c).unwrap().iter().next().unwrap();
                l.submit_score(s, &c, 0.7).unwrap();
            }
            cids.push(c);
            l.latest_models_with_scores(agg).unwrap();
            assert_eq!(l.availability(agg), Some(Availability::Idle));
        }
        let latest = l.latest_models_with_scores(AggregatorId(0)).unwrap();
        assert_eq!(latest.len(), 1);
        assert_eq!(latest[&cids[5]].round, 5);
    }

    #[test]
    fn async_assigns_on_submission() {
        let (mut l, store) = ledger(Mode::Async, 4);
        l.start_aggregator_training(AggregatorId(1), 0).unwrap();
        let c = model(&store, "c");
        l.submit_model(AggregatorId(1), c.clone(), 0).unwrap();
        assert_eq!(l.scorers_for(&c).unwrap().len(), 3);
        assert!(matches!(l.events().last().unwrap().event, LedgerEvent::ScoringAssigned { .. }));
        // Async has no scoring window; scores are accepted whenever assigned.
        let s = *l.scorers_for(&c).unwrap().iter().next().unwrap();
        l.advance_to(100.0).unwrap();
        l.submit_score(s, &c, 0.3).unwrap();
        assert!(matches!(
            l.submit_model(AggregatorId(1), model(&store, "d"), 1),
            Err(LedgerError::RoundOutOfOrder { .. })
        ));
    }

    #[test]
    fn identical_content_cannot_be_submitted_twice() {
        let (mut l, store) = ledger(Mode::Sync, 2);
        l.start_training(0).unwrap();
        let c = model(&store, "same");
        l.submit_model(AggregatorId(0), c.clone(), 0).unwrap();
        assert!(matches!(l.submit_model(AggregatorId(1), c, 0), Err(LedgerError::DuplicateModel(_))));
    }

    #[test]
    fn time_is_monotone_and_logged() {
        let (mut l, _) = ledger(Mode::Sync, 2);
        l.advance_to(3.5).unwrap();
        l.start_training(0).unwrap();
        assert!(matches!(l.advance_to(1.0), Err(LedgerError::TimeWentBackwards { .. })));
        let mut buf = Vec::new();
        l.write_event_log(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "0\t3.500000\tStartTraining\tround=0\n");
    }
}
