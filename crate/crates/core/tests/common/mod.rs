#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use fedorch::sim::{SimOutput, TraceRecord};
use fedorch::ledger::LoggedEvent;
use fedorch::learner::Dataset;
use fedorch::{AggregatorId, Cid, LedgerEvent, Mode, Weights};

/// Replays a ledger event log and returns every rule violation found.
///
/// Checks made:
/// * every assignment has exactly floor(N/2)+1 distinct scorers;
/// * every accepted score comes from an assigned scorer, at most once;
/// * in Sync, scores are accepted only inside their round's scoring window;
/// * in Sync, submissions are recorded only inside a training window.
pub fn audit_event_log(events: &[LoggedEvent], n: usize, mode: Mode) -> Vec<String> {
    let mut problems = Vec::new();
    let want = n / 2 + 1;
    let mut assigned: BTreeMap<Cid, BTreeSet<AggregatorId>> = BTreeMap::new();
    let mut model_round: BTreeMap<Cid, u64> = BTreeMap::new();
    let mut seen_scores: BTreeSet<(Cid, AggregatorId)> = BTreeSet::new();
    // Sync phase state: (round, "training" | "scoring" | "closed").
    let mut phase: Option<(u64, &str)> = None;
    for logged in events {
        match &logged.event {
            LedgerEvent::StartTraining { round, aggregator: None } => phase = Some((*round, "training")),
            LedgerEvent::StartScoring { round } => phase = Some((*round, "scoring")),
            LedgerEvent::RoundFinalized { round } => phase = Some((*round, "closed")),
            LedgerEvent::ModelSubmitted { round, cid, .. } => {
                model_round.insert(cid.clone(), *round);
                if mode == Mode::Sync && phase != Some((*round, "training")) {
                    problems.push(format!("event {}: submission outside training window ({phase:?})", logged.index));
                }
            }
            LedgerEvent::ScoringAssigned { cid, scorers } => {
                let distinct: BTreeSet<AggregatorId> = scorers.iter().copied().collect();
                if distinct.len() != scorers.len() || distinct.len() != want {
                    problems.push(format!("event {}: {} scorers ({} distinct), want {want}", logged.index, scorers.len(), distinct.len()));
                }
                if distinct.iter().any(|a| a.index() >= n) {
                    problems.push(format!("event {}: unregistered scorer", logged.index));
                }
                if assigned.insert(cid.clone(), distinct).is_some() {
                    problems.push(format!("event {}: cid assigned twice", logged.index));
                }
            }
            LedgerEvent::ScoreSubmitted { round, cid, scorer, value } => {
                if !assigned.get(cid).is_some_and(|s| s.contains(scorer)) {
                    problems.push(format!("event {}: score from unassigned scorer {scorer}", logged.index));
                }
                if !seen_scores.insert((cid.clone(), *scorer)) {
                    problems.push(format!("event {}: duplicate score", logged.index));
                }
                if model_round.get(cid) != Some(round) {
                    problems.push(format!("event {}: score round does not match model round", logged.index));
                }
                if !(0.0..=1.0).contains(value) {
                    problems.push(format!("event {}: score {value} out of range", logged.index));
                }
                if mode == Mode::Sync && phase != Some((*round, "scoring")) {
                    problems.push(format!("event {}: score outside scoring window ({phase:?})", logged.index));
                }
            }
            _ => {}
        }
    }
    problems
}

/// Candidate sets observed per round, one entry per pulling aggregator.
pub fn candidates_by_round(out: &SimOutput) -> BTreeMap<u64, Vec<(AggregatorId, BTreeSet<Cid>)>> {
    let mut by_round: BTreeMap<u64, Vec<(AggregatorId, BTreeSet<Cid>)>> = BTreeMap::new();
    for t in &out.trace {
        if let TraceRecord::Pulled { aggregator, round, candidates, .. } = t {
            by_round.entry(*round).or_default().push((*aggregator, candidates.iter().cloned().collect()));
        }
    }
    by_round
}

pub fn poisoned_cids(out: &SimOutput) -> BTreeSet<Cid> {
    out.trace
        .iter()
        .filter_map(|t| match t {
            TraceRecord::Trained { cid, poisoned: true, .. } => Some(cid.clone()),
            _ => None,
        })
        .collect()
}

/// Number of selections after `after_round` by honest aggregators that
/// include a poisoned cid.
pub fn honest_poisoned_picks(out: &SimOutput, honest: &[usize], after_round: u64) -> usize {
    let poisoned = poisoned_cids(out);
    out.trace
        .iter()
        .filter(|t| {
            matches!(t, TraceRecord::Pulled { aggregator, round, selected, .. }
                if *round > after_round
                    && honest.contains(&aggregator.index())
                    && selected.iter().any(|c| poisoned.contains(c)))
        })
        .count()
}

pub fn final_mean_global(out: &SimOutput, which: &[usize]) -> f64 {
    let rows: Vec<_> = out.final_rows().into_iter().filter(|r| which.contains(&r.aggregator.index())).collect();
    rows.iter().map(|r| r.global_accuracy).sum::<f64>() / rows.len() as f64
}

pub fn final_best_local(out: &SimOutput) -> f64 {
    out.final_rows().iter().map(|r| r.local_accuracy).fold(0.0, f64::max)
}

/// Pairwise squared distances from scratch, then the n−f−2 smallest per row
/// by repeated minimum extraction (so they are summed nearest first).
pub fn brute_force_krum(models: &[Vec<f64>], f: usize) -> Vec<f64> {
    let n = models.len();
    let k = n - f - 2;
    let dist = |a: &[f64], b: &[f64]| {
        let mut s = 0.0;
        for j in 0..a.len() {
            let d = a[j] - b[j];
            s += d * d;
        }
        s
    };
    let raw: Vec<f64> = (0..n)
        .map(|i| {
            let mut others: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| dist(&models[i], &models[j])).collect();
            let mut total = 0.0;
            for _ in 0..k {
                let (pos, &min) = others
                    .iter()
                    .enumerate()
                    .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .unwrap();
                total += min;
                others.remove(pos);
            }
            total
        })
        .collect();
    let max = raw.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return vec![1.0; n];
    }
    raw.iter().map(|d| (1.0 - d / max).clamp(0.0, 1.0)).collect()
}

/// Counts correct argmax predictions with explicit loops.
pub fn counting_accuracy(w: &Weights, ds: &Dataset<f64>) -> f64 {
    let (d, c) = (ds.dims(), ds.classes());
    let values = w.values();
    let mut correct = 0usize;
    for i in 0..ds.len() {
        let x = ds.row(i);
        let mut best = 0usize;
        let mut best_z = f64::NEG_INFINITY;
        for class in 0..c {
            let mut z = values[class * (d + 1) + d];
            for j in 0..d {
                z += values[class * (d + 1) + j] * x[j];
            }
            if z > best_z {
                best_z = z;
                best = class;
            }
        }
        if best == ds.labels()[i] {
            correct += 1;
        }
    }
    correct as f64 / ds.len() as f64
}

/// Mean softmax cross-entropy written out directly.
pub fn mean_cross_entropy(w: &[f64], ds: &Dataset<f64>) -> f64 {
    let (d, c) = (ds.dims(), ds.classes());
    let mut total = 0.0;
    for i in 0..ds.len() {
        let x = ds.row(i);
        let z: Vec<f64> = (0..c)
            .map(|k| w[k * (d + 1) + d] + (0..d).map(|j| w[k * (d + 1) + j] * x[j]).sum::<f64>())
            .collect();
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - z[ds.labels()[i]];
    }
    total / ds.len() as f64
}
