use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::record::{IterRange, Sample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RankMetric {
    /// Higher is better.
    #[default]
    Reward,
    /// Lower is better.
    Loss,
}

impl RankMetric {
    fn value(self, s: &Sample) -> f64 {
        match self {
            Self::Reward => s.reward,
            Self::Loss => s.loss,
        }
    }

    /// Orientation where smaller means better.
    fn score(self, v: f64) -> f64 {
        match self {
            Self::Reward => -v,
            Self::Loss => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankEntry {
    pub terminal_key: String,
    pub rank: usize,
    pub metric_value: f64,
    pub first_ranked_iteration: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingFrame {
    pub iteration: u64,
    pub entries: Vec<RankEntry>,
}

#[derive(Debug, Clone, PartialEq)]
struct Slot {
    score: f64,
    iteration: u64,
    key: String,
}

impl Eq for Slot {}

impl Ord for Slot {
    fn cmp(&self, o: &Self) -> Ordering {
        self.score
            .total_cmp(&o.score)
            .then(self.iteration.cmp(&o.iteration))
            .then_with(|| self.key.cmp(&o.key))
    }
}

impl PartialOrd for Slot {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

/// One frame per iteration in `range` that has samples. Each frame ranks the
/// distinct terminal objects seen from `range.lo` up to that iteration by their
/// best value so far; an object's tie-break iteration is when it first reached it.
pub fn ranking(samples: &[Sample], metric: RankMetric, n: usize, range: IterRange) -> Result<Vec<RankingFrame>> {
    if n == 0 {
        return domain("ranking needs N >= 1");
    }
    let mut by_iter: BTreeMap<u64, Vec<&Sample>> = BTreeMap::new();
    for s in samples.iter().filter(|s| range.contains(s.iteration)) {
        by_iter.entry(s.iteration).or_default().push(s);
    }
    let mut best: HashMap<&str, Slot> = HashMap::new();
    let mut order: BTreeSet<Slot> = BTreeSet::new();
    let mut first_ranked: HashMap<String, u64> = HashMap::new();
    let mut frames = Vec::with_capacity(by_iter.len());

    for (iteration, batch) in by_iter {
        for s in batch {
            let score = metric.score(metric.value(s));
            if score.is_nan() {
                continue;
            }
            let cand = Slot { score, iteration, key: s.terminal_key.clone() };
            match best.get(s.terminal_key.as_str()) {
                Some(cur) if cur.score <= score => {}
                Some(cur) => {
                    order.remove(cur);
                    order.insert(cand.clone());
                    best.insert(&s.terminal_key, cand);
                }
                None => {
                    order.insert(cand.clone());
                    best.insert(&s.terminal_key, cand);
                }
            }
        }
        let entries = order
            .iter()
            .take(n)
            .enumerate()
            .map(|(i, slot)| RankEntry {
                terminal_key: slot.key.clone(),
                rank: i + 1,
                metric_value: metric.score(slot.score),
                first_ranked_iteration: *first_ranked.entry(slot.key.clone()).or_insert(iteration),
            })
            .collect();
        frames.push(RankingFrame { iteration, entries });
    }
    Ok(frames)
}

/// Iterations `t` (frame iterations) paired with the number of objects that
/// are in the last frame at or before `t + window` but not in the frame at `t`.
pub fn discovery_events(frames: &[RankingFrame], window: u64) -> Vec<(u64, usize)> {
    let mut out = Vec::with_capacity(frames.len());
    let mut j = 0;
    for (i, f) in frames.iter().enumerate() {
        j = j.max(i);
        while j + 1 < frames.len() && frames[j + 1].iteration <= f.iteration + window {
            j += 1;
        }
        let now: BTreeSet<&str> = f.entries.iter().map(|e| e.terminal_key.as_str()).collect();
        let fresh = frames[j].entries.iter().filter(|e| !now.contains(e.terminal_key.as_str())).count();
        out.push((f.iteration, fresh));
    }
    out
}
