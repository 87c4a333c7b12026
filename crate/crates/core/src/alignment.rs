//! Windowed optimal matching of played hits to expected notes, deviation
//! classes, and take summaries.
//!
//! Each target (pad or fret cell) is an independent subproblem. Within one
//! target both sequences are sorted by time, and an optimal matching never
//! crosses, so a DP over the two sequences finds the matching with maximum
//! cardinality and, among those, minimum total absolute timing deviation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exercise::{ExpectedTimeline, TargetSpec};

/// A played note routed to its target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub time_ms: f64,
    pub target: TargetSpec,
    pub velocity: u8,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AlignError {
    #[error("{0} is not sorted by time")]
    UnsortedInput(&'static str),
    #[error("inconsistent input: {0}")]
    InconsistentInput(String),
    #[error("invalid classifier config: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum MatchResult {
    Matched {
        expected_index: usize,
        hit_index: usize,
        /// hit time minus expected time
        timing_dev_ms: f64,
        /// signed distance outside the expected velocity range
        velocity_dev: i32,
    },
    Missed {
        expected_index: usize,
    },
    Extra {
        hit_index: usize,
    },
}

impl MatchResult {
    pub fn expected_index(&self) -> Option<usize> {
        match *self {
            MatchResult::Matched { expected_index, .. } | MatchResult::Missed { expected_index } => {
                Some(expected_index)
            }
            MatchResult::Extra { .. } => None,
        }
    }

    pub fn hit_index(&self) -> Option<usize> {
        match *self {
            MatchResult::Matched { hit_index, .. } | MatchResult::Extra { hit_index } => Some(hit_index),
            MatchResult::Missed { .. } => None,
        }
    }

    pub fn is_matched(&self) -> bool {
        matches!(self, MatchResult::Matched { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimingClass {
    VeryEarly,
    Early,
    OnTime,
    Late,
    VeryLate,
}

impl TimingClass {
    pub const ALL: [TimingClass; 5] = [
        TimingClass::VeryEarly,
        TimingClass::Early,
        TimingClass::OnTime,
        TimingClass::Late,
        TimingClass::VeryLate,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DynamicsClass {
    TooSoft,
    Ok,
    TooHard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DeviationClass {
    pub timing: TimingClass,
    pub dynamics: DynamicsClass,
}

/// Every category a pie or tally can show. Declaration order is the fixed
/// display order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeClass {
    VeryEarly,
    Early,
    OnTime,
    Late,
    VeryLate,
    TooSoft,
    Ok,
    TooHard,
    Missed,
    Extra,
}

impl OutcomeClass {
    pub const ALL: [OutcomeClass; 10] = [
        OutcomeClass::VeryEarly,
        OutcomeClass::Early,
        OutcomeClass::OnTime,
        OutcomeClass::Late,
        OutcomeClass::VeryLate,
        OutcomeClass::TooSoft,
        OutcomeClass::Ok,
        OutcomeClass::TooHard,
        OutcomeClass::Missed,
        OutcomeClass::Extra,
    ];

    pub fn is_timing(self) -> bool {
        matches!(
            self,
            OutcomeClass::VeryEarly
                | OutcomeClass::Early
                | OutcomeClass::OnTime
                | OutcomeClass::Late
                | OutcomeClass::VeryLate
        )
    }

    pub fn is_dynamics(self) -> bool {
        matches!(self, OutcomeClass::TooSoft | OutcomeClass::Ok | OutcomeClass::TooHard)
    }
}

impl From<TimingClass> for OutcomeClass {
    fn from(t: TimingClass) -> Self {
        match t {
            TimingClass::VeryEarly => OutcomeClass::VeryEarly,
            TimingClass::Early => OutcomeClass::Early,
            TimingClass::OnTime => OutcomeClass::OnTime,
            TimingClass::Late => OutcomeClass::Late,
            TimingClass::VeryLate => OutcomeClass::VeryLate,
        }
    }
}

impl From<DynamicsClass> for OutcomeClass {
    fn from(d: DynamicsClass) -> Self {
        match d {
            DynamicsClass::TooSoft => OutcomeClass::TooSoft,
            DynamicsClass::Ok => OutcomeClass::Ok,
            DynamicsClass::TooHard => OutcomeClass::TooHard,
        }
    }
}

/// Which deviation the glanceable encodings report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackMode {
    #[default]
    Timing,
    Velocity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub on_time_ms: f64,
    pub early_late_ms: f64,
    pub window_ms: f64,
    pub mode: FeedbackMode,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            on_time_ms: 30.0,
            early_late_ms: 80.0,
            window_ms: 150.0,
            mode: FeedbackMode::Timing,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<(), AlignError> {
        if !(self.on_time_ms > 0.0 && self.on_time_ms < self.early_late_ms && self.early_late_ms <= self.window_ms)
        {
            return Err(AlignError::InvalidConfig(
                "need 0 < on_time_ms < early_late_ms <= window_ms",
            ));
        }
        Ok(())
    }

    /// Same thresholds expressed for a clock running `factor` times faster.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            on_time_ms: self.on_time_ms * factor,
            early_late_ms: self.early_late_ms * factor,
            window_ms: self.window_ms * factor,
            mode: self.mode,
        }
    }
}

fn check_sorted(times: impl Iterator<Item = f64>, what: &'static str) -> Result<(), AlignError> {
    let mut prev = f64::NEG_INFINITY;
    for t in times {
        if t.is_nan() || t < prev {
            return Err(AlignError::UnsortedInput(what));
        }
        prev = t;
    }
    Ok(())
}

#[derive(Clone, Copy, PartialEq)]
struct Score {
    matched: u32,
    cost: f64,
}

impl Score {
    const ZERO: Score = Score { matched: 0, cost: 0.0 };

    fn better_than(self, other: Score) -> bool {
        self.matched > other.matched || (self.matched == other.matched && self.cost < other.cost)
    }
}

/// Optimal monotone matching of `expected` to `hits` (both sorted, indices
/// into the caller's arrays) within `window`. Returns matched index pairs.
fn match_one_target(
    expected: &[(usize, f64)],
    hits: &[(usize, f64)],
    window: f64,
) -> Vec<(usize, usize)> {
    let n = expected.len();
    let m = hits.len();
    let w = m + 1;
    let mut table = vec![Score::ZERO; (n + 1) * w];
    for i in 1..=n {
        for j in 1..=m {
            let mut best = table[(i - 1) * w + j];
            let skip_hit = table[i * w + j - 1];
            if skip_hit.better_than(best) {
                best = skip_hit;
            }
            let dev = (hits[j - 1].1 - expected[i - 1].1).abs();
            if dev <= window {
                let prev = table[(i - 1) * w + j - 1];
                let take = Score {
                    matched: prev.matched + 1,
                    cost: prev.cost + dev,
                };
                if take.better_than(best) {
                    best = take;
                }
            }
            table[i * w + j] = best;
        }
    }

    // Ties prefer leaving the later expected note (then the later hit)
    // unmatched, which favours earlier indices.
    let mut pairs = Vec::new();
    let (mut i, mut j) = (n, m);
    while i > 0 && j > 0 {
        let here = table[i * w + j];
        if table[(i - 1) * w + j] == here {
            i -= 1;
        } else if table[i * w + j - 1] == here {
            j -= 1;
        } else {
            pairs.push((expected[i - 1].0, hits[j - 1].0));
            i -= 1;
            j -= 1;
        }
    }
    pairs.reverse();
    pairs
}

/// Matches hits to the timeline per target.
///
/// Results list matched/missed entries in expected order, then extras in hit
/// order.
pub fn align(
    timeline: &ExpectedTimeline,
    hits: &[Hit],
    config: &ClassifierConfig,
) -> Result<Vec<MatchResult>, AlignError> {
    check_sorted(timeline.entries.iter().map(|e| e.time_ms), "timeline")?;
    check_sorted(hits.iter().map(|h| h.time_ms), "hits")?;

    let mut per_target: BTreeMap<TargetSpec, (Vec<(usize, f64)>, Vec<(usize, f64)>)> = BTreeMap::new();
    for (i, e) in timeline.entries.iter().enumerate() {
        per_target.entry(e.target).or_default().0.push((i, e.time_ms));
    }
    for (j, h) in hits.iter().enumerate() {
        per_target.entry(h.target).or_default().1.push((j, h.time_ms));
    }

    let mut expected_match: Vec<Option<usize>> = vec![None; timeline.len()];
    let mut hit_used = vec![false; hits.len()];
    for (exp, hs) in per_target.values() {
        if exp.is_empty() || hs.is_empty() {
            continue;
        }
        for (ei, hj) in match_one_target(exp, hs, config.window_ms) {
            expected_match[ei] = Some(hj);
            hit_used[hj] = true;
        }
    }

    let mut results = Vec::with_capacity(timeline.len() + hits.len());
    for (ei, m) in expected_match.iter().enumerate() {
        results.push(match *m {
            Some(hj) => matched(timeline, hits, ei, hj),
            None => MatchResult::Missed { expected_index: ei },
        });
    }
    for (hj, used) in hit_used.iter().enumerate() {
        if !used {
            results.push(MatchResult::Extra { hit_index: hj });
        }
    }
    Ok(results)
}

pub(crate) fn matched(timeline: &ExpectedTimeline, hits: &[Hit], ei: usize, hj: usize) -> MatchResult {
    let e = &timeline.entries[ei];
    let h = &hits[hj];
    MatchResult::Matched {
        expected_index: ei,
        hit_index: hj,
        timing_dev_ms: h.time_ms - e.time_ms,
        velocity_dev: e.velocity_range.deviation(h.velocity),
    }
}

/// Timing class of a signed deviation. Thresholds are inclusive on the
/// inner side.
pub fn classify_timing(dev_ms: f64, config: &ClassifierConfig) -> TimingClass {
    let mag = dev_ms.abs();
    if mag <= config.on_time_ms {
        TimingClass::OnTime
    } else if mag <= config.early_late_ms {
        if dev_ms < 0.0 {
            TimingClass::Early
        } else {
            TimingClass::Late
        }
    } else if dev_ms < 0.0 {
        TimingClass::VeryEarly
    } else {
        TimingClass::VeryLate
    }
}

pub fn classify_dynamics(velocity_dev: i32) -> DynamicsClass {
    match velocity_dev.signum() {
        -1 => DynamicsClass::TooSoft,
        1 => DynamicsClass::TooHard,
        _ => DynamicsClass::Ok,
    }
}

/// Classifies a matched result; `None` for missed and extra.
pub fn classify(result: &MatchResult, config: &ClassifierConfig) -> Option<DeviationClass> {
    match *result {
        MatchResult::Matched {
            timing_dev_ms,
            velocity_dev,
            ..
        } => Some(DeviationClass {
            timing: classify_timing(timing_dev_ms, config),
            dynamics: classify_dynamics(velocity_dev),
        }),
        _ => None,
    }
}

/// Per-target tallies.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TargetStats {
    pub played: u32,
    pub missed: u32,
    pub extra: u32,
    #[serde(default)]
    pub timing_bins: BTreeMap<TimingClass, u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetStatsEntry {
    pub target: TargetSpec,
    #[serde(flatten)]
    pub stats: TargetStats,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TakeReport {
    pub results: Vec<MatchResult>,
    /// Zero counts are omitted.
    pub class_counts: BTreeMap<OutcomeClass, u32>,
    /// Sorted by target.
    pub per_target_stats: Vec<TargetStatsEntry>,
}

impl TakeReport {
    pub fn count(&self, class: OutcomeClass) -> u32 {
        self.class_counts.get(&class).copied().unwrap_or(0)
    }

    /// Counts a pie shows in `mode`: the mode's classes plus missed and extra.
    pub fn counts_for(&self, mode: FeedbackMode) -> BTreeMap<OutcomeClass, u32> {
        self.class_counts
            .iter()
            .filter(|(c, _)| match mode {
                FeedbackMode::Timing => c.is_timing(),
                FeedbackMode::Velocity => c.is_dynamics(),
            } || matches!(c, OutcomeClass::Missed | OutcomeClass::Extra))
            .map(|(c, n)| (*c, *n))
            .collect()
    }

    pub fn matched_count(&self) -> u32 {
        self.results.iter().filter(|r| r.is_matched()).count() as u32
    }

    pub fn stats_for(&self, target: &TargetSpec) -> Option<&TargetStats> {
        self.per_target_stats
            .iter()
            .find(|e| &e.target == target)
            .map(|e| &e.stats)
    }
}

/// Tallies classes and per-target statistics. `hits` attributes extras to
/// the target they were played on.
pub fn summarize(
    results: &[MatchResult],
    timeline: &ExpectedTimeline,
    hits: &[Hit],
    config: &ClassifierConfig,
) -> Result<TakeReport, AlignError> {
    let mut class_counts: BTreeMap<OutcomeClass, u32> = BTreeMap::new();
    let mut per_target: BTreeMap<TargetSpec, TargetStats> = BTreeMap::new();
    let expected_target = |i: usize| {
        timeline
            .entries
            .get(i)
            .map(|e| e.target)
            .ok_or_else(|| AlignError::InconsistentInput(format!("expected index {i} out of range")))
    };
    let hit_target = |j: usize| {
        hits.get(j)
            .map(|h| h.target)
            .ok_or_else(|| AlignError::InconsistentInput(format!("hit index {j} out of range")))
    };
    for r in results {
        match *r {
            MatchResult::Matched { expected_index, hit_index, .. } => {
                let target = expected_target(expected_index)?;
                if hit_target(hit_index)? != target {
                    return Err(AlignError::InconsistentInput(format!(
                        "hit {hit_index} matched across targets"
                    )));
                }
                let class = classify(r, config).expect("matched");
                *class_counts.entry(class.timing.into()).or_default() += 1;
                *class_counts.entry(class.dynamics.into()).or_default() += 1;
                let s = per_target.entry(target).or_default();
                s.played += 1;
                *s.timing_bins.entry(class.timing).or_default() += 1;
            }
            MatchResult::Missed { expected_index } => {
                let target = expected_target(expected_index)?;
                *class_counts.entry(OutcomeClass::Missed).or_default() += 1;
                per_target.entry(target).or_default().missed += 1;
            }
            MatchResult::Extra { hit_index } => {
                let target = hit_target(hit_index)?;
                *class_counts.entry(OutcomeClass::Extra).or_default() += 1;
                per_target.entry(target).or_default().extra += 1;
            }
        }
    }
    Ok(TakeReport {
        results: results.to_vec(),
        class_counts,
        per_target_stats: per_target
            .into_iter()
            .map(|(target, stats)| TargetStatsEntry { target, stats })
            .collect(),
    })
}

/// [`align`] followed by [`summarize`].
pub fn analyze(
    timeline: &ExpectedTimeline,
    hits: &[Hit],
    config: &ClassifierConfig,
) -> Result<TakeReport, AlignError> {
    let results = align(timeline, hits, config)?;
    summarize(&results, timeline, hits, config)
}
