//! Incremental matching for immediate feedback while a take is played.
//!
//! Each hit is matched on arrival to the nearest still-open expected note of
//! the same target within the window (earliest index on ties), or reported
//! as extra. Expected notes are finalized as missed once the clock passes
//! their window. At stop the take is re-aligned exactly and the two reports
//! are compared.

use thiserror::Error;

use crate::alignment::{analyze, matched, summarize, AlignError, ClassifierConfig, Hit, MatchResult, TakeReport};
use crate::exercise::ExpectedTimeline;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LiveError {
    #[error("event at {at_ms} ms arrived after clock reached {now_ms} ms")]
    OutOfOrderEvent { at_ms: f64, now_ms: f64 },
    #[error(transparent)]
    Align(#[from] AlignError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LiveEvent {
    Hit(Hit),
    /// The clock reached this time with no input.
    Tick(f64),
}

impl LiveEvent {
    pub fn time_ms(&self) -> f64 {
        match self {
            LiveEvent::Hit(h) => h.time_ms,
            LiveEvent::Tick(t) => *t,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Slot {
    Open,
    Matched(usize),
    Missed,
}

/// Both reports of a finished take.
#[derive(Debug, Clone, PartialEq)]
pub struct LiveOutcome {
    pub hits: Vec<Hit>,
    pub live_report: TakeReport,
    pub final_report: TakeReport,
    /// Expected notes whose outcome changed between the live and final
    /// report.
    pub corrections: u32,
}

#[derive(Debug, Clone)]
pub struct LiveSession {
    timeline: ExpectedTimeline,
    config: ClassifierConfig,
    now_ms: f64,
    slots: Vec<Slot>,
    /// First entry whose miss deadline has not yet passed.
    deadline_cursor: usize,
    hits: Vec<Hit>,
    extras: Vec<usize>,
}

impl LiveSession {
    pub fn new(timeline: ExpectedTimeline, config: ClassifierConfig) -> Result<Self, LiveError> {
        config.validate()?;
        if timeline.entries.windows(2).any(|w| !(w[0].time_ms <= w[1].time_ms)) {
            return Err(AlignError::UnsortedInput("timeline").into());
        }
        let n = timeline.len();
        Ok(Self {
            timeline,
            config,
            now_ms: f64::NEG_INFINITY,
            slots: vec![Slot::Open; n],
            deadline_cursor: 0,
            hits: Vec::new(),
            extras: Vec::new(),
        })
    }

    pub fn timeline(&self) -> &ExpectedTimeline {
        &self.timeline
    }

    pub fn config(&self) -> &ClassifierConfig {
        &self.config
    }

    pub fn now_ms(&self) -> f64 {
        self.now_ms
    }

    pub fn hits(&self) -> &[Hit] {
        &self.hits
    }

    /// Advances the session by one event and returns the results it settles.
    pub fn step(&mut self, event: LiveEvent) -> Result<Vec<MatchResult>, LiveError> {
        let at = event.time_ms();
        if at.is_nan() || at < self.now_ms {
            return Err(LiveError::OutOfOrderEvent {
                at_ms: at,
                now_ms: self.now_ms,
            });
        }
        self.now_ms = at;
        let mut out = self.expire(|deadline| at > deadline);
        if let LiveEvent::Hit(hit) = event {
            out.push(self.place(hit));
        }
        Ok(out)
    }

    fn expire(&mut self, passed: impl Fn(f64) -> bool) -> Vec<MatchResult> {
        let mut out = Vec::new();
        while let Some(e) = self.timeline.entries.get(self.deadline_cursor) {
            if !passed(e.time_ms + self.config.window_ms) {
                break;
            }
            if self.slots[self.deadline_cursor] == Slot::Open {
                self.slots[self.deadline_cursor] = Slot::Missed;
                out.push(MatchResult::Missed {
                    expected_index: self.deadline_cursor,
                });
            }
            self.deadline_cursor += 1;
        }
        out
    }

    fn place(&mut self, hit: Hit) -> MatchResult {
        let hit_index = self.hits.len();
        self.hits.push(hit);
        let window = self.config.window_ms;
        let mut best: Option<(usize, f64)> = None;
        for (i, e) in self.timeline.entries.iter().enumerate().skip(self.deadline_cursor) {
            if e.time_ms - hit.time_ms > window {
                break;
            }
            if self.slots[i] != Slot::Open || e.target != hit.target {
                continue;
            }
            let d = (hit.time_ms - e.time_ms).abs();
            if d <= window && best.is_none_or(|(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        match best {
            Some((i, _)) => {
                self.slots[i] = Slot::Matched(hit_index);
                matched(&self.timeline, &self.hits, i, hit_index)
            }
            None => {
                self.extras.push(hit_index);
                MatchResult::Extra { hit_index }
            }
        }
    }

    /// Results so far in report order: expected notes that are settled, then
    /// extras.
    fn live_results(&self) -> Vec<MatchResult> {
        let mut results: Vec<MatchResult> = self
            .slots
            .iter()
            .enumerate()
            .filter_map(|(i, s)| match *s {
                Slot::Open => None,
                Slot::Missed => Some(MatchResult::Missed { expected_index: i }),
                Slot::Matched(j) => Some(matched(&self.timeline, &self.hits, i, j)),
            })
            .collect();
        let mut extras = self.extras.clone();
        extras.sort_unstable();
        results.extend(extras.into_iter().map(|hit_index| MatchResult::Extra { hit_index }));
        results
    }

    /// Report of what has been shown so far.
    pub fn snapshot(&self) -> Result<TakeReport, LiveError> {
        Ok(summarize(&self.live_results(), &self.timeline, &self.hits, &self.config)?)
    }

    /// Ends the take: open notes become missed, the exact alignment is run,
    /// and the two are compared. Returns the misses settled by stopping along
    /// with the outcome.
    pub fn finish(mut self) -> Result<(Vec<MatchResult>, LiveOutcome), LiveError> {
        let closing = self.expire(|_| true);
        let live_report = self.snapshot()?;
        let final_report = analyze(&self.timeline, &self.hits, &self.config)?;
        let corrections = count_corrections(&live_report, &final_report, self.timeline.len());
        Ok((
            closing,
            LiveOutcome {
                hits: self.hits,
                live_report,
                final_report,
                corrections,
            },
        ))
    }
}

fn count_corrections(live: &TakeReport, exact: &TakeReport, n: usize) -> u32 {
    let assignment = |report: &TakeReport| {
        let mut a: Vec<Option<usize>> = vec![None; n];
        for r in &report.results {
            if let (Some(i), Some(j)) = (r.expected_index(), r.hit_index()) {
                a[i] = Some(j);
            }
        }
        a
    };
    let (a, b) = (assignment(live), assignment(exact));
    a.iter().zip(&b).filter(|(x, y)| x != y).count() as u32
}
