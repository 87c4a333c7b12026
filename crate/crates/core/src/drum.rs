//! Glanceable per-pad encodings: color fill, tachometer needle, pie summary.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::alignment::{
    classify_dynamics, classify_timing, ClassifierConfig, DeviationClass, FeedbackMode, MatchResult,
    OutcomeClass,
};
use crate::scalar::Real;

pub const DEFAULT_FLASH_MS: f64 = 150.0;
/// Velocity units at which the dynamics needle saturates.
pub const DEFAULT_VELOCITY_MAX_DEV: f64 = 32.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[u8; 3]", into = "[u8; 3]")]
pub struct Rgb(pub u8, pub u8, pub u8);

impl From<[u8; 3]> for Rgb {
    fn from([r, g, b]: [u8; 3]) -> Self {
        Rgb(r, g, b)
    }
}

impl From<Rgb> for [u8; 3] {
    fn from(c: Rgb) -> Self {
        [c.0, c.1, c.2]
    }
}

pub const DEEP_BLUE: Rgb = Rgb(0, 40, 170);
pub const BLUE: Rgb = Rgb(40, 140, 255);
pub const GREEN: Rgb = Rgb(0, 200, 80);
pub const ORANGE: Rgb = Rgb(255, 150, 0);
pub const RED: Rgb = Rgb(230, 20, 20);
pub const GRAY: Rgb = Rgb(128, 128, 128);
pub const PURPLE: Rgb = Rgb(150, 50, 220);

/// One color per outcome class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(OutcomeClass, Rgb)>", into = "Vec<(OutcomeClass, Rgb)>")]
pub struct ColorScale {
    stops: BTreeMap<OutcomeClass, Rgb>,
}

impl Default for ColorScale {
    fn default() -> Self {
        use OutcomeClass::*;
        Self::new(vec![
            (VeryEarly, DEEP_BLUE),
            (Early, BLUE),
            (OnTime, GREEN),
            (Late, ORANGE),
            (VeryLate, RED),
            (TooSoft, BLUE),
            (Ok, GREEN),
            (TooHard, RED),
            (Missed, GRAY),
            (Extra, PURPLE),
        ])
        .expect("default scale is complete")
    }
}

impl TryFrom<Vec<(OutcomeClass, Rgb)>> for ColorScale {
    type Error = String;

    fn try_from(stops: Vec<(OutcomeClass, Rgb)>) -> Result<Self, String> {
        Self::new(stops)
    }
}

impl From<ColorScale> for Vec<(OutcomeClass, Rgb)> {
    fn from(s: ColorScale) -> Self {
        s.stops.into_iter().collect()
    }
}

impl ColorScale {
    /// Requires exactly one stop per class.
    pub fn new(stops: Vec<(OutcomeClass, Rgb)>) -> Result<Self, String> {
        let mut map = BTreeMap::new();
        for (class, color) in stops {
            if map.insert(class, color).is_some() {
                return Err(format!("duplicate stop for {class:?}"));
            }
        }
        if let Some(missing) = OutcomeClass::ALL.iter().find(|c| !map.contains_key(c)) {
            return Err(format!("no stop for {missing:?}"));
        }
        Ok(Self { stops: map })
    }

    pub fn color(&self, class: OutcomeClass) -> Rgb {
        self.stops[&class]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Hold {
    UntilNext,
    Flash { duration_ms: f64 },
}

impl Hold {
    pub fn flash() -> Self {
        Hold::Flash { duration_ms: DEFAULT_FLASH_MS }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PieSegment {
    pub class: OutcomeClass,
    pub fraction: f64,
    pub color: Rgb,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PadVisualState {
    Fill { color: Rgb, hold: Hold },
    Tachometer { angle_deg: f64, color: Rgb },
    Pie { segments: Vec<PieSegment> },
}

/// Outcome of one expected note or stray hit, as the pad encoders see it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Judgement {
    Matched {
        class: DeviationClass,
        timing_dev_ms: f64,
        velocity_dev: i32,
    },
    Missed,
    Extra,
}

impl Judgement {
    pub fn from_result(result: &MatchResult, config: &ClassifierConfig) -> Self {
        match *result {
            MatchResult::Matched {
                timing_dev_ms,
                velocity_dev,
                ..
            } => Judgement::Matched {
                class: DeviationClass {
                    timing: classify_timing(timing_dev_ms, config),
                    dynamics: classify_dynamics(velocity_dev),
                },
                timing_dev_ms,
                velocity_dev,
            },
            MatchResult::Missed { .. } => Judgement::Missed,
            MatchResult::Extra { .. } => Judgement::Extra,
        }
    }

    /// The class the given mode displays.
    pub fn outcome(&self, mode: FeedbackMode) -> OutcomeClass {
        match (self, mode) {
            (Judgement::Matched { class, .. }, FeedbackMode::Timing) => class.timing.into(),
            (Judgement::Matched { class, .. }, FeedbackMode::Velocity) => class.dynamics.into(),
            (Judgement::Missed, _) => OutcomeClass::Missed,
            (Judgement::Extra, _) => OutcomeClass::Extra,
        }
    }
}

pub fn fill_state(judgement: &Judgement, mode: FeedbackMode, scale: &ColorScale, hold: Hold) -> PadVisualState {
    PadVisualState::Fill {
        color: scale.color(judgement.outcome(mode)),
        hold,
    }
}

/// Needle angle in degrees: 0 is straight up, negative (early or soft)
/// leans left, saturating at ±90.
pub fn needle_angle<T: Real>(deviation: T, max_dev: T) -> T {
    debug_assert!(max_dev > T::zero());
    let one = T::one();
    let ratio = (deviation / max_dev).max(-one).min(one);
    T::lit(90.0) * ratio
}

/// Tachometer for one judgement. Missed and extra notes park the needle
/// upright in their designated colors.
pub fn tachometer_state(
    judgement: &Judgement,
    mode: FeedbackMode,
    config: &ClassifierConfig,
    scale: &ColorScale,
) -> PadVisualState {
    let angle_deg = match (judgement, mode) {
        (Judgement::Matched { timing_dev_ms, .. }, FeedbackMode::Timing) => {
            needle_angle(*timing_dev_ms, config.window_ms)
        }
        (Judgement::Matched { velocity_dev, .. }, FeedbackMode::Velocity) => {
            needle_angle(f64::from(*velocity_dev), DEFAULT_VELOCITY_MAX_DEV)
        }
        _ => 0.0,
    };
    PadVisualState::Tachometer {
        angle_deg,
        color: scale.color(judgement.outcome(mode)),
    }
}

/// Fractions in fixed class order; zero counts omitted; empty when the
/// total is zero.
pub fn pie_summary(class_counts: &BTreeMap<OutcomeClass, u32>, scale: &ColorScale) -> PadVisualState {
    let total: u64 = class_counts.values().map(|&n| u64::from(n)).sum();
    let segments = if total == 0 {
        Vec::new()
    } else {
        OutcomeClass::ALL
            .iter()
            .filter_map(|c| {
                let n = *class_counts.get(c)?;
                (n > 0).then(|| PieSegment {
                    class: *c,
                    fraction: f64::from(n) / total as f64,
                    color: scale.color(*c),
                })
            })
            .collect()
    };
    PadVisualState::Pie { segments }
}
