//! Fretboard geometry, note mapping and per-cell statistics.
//!
//! String numbering follows chord-chart convention: string 1 is the high E
//! (thinnest) string and string 6 the low E. Local fretboard coordinates put
//! `x` along the neck from the nut and `y` across the strings, increasing
//! toward string 6.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alignment::{TakeReport, TimingClass};
use crate::exercise::{Cell, ExpectedTimeline, Instrument, TargetSpec};
use crate::midi::HitEvent;
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GuitarError {
    #[error("fret {fret} outside 0..={fret_count}")]
    FretOutOfRange { fret: u8, fret_count: u8 },
    #[error("string {0} outside 1..=6")]
    StringOutOfRange(u8),
    #[error("report contains a drum pad target")]
    InstrumentMismatch,
    #[error("invalid fretboard: {0}")]
    InvalidSpec(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FretboardSpec<T> {
    pub scale_length_mm: T,
    pub fret_count: u8,
    /// MIDI notes of the open strings, string 6 first.
    pub tuning: [u8; 6],
    pub string_spacing_mm: T,
}

impl<T: Real> Default for FretboardSpec<T> {
    fn default() -> Self {
        Self {
            scale_length_mm: T::lit(650.0),
            fret_count: 22,
            tuning: [40, 45, 50, 55, 59, 64],
            string_spacing_mm: T::lit(7.3),
        }
    }
}

impl<T: Real> FretboardSpec<T> {
    pub fn validate(&self) -> Result<(), GuitarError> {
        if !(12..=27).contains(&self.fret_count) {
            return Err(GuitarError::InvalidSpec("fret_count must lie in 12..=27"));
        }
        if !(self.scale_length_mm > T::zero()) || !(self.string_spacing_mm > T::zero()) {
            return Err(GuitarError::InvalidSpec("lengths must be positive"));
        }
        Ok(())
    }

    fn check(&self, cell: Cell) -> Result<(), GuitarError> {
        if !(1..=6).contains(&cell.string) {
            return Err(GuitarError::StringOutOfRange(cell.string));
        }
        if cell.fret > self.fret_count {
            return Err(GuitarError::FretOutOfRange {
                fret: cell.fret,
                fret_count: self.fret_count,
            });
        }
        Ok(())
    }

    /// Distance between the outer strings.
    pub fn board_width_mm(&self) -> T {
        self.string_spacing_mm * T::lit(5.0)
    }

    /// Distance from the nut to the last fret.
    pub fn board_length_mm(&self) -> T {
        fret_position(self.fret_count, self.scale_length_mm)
    }

    /// Open-string note of `string` (1..=6).
    pub fn open_note(&self, string: u8) -> u8 {
        self.tuning[6 - usize::from(string)]
    }
}

fn fret_position<T: Real>(fret: u8, scale_length: T) -> T {
    let exponent = -T::lit(f64::from(fret)) / T::lit(12.0);
    scale_length * (T::one() - T::lit(2.0).powf(exponent))
}

/// Equal-temperament distance of `fret` from the nut.
pub fn fret_distance<T: Real>(fret: u8, spec: &FretboardSpec<T>) -> Result<T, GuitarError> {
    if fret > spec.fret_count {
        return Err(GuitarError::FretOutOfRange {
            fret,
            fret_count: spec.fret_count,
        });
    }
    Ok(fret_position(fret, spec.scale_length_mm))
}

/// Center of a cell in local fretboard coordinates. Open strings sit on the
/// nut (`x = 0`); fretted cells sit midway between the bounding frets.
pub fn cell_center<T: Real>(cell: Cell, spec: &FretboardSpec<T>) -> Result<(T, T), GuitarError> {
    spec.check(cell)?;
    let x = if cell.fret == 0 {
        T::zero()
    } else {
        let lo = fret_position(cell.fret - 1, spec.scale_length_mm);
        let hi = fret_position(cell.fret, spec.scale_length_mm);
        (lo + hi) / T::lit(2.0)
    };
    let y = (T::lit(f64::from(cell.string)) - T::lit(3.5)) * spec.string_spacing_mm;
    Ok((x, y))
}

/// Sounding MIDI note of a cell.
pub fn note_at<T: Real>(cell: Cell, spec: &FretboardSpec<T>) -> Result<u8, GuitarError> {
    spec.check(cell)?;
    Ok(spec.open_note(cell.string) + cell.fret)
}

/// Maps a note from a MIDI guitar controller in per-string channel mode
/// (channel 0 = string 1 ... channel 5 = string 6) to its cell.
pub fn cell_for_midi<T: Real>(hit: &HitEvent, spec: &FretboardSpec<T>) -> Option<Cell> {
    if hit.channel > 5 {
        return None;
    }
    let string = hit.channel + 1;
    let fret = hit.key.checked_sub(spec.open_note(string))?;
    let cell = Cell::new(string, fret);
    spec.check(cell).ok().map(|_| cell)
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FretCellStats {
    pub cell: Cell,
    pub played: u32,
    pub missed: u32,
    pub extra: u32,
    #[serde(default)]
    pub timing_bins: BTreeMap<TimingClass, u32>,
}

impl FretCellStats {
    pub fn total(&self) -> u32 {
        self.played + self.missed + self.extra
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TakeStats {
    pub take_id: String,
    #[serde(with = "cells_as_list")]
    pub cells: BTreeMap<Cell, FretCellStats>,
}

mod cells_as_list {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(cells: &BTreeMap<Cell, FretCellStats>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(cells.values())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<Cell, FretCellStats>, D::Error> {
        let list = Vec::<FretCellStats>::deserialize(d)?;
        Ok(list.into_iter().map(|c| (c.cell, c)).collect())
    }
}

/// Per-cell tallies of a guitar take.
pub fn accumulate(
    take_id: &str,
    report: &TakeReport,
    timeline: &ExpectedTimeline,
) -> Result<TakeStats, GuitarError> {
    if timeline.instrument() == Some(Instrument::Drums) {
        return Err(GuitarError::InstrumentMismatch);
    }
    let mut cells = BTreeMap::new();
    for entry in &report.per_target_stats {
        let TargetSpec::FretCell { string, fret } = entry.target else {
            return Err(GuitarError::InstrumentMismatch);
        };
        let cell = Cell::new(string, fret);
        cells.insert(
            cell,
            FretCellStats {
                cell,
                played: entry.stats.played,
                missed: entry.stats.missed,
                extra: entry.stats.extra,
                timing_bins: entry.stats.timing_bins.clone(),
            },
        );
    }
    Ok(TakeStats {
        take_id: take_id.to_owned(),
        cells,
    })
}
