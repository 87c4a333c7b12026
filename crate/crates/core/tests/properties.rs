use std::collections::BTreeMap;

use practice_core::alignment::{analyze, ClassifierConfig, Hit, OutcomeClass};
use practice_core::drum::{needle_angle, pie_summary, ColorScale, PadVisualState};
use practice_core::exercise::{expand, Beat, Cell, Exercise, ExpectedNote, Instrument, TargetSpec, DEFAULT_VELOCITY_RANGE};
use practice_core::fretboard::RigidTransform;
use practice_core::guitar::{cell_center, fret_distance, note_at};
use practice_core::live::{LiveEvent, LiveSession};
use practice_core::midi::{decode_varint, encode_varint, PadId, TempoMap};
use practice_core::{FretboardSpec, Homography};
use proptest::prelude::*;

fn drum_exercise(beats: &[(i64, i64)], pads: &[PadId], loops: u32) -> Exercise {
    Exercise {
        id: "prop".into(),
        title: "prop".into(),
        instrument: Instrument::Drums,
        tempo_bpm: 100.0,
        bar_beats: None,
        notes: beats
            .iter()
            .zip(pads.iter().cycle())
            .map(|(&(n, d), &pad)| ExpectedNote {
                beat: Beat::new(n, d),
                target: TargetSpec::pad(pad),
                velocity_range: DEFAULT_VELOCITY_RANGE,
            })
            .collect(),
        loops,
    }
}

fn sorted_beats() -> impl Strategy<Value = Vec<(i64, i64)>> {
    prop::collection::vec((0i64..64, prop::sample::select(vec![1i64, 2, 3, 4])), 1..12).prop_map(|mut v| {
        v.sort_by(|a, b| Beat::new(a.0, a.1).cmp(&Beat::new(b.0, b.1)));
        v
    })
}

proptest! {
    #[test]
    fn varint_round_trip(v in 0u32..0x1000_0000) {
        let bytes = encode_varint(v);
        prop_assert!(bytes.len() <= 4);
        prop_assert_eq!(decode_varint(&bytes, 0).unwrap(), (v, bytes.len()));
    }

    #[test]
    fn ticks_to_ms_is_monotone(
        tpq in 24u16..2000,
        changes in prop::collection::vec((0u64..10_000, 200_000u32..2_000_000), 0..5),
        a in 0u64..50_000,
        b in 0u64..50_000,
    ) {
        let mut changes = changes;
        changes.sort_by_key(|c| c.0);
        let map = TempoMap::from_changes(tpq, &changes);
        let (lo, hi) = (a.min(b), a.max(b));
        prop_assert!(map.ticks_to_ms(lo) <= map.ticks_to_ms(hi));
    }

    #[test]
    fn expand_scales_inversely_with_tempo(beats in sorted_beats(), loops in 1u32..4, k in 1u32..5) {
        let ex = drum_exercise(&beats, &[PadId::Snare], loops);
        let slow = expand(&ex, 90.0);
        let fast = expand(&ex, 90.0 * f64::from(k));
        prop_assert_eq!(slow.len(), beats.len() * loops as usize);
        for (s, f) in slow.entries.iter().zip(&fast.entries) {
            prop_assert!((s.time_ms - f.time_ms * f64::from(k)).abs() < 1e-6);
        }
        prop_assert!(slow.entries.windows(2).all(|w| w[0].time_ms <= w[1].time_ms));
    }

    #[test]
    fn alignment_is_shift_invariant(
        beats in sorted_beats(),
        offsets in prop::collection::vec(-200i32..200, 12),
        shift in -5_000i32..5_000,
    ) {
        let ex = drum_exercise(&beats, &[PadId::Kick, PadId::Snare], 1);
        let timeline = expand(&ex, 120.0);
        let mut hits: Vec<Hit> = timeline
            .entries
            .iter()
            .zip(&offsets)
            .map(|(e, &o)| Hit { time_ms: e.time_ms + f64::from(o), target: e.target, velocity: 90 })
            .collect();
        hits.sort_by(|a, b| a.time_ms.total_cmp(&b.time_ms));
        let cfg = ClassifierConfig::default();
        let base = analyze(&timeline, &hits, &cfg).unwrap();

        let mut moved = timeline.clone();
        for e in &mut moved.entries {
            e.time_ms += f64::from(shift);
        }
        let moved_hits: Vec<Hit> = hits.iter().map(|h| Hit { time_ms: h.time_ms + f64::from(shift), ..*h }).collect();
        let shifted = analyze(&moved, &moved_hits, &cfg).unwrap();
        prop_assert_eq!(&base.class_counts, &shifted.class_counts);
        let pairs = |r: &practice_core::alignment::TakeReport| {
            r.results.iter().map(|m| (m.expected_index(), m.hit_index())).collect::<Vec<_>>()
        };
        prop_assert_eq!(pairs(&base), pairs(&shifted));
    }

    #[test]
    fn needle_is_odd_monotone_and_bounded(a in -1e4f64..1e4, b in -1e4f64..1e4, max in 1.0f64..500.0) {
        prop_assert_eq!(needle_angle(-a, max), -needle_angle(a, max));
        let (lo, hi) = (a.min(b), a.max(b));
        prop_assert!(needle_angle(lo, max) <= needle_angle(hi, max));
        prop_assert!(needle_angle(a, max).abs() <= 90.0);
    }

    #[test]
    fn pie_fractions_sum_to_one(counts in prop::collection::vec(0u32..1000, OutcomeClass::ALL.len())) {
        let map: BTreeMap<OutcomeClass, u32> = OutcomeClass::ALL.iter().copied().zip(counts.iter().copied()).collect();
        let PadVisualState::Pie { segments } = pie_summary(&map, &ColorScale::default()) else {
            panic!("pie_summary returns a pie");
        };
        if counts.iter().all(|&c| c == 0) {
            prop_assert!(segments.is_empty());
        } else {
            let sum: f64 = segments.iter().map(|s| s.fraction).sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn rigid_transforms_invert(angle in -180.0f64..180.0, t in prop::array::uniform3(-500.0f64..500.0), p in prop::array::uniform3(-500.0f64..500.0)) {
        let mut r = RigidTransform::hinge_up(angle);
        r.translation = t;
        prop_assert!((r.determinant() - 1.0).abs() < 1e-12);
        let back = r.inverse().apply(r.apply(p));
        for i in 0..3 {
            prop_assert!((back[i] - p[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn octave_shift_on_every_cell(string in 1u8..=6, fret in 0u8..=10) {
        let spec = FretboardSpec::default();
        let low = note_at(Cell::new(string, fret), &spec).unwrap();
        let high = note_at(Cell::new(string, fret + 12), &spec).unwrap();
        prop_assert_eq!(high, low + 12);
        let (x, _) = cell_center(Cell::new(string, fret + 1), &spec).unwrap();
        prop_assert!(x > fret_distance(fret, &spec).unwrap());
    }

    #[test]
    fn homography_composition_applies_in_order(dx in -100.0f64..100.0, dy in -100.0f64..100.0, p in (-50.0f64..50.0, -50.0f64..50.0)) {
        let a = Homography::new([[1.2, 0.1, dx], [0.05, 0.9, dy], [1e-4, -2e-4, 1.0]]).unwrap();
        let b = Homography::translation(dy, dx);
        let ab = a.compose(&b).unwrap();
        let direct = ab.apply(p).unwrap();
        let staged = a.apply(b.apply(p).unwrap()).unwrap();
        prop_assert!((direct.0 - staged.0).abs() < 1e-9 && (direct.1 - staged.1).abs() < 1e-9);
    }
}

/// Hits near distinct expected notes only, so nearest-first and exact
/// matching cannot disagree.
#[test]
fn live_and_batch_agree_on_separated_notes() {
    let pads = [PadId::Kick, PadId::Snare, PadId::Hihat];
    let beats: Vec<(i64, i64)> = (0..24).map(|i| (i, 2)).collect();
    let ex = drum_exercise(&beats, &pads, 1);
    let timeline = expand(&ex, 60.0);
    let cfg = ClassifierConfig::default();
    let hits: Vec<Hit> = timeline
        .entries
        .iter()
        .enumerate()
        .filter(|(i, _)| i % 5 != 3)
        .map(|(i, e)| Hit {
            time_ms: e.time_ms + [(-60.0), 12.0, 95.0, -5.0][i % 4],
            target: e.target,
            velocity: [40, 90, 127][i % 3],
        })
        .collect();
    let mut live = LiveSession::new(timeline, cfg).unwrap();
    for h in &hits {
        live.step(LiveEvent::Hit(*h)).unwrap();
    }
    let (_, outcome) = live.finish().unwrap();
    assert_eq!(outcome.corrections, 0);
    assert_eq!(outcome.live_report, outcome.final_report);
    assert!(outcome.final_report.count(OutcomeClass::Missed) > 0);
}
