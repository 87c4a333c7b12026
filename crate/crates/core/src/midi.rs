//! Standard MIDI File parsing and live MIDI normalization.
//!
//! Everything downstream of this module works in real-valued milliseconds
//! from stream start; ticks never leave this file.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tempo assumed until the first set-tempo meta event (120 bpm).
pub const DEFAULT_US_PER_QUARTER: u32 = 500_000;

const MAX_VARINT_BYTES: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MidiError {
    #[error("variable-length quantity at byte {offset} not terminated within 4 bytes")]
    UnterminatedVarint { offset: usize },
    #[error("input ended at byte {offset} in the middle of a value")]
    TruncatedInput { offset: usize },
    #[error("bad header: {0}")]
    BadHeader(&'static str),
    #[error("unsupported SMF: {0}")]
    UnsupportedFormat(&'static str),
    #[error("chunk truncated at byte {offset}")]
    TruncatedChunk { offset: usize },
    #[error("data byte {byte:#04x} at offset {offset} with no running status")]
    DanglingRunningStatus { offset: usize, byte: u8 },
    #[error("invalid event byte {byte:#04x} at offset {offset}")]
    InvalidEvent { offset: usize, byte: u8 },
    #[error("malformed live message {status:#04x} {data1:#04x} {data2:#04x}")]
    MalformedMessage { status: u8, data1: u8, data2: u8 },
}

/// A complete 3-byte channel message as delivered by a live MIDI port.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawMidiMessage {
    pub status: u8,
    pub data1: u8,
    pub data2: u8,
    /// Arrival time supplied by the caller, ms since stream start.
    pub timestamp_ms: f64,
}

/// One struck note.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HitEvent {
    pub time_ms: f64,
    pub key: u8,
    pub velocity: u8,
    pub channel: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TempoSegment {
    pub tick_start: u64,
    pub us_per_quarter: u32,
}

/// Piecewise-constant tempo over ticks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TempoMap {
    ticks_per_quarter: u16,
    segments: Vec<TempoSegment>,
}

impl TempoMap {
    /// Constant tempo of [`DEFAULT_US_PER_QUARTER`].
    pub fn new(ticks_per_quarter: u16) -> Self {
        assert!(ticks_per_quarter > 0, "ticks per quarter must be positive");
        Self {
            ticks_per_quarter,
            segments: vec![TempoSegment {
                tick_start: 0,
                us_per_quarter: DEFAULT_US_PER_QUARTER,
            }],
        }
    }

    /// Builds a map from tempo changes in any order. Later entries win on
    /// equal ticks; a zero tempo is ignored.
    pub fn from_changes(ticks_per_quarter: u16, changes: &[(u64, u32)]) -> Self {
        let mut map = Self::new(ticks_per_quarter);
        let mut sorted: Vec<(u64, u32)> = changes.iter().copied().filter(|c| c.1 > 0).collect();
        sorted.sort_by_key(|c| c.0);
        for (tick, us) in sorted {
            let last = map.segments.last_mut().expect("non-empty");
            if last.tick_start == tick {
                last.us_per_quarter = us;
            } else {
                map.segments.push(TempoSegment {
                    tick_start: tick,
                    us_per_quarter: us,
                });
            }
        }
        map
    }

    pub fn ticks_per_quarter(&self) -> u16 {
        self.ticks_per_quarter
    }

    pub fn segments(&self) -> &[TempoSegment] {
        &self.segments
    }

    /// Milliseconds elapsed at `tick`, accumulated segment by segment.
    pub fn ticks_to_ms(&self, tick: u64) -> f64 {
        let tpq = f64::from(self.ticks_per_quarter);
        let mut ms = 0.0;
        for (i, seg) in self.segments.iter().enumerate() {
            if tick <= seg.tick_start {
                break;
            }
            let end = self
                .segments
                .get(i + 1)
                .map_or(tick, |next| next.tick_start.min(tick));
            let span = (end - seg.tick_start) as f64;
            ms += span * f64::from(seg.us_per_quarter) / (tpq * 1000.0);
        }
        ms
    }
}

/// Free-function form of [`TempoMap::ticks_to_ms`].
pub fn ticks_to_ms(tick: u64, tempo: &TempoMap) -> f64 {
    tempo.ticks_to_ms(tick)
}

/// Decodes a variable-length quantity starting at `offset`.
///
/// Returns the value and the number of bytes consumed (1 to 4).
pub fn decode_varint(bytes: &[u8], offset: usize) -> Result<(u32, usize), MidiError> {
    let mut value: u32 = 0;
    for i in 0..MAX_VARINT_BYTES {
        let Some(&b) = bytes.get(offset + i) else {
            return Err(MidiError::TruncatedInput { offset: offset + i });
        };
        value = (value << 7) | u32::from(b & 0x7F);
        if b & 0x80 == 0 {
            return Ok((value, i + 1));
        }
    }
    Err(MidiError::UnterminatedVarint { offset })
}

/// Encodes `value` (< 2^28) as a variable-length quantity.
pub fn encode_varint(value: u32) -> Vec<u8> {
    assert!(value < 1 << 28, "varint out of range: {value}");
    let mut out = vec![(value & 0x7F) as u8];
    let mut rest = value >> 7;
    while rest > 0 {
        out.push(((rest & 0x7F) as u8) | 0x80);
        rest >>= 7;
    }
    out.reverse();
    out
}

/// Result of parsing a Standard MIDI File.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedSmf {
    pub events: Vec<HitEvent>,
    pub tempo: TempoMap,
}

struct RawNote {
    tick: u64,
    track: usize,
    seq: usize,
    key: u8,
    velocity: u8,
    channel: u8,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn u8(&mut self) -> Result<u8, MidiError> {
        let b = *self
            .bytes
            .get(self.pos)
            .ok_or(MidiError::TruncatedChunk { offset: self.pos })?;
        self.pos += 1;
        Ok(b)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], MidiError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(MidiError::TruncatedChunk { offset: self.pos })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn varint(&mut self) -> Result<u32, MidiError> {
        match decode_varint(self.bytes, self.pos) {
            Ok((v, n)) => {
                self.pos += n;
                Ok(v)
            }
            Err(MidiError::TruncatedInput { offset }) => Err(MidiError::TruncatedChunk { offset }),
            Err(e) => Err(e),
        }
    }

    fn at_end(&self) -> bool {
        self.pos >= self.bytes.len()
    }
}

fn be_u32(b: &[u8]) -> u32 {
    u32::from_be_bytes([b[0], b[1], b[2], b[3]])
}

fn be_u16(b: &[u8]) -> u16 {
    u16::from_be_bytes([b[0], b[1]])
}

/// Parses a format 0 or 1 SMF with tick-based division.
///
/// Every note-on with non-zero velocity becomes a [`HitEvent`]. Tracks are
/// merged by absolute tick; equal ticks keep file order (track, then event).
pub fn parse_smf(bytes: &[u8]) -> Result<ParsedSmf, MidiError> {
    if bytes.len() < 14 || &bytes[0..4] != b"MThd" {
        return Err(MidiError::BadHeader("missing MThd chunk"));
    }
    let header_len = be_u32(&bytes[4..8]) as usize;
    if header_len < 6 {
        return Err(MidiError::BadHeader("MThd length below 6"));
    }
    let body_start = 8usize;
    let body_end = body_start
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or(MidiError::TruncatedChunk { offset: body_start })?;
    let format = be_u16(&bytes[8..10]);
    let declared_tracks = be_u16(&bytes[10..12]) as usize;
    let division = be_u16(&bytes[12..14]);
    match format {
        0 | 1 => {}
        2 => return Err(MidiError::UnsupportedFormat("format 2")),
        _ => return Err(MidiError::BadHeader("unknown format")),
    }
    if division & 0x8000 != 0 {
        return Err(MidiError::UnsupportedFormat("SMPTE division"));
    }
    if division == 0 {
        return Err(MidiError::BadHeader("zero ticks per quarter"));
    }

    let mut reader = Reader {
        bytes,
        pos: body_end,
    };
    let mut notes = Vec::new();
    let mut tempo_changes = Vec::new();
    let mut track = 0usize;
    while track < declared_tracks && !reader.at_end() {
        let chunk_start = reader.pos;
        let head = reader.take(8)?;
        let len = be_u32(&head[4..8]) as usize;
        let body = reader
            .take(len)
            .map_err(|_| MidiError::TruncatedChunk {
                offset: chunk_start,
            })?;
        if &head[0..4] != b"MTrk" {
            // alien chunk
            continue;
        }
        parse_track(
            body,
            chunk_start + 8,
            track,
            &mut notes,
            &mut tempo_changes,
        )?;
        track += 1;
    }

    let tempo = TempoMap::from_changes(division, &tempo_changes);
    notes.sort_by_key(|n| (n.tick, n.track, n.seq));
    let events = notes
        .into_iter()
        .map(|n| HitEvent {
            time_ms: tempo.ticks_to_ms(n.tick),
            key: n.key,
            velocity: n.velocity,
            channel: n.channel,
        })
        .collect();
    Ok(ParsedSmf { events, tempo })
}

fn parse_track(
    body: &[u8],
    base: usize,
    track: usize,
    notes: &mut Vec<RawNote>,
    tempo_changes: &mut Vec<(u64, u32)>,
) -> Result<(), MidiError> {
    let rebase = |e: MidiError| match e {
        MidiError::TruncatedChunk { offset } => MidiError::TruncatedChunk {
            offset: offset + base,
        },
        MidiError::UnterminatedVarint { offset } => MidiError::UnterminatedVarint {
            offset: offset + base,
        },
        other => other,
    };
    let mut r = Reader { bytes: body, pos: 0 };
    let mut tick: u64 = 0;
    let mut running: Option<u8> = None;
    let mut seq = 0usize;
    while !r.at_end() {
        let delta = r.varint().map_err(rebase)?;
        tick += u64::from(delta);
        let at = r.pos;
        let first = r.u8().map_err(rebase)?;
        let (status, data1) = if first & 0x80 != 0 {
            (first, None)
        } else {
            let status = running.ok_or(MidiError::DanglingRunningStatus {
                offset: base + at,
                byte: first,
            })?;
            (status, Some(first))
        };
        match status {
            0xFF => {
                running = None;
                let kind = r.u8().map_err(rebase)?;
                let len = r.varint().map_err(rebase)? as usize;
                let data = r.take(len).map_err(rebase)?;
                match kind {
                    0x51 if len == 3 => {
                        let us = u32::from_be_bytes([0, data[0], data[1], data[2]]);
                        tempo_changes.push((tick, us));
                    }
                    0x2F => break,
                    _ => {}
                }
            }
            0xF0 | 0xF7 => {
                running = None;
                let len = r.varint().map_err(rebase)? as usize;
                r.take(len).map_err(rebase)?;
            }
            0x80..=0xEF => {
                running = Some(status);
                let d1 = match data1 {
                    Some(d) => d,
                    None => r.u8().map_err(rebase)?,
                };
                let d2 = if matches!(status & 0xF0, 0xC0 | 0xD0) {
                    0
                } else {
                    r.u8().map_err(rebase)?
                };
                if d1 & 0x80 != 0 || d2 & 0x80 != 0 {
                    return Err(MidiError::InvalidEvent {
                        offset: base + at,
                        byte: if d1 & 0x80 != 0 { d1 } else { d2 },
                    });
                }
                if status & 0xF0 == 0x90 && d2 > 0 {
                    notes.push(RawNote {
                        tick,
                        track,
                        seq,
                        key: d1,
                        velocity: d2,
                        channel: status & 0x0F,
                    });
                    seq += 1;
                }
            }
            other => {
                return Err(MidiError::InvalidEvent {
                    offset: base + at,
                    byte: other,
                })
            }
        }
    }
    Ok(())
}

/// Converts a live channel message into a hit, if it is a sounding note-on.
pub fn normalize_live(message: &RawMidiMessage) -> Result<Option<HitEvent>, MidiError> {
    let RawMidiMessage {
        status,
        data1,
        data2,
        timestamp_ms,
    } = *message;
    if status & 0x80 == 0 || data1 & 0x80 != 0 || data2 & 0x80 != 0 {
        return Err(MidiError::MalformedMessage {
            status,
            data1,
            data2,
        });
    }
    if status & 0xF0 != 0x90 || data2 == 0 {
        return Ok(None);
    }
    Ok(Some(HitEvent {
        time_ms: timestamp_ms,
        key: data1,
        velocity: data2,
        channel: status & 0x0F,
    }))
}

/// The eight pads of the practice kit.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum PadId {
    Kick,
    Snare,
    Hihat,
    Tom1,
    Tom2,
    Tom3,
    Crash,
    Ride,
}

impl PadId {
    pub const ALL: [PadId; 8] = [
        PadId::Kick,
        PadId::Snare,
        PadId::Hihat,
        PadId::Tom1,
        PadId::Tom2,
        PadId::Tom3,
        PadId::Crash,
        PadId::Ride,
    ];

    /// The key this pad's hits are written with when synthesizing MIDI.
    pub fn canonical_key(self) -> u8 {
        match self {
            PadId::Kick => 36,
            PadId::Snare => 38,
            PadId::Hihat => 42,
            PadId::Tom1 => 48,
            PadId::Tom2 => 45,
            PadId::Tom3 => 43,
            PadId::Crash => 49,
            PadId::Ride => 51,
        }
    }
}

/// General MIDI percussion keys restricted to the eight pads.
pub fn map_key_to_pad(key: u8) -> Option<PadId> {
    Some(match key {
        35 | 36 => PadId::Kick,
        38 | 40 => PadId::Snare,
        42 | 44 | 46 => PadId::Hihat,
        48 | 50 => PadId::Tom1,
        45 | 47 => PadId::Tom2,
        41 | 43 => PadId::Tom3,
        49 | 57 => PadId::Crash,
        51 | 59 => PadId::Ride,
        _ => return None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn varint_examples() {
        assert_eq!(decode_varint(&[0x00], 0), Ok((0, 1)));
        assert_eq!(decode_varint(&[0x81, 0x48], 0), Ok(((1 << 7) + 0x48, 2)));
        assert_eq!(decode_varint(&[0xFF, 0xFF, 0xFF, 0x7F], 0), Ok((268_435_455, 4)));
    }

    #[test]
    fn varint_errors() {
        assert_eq!(
            decode_varint(&[0x80, 0x80, 0x80, 0x80, 0x00], 0),
            Err(MidiError::UnterminatedVarint { offset: 0 })
        );
        assert_eq!(
            decode_varint(&[0x81], 0),
            Err(MidiError::TruncatedInput { offset: 1 })
        );
        assert_eq!(
            decode_varint(&[], 0),
            Err(MidiError::TruncatedInput { offset: 0 })
        );
    }

    #[test]
    fn encode_known_values() {
        assert_eq!(encode_varint(0), vec![0]);
        assert_eq!(encode_varint(200), vec![0x81, 0x48]);
        assert_eq!(encode_varint(0x0FFF_FFFF), vec![0xFF, 0xFF, 0xFF, 0x7F]);
    }

    #[test]
    fn tick_conversion() {
        let constant = TempoMap::from_changes(480, &[(0, 500_000)]);
        assert_eq!(constant.ticks_to_ms(0), 0.0);
        assert_eq!(constant.ticks_to_ms(960), 1000.0);
        let changed = TempoMap::from_changes(480, &[(0, 500_000), (480, 250_000)]);
        assert_eq!(changed.ticks_to_ms(720), 500.0 + 240.0 * (250_000.0 / 480.0) / 1000.0);
        assert_eq!(changed.ticks_to_ms(480), 500.0);
    }

    #[test]
    fn tempo_map_defaults_and_dedups() {
        let m = TempoMap::from_changes(96, &[(100, 400_000), (100, 300_000)]);
        assert_eq!(
            m.segments(),
            &[
                TempoSegment { tick_start: 0, us_per_quarter: 500_000 },
                TempoSegment { tick_start: 100, us_per_quarter: 300_000 },
            ]
        );
        let at_zero = TempoMap::from_changes(96, &[(0, 600_000)]);
        assert_eq!(at_zero.segments().len(), 1);
        assert_eq!(at_zero.segments()[0].us_per_quarter, 600_000);
    }

    #[test]
    fn live_normalization() {
        let m = |s, d1, d2, t| RawMidiMessage { status: s, data1: d1, data2: d2, timestamp_ms: t };
        assert_eq!(
            normalize_live(&m(0x99, 38, 100, 12.5)),
            Ok(Some(HitEvent { time_ms: 12.5, key: 38, velocity: 100, channel: 9 }))
        );
        assert_eq!(normalize_live(&m(0x99, 38, 0, 40.0)), Ok(None));
        assert_eq!(normalize_live(&m(0x89, 38, 64, 40.0)), Ok(None));
        assert!(matches!(
            normalize_live(&m(0x99, 200, 10, 0.0)),
            Err(MidiError::MalformedMessage { .. })
        ));
        assert!(normalize_live(&m(0x19, 20, 10, 0.0)).is_err());
    }

    #[test]
    fn pad_table() {
        assert_eq!(map_key_to_pad(38), Some(PadId::Snare));
        assert_eq!(map_key_to_pad(36), Some(PadId::Kick));
        assert_eq!(map_key_to_pad(61), None);
        for k in [42, 44, 46] {
            assert_eq!(map_key_to_pad(k), Some(PadId::Hihat));
        }
        for pad in PadId::ALL {
            assert_eq!(map_key_to_pad(pad.canonical_key()), Some(pad));
        }
    }

    fn chunk(tag: &[u8; 4], body: &[u8]) -> Vec<u8> {
        let mut v = tag.to_vec();
        v.extend_from_slice(&(body.len() as u32).to_be_bytes());
        v.extend_from_slice(body);
        v
    }

    fn header(format: u16, tracks: u16, division: u16) -> Vec<u8> {
        let mut body = Vec::new();
        body.extend_from_slice(&format.to_be_bytes());
        body.extend_from_slice(&tracks.to_be_bytes());
        body.extend_from_slice(&division.to_be_bytes());
        chunk(b"MThd", &body)
    }

    #[test]
    fn empty_track_file() {
        let mut f = header(0, 1, 480);
        f.extend(chunk(b"MTrk", &[0x00, 0xFF, 0x2F, 0x00]));
        let parsed = parse_smf(&f).unwrap();
        assert!(parsed.events.is_empty());
        assert_eq!(parsed.tempo, TempoMap::new(480));
        let zero = header(0, 0, 480);
        assert!(parse_smf(&zero).unwrap().events.is_empty());
    }

    #[test]
    fn single_note_and_tempo_change() {
        let mut track = vec![0x00, 0xFF, 0x51, 0x03, 0x07, 0xA1, 0x20];
        track.extend(encode_varint(480));
        track.extend([0x99, 38, 100]);
        let mut f = header(0, 1, 480);
        f.extend(chunk(b"MTrk", &track));
        let parsed = parse_smf(&f).unwrap();
        assert_eq!(
            parsed.events,
            vec![HitEvent { time_ms: 500.0, key: 38, velocity: 100, channel: 9 }]
        );

        // tempo drops to 250000 at tick 480; second note at 960 via running status
        track.extend([0x00, 0xFF, 0x51, 0x03, 0x03, 0xD0, 0x90]);
        track.extend(encode_varint(480));
        track.extend([0x99, 38, 90]);
        track.extend([0x00, 38, 0x00]);
        track.extend([0x00, 0xFF, 0x2F, 0x00]);
        let mut f = header(0, 1, 480);
        f.extend(chunk(b"MTrk", &track));
        let parsed = parse_smf(&f).unwrap();
        let times: Vec<f64> = parsed.events.iter().map(|e| e.time_ms).collect();
        assert_eq!(times, vec![500.0, 750.0]);
    }

    #[test]
    fn header_errors() {
        assert!(matches!(parse_smf(b"RIFF0000000000"), Err(MidiError::BadHeader(_))));
        assert!(matches!(
            parse_smf(&header(2, 1, 480)),
            Err(MidiError::UnsupportedFormat(_))
        ));
        assert!(matches!(
            parse_smf(&header(1, 1, 0xE728)),
            Err(MidiError::UnsupportedFormat(_))
        ));
    }

    #[test]
    fn dangling_running_status() {
        let mut f = header(0, 1, 480);
        f.extend(chunk(b"MTrk", &[0x00, 38, 100]));
        assert!(matches!(parse_smf(&f), Err(MidiError::DanglingRunningStatus { .. })));
        // meta events cancel running status
        let mut f = header(0, 1, 480);
        f.extend(chunk(
            b"MTrk",
            &[0x00, 0x99, 38, 100, 0x00, 0xFF, 0x01, 0x00, 0x00, 38, 100],
        ));
        assert!(matches!(parse_smf(&f), Err(MidiError::DanglingRunningStatus { .. })));
    }

    #[test]
    fn truncated_chunk() {
        let mut f = header(0, 1, 480);
        let mut c = chunk(b"MTrk", &[0x00, 0x99, 38, 100]);
        c.truncate(c.len() - 1);
        f.extend(c);
        assert!(matches!(parse_smf(&f), Err(MidiError::TruncatedChunk { .. })));
        // event running past the declared chunk end
        let mut f = header(0, 1, 480);
        f.extend(chunk(b"MTrk", &[0x00, 0x99, 38]));
        f.extend([100, 0, 0, 0]);
        assert!(matches!(parse_smf(&f), Err(MidiError::TruncatedChunk { .. })));
    }

    #[test]
    fn sysex_and_unknown_chunks_are_skipped() {
        let mut f = header(0, 1, 480);
        f.extend(chunk(b"XFIH", &[1, 2, 3]));
        f.extend(chunk(
            b"MTrk",
            &[0x00, 0xF0, 0x03, 0x7E, 0x7F, 0xF7, 0x0A, 0x99, 36, 80, 0x00, 0xC9, 0x05],
        ));
        let parsed = parse_smf(&f).unwrap();
        assert_eq!(parsed.events.len(), 1);
        assert_eq!(parsed.events[0].key, 36);
    }
}
