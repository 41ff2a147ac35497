//! `NEV1` binary container and CSV interchange.
//!
//! Layout (all integers little endian):
//!
//! ```text
//! "NEV1" | width u16 | height u16 | count u64 | count × { t u64 | x u16 | y u16 | p u8 | reserved [u8; 4] }
//! ```
//!
//! Reserved bytes are written as zero and must be zero on read, which keeps
//! records at a fixed 17 bytes.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{Event, EventError, EventStream, Polarity};

pub const MAGIC: &[u8; 4] = b"NEV1";
pub const HEADER_LEN: usize = 16;
pub const RECORD_LEN: usize = 17;

pub fn encode_event_stream(stream: &EventStream) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + RECORD_LEN * stream.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&stream.width().to_le_bytes());
    out.extend_from_slice(&stream.height().to_le_bytes());
    out.extend_from_slice(&(stream.len() as u64).to_le_bytes());
    for e in stream.events() {
        out.extend_from_slice(&e.t.to_le_bytes());
        out.extend_from_slice(&e.x.to_le_bytes());
        out.extend_from_slice(&e.y.to_le_bytes());
        out.push(e.p as u8);
        out.extend_from_slice(&[0; 4]);
    }
    out
}

pub fn decode_event_stream(raw: &[u8]) -> Result<EventStream, EventError> {
    if raw.len() < 4 || &raw[..4] != MAGIC {
        return Err(EventError::BadMagic);
    }
    if raw.len() < HEADER_LEN {
        return Err(EventError::Truncated {
            expected: HEADER_LEN,
            found: raw.len(),
        });
    }
    let width = u16::from_le_bytes([raw[4], raw[5]]);
    let height = u16::from_le_bytes([raw[6], raw[7]]);
    let count = u64::from_le_bytes(raw[8..16].try_into().unwrap());

    let body = &raw[HEADER_LEN..];
    let expected = (count as u128) * RECORD_LEN as u128;
    if (body.len() as u128) < expected {
        return Err(EventError::Truncated {
            expected: HEADER_LEN.saturating_add(expected.min(usize::MAX as u128) as usize),
            found: raw.len(),
        });
    }
    let expected = expected as usize;
    if body.len() > expected {
        return Err(EventError::TrailingData {
            declared: count,
            extra: body.len() - expected,
        });
    }

    let mut events = Vec::with_capacity(count as usize);
    let mut prev_t = 0u64;
    for (index, rec) in body.chunks_exact(RECORD_LEN).enumerate() {
        let offset = HEADER_LEN + index * RECORD_LEN;
        let t = u64::from_le_bytes(rec[0..8].try_into().unwrap());
        let x = u16::from_le_bytes([rec[8], rec[9]]);
        let y = u16::from_le_bytes([rec[10], rec[11]]);
        if rec[13..17] != [0; 4] {
            return Err(EventError::CorruptRecord {
                offset,
                reason: "non-zero reserved bytes".into(),
            });
        }
        let p = match rec[12] {
            0 => Polarity::Off,
            1 => Polarity::On,
            other => {
                return Err(EventError::CorruptRecord {
                    offset,
                    reason: format!("polarity byte {other}"),
                })
            }
        };
        if x >= width || y >= height {
            return Err(EventError::CorruptRecord {
                offset,
                reason: format!("coordinate ({x}, {y}) outside {width}x{height}"),
            });
        }
        if index > 0 && t < prev_t {
            return Err(EventError::Ordering {
                index,
                prev: prev_t,
                next: t,
            });
        }
        prev_t = t;
        events.push(Event { t, x, y, p });
    }
    // Records were validated above.
    Ok(EventStream {
        width,
        height,
        events,
    })
}

/// CSV with header `t_us,x,y,p`. The sensor size is not part of the format
/// and must be supplied.
pub fn read_events_csv<R: Read>(
    reader: R,
    width: u16,
    height: u16,
) -> Result<EventStream, EventError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let events = rdr
        .deserialize::<Event>()
        .collect::<Result<Vec<_>, _>>()?;
    EventStream::new(width, height, events)
}

pub fn write_events_csv<W: Write>(stream: &EventStream, writer: W) -> Result<(), EventError> {
    let mut wtr = csv::Writer::from_writer(writer);
    for e in stream.events() {
        wtr.serialize(e)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Reads a `.nev` file, or a `.csv` file when `csv_dims` supplies the sensor size.
pub fn read_events_file(
    path: &Path,
    csv_dims: Option<(u16, u16)>,
) -> Result<EventStream, EventError> {
    let is_csv = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if is_csv {
        let (w, h) = csv_dims.unwrap_or((1280, 720));
        read_events_csv(fs::File::open(path)?, w, h)
    } else {
        decode_event_stream(&fs::read(path)?)
    }
}

pub fn write_events_file(path: &Path, stream: &EventStream) -> Result<(), EventError> {
    let is_csv = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if is_csv {
        write_events_csv(stream, fs::File::create(path)?)
    } else {
        fs::write(path, encode_event_stream(stream))?;
        Ok(())
    }
}
