//! The EVT1 raw-event container and its CSV mirror.
//!
//! Binary layout (little-endian):
//! - header, 16 bytes: magic "EVT1", version u16, width u16, height u16,
//!   6 reserved bytes (zero)
//! - records, 13 bytes each: x u16, y u16, t u64 (microseconds), p i8
//!
//! Coordinates follow the (x = column, y = row) convention. The CSV mirror
//! is one `x,y,t,p` line per event preceded by a `# width=W height=H`
//! comment.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::event::{EventRecord, EventStream};

use super::{read_header, read_i8, read_u16, read_u64};

const MAGIC: &[u8; 4] = b"EVT1";
const VERSION: u16 = 1;

pub fn write_evt1(stream: &EventStream, w: &mut impl Write) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&stream.width().to_le_bytes())?;
    w.write_all(&stream.height().to_le_bytes())?;
    w.write_all(&[0u8; 6])?;
    for ev in stream.events() {
        w.write_all(&ev.x.to_le_bytes())?;
        w.write_all(&ev.y.to_le_bytes())?;
        w.write_all(&ev.t.to_le_bytes())?;
        w.write_all(&ev.p.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_evt1(r: &mut impl Read) -> Result<EventStream> {
    read_header(r, MAGIC, VERSION)?;
    let width = read_u16(r)?;
    let height = read_u16(r)?;
    let mut reserved = [0u8; 6];
    r.read_exact(&mut reserved)?;
    let mut events = Vec::new();
    loop {
        let mut first = [0u8; 2];
        match r.read(&mut first)? {
            0 => break,
            2 => {}
            _ => return Err(Error::Format("truncated EVT1 record".into())),
        }
        let x = u16::from_le_bytes(first);
        let y = read_u16(r)?;
        let t = read_u64(r)?;
        let p = read_i8(r)?;
        events.push(EventRecord { x, y, t, p });
    }
    EventStream::new(width, height, events)
}

pub fn save_evt1(stream: &EventStream, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_evt1(stream, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_evt1(path: &Path) -> Result<EventStream> {
    read_evt1(&mut BufReader::new(File::open(path)?))
}

pub fn write_events_csv(stream: &EventStream, w: &mut impl Write) -> Result<()> {
    writeln!(w, "# width={} height={}", stream.width(), stream.height())?;
    for ev in stream.events() {
        writeln!(w, "{},{},{},{}", ev.x, ev.y, ev.t, ev.p)?;
    }
    Ok(())
}

pub fn read_events_csv(r: &mut impl Read) -> Result<EventStream> {
    let reader = BufReader::new(r);
    let mut dims: Option<(u16, u16)> = None;
    let mut events = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if dims.is_none() {
                dims = parse_dims(comment);
            }
            continue;
        }
        let mut parts = line.split(',');
        let mut next = |what: &str| {
            parts
                .next()
                .map(str::trim)
                .ok_or_else(|| Error::Format(format!("line {}: missing {what}", lineno + 1)))
        };
        let x = next("x")?.parse::<u16>().map_err(|e| bad_field(lineno, "x", e))?;
        let y = next("y")?.parse::<u16>().map_err(|e| bad_field(lineno, "y", e))?;
        let t = next("t")?.parse::<u64>().map_err(|e| bad_field(lineno, "t", e))?;
        let p = next("p")?.parse::<i8>().map_err(|e| bad_field(lineno, "p", e))?;
        events.push(EventRecord { x, y, t, p });
    }
    let (width, height) =
        dims.ok_or_else(|| Error::Format("missing '# width=W height=H' header comment".into()))?;
    EventStream::new(width, height, events)
}

fn parse_dims(comment: &str) -> Option<(u16, u16)> {
    let mut width = None;
    let mut height = None;
    for token in comment.split_whitespace() {
        if let Some(v) = token.strip_prefix("width=") {
            width = v.parse().ok();
        } else if let Some(v) = token.strip_prefix("height=") {
            height = v.parse().ok();
        }
    }
    Some((width?, height?))
}

fn bad_field(lineno: usize, what: &str, e: std::num::ParseIntError) -> Error {
    Error::Format(format!("line {}: bad {what}: {e}", lineno + 1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_stream() -> EventStream {
        EventStream::new(
            64,
            48,
            vec![
                EventRecord { x: 0, y: 0, t: 0, p: 1 },
                EventRecord { x: 63, y: 47, t: 5, p: -1 },
                EventRecord { x: 10, y: 20, t: 5, p: 1 },
            ],
        )
        .unwrap()
    }

    #[test]
    fn evt1_round_trip_is_bit_exact() {
        let stream = sample_stream();
        let mut bytes = Vec::new();
        write_evt1(&stream, &mut bytes).unwrap();
        assert_eq!(bytes.len(), 16 + 3 * 13);
        let back = read_evt1(&mut bytes.as_slice()).unwrap();
        assert_eq!(back, stream);

        let mut again = Vec::new();
        write_evt1(&back, &mut again).unwrap();
        assert_eq!(bytes, again);
    }

    #[test]
    fn evt1_rejects_bad_magic_and_version() {
        let mut bytes = Vec::new();
        write_evt1(&sample_stream(), &mut bytes).unwrap();
        let mut corrupt = bytes.clone();
        corrupt[0] = b'X';
        assert!(matches!(read_evt1(&mut corrupt.as_slice()), Err(Error::Format(_))));
        let mut newer = bytes.clone();
        newer[4] = 99;
        assert!(matches!(read_evt1(&mut newer.as_slice()), Err(Error::Format(_))));
        let truncated = &bytes[..bytes.len() - 5];
        assert!(read_evt1(&mut &truncated[..]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let stream = sample_stream();
        let mut text = Vec::new();
        write_events_csv(&stream, &mut text).unwrap();
        let back = read_events_csv(&mut text.as_slice()).unwrap();
        assert_eq!(back, stream);
    }

    #[test]
    fn csv_requires_dimension_header() {
        let text = b"1,2,3,1\n";
        assert!(matches!(read_events_csv(&mut &text[..]), Err(Error::Format(_))));
    }

    proptest! {
        #[test]
        fn evt1_round_trips_random_streams(
            coords in proptest::collection::vec((0u16..32, 0u16..24, 0u8..2), 0..200),
        ) {
            let events: Vec<EventRecord> = coords
                .iter()
                .enumerate()
                .map(|(i, &(x, y, p))| EventRecord {
                    x,
                    y,
                    t: i as u64 * 7,
                    p: if p == 0 { -1 } else { 1 },
                })
                .collect();
            let stream = EventStream::new(32, 24, events).unwrap();
            let mut bytes = Vec::new();
            write_evt1(&stream, &mut bytes).unwrap();
            let back = read_evt1(&mut bytes.as_slice()).unwrap();
            prop_assert_eq!(back, stream);
        }
    }
}
