//! The EVF1 event-instance container: normalized event frames extracted
//! from video, with source ranges and optional labels.
//!
//! Binary layout (little-endian):
//! - header, 16 bytes: magic "EVF1", version u16, instance count u32,
//!   height u16, width u16, flags u8 (bit 0: labels present), 1 reserved
//!   byte (zero)
//! - source ranges: count x (start u32, end u32), half-open frame intervals
//! - frames: count x height x width f32, row-major
//! - labels (when flagged): count x u8

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::event::EventFrame;
use crate::video::EventInstance;

use super::{read_f32, read_header, read_u16, read_u32, read_u8};

const MAGIC: &[u8; 4] = b"EVF1";
const VERSION: u16 = 1;

pub fn write_instances(instances: &[EventInstance], w: &mut impl Write) -> Result<()> {
    if instances.is_empty() {
        return Err(Error::Data("no instances to write".into()));
    }
    let (h, wd) = instances[0].frame.shape();
    let labelled = instances.iter().all(|i| i.label.is_some());
    if !labelled && instances.iter().any(|i| i.label.is_some()) {
        return Err(Error::Data("instances are only partially labelled".into()));
    }
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(instances.len() as u32).to_le_bytes())?;
    w.write_all(&(h as u16).to_le_bytes())?;
    w.write_all(&(wd as u16).to_le_bytes())?;
    w.write_all(&[u8::from(labelled), 0])?;
    for inst in instances {
        w.write_all(&(inst.source_range.0 as u32).to_le_bytes())?;
        w.write_all(&(inst.source_range.1 as u32).to_le_bytes())?;
    }
    for inst in instances {
        if inst.frame.shape() != (h, wd) {
            return Err(Error::Dimension("instance frame shapes differ".into()));
        }
        for &v in inst.frame.values() {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    if labelled {
        for inst in instances {
            w.write_all(&[inst.label.expect("checked above")])?;
        }
    }
    Ok(())
}

pub fn read_instances(r: &mut impl Read) -> Result<Vec<EventInstance>> {
    read_header(r, MAGIC, VERSION)?;
    let count = read_u32(r)? as usize;
    let h = read_u16(r)? as usize;
    let wd = read_u16(r)? as usize;
    let flags = read_u8(r)?;
    read_u8(r)?;
    let labelled = flags & 1 != 0;

    let mut ranges = Vec::with_capacity(count);
    for _ in 0..count {
        let start = read_u32(r)? as usize;
        let end = read_u32(r)? as usize;
        ranges.push((start, end));
    }
    let mut frames = Vec::with_capacity(count);
    for _ in 0..count {
        let mut values = Array2::zeros((h, wd));
        for v in values.iter_mut() {
            *v = f64::from(read_f32(r)?);
        }
        frames.push(EventFrame::from_values(values)?);
    }
    let labels: Vec<Option<u8>> = if labelled {
        (0..count)
            .map(|_| {
                let l = read_u8(r)?;
                if l > 1 {
                    return Err(Error::Data(format!("label {l} not in {{0, 1}}")));
                }
                Ok(Some(l))
            })
            .collect::<Result<_>>()?
    } else {
        vec![None; count]
    };

    Ok(frames
        .into_iter()
        .zip(ranges)
        .zip(labels)
        .map(|((frame, source_range), label)| EventInstance { frame, label, source_range })
        .collect())
}

pub fn save_instances(instances: &[EventInstance], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_instances(instances, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_instances(path: &Path) -> Result<Vec<EventInstance>> {
    read_instances(&mut BufReader::new(File::open(path)?))
}
