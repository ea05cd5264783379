//! The FRD1 grayscale frame-dump container and per-frame label files.
//!
//! Binary layout (little-endian):
//! - header, 16 bytes: magic "FRD1", version u16, frame count u32,
//!   height u16, width u16, 2 reserved bytes (zero)
//! - frames: count x height x width bytes, row-major u8
//!
//! Label files are plain text: one `0` or `1` per line, one line per frame.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::video::VideoClip;

use super::{read_header, read_u16, read_u32};

const MAGIC: &[u8; 4] = b"FRD1";
const VERSION: u16 = 1;

pub fn write_frames(frames: &[Array2<u8>], w: &mut impl Write) -> Result<()> {
    let (h, wd) = frames.first().map(|f| f.dim()).unwrap_or((0, 0));
    if h > u16::MAX as usize || wd > u16::MAX as usize {
        return Err(Error::Data(format!("frame {wd}x{h} exceeds u16 dimensions")));
    }
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(frames.len() as u32).to_le_bytes())?;
    w.write_all(&(h as u16).to_le_bytes())?;
    w.write_all(&(wd as u16).to_le_bytes())?;
    w.write_all(&[0u8; 2])?;
    for (i, f) in frames.iter().enumerate() {
        if f.dim() != (h, wd) {
            return Err(Error::Dimension(format!(
                "frame {i} has shape {:?}, expected ({h}, {wd})",
                f.dim()
            )));
        }
        for row in f.rows() {
            for &v in row {
                w.write_all(&[v])?;
            }
        }
    }
    Ok(())
}

pub fn read_frames(r: &mut impl Read) -> Result<Vec<Array2<u8>>> {
    read_header(r, MAGIC, VERSION)?;
    let count = read_u32(r)? as usize;
    let h = read_u16(r)? as usize;
    let wd = read_u16(r)? as usize;
    let mut reserved = [0u8; 2];
    r.read_exact(&mut reserved)?;
    let mut frames = Vec::with_capacity(count);
    for _ in 0..count {
        let mut buf = vec![0u8; h * wd];
        r.read_exact(&mut buf)?;
        frames.push(
            Array2::from_shape_vec((h, wd), buf).expect("buffer length matches dimensions"),
        );
    }
    Ok(frames)
}

pub fn save_frames(frames: &[Array2<u8>], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_frames(frames, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_frames(path: &Path) -> Result<Vec<Array2<u8>>> {
    read_frames(&mut BufReader::new(File::open(path)?))
}

pub fn save_labels(labels: &[u8], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for &l in labels {
        writeln!(w, "{l}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_labels(path: &Path) -> Result<Vec<u8>> {
    let reader = BufReader::new(File::open(path)?);
    let mut labels = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        match line {
            "0" => labels.push(0),
            "1" => labels.push(1),
            other => {
                return Err(Error::Data(format!(
                    "line {}: label {other:?} not in {{0, 1}}",
                    lineno + 1
                )))
            }
        }
    }
    Ok(labels)
}

/// Loads a frame dump plus an optional label file into a clip.
pub fn load_clip(frames_path: &Path, labels_path: Option<&Path>) -> Result<VideoClip> {
    let frames = load_frames(frames_path)?;
    let labels = labels_path.map(load_labels).transpose()?;
    VideoClip::new(frames, labels)
}
