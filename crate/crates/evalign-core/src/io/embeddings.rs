//! The EMB1 embedding-set interchange format and relevance files.
//!
//! Binary layout (little-endian):
//! - header, 16 bytes: magic "EMB1", version u16, count u32, dimension u32,
//!   2 reserved bytes (zero)
//! - records: id u64, then dimension x f32
//!
//! Relevance files are plain text: one `query_id key_id` pair per line,
//! whitespace-separated; `#` starts a comment. This is how external
//! (sound/depth) embedding sets and their ground truth enter the artifact.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array1;

use crate::error::{Error, Result};

use super::{read_f32, read_header, read_u32, read_u64};

const MAGIC: &[u8; 4] = b"EMB1";
const VERSION: u16 = 1;

pub fn write_embedding_set(entries: &[(u64, Array1<f64>)], w: &mut impl Write) -> Result<()> {
    if entries.is_empty() {
        return Err(Error::Data("no embeddings to write".into()));
    }
    let dim = entries[0].1.len();
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(entries.len() as u32).to_le_bytes())?;
    w.write_all(&(dim as u32).to_le_bytes())?;
    w.write_all(&[0u8; 2])?;
    for (id, v) in entries {
        if v.len() != dim {
            return Err(Error::Dimension(format!(
                "embedding {id} has {} components, expected {dim}",
                v.len()
            )));
        }
        w.write_all(&id.to_le_bytes())?;
        for &x in v {
            w.write_all(&(x as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_embedding_set(r: &mut impl Read) -> Result<Vec<(u64, Array1<f64>)>> {
    read_header(r, MAGIC, VERSION)?;
    let count = read_u32(r)? as usize;
    let dim = read_u32(r)? as usize;
    let mut reserved = [0u8; 2];
    r.read_exact(&mut reserved)?;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let id = read_u64(r)?;
        let mut v = Array1::zeros(dim);
        for x in v.iter_mut() {
            *x = f64::from(read_f32(r)?);
        }
        out.push((id, v));
    }
    Ok(out)
}

pub fn save_embedding_set(entries: &[(u64, Array1<f64>)], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_embedding_set(entries, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_embedding_set(path: &Path) -> Result<Vec<(u64, Array1<f64>)>> {
    read_embedding_set(&mut BufReader::new(File::open(path)?))
}

pub fn save_relevance(rel: &BTreeMap<u64, BTreeSet<u64>>, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for (q, keys) in rel {
        for k in keys {
            writeln!(w, "{q} {k}")?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_relevance(path: &Path) -> Result<BTreeMap<u64, BTreeSet<u64>>> {
    let reader = BufReader::new(File::open(path)?);
    let mut rel: BTreeMap<u64, BTreeSet<u64>> = BTreeMap::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let q = parts
            .next()
            .and_then(|s| s.parse::<u64>().ok())
            .ok_or_else(|| Error::Format(format!("line {}: bad query id", lineno + 1)))?;
        let k = parts
            .next()
            .and_then(|s| s.parse::<u64>().ok())
            .ok_or_else(|| Error::Format(format!("line {}: bad key id", lineno + 1)))?;
        if parts.next().is_some() {
            return Err(Error::Format(format!(
                "line {}: expected exactly two ids",
                lineno + 1
            )));
        }
        rel.entry(q).or_default().insert(k);
    }
    Ok(rel)
}
