//! The EVCK checkpoint container.
//!
//! Binary layout (little-endian):
//! - header: magic "EVCK", version u16
//! - meta: length u32, then that many bytes of JSON (kind, architectures,
//!   role/frozen flags, step, RNG state, permutation, history)
//! - parameters: count u32, then per array: name length u16, UTF-8 name,
//!   rank u8, dims (u32 each), data (f64, little-endian)
//!
//! Parameter bytes round-trip exactly; resumed training is bit-identical to
//! an uninterrupted run.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{AdapterParams, Arch, EncoderParams, ParamArray, ParamMap, Role};
use crate::error::{Error, Result};
use crate::synth::Teacher;
use crate::train::{LogRecord, TrainState};

use super::{read_f64, read_header, read_u16, read_u32, read_u8};

const MAGIC: &[u8; 4] = b"EVCK";
const VERSION: u16 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct EncoderMeta {
    role: Role,
    frozen: bool,
    arch: Arch,
}

/// Explicit RNG state: seed, stream, and the 128-bit word position split
/// into two u64 halves (JSON has no native u128).
#[derive(Debug, Serialize, Deserialize)]
struct RngState {
    seed: [u8; 32],
    stream: u64,
    word_pos_hi: u64,
    word_pos_lo: u64,
}

impl RngState {
    fn capture(rng: &ChaCha12Rng) -> Self {
        let pos = rng.get_word_pos();
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos_hi: (pos >> 64) as u64,
            word_pos_lo: pos as u64,
        }
    }

    fn restore(&self) -> ChaCha12Rng {
        use rand::SeedableRng;
        let mut rng = ChaCha12Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos((u128::from(self.word_pos_hi) << 64) | u128::from(self.word_pos_lo));
        rng
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
enum Meta {
    Teacher {
        image: EncoderMeta,
        text: EncoderMeta,
    },
    TrainState {
        encoder: EncoderMeta,
        step: u64,
        rng: RngState,
        epoch_perm: Vec<u32>,
        perm_pos: usize,
        history: Vec<LogRecord>,
    },
    Adapter {
        z_in: usize,
        z_out: usize,
    },
}

fn write_container(meta: &Meta, params: &ParamMap, w: &mut impl Write) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let meta_bytes =
        serde_json::to_vec(meta).map_err(|e| Error::Format(format!("meta encoding: {e}")))?;
    w.write_all(&(meta_bytes.len() as u32).to_le_bytes())?;
    w.write_all(&meta_bytes)?;
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for (name, p) in params.iter() {
        let name_bytes = name.as_bytes();
        w.write_all(&(name_bytes.len() as u16).to_le_bytes())?;
        w.write_all(name_bytes)?;
        w.write_all(&(p.shape.len() as u8).to_le_bytes())?;
        for &d in &p.shape {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in &p.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_container(r: &mut impl Read) -> Result<(Meta, ParamMap)> {
    read_header(r, MAGIC, VERSION)?;
    let meta_len = read_u32(r)? as usize;
    let mut meta_bytes = vec![0u8; meta_len];
    r.read_exact(&mut meta_bytes)?;
    let meta: Meta = serde_json::from_slice(&meta_bytes)
        .map_err(|e| Error::Format(format!("corrupt checkpoint meta: {e}")))?;

    let count = read_u32(r)? as usize;
    let mut params = ParamMap::new();
    for _ in 0..count {
        let name_len = read_u16(r)? as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|e| Error::Format(format!("bad parameter name: {e}")))?;
        let rank = read_u8(r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(r)? as usize);
        }
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(read_f64(r)?);
        }
        params.insert(name, ParamArray { shape, data });
    }
    Ok((meta, params))
}

fn split_prefixed(params: &ParamMap, prefix: &str) -> ParamMap {
    let mut out = ParamMap::new();
    for (name, p) in params.iter() {
        if let Some(suffix) = name.strip_prefix(prefix) {
            out.insert(suffix.to_string(), p.clone());
        }
    }
    out
}

fn merge_prefixed(into: &mut ParamMap, prefix: &str, params: &ParamMap) {
    for (name, p) in params.iter() {
        into.insert(format!("{prefix}{name}"), p.clone());
    }
}

pub fn save_teacher(teacher: &Teacher, path: &Path) -> Result<()> {
    let meta = Meta::Teacher {
        image: EncoderMeta {
            role: teacher.image.role,
            frozen: teacher.image.frozen,
            arch: teacher.image.arch,
        },
        text: EncoderMeta {
            role: teacher.text.role,
            frozen: teacher.text.frozen,
            arch: teacher.text.arch,
        },
    };
    let mut params = ParamMap::new();
    merge_prefixed(&mut params, "image.", &teacher.image.params);
    merge_prefixed(&mut params, "text.", &teacher.text.params);
    let mut w = BufWriter::new(File::create(path)?);
    write_container(&meta, &params, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_teacher(path: &Path) -> Result<Teacher> {
    let (meta, params) = read_container(&mut BufReader::new(File::open(path)?))?;
    match meta {
        Meta::Teacher { image, text } => Ok(Teacher {
            image: EncoderParams {
                role: image.role,
                frozen: image.frozen,
                arch: image.arch,
                params: split_prefixed(&params, "image."),
            },
            text: EncoderParams {
                role: text.role,
                frozen: text.frozen,
                arch: text.arch,
                params: split_prefixed(&params, "text."),
            },
        }),
        _ => Err(Error::Format(format!("{} is not a teacher checkpoint", path.display()))),
    }
}

pub fn save_train_state(state: &TrainState, path: &Path) -> Result<()> {
    let meta = Meta::TrainState {
        encoder: EncoderMeta {
            role: state.encoder.role,
            frozen: state.encoder.frozen,
            arch: state.encoder.arch,
        },
        step: state.step,
        rng: RngState::capture(&state.rng),
        epoch_perm: state.epoch_perm.clone(),
        perm_pos: state.perm_pos,
        history: state.history.clone(),
    };
    let mut params = ParamMap::new();
    merge_prefixed(&mut params, "encoder.", &state.encoder.params);
    merge_prefixed(&mut params, "velocity.", &state.velocity);
    let mut w = BufWriter::new(File::create(path)?);
    write_container(&meta, &params, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_train_state(path: &Path) -> Result<TrainState> {
    let (meta, params) = read_container(&mut BufReader::new(File::open(path)?))?;
    match meta {
        Meta::TrainState { encoder, step, rng, epoch_perm, perm_pos, history } => Ok(TrainState {
            encoder: EncoderParams {
                role: encoder.role,
                frozen: encoder.frozen,
                arch: encoder.arch,
                params: split_prefixed(&params, "encoder."),
            },
            step,
            rng: rng.restore(),
            velocity: split_prefixed(&params, "velocity."),
            epoch_perm,
            perm_pos,
            history,
        }),
        _ => Err(Error::Format(format!(
            "{} is not a training-state checkpoint",
            path.display()
        ))),
    }
}

pub fn save_adapter(adapter: &AdapterParams, path: &Path) -> Result<()> {
    let (z_out, z_in) = adapter.weight.dim();
    let meta = Meta::Adapter { z_in, z_out };
    let mut params = ParamMap::new();
    params.insert("weight", ParamArray::matrix(adapter.weight.clone()));
    params.insert("bias", ParamArray::vector(adapter.bias.clone()));
    let mut w = BufWriter::new(File::create(path)?);
    write_container(&meta, &params, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_adapter(path: &Path) -> Result<AdapterParams> {
    let (meta, params) = read_container(&mut BufReader::new(File::open(path)?))?;
    match meta {
        Meta::Adapter { z_in, z_out } => {
            let weight = params
                .get("weight")
                .ok_or_else(|| Error::Format("adapter checkpoint missing weight".into()))?;
            let bias = params
                .get("bias")
                .ok_or_else(|| Error::Format("adapter checkpoint missing bias".into()))?;
            if weight.shape != [z_out, z_in] || bias.shape != [z_out] {
                return Err(Error::Format("adapter parameter shapes disagree with meta".into()));
            }
            Ok(AdapterParams {
                weight: Array2::from_shape_vec((z_out, z_in), weight.data.clone())
                    .expect("shape checked"),
                bias: Array1::from_vec(bias.data.clone()),
            })
        }
        _ => Err(Error::Format(format!("{} is not an adapter checkpoint", path.display()))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{init_text, init_vision, TextArch, VisionArch};
    use rand::SeedableRng;
    use tempfile::tempdir;

    fn small_teacher() -> Teacher {
        let arch = VisionArch { image_hw: (8, 8), patch: 4, depth: 1, width: 8, z: 8 };
        let tarch = TextArch { vocab: 32, embed_dim: 8, hidden: 8, z: 8 };
        let mut image = init_vision(&arch, 1).unwrap();
        let mut text = init_text(&tarch, 2).unwrap();
        image.frozen = true;
        text.frozen = true;
        Teacher { image, text }
    }

    #[test]
    fn teacher_round_trip_is_bit_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("teacher.ckpt");
        let teacher = small_teacher();
        save_teacher(&teacher, &path).unwrap();
        let back = load_teacher(&path).unwrap();
        assert_eq!(back.image.params.checksum(), teacher.image.params.checksum());
        assert_eq!(back.text.params.checksum(), teacher.text.params.checksum());
        assert!(back.image.frozen && back.text.frozen);

        // save -> load -> save produces identical bytes
        let path2 = dir.path().join("teacher2.ckpt");
        save_teacher(&back, &path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn train_state_round_trip_preserves_rng_and_history() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("state.ckpt");
        let teacher = small_teacher();
        let mut state = TrainState::new(&teacher.image, 7);
        state.step = 42;
        state.epoch_perm = vec![3, 1, 2, 0];
        state.perm_pos = 2;
        // Advance the RNG so its serialized position is nontrivial.
        use rand::Rng;
        let _: u64 = state.rng.random();
        state.history.push(LogRecord { step: 1, loss: None, pred: Some(0.5), acc: Some(0.25) });
        save_train_state(&state, &path).unwrap();

        let mut back = load_train_state(&path).unwrap();
        assert_eq!(back.step, 42);
        assert_eq!(back.perm_pos, 2);
        assert_eq!(back.epoch_perm, vec![3, 1, 2, 0]);
        assert_eq!(back.encoder.params.checksum(), state.encoder.params.checksum());
        assert_eq!(back.velocity.checksum(), state.velocity.checksum());
        assert_eq!(back.history.len(), 1);
        // The reloaded RNG continues the exact stream.
        let a: u64 = state.rng.random();
        let b: u64 = back.rng.random();
        assert_eq!(a, b);
    }

    #[test]
    fn kind_mismatch_and_corruption_are_format_errors() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("teacher.ckpt");
        save_teacher(&small_teacher(), &path).unwrap();
        assert!(matches!(load_train_state(&path), Err(Error::Format(_))));

        let mut bytes = std::fs::read(&path).unwrap();
        bytes[1] = b'X';
        let bad = dir.path().join("bad.ckpt");
        std::fs::write(&bad, &bytes).unwrap();
        assert!(matches!(load_teacher(&bad), Err(Error::Format(_))));

        let mut truncated = std::fs::read(&path).unwrap();
        truncated.truncate(truncated.len() - 9);
        std::fs::write(&bad, &truncated).unwrap();
        assert!(load_teacher(&bad).is_err());
    }

    #[test]
    fn adapter_round_trip() {
        use rand::Rng;
        let dir = tempdir().unwrap();
        let path = dir.path().join("adapter.ckpt");
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(3);
        let adapter = AdapterParams {
            weight: Array2::from_shape_fn((6, 8), |_| rng.random_range(-1.0..1.0)),
            bias: Array1::from_shape_fn(6, |_| rng.random_range(-1.0..1.0)),
        };
        save_adapter(&adapter, &path).unwrap();
        let back = load_adapter(&path).unwrap();
        assert_eq!(back.weight, adapter.weight);
        assert_eq!(back.bias, adapter.bias);
    }
}
