//! On-disk dataset layout and run manifests.
//!
//! A dataset directory looks like:
//!
//! ```text
//! <dir>/dataset.json        dataset-level config and the class split
//! <dir>/train/manifest.jsonl   one JSON object per sample
//! <dir>/train/images/NNNNNN.png    8-bit grayscale
//! <dir>/train/events/NNNNNN.evt1   raw event stream
//! <dir>/heldout/...
//! ```
//!
//! Each manifest line maps a sample id to its image file, event file, class,
//! and prompt, so externally produced datasets can be dropped in with the
//! same schema. Event frames are reconstructed from the EVT1 streams at
//! load time (aggregate, clamp at the dataset's cap, normalize).

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dataset::{ClassInfo, Dataset, PairedSample, Split};
use crate::error::{Error, Result};
use crate::event::{aggregate_events, clamp_counts, normalize_grid};

use super::evt1::{load_evt1, save_evt1};

#[derive(Debug, Serialize, Deserialize)]
struct DatasetMeta {
    version: u32,
    width: usize,
    height: usize,
    template: String,
    clamp_cap: u32,
    seed: u64,
    classes: Vec<ClassMeta>,
    train_class_ids: Vec<usize>,
    heldout_class_ids: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ClassMeta {
    id: usize,
    name: String,
    prompt: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct SampleLine {
    id: u64,
    class_id: usize,
    image: String,
    events: String,
    prompt: String,
}

fn save_image_png(img: &Array2<f64>, path: &Path) -> Result<()> {
    let (h, w) = img.dim();
    let bytes: Vec<u8> = img.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    image::save_buffer(path, &bytes, w as u32, h as u32, image::ColorType::L8)
        .map_err(|e| Error::Format(format!("writing {}: {e}", path.display())))
}

fn load_image_png(path: &Path) -> Result<Array2<f64>> {
    let img = image::open(path)
        .map_err(|e| Error::Format(format!("reading {}: {e}", path.display())))?
        .to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(Array2::from_shape_fn((h, w), |(y, x)| {
        f64::from(img.get_pixel(x as u32, y as u32)[0]) / 255.0
    }))
}

fn save_split(split: &Split, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir.join("images"))?;
    fs::create_dir_all(dir.join("events"))?;
    let mut manifest = BufWriter::new(File::create(dir.join("manifest.jsonl"))?);
    for sample in &split.samples {
        let image_rel = format!("images/{:06}.png", sample.id);
        let events_rel = format!("events/{:06}.evt1", sample.id);
        save_image_png(&sample.image, &dir.join(&image_rel))?;
        let line = SampleLine {
            id: sample.id,
            class_id: sample.class_id,
            image: image_rel,
            events: events_rel,
            prompt: sample.prompt.clone(),
        };
        serde_json::to_writer(&mut manifest, &line)
            .map_err(|e| Error::Format(format!("manifest encoding: {e}")))?;
        manifest.write_all(b"\n")?;
    }
    manifest.flush()?;
    Ok(())
}

/// Writes a dataset directory. `streams` maps sample id to its raw event
/// stream (the frame alone is not enough to reconstruct events).
pub fn save_dataset(
    dataset: &Dataset,
    streams: &std::collections::BTreeMap<u64, crate::event::EventStream>,
    dir: &Path,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let all_classes: Vec<&ClassInfo> =
        dataset.train.classes.iter().chain(dataset.heldout.classes.iter()).collect();
    let meta = DatasetMeta {
        version: 1,
        width: dataset.width,
        height: dataset.height,
        template: dataset.template.clone(),
        clamp_cap: dataset.clamp_cap,
        seed: dataset.seed,
        classes: all_classes
            .iter()
            .map(|c| ClassMeta { id: c.id, name: c.name.clone(), prompt: c.prompt.clone() })
            .collect(),
        train_class_ids: dataset.train.class_ids(),
        heldout_class_ids: dataset.heldout.class_ids(),
    };
    let meta_json = serde_json::to_string_pretty(&meta)
        .map_err(|e| Error::Format(format!("dataset meta encoding: {e}")))?;
    fs::write(dir.join("dataset.json"), meta_json)?;

    for (split, name) in [(&dataset.train, "train"), (&dataset.heldout, "heldout")] {
        let split_dir = dir.join(name);
        save_split(split, &split_dir)?;
        for sample in &split.samples {
            let stream = streams.get(&sample.id).ok_or_else(|| {
                Error::Data(format!("no event stream provided for sample {}", sample.id))
            })?;
            save_evt1(stream, &split_dir.join(format!("events/{:06}.evt1", sample.id)))?;
        }
    }
    Ok(())
}

fn load_split(dir: &Path, classes: &[ClassInfo], ids: &[usize], cap: u32) -> Result<Split> {
    let manifest_path = dir.join("manifest.jsonl");
    let reader = BufReader::new(File::open(&manifest_path)?);
    let mut samples = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: SampleLine = serde_json::from_str(&line).map_err(|e| {
            Error::Format(format!("{}:{}: {e}", manifest_path.display(), lineno + 1))
        })?;
        let image = load_image_png(&dir.join(&entry.image))?;
        let stream = load_evt1(&dir.join(&entry.events))?;
        let grid = clamp_counts(&aggregate_events(&stream), cap)?;
        let frame = normalize_grid(&grid);
        samples.push(PairedSample {
            id: entry.id,
            class_id: entry.class_id,
            image,
            frame,
            prompt: entry.prompt,
        });
    }
    Ok(Split {
        classes: classes.iter().filter(|c| ids.contains(&c.id)).cloned().collect(),
        samples,
    })
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let meta_path = dir.join("dataset.json");
    let meta: DatasetMeta = serde_json::from_str(&fs::read_to_string(&meta_path)?)
        .map_err(|e| Error::Format(format!("{}: {e}", meta_path.display())))?;
    if meta.version != 1 {
        return Err(Error::Format(format!("unsupported dataset version {}", meta.version)));
    }
    let classes: Vec<ClassInfo> = meta
        .classes
        .iter()
        .map(|c| ClassInfo { id: c.id, name: c.name.clone(), prompt: c.prompt.clone() })
        .collect();
    Ok(Dataset {
        width: meta.width,
        height: meta.height,
        template: meta.template,
        clamp_cap: meta.clamp_cap,
        seed: meta.seed,
        train: load_split(&dir.join("train"), &classes, &meta.train_class_ids, meta.clamp_cap)?,
        heldout: load_split(
            &dir.join("heldout"),
            &classes,
            &meta.heldout_class_ids,
            meta.clamp_cap,
        )?,
    })
}

/// A record of one CLI run, sufficient to reproduce it.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub version: String,
    pub seed: u64,
    pub threads: usize,
    pub config: serde_json::Value,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub wall_clock_secs: f64,
    pub created_unix_secs: u64,
}

impl RunManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Format(format!("run manifest encoding: {e}")))?;
        fs::write(path, json)?;
        Ok(())
    }
}

pub fn unix_now_secs() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}
