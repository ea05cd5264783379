//! Deterministic synthetic data: class-determined shape scenes, a frame
//! jitter event simulator, paired dataset generation with a class-disjoint
//! holdout split, and teacher pretraining.
//!
//! Scenes are simple textured polygons rather than natural images: the
//! teacher trains in seconds and class separability is by construction, so
//! downstream failures indicate code bugs rather than data difficulty.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::dataset::{ClassInfo, Dataset, PairedSample, Split};
use crate::encoder::{
    grads_to_param_map, init_text, init_vision, params_to_tape, patch_tokens, text_forward,
    tokenize, vision_forward, EncoderParams, ParamMap, TextArch, VisionArch,
};
use crate::error::{Error, Result};
use crate::eval::{apply_template, zero_shot_image_accuracy, PromptSet, DEFAULT_PROMPT_TEMPLATE};
use crate::event::{aggregate_events, clamp_counts, normalize_grid, EventRecord, EventStream};
use crate::seeding::derive_seed;

/// Frame jitter parameters for the event simulator.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JitterConfig {
    /// Number of jittered frames after the base frame; a window of
    /// `steps + 1` frames yields `steps` diff maps.
    pub steps: usize,
    /// Maximum absolute shift per axis, in pixels.
    pub max_shift: i32,
    /// Maximum relative brightness change per frame.
    pub brightness: f64,
    /// Pixel threshold on the 0-255 scale; differences strictly above it
    /// emit an event.
    pub threshold: u8,
}

impl Default for JitterConfig {
    fn default() -> Self {
        Self { steps: 15, max_shift: 1, brightness: 0.08, threshold: 25 }
    }
}

/// Synthetic dataset shape.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub image_size: usize,
    /// Fraction of classes held out for unseen-class evaluation.
    pub holdout_fraction: f64,
    pub jitter: JitterConfig,
    /// Per-pixel count cap applied before normalization.
    pub clamp_cap: u32,
    pub template: String,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            num_classes: 10,
            samples_per_class: 60,
            image_size: 32,
            holdout_fraction: 0.2,
            jitter: JitterConfig::default(),
            clamp_cap: 10,
            template: DEFAULT_PROMPT_TEMPLATE.to_string(),
            seed: 42,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config("need at least 2 classes to split".into()));
        }
        if self.samples_per_class == 0 {
            return Err(Error::Config("samples_per_class must be positive".into()));
        }
        if self.image_size == 0 {
            return Err(Error::Config("image_size must be positive".into()));
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return Err(Error::Config(format!(
                "holdout_fraction must lie in (0, 1), got {}",
                self.holdout_fraction
            )));
        }
        if self.clamp_cap == 0 {
            return Err(Error::Config("clamp_cap must be positive".into()));
        }
        apply_template(&self.template, "probe")?;
        Ok(())
    }
}

const POLYGON_NAMES: [&str; 10] = [
    "triangle",
    "square",
    "pentagon",
    "hexagon",
    "heptagon",
    "octagon",
    "nonagon",
    "decagon",
    "hendecagon",
    "dodecagon",
];

/// Class names: polygon words for the first ten classes, generated names
/// beyond that.
pub fn class_name(class_id: usize) -> String {
    POLYGON_NAMES
        .get(class_id)
        .map(|s| s.to_string())
        .unwrap_or_else(|| format!("polygon{}", class_id + 3))
}

fn quantize(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

fn to_u8(img: &Array2<f64>) -> Array2<u8> {
    img.mapv(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
}

/// Renders a class-determined textured polygon with seeded center and
/// rotation jitter. Values are quantized to the 0-255 grid so images
/// round-trip through 8-bit files bit-exactly.
pub fn gen_scene(cfg: &SyntheticConfig, class_id: usize, seed: u64) -> Result<Array2<f64>> {
    if class_id >= cfg.num_classes {
        return Err(Error::Data(format!(
            "class {class_id} outside [0, {})",
            cfg.num_classes
        )));
    }
    let size = cfg.image_size;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let n_vert = 3 + class_id;
    let radius = size as f64 * (0.22 + 0.06 * (class_id % 3) as f64);
    let texture = class_id % 3;
    let intensity = 0.55 + 0.4 * (class_id as f64 + 1.0) / (cfg.num_classes as f64 + 1.0);

    let jitter = size as f64 * 0.1;
    let cx = size as f64 / 2.0 + rng.random_range(-jitter..jitter);
    let cy = size as f64 / 2.0 + rng.random_range(-jitter..jitter);
    let rot = rng.random_range(0.0..std::f64::consts::TAU);

    let verts: Vec<(f64, f64)> = (0..n_vert)
        .map(|i| {
            let a = rot + std::f64::consts::TAU * i as f64 / n_vert as f64;
            (cx + radius * a.cos(), cy + radius * a.sin())
        })
        .collect();

    // Convex polygon membership: consistent cross-product sign on all edges.
    let inside = |px: f64, py: f64| {
        let mut sign = 0.0f64;
        for i in 0..verts.len() {
            let (x1, y1) = verts[i];
            let (x2, y2) = verts[(i + 1) % verts.len()];
            let cross = (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1);
            if cross.abs() < 1e-12 {
                continue;
            }
            if sign == 0.0 {
                sign = cross.signum();
            } else if sign != cross.signum() {
                return false;
            }
        }
        true
    };

    let mut img = Array2::zeros((size, size));
    for y in 0..size {
        for x in 0..size {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            if !inside(px, py) {
                continue;
            }
            let tex = match texture {
                1 => {
                    if (y / 3) % 2 == 0 {
                        1.0
                    } else {
                        0.55
                    }
                }
                2 => {
                    let d = ((px - cx).powi(2) + (py - cy).powi(2)).sqrt();
                    if (d / 2.5) as usize % 2 == 0 {
                        1.0
                    } else {
                        0.55
                    }
                }
                _ => 1.0,
            };
            img[(y, x)] = quantize(intensity * tex);
        }
    }
    Ok(img)
}

/// Integer-shifted, brightness-scaled u8 frames for an explicit motion
/// sequence. Each entry of `moves` is (shift_x, shift_y, brightness factor)
/// applied to the base image.
pub fn shifted_frames(img: &Array2<f64>, moves: &[(i32, i32, f64)]) -> Vec<Array2<u8>> {
    let (h, w) = img.dim();
    let mut frames = Vec::with_capacity(moves.len() + 1);
    frames.push(to_u8(img));
    for &(sx, sy, gain) in moves {
        let mut f = Array2::zeros((h, w));
        for y in 0..h {
            for x in 0..w {
                let ox = x as i64 - sx as i64;
                let oy = y as i64 - sy as i64;
                if ox >= 0 && oy >= 0 && (ox as usize) < w && (oy as usize) < h {
                    f[(y, x)] = quantize(img[(oy as usize, ox as usize)] * gain);
                }
            }
        }
        frames.push(to_u8(&f));
    }
    frames
}

/// Draws the seeded jitter sequence for [`simulate_events`]: oscillating
/// integer micro-shifts around the rest position with per-frame brightness
/// flicker. Offsets do not accumulate, so edges stay within one shift of
/// their true position instead of smearing into a random walk.
pub fn jitter_moves(jitter: &JitterConfig, seed: u64) -> Vec<(i32, i32, f64)> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut moves = Vec::with_capacity(jitter.steps);
    for _ in 0..jitter.steps {
        let (sx, sy) = if jitter.max_shift > 0 {
            (
                rng.random_range(-jitter.max_shift..=jitter.max_shift),
                rng.random_range(-jitter.max_shift..=jitter.max_shift),
            )
        } else {
            (0, 0)
        };
        let gain = if jitter.brightness > 0.0 {
            1.0 + rng.random_range(-jitter.brightness..=jitter.brightness)
        } else {
            1.0
        };
        moves.push((sx, sy, gain));
    }
    moves
}

/// Emits one event per pixel per frame transition whose 0-255 difference
/// strictly exceeds the threshold; polarity follows the sign of the change.
///
/// The frames are quantized exactly like the video extraction path, so
/// aggregating this stream reproduces the accumulated diff maps of
/// [`crate::video::build_event_instance`] on the same frame sequence.
pub fn events_from_frames(frames: &[Array2<u8>], threshold: u8) -> Result<EventStream> {
    if frames.is_empty() {
        return Err(Error::Data("no frames to difference".into()));
    }
    let (h, w) = frames[0].dim();
    if w > u16::MAX as usize || h > u16::MAX as usize {
        return Err(Error::Data(format!("frame {w}x{h} exceeds sensor coordinate range")));
    }
    let mut events = Vec::new();
    for (k, pair) in frames.windows(2).enumerate() {
        if pair[1].dim() != (h, w) {
            return Err(Error::Dimension("frame shapes differ".into()));
        }
        for y in 0..h {
            for x in 0..w {
                let diff = i16::from(pair[1][(y, x)]) - i16::from(pair[0][(y, x)]);
                if diff.unsigned_abs() > u16::from(threshold) {
                    events.push(EventRecord {
                        x: x as u16,
                        y: y as u16,
                        t: (k as u64 + 1) * 1000,
                        p: if diff > 0 { 1 } else { -1 },
                    });
                }
            }
        }
    }
    EventStream::new(w as u16, h as u16, events)
}

/// Simulates a DVS capture of `img`: seeded micro-shifts and brightness
/// flicker, differenced frame-to-frame at the jitter threshold.
pub fn simulate_events(img: &Array2<f64>, jitter: &JitterConfig, seed: u64) -> Result<EventStream> {
    let moves = jitter_moves(jitter, seed);
    let frames = shifted_frames(img, &moves);
    events_from_frames(&frames, jitter.threshold)
}

/// Generates the paired dataset with class-disjoint train/heldout splits.
pub fn gen_dataset(cfg: &SyntheticConfig) -> Result<Dataset> {
    gen_dataset_with_streams(cfg).map(|(ds, _)| ds)
}

/// Like [`gen_dataset`], also returning every sample's raw event stream
/// (keyed by sample id) so datasets can be written to disk.
pub fn gen_dataset_with_streams(
    cfg: &SyntheticConfig,
) -> Result<(Dataset, std::collections::BTreeMap<u64, EventStream>)> {
    cfg.validate()?;
    let classes: Vec<ClassInfo> = (0..cfg.num_classes)
        .map(|id| {
            let name = class_name(id);
            Ok(ClassInfo { id, prompt: apply_template(&cfg.template, &name)?, name })
        })
        .collect::<Result<_>>()?;

    // Seeded class split: the shuffled tail is held out.
    let mut order: Vec<usize> = (0..cfg.num_classes).collect();
    let mut split_rng = ChaCha12Rng::seed_from_u64(derive_seed(cfg.seed, "class-split"));
    order.shuffle(&mut split_rng);
    let n_heldout =
        ((cfg.num_classes as f64 * cfg.holdout_fraction).round() as usize).clamp(1, cfg.num_classes - 1);
    let mut heldout_ids: Vec<usize> = order[cfg.num_classes - n_heldout..].to_vec();
    heldout_ids.sort_unstable();

    let jobs: Vec<(usize, usize)> = (0..cfg.num_classes)
        .flat_map(|c| (0..cfg.samples_per_class).map(move |i| (c, i)))
        .collect();
    let generated: Result<Vec<(PairedSample, EventStream)>> = jobs
        .par_iter()
        .map(|&(class_id, idx)| {
            let scene_seed = derive_seed(cfg.seed, &format!("scene/{class_id}/{idx}"));
            let event_seed = derive_seed(cfg.seed, &format!("events/{class_id}/{idx}"));
            let image = gen_scene(cfg, class_id, scene_seed)?;
            let stream = simulate_events(&image, &cfg.jitter, event_seed)?;
            let grid = clamp_counts(&aggregate_events(&stream), cfg.clamp_cap)?;
            let frame = normalize_grid(&grid);
            let sample = PairedSample {
                id: (class_id * cfg.samples_per_class + idx) as u64,
                class_id,
                image,
                frame,
                prompt: classes[class_id].prompt.clone(),
            };
            Ok((sample, stream))
        })
        .collect();
    let mut samples = Vec::new();
    let mut streams = std::collections::BTreeMap::new();
    for (sample, stream) in generated? {
        streams.insert(sample.id, stream);
        samples.push(sample);
    }

    let make_split = |ids: &[usize]| Split {
        classes: classes.iter().filter(|c| ids.contains(&c.id)).cloned().collect(),
        samples: samples.iter().filter(|s| ids.contains(&s.class_id)).cloned().collect(),
    };
    let train_ids: Vec<usize> =
        (0..cfg.num_classes).filter(|id| !heldout_ids.contains(id)).collect();
    let dataset = Dataset {
        width: cfg.image_size,
        height: cfg.image_size,
        template: cfg.template.clone(),
        clamp_cap: cfg.clamp_cap,
        seed: cfg.seed,
        train: make_split(&train_ids),
        heldout: make_split(&heldout_ids),
    };
    Ok((dataset, streams))
}

/// The frozen teacher pair.
#[derive(Debug, Clone)]
pub struct Teacher {
    pub image: EncoderParams,
    pub text: EncoderParams,
}

/// Teacher pretraining hyperparameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TeacherConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub tau: f64,
    pub seed: u64,
    /// Required zero-shot top-1 on the training classes; below this the run
    /// fails with an instructive error.
    pub min_accuracy: f64,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            learning_rate: 0.003,
            momentum: 0.9,
            tau: 0.1,
            seed: 7,
            min_accuracy: 0.9,
        }
    }
}

fn sgd_step(params: &mut ParamMap, velocity: &mut ParamMap, grads: &ParamMap, lr: f64, m: f64) {
    for (name, g) in grads.iter() {
        let v = velocity.get_mut(name).expect("velocity matches params");
        for (vi, gi) in v.data.iter_mut().zip(g.data.iter()) {
            *vi = m * *vi + gi;
        }
        let p = params.get_mut(name).expect("gradient matches params");
        for (pi, vi) in p.data.iter_mut().zip(v.data.iter()) {
            *pi -= lr * vi;
        }
    }
}

/// Pretrains the toy image and text encoders with symmetric image-text
/// InfoNCE on class-balanced batches (one sample per class per batch), then
/// freezes them.
///
/// Returns a numerical error if the trained teacher's zero-shot top-1 on its
/// own training classes falls below `cfg.min_accuracy`.
pub fn pretrain_teacher(
    train: &Split,
    vision_arch: &VisionArch,
    text_arch: &TextArch,
    cfg: &TeacherConfig,
) -> Result<Teacher> {
    if vision_arch.z != text_arch.z {
        return Err(Error::Config(format!(
            "vision z {} and text z {} must match",
            vision_arch.z, text_arch.z
        )));
    }
    if train.classes.is_empty() || train.samples.is_empty() {
        return Err(Error::Data("empty training split".into()));
    }
    let mut image = init_vision(vision_arch, derive_seed(cfg.seed, "teacher/image"))?;
    let mut text = init_text(text_arch, derive_seed(cfg.seed, "teacher/text"))?;
    let mut vel_image = image.params.zeros_like();
    let mut vel_text = text.params.zeros_like();

    // Per-class sample indices, class-major.
    let class_ids: Vec<usize> = train.classes.iter().map(|c| c.id).collect();
    let per_class: Vec<Vec<usize>> = class_ids
        .iter()
        .map(|&cid| {
            train
                .samples
                .iter()
                .enumerate()
                .filter(|(_, s)| s.class_id == cid)
                .map(|(i, _)| i)
                .collect()
        })
        .collect();
    if let Some(pos) = per_class.iter().position(|v| v.is_empty()) {
        return Err(Error::Data(format!(
            "class {} has no training samples",
            train.classes[pos].name
        )));
    }
    let prompt_tokens: Vec<Vec<u32>> = train
        .classes
        .iter()
        .map(|c| tokenize(&c.prompt, text_arch.vocab))
        .collect();

    let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(cfg.seed, "teacher/batches"));
    let batches_per_epoch = per_class.iter().map(|v| v.len()).max().unwrap_or(0);
    for _ in 0..cfg.epochs {
        let shuffled: Vec<Vec<usize>> = per_class
            .iter()
            .map(|v| {
                let mut s = v.clone();
                s.shuffle(&mut rng);
                s
            })
            .collect();
        for b in 0..batches_per_epoch {
            let mut tape = Tape::new();
            let image_ids = params_to_tape(&mut tape, &image.params);
            let text_ids = params_to_tape(&mut tape, &text.params);

            let mut image_rows = Vec::with_capacity(class_ids.len());
            let mut text_rows = Vec::with_capacity(class_ids.len());
            for (c, indices) in shuffled.iter().enumerate() {
                let sample = &train.samples[indices[b % indices.len()]];
                let tokens = patch_tokens(vision_arch, sample.image.view());
                image_rows.push(vision_forward(&mut tape, &image_ids, vision_arch, tokens));
                text_rows.push(text_forward(&mut tape, &text_ids, text_arch, &prompt_tokens[c]));
            }
            let images = tape.concat_rows(image_rows);
            let texts = tape.concat_rows(text_rows);
            let texts_t = tape.transpose(texts);
            let logits = tape.matmul(images, texts_t);
            let logits = tape.scale(logits, 1.0 / cfg.tau);
            let n = class_ids.len();
            let diag: Vec<(usize, usize)> = (0..n).map(|i| (i, i)).collect();
            let row_lsm = tape.log_softmax_rows(logits);
            let row_term = tape.mean_entries(row_lsm, diag.clone());
            let logits_t = tape.transpose(logits);
            let col_lsm = tape.log_softmax_rows(logits_t);
            let col_term = tape.mean_entries(col_lsm, diag);
            let sum = tape.add(row_term, col_term);
            let loss = tape.scale(sum, -0.5);

            let value = tape.value(loss).scalar();
            if !value.is_finite() {
                return Err(Error::Numerical(format!("teacher loss diverged: {value}")));
            }
            let grads = tape.backward(loss);
            let g_image = grads_to_param_map(&tape, &image_ids, &grads);
            let g_text = grads_to_param_map(&tape, &text_ids, &grads);
            sgd_step(&mut image.params, &mut vel_image, &g_image, cfg.learning_rate, cfg.momentum);
            sgd_step(&mut text.params, &mut vel_text, &g_text, cfg.learning_rate, cfg.momentum);
        }
    }

    image.frozen = true;
    text.frozen = true;
    let teacher = Teacher { image, text };

    let prompts = PromptSet::from_classes(&teacher.text, &train.classes)?;
    let acc = zero_shot_image_accuracy(&teacher.image, train, &prompts)?;
    if acc < cfg.min_accuracy {
        return Err(Error::Numerical(format!(
            "teacher converged to zero-shot top-1 {acc:.3} < required {:.3}; \
             increase epochs, adjust the learning rate, or change the seed",
            cfg.min_accuracy
        )));
    }
    Ok(teacher)
}
