//! The three-encoder stack: a small vision transformer shared by the image
//! and event encoders, a hashed bag-of-tokens text encoder, and the affine
//! adapter into external embedding spaces.
//!
//! All encoders produce unit-norm embeddings in the shared z-dimensional
//! space. The image and text encoders act as frozen teachers once trained;
//! the event encoder is a deep copy of the image encoder that keeps training.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{NodeId, Tape, Value};
use crate::error::{Error, Result};
use crate::event::EventFrame;

/// Which encoder a parameter set belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Image,
    Text,
    Event,
}

/// Vision transformer shape: non-overlapping square patches, a linear patch
/// embedding plus learned positional embeddings, `depth` pre-norm
/// self-attention blocks, mean pooling, and a linear projection to z.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VisionArch {
    pub image_hw: (usize, usize),
    pub patch: usize,
    pub depth: usize,
    pub width: usize,
    pub z: usize,
}

impl Default for VisionArch {
    fn default() -> Self {
        Self { image_hw: (32, 32), patch: 8, depth: 2, width: 64, z: 64 }
    }
}

impl VisionArch {
    pub fn validate(&self) -> Result<()> {
        if self.patch == 0 || self.image_hw.0 % self.patch != 0 || self.image_hw.1 % self.patch != 0
        {
            return Err(Error::Config(format!(
                "image {}x{} not divisible into {}-pixel patches",
                self.image_hw.0, self.image_hw.1, self.patch
            )));
        }
        if self.depth == 0 || self.width == 0 || self.z == 0 {
            return Err(Error::Config("vision arch sizes must be positive".into()));
        }
        Ok(())
    }

    pub fn tokens(&self) -> usize {
        (self.image_hw.0 / self.patch) * (self.image_hw.1 / self.patch)
    }

    pub fn patch_dim(&self) -> usize {
        self.patch * self.patch
    }
}

/// Text encoder shape: hashed bag-of-tokens lookup, mean, one dense tanh
/// layer, projection to z.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TextArch {
    pub vocab: usize,
    pub embed_dim: usize,
    pub hidden: usize,
    pub z: usize,
}

impl Default for TextArch {
    fn default() -> Self {
        Self { vocab: 512, embed_dim: 32, hidden: 32, z: 64 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Arch {
    Vision(VisionArch),
    Text(TextArch),
}

/// One named parameter array. Shapes are rank 1 or 2.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamArray {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl ParamArray {
    pub fn vector(v: Array1<f64>) -> Self {
        Self { shape: vec![v.len()], data: v.to_vec() }
    }

    pub fn matrix(m: Array2<f64>) -> Self {
        let (r, c) = m.dim();
        // Iterate in logical order: the array may be in column-major layout
        // (e.g. gradients produced from transposed views), so the raw buffer
        // order cannot be trusted.
        let data = m.iter().copied().collect();
        Self { shape: vec![r, c], data }
    }

    pub fn as_matrix(&self) -> Array2<f64> {
        Array2::from_shape_vec((self.shape[0], self.shape[1]), self.data.clone())
            .expect("param shape consistent with data")
    }

    pub fn as_vector(&self) -> Array1<f64> {
        Array1::from_vec(self.data.clone())
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Ordered map of named parameter arrays. The BTreeMap ordering makes
/// checksums, serialization, and gradient flattening deterministic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamMap(BTreeMap<String, ParamArray>);

impl ParamMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, p: ParamArray) {
        self.0.insert(name.into(), p);
    }

    pub fn get(&self, name: &str) -> Option<&ParamArray> {
        self.0.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ParamArray> {
        self.0.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ParamArray)> {
        self.0.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut ParamArray)> {
        self.0.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.0.keys()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.0.values().map(|p| p.len()).sum()
    }

    /// SHA-256 over names, shapes, and little-endian f64 bytes, in map order.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for (name, p) in &self.0 {
            h.update(name.as_bytes());
            h.update([0u8]);
            for &d in &p.shape {
                h.update((d as u64).to_le_bytes());
            }
            for &v in &p.data {
                h.update(v.to_le_bytes());
            }
        }
        hex_string(&h.finalize())
    }

    pub fn zeros_like(&self) -> ParamMap {
        let mut out = BTreeMap::new();
        for (name, p) in &self.0 {
            out.insert(
                name.clone(),
                ParamArray { shape: p.shape.clone(), data: vec![0.0; p.data.len()] },
            );
        }
        ParamMap(out)
    }

    pub fn l2_norm(&self) -> f64 {
        self.0
            .values()
            .flat_map(|p| p.data.iter())
            .map(|&v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Named parameter arrays with their architecture, role, and freeze flag.
#[derive(Debug, Clone)]
pub struct EncoderParams {
    pub role: Role,
    pub frozen: bool,
    pub arch: Arch,
    pub params: ParamMap,
}

impl EncoderParams {
    pub fn vision_arch(&self) -> Result<&VisionArch> {
        match &self.arch {
            Arch::Vision(a) => Ok(a),
            Arch::Text(_) => Err(Error::Dimension("parameters are not a vision encoder".into())),
        }
    }

    pub fn text_arch(&self) -> Result<&TextArch> {
        match &self.arch {
            Arch::Text(a) => Ok(a),
            Arch::Vision(_) => Err(Error::Dimension("parameters are not a text encoder".into())),
        }
    }
}

/// Unit-norm vector in the shared embedding space.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Array1<f64>);

impl Embedding {
    /// Normalizes `v`; rejects zero or non-finite vectors.
    pub fn from_unnormalized(v: Array1<f64>) -> Result<Self> {
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Data("embedding has non-finite components".into()));
        }
        let n = v.dot(&v).sqrt();
        if n == 0.0 {
            return Err(Error::Data("cannot normalize a zero embedding".into()));
        }
        Ok(Self(v / n))
    }

    /// Wraps a vector that is already unit-norm (within 1e-6).
    pub fn from_normalized(v: Array1<f64>) -> Result<Self> {
        let n = v.dot(&v).sqrt();
        if (n - 1.0).abs() > 1e-6 {
            return Err(Error::Data(format!("embedding norm {n} is not 1")));
        }
        Ok(Self(v))
    }

    pub fn as_array(&self) -> &Array1<f64> {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn dot(&self, other: &Embedding) -> f64 {
        self.0.dot(&other.0)
    }

    pub fn norm(&self) -> f64 {
        self.0.dot(&self.0).sqrt()
    }
}

// ---------------------------------------------------------------------------
// Initialization

fn normal_matrix(rng: &mut ChaCha12Rng, r: usize, c: usize, std: f64) -> ParamArray {
    let dist = Normal::new(0.0, std).expect("valid std");
    let data: Vec<f64> = (0..r * c).map(|_| dist.sample(rng)).collect();
    ParamArray { shape: vec![r, c], data }
}

fn const_vector(len: usize, v: f64) -> ParamArray {
    ParamArray { shape: vec![len], data: vec![v; len] }
}

/// Fresh randomly initialized vision encoder (role = image, trainable).
pub fn init_vision(arch: &VisionArch, seed: u64) -> Result<EncoderParams> {
    arch.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut params = ParamMap::new();
    let pd = arch.patch_dim();
    params.insert("patch.w", normal_matrix(&mut rng, pd, arch.width, 1.0 / (pd as f64).sqrt()));
    params.insert("patch.b", const_vector(arch.width, 0.0));
    params.insert("pos", normal_matrix(&mut rng, arch.tokens(), arch.width, 0.02));
    let wstd = 1.0 / (arch.width as f64).sqrt();
    for i in 0..arch.depth {
        params.insert(format!("block{i}.ln.g"), const_vector(arch.width, 1.0));
        params.insert(format!("block{i}.ln.b"), const_vector(arch.width, 0.0));
        for gate in ["wq", "wk", "wv", "wo"] {
            params.insert(
                format!("block{i}.attn.{gate}"),
                normal_matrix(&mut rng, arch.width, arch.width, wstd),
            );
        }
        for gate in ["bq", "bk", "bv", "bo"] {
            params.insert(format!("block{i}.attn.{gate}"), const_vector(arch.width, 0.0));
        }
    }
    params.insert("proj.w", normal_matrix(&mut rng, arch.width, arch.z, wstd));
    params.insert("proj.b", const_vector(arch.z, 0.0));
    Ok(EncoderParams { role: Role::Image, frozen: false, arch: Arch::Vision(*arch), params })
}

/// Fresh randomly initialized text encoder (trainable).
pub fn init_text(arch: &TextArch, seed: u64) -> Result<EncoderParams> {
    if arch.vocab == 0 || arch.embed_dim == 0 || arch.hidden == 0 || arch.z == 0 {
        return Err(Error::Config("text arch sizes must be positive".into()));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut params = ParamMap::new();
    params.insert(
        "embed.table",
        normal_matrix(&mut rng, arch.vocab, arch.embed_dim, 1.0 / (arch.embed_dim as f64).sqrt()),
    );
    params.insert(
        "dense.w",
        normal_matrix(&mut rng, arch.embed_dim, arch.hidden, 1.0 / (arch.embed_dim as f64).sqrt()),
    );
    params.insert("dense.b", const_vector(arch.hidden, 0.0));
    params.insert(
        "proj.w",
        normal_matrix(&mut rng, arch.hidden, arch.z, 1.0 / (arch.hidden as f64).sqrt()),
    );
    params.insert("proj.b", const_vector(arch.z, 0.0));
    Ok(EncoderParams { role: Role::Text, frozen: false, arch: Arch::Text(*arch), params })
}

/// Deep-copies the image encoder into a trainable event encoder.
///
/// The copy is functionally identical to the source at step 0; mutating it
/// never touches the source arrays.
pub fn init_event_encoder(image_params: &EncoderParams) -> EncoderParams {
    EncoderParams {
        role: Role::Event,
        frozen: false,
        arch: image_params.arch,
        params: image_params.params.clone(),
    }
}

// ---------------------------------------------------------------------------
// Tokenizer

/// FNV-1a 64-bit hash; fixed constants keep token ids stable across builds.
fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Whitespace tokenizer: lowercase each word and hash it into the vocab.
pub fn tokenize(text: &str, vocab: usize) -> Vec<u32> {
    text.split_whitespace()
        .map(|w| (fnv1a64(w.to_lowercase().as_bytes()) % vocab as u64) as u32)
        .collect()
}

// ---------------------------------------------------------------------------
// Forward passes

/// Splits an image into non-overlapping patches, flattening each patch
/// row-major: tokens matrix of shape (tokens, patch*patch).
pub(crate) fn patch_tokens(arch: &VisionArch, img: ArrayView2<f64>) -> Array2<f64> {
    let (ph, pw) = (arch.image_hw.0 / arch.patch, arch.image_hw.1 / arch.patch);
    let mut tokens = Array2::zeros((ph * pw, arch.patch_dim()));
    for ty in 0..ph {
        for tx in 0..pw {
            let t = ty * pw + tx;
            for dy in 0..arch.patch {
                for dx in 0..arch.patch {
                    tokens[(t, dy * arch.patch + dx)] =
                        img[(ty * arch.patch + dy, tx * arch.patch + dx)];
                }
            }
        }
    }
    tokens
}

/// Loads every parameter array onto the tape as a leaf, returning name -> id.
pub(crate) fn params_to_tape(tape: &mut Tape, params: &ParamMap) -> BTreeMap<String, NodeId> {
    let mut ids = BTreeMap::new();
    for (name, p) in params.iter() {
        let id = match p.shape.len() {
            1 => tape.vector(p.as_vector()),
            2 => tape.matrix(p.as_matrix()),
            n => panic!("rank-{n} parameter {name}"),
        };
        ids.insert(name.clone(), id);
    }
    ids
}

/// Harvests gradients for every named leaf back into a `ParamMap`.
pub(crate) fn grads_to_param_map(
    tape: &Tape,
    ids: &BTreeMap<String, NodeId>,
    grads: &crate::autodiff::Gradients,
) -> ParamMap {
    let mut out = ParamMap::new();
    for (name, &id) in ids {
        let g = grads.get(id, tape);
        let p = match g {
            Value::Vector(v) => ParamArray::vector(v),
            Value::Matrix(m) => ParamArray::matrix(m),
            Value::Scalar(_) => panic!("scalar parameter {name}"),
        };
        out.insert(name.clone(), p);
    }
    out
}

/// Vision encoder forward pass on the tape. Returns the unit-norm embedding
/// node (vector of length z).
pub(crate) fn vision_forward(
    tape: &mut Tape,
    ids: &BTreeMap<String, NodeId>,
    arch: &VisionArch,
    tokens: Array2<f64>,
) -> NodeId {
    let get = |name: &str| *ids.get(name).unwrap_or_else(|| panic!("missing param {name}"));
    let t = tape.matrix(tokens);
    let mut x = tape.matmul(t, get("patch.w"));
    x = tape.add_row(x, get("patch.b"));
    x = tape.add(x, get("pos"));
    let scale = 1.0 / (arch.width as f64).sqrt();
    for i in 0..arch.depth {
        let h = tape.layer_norm_rows(x, get(&format!("block{i}.ln.g")), get(&format!("block{i}.ln.b")));
        let q = tape.matmul(h, get(&format!("block{i}.attn.wq")));
        let q = tape.add_row(q, get(&format!("block{i}.attn.bq")));
        let k = tape.matmul(h, get(&format!("block{i}.attn.wk")));
        let k = tape.add_row(k, get(&format!("block{i}.attn.bk")));
        let v = tape.matmul(h, get(&format!("block{i}.attn.wv")));
        let v = tape.add_row(v, get(&format!("block{i}.attn.bv")));
        let kt = tape.transpose(k);
        let scores = tape.matmul(q, kt);
        let scores = tape.scale(scores, scale);
        let attn = tape.softmax_rows(scores);
        let ctx = tape.matmul(attn, v);
        let y = tape.matmul(ctx, get(&format!("block{i}.attn.wo")));
        let y = tape.add_row(y, get(&format!("block{i}.attn.bo")));
        x = tape.add(x, y);
    }
    let pooled = tape.mean_rows(x);
    let e = tape.vecmat(pooled, get("proj.w"));
    let e = tape.add(e, get("proj.b"));
    tape.l2_normalize(e)
}

/// Text encoder forward pass on the tape: mean of hashed token embeddings,
/// one dense tanh layer, projection, normalize.
pub(crate) fn text_forward(
    tape: &mut Tape,
    ids: &BTreeMap<String, NodeId>,
    arch: &TextArch,
    tokens: &[u32],
) -> NodeId {
    let get = |name: &str| *ids.get(name).unwrap_or_else(|| panic!("missing param {name}"));
    let mut weights = Array1::<f64>::zeros(arch.vocab);
    let share = 1.0 / tokens.len() as f64;
    for &t in tokens {
        weights[t as usize] += share;
    }
    let w = tape.vector(weights);
    let bag = tape.vecmat(w, get("embed.table"));
    let h = tape.vecmat(bag, get("dense.w"));
    let h = tape.add(h, get("dense.b"));
    let h = tape.tanh(h);
    let e = tape.vecmat(h, get("proj.w"));
    let e = tape.add(e, get("proj.b"));
    tape.l2_normalize(e)
}

fn run_vision(p: &EncoderParams, values: ArrayView2<f64>) -> Result<Embedding> {
    let arch = p.vision_arch()?;
    if values.dim() != arch.image_hw {
        return Err(Error::Dimension(format!(
            "input shape {:?} does not match encoder input {:?}",
            values.dim(),
            arch.image_hw
        )));
    }
    let mut tape = Tape::new();
    let ids = params_to_tape(&mut tape, &p.params);
    let tokens = patch_tokens(arch, values);
    let out = vision_forward(&mut tape, &ids, arch, tokens);
    Embedding::from_normalized(tape.value(out).vector().clone())
}

/// Encodes a grayscale image with values in [0, 1].
pub fn encode_image(p: &EncoderParams, img: ArrayView2<f64>) -> Result<Embedding> {
    run_vision(p, img)
}

/// Encodes a normalized event frame.
pub fn encode_event(p: &EncoderParams, frame: &EventFrame) -> Result<Embedding> {
    run_vision(p, frame.values().view())
}

/// Encodes a token-id sequence from [`tokenize`].
pub fn encode_text(p: &EncoderParams, tokens: &[u32]) -> Result<Embedding> {
    let arch = p.text_arch()?;
    if tokens.is_empty() {
        return Err(Error::Data("cannot encode an empty token sequence".into()));
    }
    if let Some(&t) = tokens.iter().find(|&&t| t as usize >= arch.vocab) {
        return Err(Error::Data(format!("token id {t} outside vocab {}", arch.vocab)));
    }
    let mut tape = Tape::new();
    let ids = params_to_tape(&mut tape, &p.params);
    let out = text_forward(&mut tape, &ids, arch, tokens);
    Embedding::from_normalized(tape.value(out).vector().clone())
}

/// Tokenizes and encodes a prompt string.
pub fn encode_prompt(p: &EncoderParams, text: &str) -> Result<Embedding> {
    let arch = p.text_arch()?;
    encode_text(p, &tokenize(text, arch.vocab))
}

// ---------------------------------------------------------------------------
// Adapter

/// Single affine map into an external embedding space.
#[derive(Debug, Clone)]
pub struct AdapterParams {
    /// Shape (z_ext, z).
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl AdapterParams {
    pub fn identity(z: usize) -> Self {
        Self { weight: Array2::eye(z), bias: Array1::zeros(z) }
    }
}

/// Applies the adapter and re-normalizes: normalize(weight . e + bias).
pub fn adapter_apply(a: &AdapterParams, e: &Embedding) -> Result<Embedding> {
    let (z_ext, z_in) = a.weight.dim();
    if z_in != e.dim() {
        return Err(Error::Dimension(format!(
            "adapter expects {z_in}-dim input, got {}",
            e.dim()
        )));
    }
    if a.bias.len() != z_ext {
        return Err(Error::Dimension(format!(
            "adapter bias has {} entries for {z_ext} outputs",
            a.bias.len()
        )));
    }
    let out = a.weight.dot(e.as_array()) + &a.bias;
    Embedding::from_unnormalized(out)
        .map_err(|_| Error::Numerical("adapter output has zero norm".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn small_arch() -> VisionArch {
        VisionArch { image_hw: (8, 8), patch: 4, depth: 2, width: 16, z: 16 }
    }

    fn random_image(seed: u64, hw: (usize, usize)) -> Array2<f64> {
        use rand::Rng;
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        Array2::from_shape_fn(hw, |_| rng.random_range(0.0..1.0))
    }

    #[test]
    fn encoding_is_deterministic() {
        let p = init_vision(&small_arch(), 1).unwrap();
        let img = random_image(2, (8, 8));
        let a = encode_image(&p, img.view()).unwrap();
        let b = encode_image(&p, img.view()).unwrap();
        assert_eq!(a.as_array(), b.as_array());
    }

    #[test]
    fn embeddings_are_unit_norm() {
        let p = init_vision(&small_arch(), 1).unwrap();
        for seed in 0..100 {
            let img = random_image(seed, (8, 8));
            let e = encode_image(&p, img.view()).unwrap();
            assert!((e.norm() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn single_pixel_change_moves_the_embedding() {
        let p = init_vision(&small_arch(), 3).unwrap();
        let img = random_image(4, (8, 8));
        let mut img2 = img.clone();
        img2[(3, 3)] = (img2[(3, 3)] + 0.5) % 1.0;
        let a = encode_image(&p, img.view()).unwrap();
        let b = encode_image(&p, img2.view()).unwrap();
        assert!(a.as_array() != b.as_array());
    }

    #[test]
    fn wrong_input_shape_is_dimension_error() {
        let p = init_vision(&small_arch(), 1).unwrap();
        let img = random_image(0, (8, 12));
        assert!(matches!(encode_image(&p, img.view()), Err(Error::Dimension(_))));
    }

    #[test]
    fn event_encoder_copy_is_bitwise_and_isolated() {
        let image = init_vision(&small_arch(), 5).unwrap();
        let mut event = init_event_encoder(&image);
        assert_eq!(event.role, Role::Event);
        assert!(!event.frozen);
        assert_eq!(event.params.checksum(), image.params.checksum());

        // Encode parity on random inputs.
        for seed in 0..50 {
            let img = random_image(seed, (8, 8));
            let a = encode_image(&image, img.view()).unwrap();
            let b = encode_image(&event, img.view()).unwrap();
            assert_eq!(a.as_array(), b.as_array());
        }

        // Mutating the copy leaves the source untouched.
        let before = image.params.checksum();
        event.params.get_mut("proj.b").unwrap().data[0] += 1.0;
        assert_eq!(image.params.checksum(), before);
        assert_ne!(event.params.checksum(), before);
    }

    #[test]
    fn text_encoding_contracts() {
        let arch = TextArch::default();
        let p = init_text(&arch, 9).unwrap();
        let a = encode_prompt(&p, "a photo of triangle").unwrap();
        let b = encode_prompt(&p, "a photo of triangle").unwrap();
        assert_eq!(a.as_array(), b.as_array());
        let c = encode_prompt(&p, "a photo of square").unwrap();
        assert!(a.as_array() != c.as_array());
        assert!((a.norm() - 1.0).abs() < 1e-6);
        assert!(matches!(encode_text(&p, &[]), Err(Error::Data(_))));
    }

    #[test]
    fn tokenizer_is_stable_and_case_insensitive() {
        let a = tokenize("A Photo Of Triangle", 512);
        let b = tokenize("a photo of triangle", 512);
        assert_eq!(a, b);
        assert_eq!(a.len(), 4);
    }

    #[test]
    fn adapter_identity_and_constant_maps() {
        let p = init_vision(&small_arch(), 1).unwrap();
        let e = encode_image(&p, random_image(1, (8, 8)).view()).unwrap();

        let id = AdapterParams::identity(16);
        let out = adapter_apply(&id, &e).unwrap();
        for (a, b) in out.as_array().iter().zip(e.as_array().iter()) {
            assert!((a - b).abs() < 1e-12);
        }

        let constant = AdapterParams {
            weight: Array2::zeros((3, 16)),
            bias: array![3.0, 0.0, 4.0],
        };
        let out = adapter_apply(&constant, &e).unwrap();
        assert!((out.as_array()[0] - 0.6).abs() < 1e-12);
        assert!((out.as_array()[2] - 0.8).abs() < 1e-12);

        let mismatched = AdapterParams { weight: Array2::zeros((3, 8)), bias: Array1::zeros(3) };
        assert!(matches!(adapter_apply(&mismatched, &e), Err(Error::Dimension(_))));
    }

    #[test]
    fn adapter_output_is_unit_norm() {
        use rand::Rng;
        let p = init_vision(&small_arch(), 1).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(77);
        for seed in 0..20 {
            let e = encode_image(&p, random_image(seed, (8, 8)).view()).unwrap();
            let a = AdapterParams {
                weight: Array2::from_shape_fn((24, 16), |_| rng.random_range(-1.0..1.0)),
                bias: Array1::from_shape_fn(24, |_| rng.random_range(-0.1..0.1)),
            };
            let out = adapter_apply(&a, &e).unwrap();
            assert!((out.norm() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn checksum_tracks_any_byte_change() {
        let p = init_vision(&small_arch(), 1).unwrap();
        let c0 = p.params.checksum();
        let mut q = p.clone();
        q.params.get_mut("patch.w").unwrap().data[7] += 1e-15;
        assert_ne!(q.params.checksum(), c0);
    }
}
