//! Objective terms for encoder alignment: the event-image contrastive term,
//! the zero-shot preservation term against class texts, the KL alignment
//! term, their weighted combination, and the fine-tuning prediction loss.
//!
//! Every term reduces by arithmetic mean over the batch so values are
//! comparable across batch sizes. The value paths here are pure ndarray
//! code; [`grad_wrt_event_encoder`] rebuilds the same losses on the autodiff
//! tape to differentiate through the event encoder only.

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::autodiff::{log_softmax_rows, softmax_rows, Tape};
use crate::encoder::{
    grads_to_param_map, params_to_tape, patch_tokens, vision_forward, EncoderParams, ParamMap,
};
use crate::error::{Error, Result};
use crate::event::EventFrame;

/// How per-sample distributions are built for the KL term.
///
/// The alignment loss is written over embeddings, which are not
/// distributions; `ComponentSoftmax` (the default) applies a softmax over
/// the z components of each embedding, `SimilarityRows` applies it over each
/// row of the batch similarity matrix instead.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KlMode {
    #[default]
    ComponentSoftmax,
    SimilarityRows,
}

/// Temperatures and weights of the combined objective.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Temperature of the event-image contrastive term.
    pub tau_ct: f64,
    /// Temperature of the zero-shot preservation term.
    pub tau_zs: f64,
    /// Weight of the zero-shot preservation term.
    pub alpha: f64,
    /// Include the contrastive term in the total (ablation toggle).
    pub use_ct: bool,
    /// Include the KL term in the total (ablation toggle).
    pub use_kl: bool,
    pub kl_mode: KlMode,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            tau_ct: 1.0,
            tau_zs: 2.0,
            alpha: 0.1,
            use_ct: true,
            use_kl: true,
            kl_mode: KlMode::ComponentSoftmax,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_ct > 0.0) || !(self.tau_zs > 0.0) {
            return Err(Error::Config(format!(
                "temperatures must be positive (tau_ct={}, tau_zs={})",
                self.tau_ct, self.tau_zs
            )));
        }
        if !(self.alpha >= 0.0) {
            return Err(Error::Config(format!("alpha must be non-negative, got {}", self.alpha)));
        }
        Ok(())
    }
}

/// A batch of paired unit-norm embeddings: N event rows, N image rows,
/// M class-text rows, and per-sample class indices into the text rows.
#[derive(Debug, Clone)]
pub struct BatchEmbeddings {
    pub events: Array2<f64>,
    pub images: Array2<f64>,
    pub texts: Array2<f64>,
    pub labels: Vec<usize>,
}

impl BatchEmbeddings {
    pub fn validate(&self) -> Result<()> {
        let n = self.events.nrows();
        if n == 0 {
            return Err(Error::Data("empty embedding batch".into()));
        }
        if self.images.nrows() != n || self.labels.len() != n {
            return Err(Error::Dimension(format!(
                "batch sizes disagree: {} events, {} images, {} labels",
                n,
                self.images.nrows(),
                self.labels.len()
            )));
        }
        let z = self.events.ncols();
        if self.images.ncols() != z || self.texts.ncols() != z {
            return Err(Error::Dimension("embedding dimensions disagree".into()));
        }
        let m = self.texts.nrows();
        if m == 0 {
            return Err(Error::Data("empty text set".into()));
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= m) {
            return Err(Error::Data(format!("label {bad} outside [0, {m})")));
        }
        for (what, mat) in [("event", &self.events), ("image", &self.images), ("text", &self.texts)]
        {
            for (i, row) in mat.rows().into_iter().enumerate() {
                let norm = row.dot(&row).sqrt();
                if (norm - 1.0).abs() > 1e-6 {
                    return Err(Error::Data(format!(
                        "{what} embedding {i} has norm {norm}, expected 1"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Per-term values of the combined objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub ct: f64,
    pub zs: f64,
    pub kl: f64,
}

impl LossBreakdown {
    /// Name of the first non-finite term, if any.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        if !self.ct.is_finite() {
            Some("ct")
        } else if !self.zs.is_finite() {
            Some("zs")
        } else if !self.kl.is_finite() {
            Some("kl")
        } else if !self.total.is_finite() {
            Some("total")
        } else {
            None
        }
    }
}

/// InfoNCE with the event rows as queries and the image rows as keys; the
/// positive key of query i is key i.
pub fn info_nce(queries: &Array2<f64>, keys: &Array2<f64>, tau: f64) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(Error::Config(format!("temperature must be positive, got {tau}")));
    }
    let n = queries.nrows();
    if n == 0 {
        return Err(Error::Data("empty contrastive batch".into()));
    }
    if keys.nrows() != n || keys.ncols() != queries.ncols() {
        return Err(Error::Dimension(format!(
            "query set {:?} and key set {:?} disagree",
            queries.dim(),
            keys.dim()
        )));
    }
    let logits = queries.dot(&keys.t()) / tau;
    let lsm = log_softmax_rows(&logits);
    let mean_diag = (0..n).map(|i| lsm[(i, i)]).sum::<f64>() / n as f64;
    Ok(-mean_diag)
}

/// Zero-shot preservation loss: cross-entropy of both the event and the
/// image embeddings against the class-text embeddings.
pub fn zs_loss(
    events: &Array2<f64>,
    images: &Array2<f64>,
    texts: &Array2<f64>,
    labels: &[usize],
    tau: f64,
) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(Error::Config(format!("temperature must be positive, got {tau}")));
    }
    let n = events.nrows();
    if n == 0 || texts.nrows() == 0 {
        return Err(Error::Data("empty batch or text set".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= texts.nrows()) {
        return Err(Error::Data(format!("label {bad} outside [0, {})", texts.nrows())));
    }
    let event_term = cross_entropy_vs_texts(events, texts, labels, tau)?;
    let image_term = cross_entropy_vs_texts(images, texts, labels, tau)?;
    Ok(event_term + image_term)
}

fn cross_entropy_vs_texts(
    rows: &Array2<f64>,
    texts: &Array2<f64>,
    labels: &[usize],
    tau: f64,
) -> Result<f64> {
    if rows.nrows() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} rows with {} labels",
            rows.nrows(),
            labels.len()
        )));
    }
    let lsm = log_softmax_rows(&(rows.dot(&texts.t()) / tau));
    let mean = labels.iter().enumerate().map(|(i, &y)| lsm[(i, y)]).sum::<f64>()
        / labels.len() as f64;
    Ok(-mean)
}

/// KL divergence of one distribution from another; entries must be strictly
/// positive and each must sum to 1.
pub fn kl_divergence(p: ArrayView1<f64>, q: ArrayView1<f64>) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Dimension(format!("{} vs {} entries", p.len(), q.len())));
    }
    for (&a, &b) in p.iter().zip(q.iter()) {
        if !a.is_finite() || !b.is_finite() {
            return Err(Error::Data("non-finite distribution entry".into()));
        }
        if a <= 0.0 || b <= 0.0 {
            return Err(Error::Data("distribution entries must be strictly positive".into()));
        }
    }
    for (what, d) in [("p", &p), ("q", &q)] {
        let s = d.sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::Data(format!("{what} sums to {s}, not 1")));
        }
    }
    Ok(p.iter().zip(q.iter()).map(|(&a, &b)| a * (a / b).ln()).sum())
}

/// Mean per-sample KL divergence of the event distribution from the image
/// distribution, with distributions built per [`KlMode`].
pub fn kl_align(events: &Array2<f64>, images: &Array2<f64>, mode: KlMode) -> Result<f64> {
    if events.dim() != images.dim() {
        return Err(Error::Dimension(format!(
            "event batch {:?} vs image batch {:?}",
            events.dim(),
            images.dim()
        )));
    }
    if events.iter().chain(images.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite embedding component".into()));
    }
    let n = events.nrows();
    if n == 0 {
        return Err(Error::Data("empty embedding batch".into()));
    }
    let (p, q) = match mode {
        KlMode::ComponentSoftmax => (softmax_rows(events), softmax_rows(images)),
        KlMode::SimilarityRows => (
            softmax_rows(&events.dot(&images.t())),
            softmax_rows(&images.dot(&images.t())),
        ),
    };
    let mut total = 0.0;
    for (prow, qrow) in p.rows().into_iter().zip(q.rows()) {
        total += kl_divergence(prow, qrow)?;
    }
    Ok(total / n as f64)
}

/// Combined objective: contrastive + alpha * zero-shot + KL, with the
/// ablation toggles excluding terms from the total (they are still reported).
pub fn combined_loss(batch: &BatchEmbeddings, cfg: &LossConfig) -> Result<LossBreakdown> {
    cfg.validate()?;
    batch.validate()?;
    let ct = info_nce(&batch.events, &batch.images, cfg.tau_ct)?;
    let zs = zs_loss(&batch.events, &batch.images, &batch.texts, &batch.labels, cfg.tau_zs)?;
    let kl = kl_align(&batch.events, &batch.images, cfg.kl_mode)?;
    let mut total = cfg.alpha * zs;
    if cfg.use_ct {
        total += ct;
    }
    if cfg.use_kl {
        total += kl;
    }
    Ok(LossBreakdown { total, ct, zs, kl })
}

/// Cross-entropy of predicted probability rows against integer labels.
pub fn pred_loss(probs: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    if probs.nrows() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} prediction rows with {} labels",
            probs.nrows(),
            labels.len()
        )));
    }
    if probs.nrows() == 0 {
        return Err(Error::Data("empty prediction batch".into()));
    }
    for (i, row) in probs.rows().into_iter().enumerate() {
        if row.iter().any(|&v| v < 0.0 || !v.is_finite()) || (row.sum() - 1.0).abs() > 1e-6 {
            return Err(Error::Data(format!("prediction row {i} is not a distribution")));
        }
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= probs.ncols()) {
        return Err(Error::Data(format!("label {bad} outside [0, {})", probs.ncols())));
    }
    let mean = labels.iter().enumerate().map(|(i, &y)| probs[(i, y)].ln()).sum::<f64>()
        / labels.len() as f64;
    Ok(-mean)
}

/// Cross-entropy computed from similarity logits via a row softmax.
pub fn pred_loss_from_logits(logits: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    if logits.nrows() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} logit rows with {} labels",
            logits.nrows(),
            labels.len()
        )));
    }
    if logits.nrows() == 0 {
        return Err(Error::Data("empty prediction batch".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= logits.ncols()) {
        return Err(Error::Data(format!("label {bad} outside [0, {})", logits.ncols())));
    }
    let lsm = log_softmax_rows(logits);
    let mean = labels.iter().enumerate().map(|(i, &y)| lsm[(i, y)]).sum::<f64>()
        / labels.len() as f64;
    Ok(-mean)
}

/// Batch inputs for the gradient path: raw event frames plus fixed teacher
/// embeddings. The event frames are re-encoded live so the gradient can flow
/// through the event encoder.
#[derive(Debug)]
pub struct GradBatch<'a> {
    pub frames: &'a [EventFrame],
    /// Frozen image embeddings, N x z.
    pub images: &'a Array2<f64>,
    /// Frozen class-text embeddings, M x z.
    pub texts: &'a Array2<f64>,
    pub labels: &'a [usize],
}

/// Computes the combined loss and its gradient with respect to the event
/// encoder parameters only.
///
/// The image and text embeddings enter the graph as constants, so their
/// encoders receive no gradient by construction; in particular the
/// image-text half of the zero-shot term contributes a constant.
pub fn grad_wrt_event_encoder(
    batch: &GradBatch,
    cfg: &LossConfig,
    encoder: &EncoderParams,
) -> Result<(LossBreakdown, ParamMap)> {
    cfg.validate()?;
    let arch = *encoder.vision_arch()?;
    let n = batch.frames.len();
    if n == 0 {
        return Err(Error::Data("empty training batch".into()));
    }
    if batch.images.nrows() != n || batch.labels.len() != n {
        return Err(Error::Dimension(format!(
            "batch sizes disagree: {} frames, {} images, {} labels",
            n,
            batch.images.nrows(),
            batch.labels.len()
        )));
    }
    if let Some(&bad) = batch.labels.iter().find(|&&l| l >= batch.texts.nrows()) {
        return Err(Error::Data(format!(
            "label {bad} outside [0, {})",
            batch.texts.nrows()
        )));
    }

    let mut tape = Tape::new();
    let ids = params_to_tape(&mut tape, &encoder.params);

    let mut rows = Vec::with_capacity(n);
    for frame in batch.frames {
        if frame.shape() != arch.image_hw {
            return Err(Error::Dimension(format!(
                "frame shape {:?} does not match encoder input {:?}",
                frame.shape(),
                arch.image_hw
            )));
        }
        let tokens = patch_tokens(&arch, frame.values().view());
        rows.push(vision_forward(&mut tape, &ids, &arch, tokens));
    }
    let events = tape.concat_rows(rows);

    // Contrastive term: event queries against image keys.
    let images_t = tape.matrix(batch.images.t().to_owned());
    let sims = tape.matmul(events, images_t);
    let sims = tape.scale(sims, 1.0 / cfg.tau_ct);
    let lsm = tape.log_softmax_rows(sims);
    let diag = (0..n).map(|i| (i, i)).collect();
    let ct_mean = tape.mean_entries(lsm, diag);
    let ct = tape.scale(ct_mean, -1.0);

    // Zero-shot term, event half on the tape.
    let texts_t = tape.matrix(batch.texts.t().to_owned());
    let zsims = tape.matmul(events, texts_t);
    let zsims = tape.scale(zsims, 1.0 / cfg.tau_zs);
    let zlsm = tape.log_softmax_rows(zsims);
    let picks = batch.labels.iter().enumerate().map(|(i, &y)| (i, y)).collect();
    let zs_event_mean = tape.mean_entries(zlsm, picks);
    let zs_event = tape.scale(zs_event_mean, -1.0);
    // Image half: constant with zero gradient.
    let zs_image =
        cross_entropy_vs_texts(batch.images, batch.texts, batch.labels, cfg.tau_zs)?;
    let zs_image_node = tape.scalar(zs_image);
    let zs = tape.add(zs_event, zs_image_node);

    // KL alignment term.
    let kl = match cfg.kl_mode {
        KlMode::ComponentSoftmax => {
            let lsm_e = tape.log_softmax_rows(events);
            let p = tape.exp(lsm_e);
            let logq = tape.matrix(log_softmax_rows(batch.images));
            let diff = tape.sub(lsm_e, logq);
            let prod = tape.mul_elem(p, diff);
            let s = tape.sum_all(prod);
            tape.scale(s, 1.0 / n as f64)
        }
        KlMode::SimilarityRows => {
            let images_t2 = tape.matrix(batch.images.t().to_owned());
            let se = tape.matmul(events, images_t2);
            let lsm_e = tape.log_softmax_rows(se);
            let p = tape.exp(lsm_e);
            let logq = tape.matrix(log_softmax_rows(&batch.images.dot(&batch.images.t())));
            let diff = tape.sub(lsm_e, logq);
            let prod = tape.mul_elem(p, diff);
            let s = tape.sum_all(prod);
            tape.scale(s, 1.0 / n as f64)
        }
    };

    let zs_weighted = tape.scale(zs, cfg.alpha);
    let mut total = zs_weighted;
    if cfg.use_ct {
        total = tape.add(total, ct);
    }
    if cfg.use_kl {
        total = tape.add(total, kl);
    }

    let breakdown = LossBreakdown {
        total: tape.value(total).scalar(),
        ct: tape.value(ct).scalar(),
        zs: tape.value(zs).scalar(),
        kl: tape.value(kl).scalar(),
    };
    if let Some(term) = breakdown.first_non_finite() {
        return Err(Error::Numerical(format!("loss term {term} is not finite: {breakdown:?}")));
    }

    let grads = tape.backward(total);
    Ok((breakdown, grads_to_param_map(&tape, &ids, &grads)))
}

/// Fine-tuning loss and gradient: cross-entropy of softmaxed cosine
/// similarities between live event embeddings and fixed class texts.
pub fn grad_pred_loss(
    frames: &[EventFrame],
    texts: &Array2<f64>,
    labels: &[usize],
    tau: f64,
    encoder: &EncoderParams,
) -> Result<(f64, ParamMap)> {
    if !(tau > 0.0) {
        return Err(Error::Config(format!("temperature must be positive, got {tau}")));
    }
    let arch = *encoder.vision_arch()?;
    let n = frames.len();
    if n == 0 {
        return Err(Error::Data("empty training batch".into()));
    }
    if labels.len() != n {
        return Err(Error::Dimension(format!("{n} frames with {} labels", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= texts.nrows()) {
        return Err(Error::Data(format!("label {bad} outside [0, {})", texts.nrows())));
    }

    let mut tape = Tape::new();
    let ids = params_to_tape(&mut tape, &encoder.params);
    let mut rows = Vec::with_capacity(n);
    for frame in frames {
        let tokens = patch_tokens(&arch, frame.values().view());
        rows.push(vision_forward(&mut tape, &ids, &arch, tokens));
    }
    let events = tape.concat_rows(rows);
    let texts_t = tape.matrix(texts.t().to_owned());
    let sims = tape.matmul(events, texts_t);
    let sims = tape.scale(sims, 1.0 / tau);
    let lsm = tape.log_softmax_rows(sims);
    let picks = labels.iter().enumerate().map(|(i, &y)| (i, y)).collect();
    let mean = tape.mean_entries(lsm, picks);
    let loss = tape.scale(mean, -1.0);

    let value = tape.value(loss).scalar();
    if !value.is_finite() {
        return Err(Error::Numerical(format!("prediction loss is not finite: {value}")));
    }
    let grads = tape.backward(loss);
    Ok((value, grads_to_param_map(&tape, &ids, &grads)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{init_vision, VisionArch};
    use crate::gradcheck;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn ortho_pair() -> (Array2<f64>, Array2<f64>) {
        let e = array![[1.0, 0.0], [0.0, 1.0]];
        (e.clone(), e)
    }

    fn random_unit_rows(rng: &mut ChaCha12Rng, n: usize, z: usize) -> Array2<f64> {
        let mut m = Array2::from_shape_fn((n, z), |_| rng.random_range(-1.0..1.0));
        for mut row in m.rows_mut() {
            let norm = row.iter().map(|&v| v * v).sum::<f64>().sqrt();
            row.mapv_inplace(|v| v / norm);
        }
        m
    }

    #[test]
    fn info_nce_single_pair_is_zero() {
        let q = array![[1.0, 0.0]];
        assert!(info_nce(&q, &q, 1.0).unwrap().abs() < 1e-15);
    }

    #[test]
    fn info_nce_closed_form() {
        let (q, k) = ortho_pair();
        let expect = (1.0 + (-1.0f64).exp()).ln();
        assert!((info_nce(&q, &k, 1.0).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn info_nce_is_non_negative() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let n = rng.random_range(1..6);
            let q = random_unit_rows(&mut rng, n, 8);
            let k = random_unit_rows(&mut rng, n, 8);
            assert!(info_nce(&q, &k, 1.0).unwrap() >= 0.0);
        }
    }

    #[test]
    fn info_nce_errors() {
        let empty = Array2::<f64>::zeros((0, 4));
        assert!(matches!(info_nce(&empty, &empty, 1.0), Err(Error::Data(_))));
        let q = array![[1.0, 0.0]];
        assert!(matches!(info_nce(&q, &q, 0.0), Err(Error::Config(_))));
        assert!(matches!(info_nce(&q, &q, -1.0), Err(Error::Config(_))));
    }

    #[test]
    fn info_nce_invariant_under_pair_permutation() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let q = random_unit_rows(&mut rng, 5, 8);
        let k = random_unit_rows(&mut rng, 5, 8);
        let base = info_nce(&q, &k, 0.7).unwrap();
        let perm = [3usize, 1, 4, 0, 2];
        let qp = Array2::from_shape_fn(q.dim(), |(i, j)| q[(perm[i], j)]);
        let kp = Array2::from_shape_fn(k.dim(), |(i, j)| k[(perm[i], j)]);
        assert!((info_nce(&qp, &kp, 0.7).unwrap() - base).abs() < 1e-12);
    }

    #[test]
    fn zs_loss_single_class_is_zero() {
        let e = array![[1.0, 0.0]];
        let t = array![[0.0, 1.0]];
        assert!(zs_loss(&e, &e, &t, &[0], 1.0).unwrap().abs() < 1e-15);
    }

    #[test]
    fn zs_loss_closed_form() {
        let e = array![[1.0, 0.0]];
        let texts = array![[1.0, 0.0], [0.0, 1.0]];
        let expect = 2.0 * (1.0 + (-1.0f64).exp()).ln();
        assert!((zs_loss(&e, &e, &texts, &[0], 1.0).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn zs_loss_terms_are_symmetric_when_embeddings_match() {
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let e = random_unit_rows(&mut rng, 4, 8);
        let t = random_unit_rows(&mut rng, 3, 8);
        let labels = [0usize, 2, 1, 0];
        let total = zs_loss(&e, &e, &t, &labels, 2.0).unwrap();
        let single = cross_entropy_vs_texts(&e, &t, &labels, 2.0).unwrap();
        assert!((total - 2.0 * single).abs() < 1e-12);
    }

    #[test]
    fn kl_divergence_closed_form() {
        let p = array![0.5, 0.5];
        let q = array![0.9, 0.1];
        let expect = 0.5 * (0.5f64 / 0.9).ln() + 0.5 * (0.5f64 / 0.1).ln();
        assert!((kl_divergence(p.view(), q.view()).unwrap() - expect).abs() < 1e-12);
        assert!((expect - 0.510_825_623_765_990_6).abs() < 1e-12);
    }

    #[test]
    fn kl_of_identical_distributions_is_zero() {
        let p = array![0.2, 0.3, 0.5];
        assert_eq!(kl_divergence(p.view(), p.view()).unwrap(), 0.0);
    }

    #[test]
    fn kl_is_non_negative() {
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        for _ in 0..1000 {
            let mut p = Array1::from_shape_fn(6, |_| rng.random_range(0.01..1.0));
            let mut q = Array1::from_shape_fn(6, |_| rng.random_range(0.01..1.0));
            p /= p.sum();
            q /= q.sum();
            assert!(kl_divergence(p.view(), q.view()).unwrap() >= -1e-15);
        }
    }

    #[test]
    fn kl_align_of_equal_batches_is_zero() {
        let mut rng = ChaCha12Rng::seed_from_u64(10);
        let e = random_unit_rows(&mut rng, 4, 8);
        for mode in [KlMode::ComponentSoftmax, KlMode::SimilarityRows] {
            assert!(kl_align(&e, &e, mode).unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn kl_rejects_non_finite_input() {
        let mut e = array![[1.0, 0.0]];
        let i = e.clone();
        e[(0, 0)] = f64::NAN;
        assert!(matches!(kl_align(&e, &i, KlMode::ComponentSoftmax), Err(Error::Data(_))));
    }

    #[test]
    fn combined_loss_breakdown_sums_exactly() {
        let mut rng = ChaCha12Rng::seed_from_u64(12);
        let batch = BatchEmbeddings {
            events: random_unit_rows(&mut rng, 5, 8),
            images: random_unit_rows(&mut rng, 5, 8),
            texts: random_unit_rows(&mut rng, 3, 8),
            labels: vec![0, 1, 2, 0, 1],
        };
        let cfg = LossConfig::default();
        let b = combined_loss(&batch, &cfg).unwrap();
        assert!((b.total - (b.ct + cfg.alpha * b.zs + b.kl)).abs() < 1e-12);

        let cfg0 = LossConfig { alpha: 0.0, ..cfg };
        let b0 = combined_loss(&batch, &cfg0).unwrap();
        assert_eq!(b0.total, b0.ct + b0.kl);
    }

    #[test]
    fn combined_loss_zero_configuration() {
        // N=1 (contrastive degenerate), M=1 (zero-shot degenerate), E=I (KL zero).
        let e = array![[1.0, 0.0]];
        let t = array![[0.0, 1.0]];
        let batch = BatchEmbeddings { events: e.clone(), images: e, texts: t, labels: vec![0] };
        let b = combined_loss(&batch, &LossConfig::default()).unwrap();
        assert!(b.total.abs() < 1e-12);
    }

    #[test]
    fn pred_loss_examples() {
        let perfect = array![[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]];
        assert_eq!(pred_loss(&perfect, &[0, 2]).unwrap(), 0.0);

        let uniform = Array2::from_elem((3, 4), 0.25);
        assert!((pred_loss(&uniform, &[0, 1, 3]).unwrap() - 4.0f64.ln()).abs() < 1e-12);

        let p = array![[0.8, 0.2], [0.3, 0.7]];
        let expect = -(0.8f64.ln() + 0.7f64.ln()) / 2.0;
        assert!((pred_loss(&p, &[0, 1]).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn pred_loss_rejects_non_distributions() {
        let bad = array![[0.5, 0.6]];
        assert!(matches!(pred_loss(&bad, &[0]), Err(Error::Data(_))));
        let neg = array![[1.2, -0.2]];
        assert!(matches!(pred_loss(&neg, &[0]), Err(Error::Data(_))));
    }

    #[test]
    fn pred_loss_from_logits_matches_softmax_route() {
        let mut rng = ChaCha12Rng::seed_from_u64(14);
        let logits = Array2::from_shape_fn((4, 5), |_| rng.random_range(-2.0..2.0));
        let labels = [1usize, 0, 4, 2];
        let via_probs = pred_loss(&softmax_rows(&logits), &labels).unwrap();
        let direct = pred_loss_from_logits(&logits, &labels).unwrap();
        assert!((via_probs - direct).abs() < 1e-12);
    }

    fn tiny_grad_setup(
        seed: u64,
    ) -> (Vec<EventFrame>, Array2<f64>, Array2<f64>, Vec<usize>, EncoderParams) {
        let arch = VisionArch { image_hw: (8, 8), patch: 4, depth: 2, width: 16, z: 16 };
        let enc = init_vision(&arch, seed).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0xabcd);
        let frames: Vec<EventFrame> = (0..2)
            .map(|_| {
                EventFrame::from_values(Array2::from_shape_fn((8, 8), |_| {
                    rng.random_range(0.0..0.99)
                }))
                .unwrap()
            })
            .collect();
        let images = random_unit_rows(&mut rng, 2, 16);
        let texts = random_unit_rows(&mut rng, 3, 16);
        (frames, images, texts, vec![0, 2], enc)
    }

    #[test]
    fn tape_loss_value_matches_pure_path() {
        let (frames, images, texts, labels, enc) = tiny_grad_setup(21);
        let cfg = LossConfig::default();
        let batch = GradBatch { frames: &frames, images: &images, texts: &texts, labels: &labels };
        let (breakdown, _) = grad_wrt_event_encoder(&batch, &cfg, &enc).unwrap();

        let events = gradcheck::encode_event_rows(&enc, &frames).unwrap();
        let pure = combined_loss(
            &BatchEmbeddings { events, images, texts, labels },
            &cfg,
        )
        .unwrap();
        assert!((breakdown.total - pure.total).abs() < 1e-12);
        assert!((breakdown.ct - pure.ct).abs() < 1e-12);
        assert!((breakdown.zs - pure.zs).abs() < 1e-12);
        assert!((breakdown.kl - pure.kl).abs() < 1e-12);
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let (frames, images, texts, labels, enc) = tiny_grad_setup(33);
        let cfg = LossConfig::default();
        let batch = GradBatch { frames: &frames, images: &images, texts: &texts, labels: &labels };
        let (_, analytic) = grad_wrt_event_encoder(&batch, &cfg, &enc).unwrap();

        let fd = gradcheck::finite_difference_grad(&enc, 1e-5, |e| {
            let events = gradcheck::encode_event_rows(e, &frames)?;
            Ok(combined_loss(
                &BatchEmbeddings {
                    events,
                    images: images.clone(),
                    texts: texts.clone(),
                    labels: labels.clone(),
                },
                &cfg,
            )?
            .total)
        })
        .unwrap();
        let err = gradcheck::l2_relative_error(&analytic, &fd);
        assert!(err <= 1e-4, "relative error {err}");
    }

    #[test]
    fn alpha_only_scales_the_zs_gradient_path() {
        let (frames, images, texts, labels, enc) = tiny_grad_setup(44);
        let batch = GradBatch { frames: &frames, images: &images, texts: &texts, labels: &labels };

        let with = LossConfig { alpha: 0.1, ..LossConfig::default() };
        let without = LossConfig { alpha: 0.0, ..LossConfig::default() };
        let zs_only = LossConfig {
            alpha: 1.0,
            use_ct: false,
            use_kl: false,
            ..LossConfig::default()
        };
        let (_, g_with) = grad_wrt_event_encoder(&batch, &with, &enc).unwrap();
        let (_, g_without) = grad_wrt_event_encoder(&batch, &without, &enc).unwrap();
        let (_, g_zs) = grad_wrt_event_encoder(&batch, &zs_only, &enc).unwrap();

        for (name, p) in g_with.iter() {
            let b = g_without.get(name).unwrap();
            let z = g_zs.get(name).unwrap();
            for i in 0..p.data.len() {
                let diff = p.data[i] - b.data[i];
                assert!(
                    (diff - 0.1 * z.data[i]).abs() < 1e-10,
                    "{name}[{i}]: {diff} vs {}",
                    0.1 * z.data[i]
                );
            }
        }
    }

    #[test]
    fn finetune_gradient_matches_finite_differences() {
        let (frames, _, texts, labels, enc) = tiny_grad_setup(55);
        let (_, analytic) = grad_pred_loss(&frames, &texts, &labels, 2.0, &enc).unwrap();
        let fd = gradcheck::finite_difference_grad(&enc, 1e-5, |e| {
            let events = gradcheck::encode_event_rows(e, &frames)?;
            pred_loss_from_logits(&(events.dot(&texts.t()) / 2.0), &labels)
        })
        .unwrap();
        let err = gradcheck::l2_relative_error(&analytic, &fd);
        assert!(err <= 1e-4, "relative error {err}");
    }
}
