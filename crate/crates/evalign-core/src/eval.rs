//! Evaluation surface: zero-shot classification against prompt embeddings,
//! anomaly scoring with AUC, and cross-modal retrieval metrics.
//!
//! Tie-breaks are deterministic everywhere (lowest class index, lowest key
//! id) so repeated runs produce identical reports.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::{Array1, Array2};
use rayon::prelude::*;

use crate::dataset::{ClassInfo, Split};
use crate::encoder::{encode_event, encode_image, encode_prompt, Embedding, EncoderParams};
use crate::error::{Error, Result};

/// Default prompt template; `{class}` is replaced by the class name.
pub const DEFAULT_PROMPT_TEMPLATE: &str = "a photo of {class}";

/// Applies a prompt template to a class name.
pub fn apply_template(template: &str, class_name: &str) -> Result<String> {
    if template.matches("{class}").count() != 1 {
        return Err(Error::Config(format!(
            "prompt template must contain one {{class}} placeholder: {template:?}"
        )));
    }
    Ok(template.replace("{class}", class_name))
}

/// Encoded class prompts: one unit-norm embedding per class.
#[derive(Debug, Clone)]
pub struct PromptSet {
    pub class_ids: Vec<usize>,
    pub class_names: Vec<String>,
    pub template: String,
    /// M x z embedding rows aligned with `class_ids`.
    pub embeddings: Array2<f64>,
}

impl PromptSet {
    /// Builds prompts from class names via the template.
    pub fn from_names(
        text_encoder: &EncoderParams,
        names: &[String],
        template: &str,
    ) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::Data("empty prompt set".into()));
        }
        let arch = text_encoder.text_arch()?;
        let mut embeddings = Array2::zeros((names.len(), arch.z));
        for (i, name) in names.iter().enumerate() {
            let prompt = apply_template(template, name)?;
            let e = encode_prompt(text_encoder, &prompt)?;
            embeddings.row_mut(i).assign(e.as_array());
        }
        Ok(Self {
            class_ids: (0..names.len()).collect(),
            class_names: names.to_vec(),
            template: template.to_string(),
            embeddings,
        })
    }

    /// Builds prompts for dataset classes, keeping their global ids.
    pub fn from_classes(text_encoder: &EncoderParams, classes: &[ClassInfo]) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::Data("empty prompt set".into()));
        }
        let arch = text_encoder.text_arch()?;
        let mut embeddings = Array2::zeros((classes.len(), arch.z));
        for (i, class) in classes.iter().enumerate() {
            let e = encode_prompt(text_encoder, &class.prompt)?;
            embeddings.row_mut(i).assign(e.as_array());
        }
        Ok(Self {
            class_ids: classes.iter().map(|c| c.id).collect(),
            class_names: classes.iter().map(|c| c.name.clone()).collect(),
            template: String::new(),
            embeddings,
        })
    }

    pub fn len(&self) -> usize {
        self.class_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.class_ids.is_empty()
    }

    /// Position of a global class id within this prompt set.
    pub fn local_index(&self, class_id: usize) -> Option<usize> {
        self.class_ids.iter().position(|&c| c == class_id)
    }
}

/// Predicts the class whose prompt embedding is most similar, with
/// probabilities from a temperature-1 softmax over the similarities.
/// Exact similarity ties resolve to the lowest class index.
pub fn zero_shot_classify(e: &Embedding, prompts: &PromptSet) -> Result<(usize, Vec<f64>)> {
    if prompts.is_empty() {
        return Err(Error::Data("empty prompt set".into()));
    }
    let sims: Vec<f64> = prompts.embeddings.rows().into_iter().map(|r| r.dot(e.as_array())).collect();
    let mut best = 0usize;
    for (i, &s) in sims.iter().enumerate() {
        if s > sims[best] {
            best = i;
        }
    }
    let max = sims.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = sims.iter().map(|&s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok((best, exps.into_iter().map(|v| v / sum).collect()))
}

/// Fraction of exact matches.
pub fn top1_accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} predictions vs {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::Data("empty prediction set".into()));
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / predictions.len() as f64)
}

/// Anomaly score in [0, 1]: softmax over (max similarity to the normal
/// prompts, max similarity to the abnormal prompts), read at the abnormal
/// coordinate. Higher means more anomalous.
pub fn anomaly_score(
    e: &Embedding,
    normal_prompts: &[Embedding],
    abnormal_prompts: &[Embedding],
) -> Result<f64> {
    if normal_prompts.is_empty() || abnormal_prompts.is_empty() {
        return Err(Error::Data("both prompt groups must be nonempty".into()));
    }
    let max_sim = |group: &[Embedding]| {
        group.iter().map(|p| p.dot(e)).fold(f64::NEG_INFINITY, f64::max)
    };
    let sn = max_sim(normal_prompts);
    let sa = max_sim(abnormal_prompts);
    Ok(1.0 / (1.0 + (sn - sa).exp()))
}

/// Area under the ROC curve via the Mann-Whitney statistic: the fraction of
/// (positive, negative) pairs ranked correctly, ties counting one half.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Data("non-finite score".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::Data(format!("label {bad} not in {{0, 1}}")));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Numerical(
            "AUC undefined: need at least one positive and one negative".into(),
        ));
    }

    // Midrank assignment over ascending scores.
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1 ..= j+1 share the midrank.
        let midrank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if labels[idx] == 1 {
                rank_sum_pos += midrank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Queries, keys, and ground-truth relevance for one retrieval direction.
#[derive(Debug, Clone)]
pub struct RetrievalSet {
    pub queries: Vec<(u64, Array1<f64>)>,
    pub keys: Vec<(u64, Array1<f64>)>,
    pub relevance: BTreeMap<u64, BTreeSet<u64>>,
}

impl RetrievalSet {
    pub fn validate(&self) -> Result<()> {
        if self.queries.is_empty() || self.keys.is_empty() {
            return Err(Error::Data("retrieval set needs queries and keys".into()));
        }
        let key_ids: BTreeSet<u64> = self.keys.iter().map(|(id, _)| *id).collect();
        if key_ids.len() != self.keys.len() {
            return Err(Error::Data("duplicate key ids".into()));
        }
        for (qid, _) in &self.queries {
            let rel = self
                .relevance
                .get(qid)
                .ok_or_else(|| Error::Data(format!("query {qid} has no relevance entry")))?;
            if rel.is_empty() {
                return Err(Error::Data(format!("query {qid} has an empty relevance set")));
            }
            if let Some(missing) = rel.iter().find(|id| !key_ids.contains(id)) {
                return Err(Error::Data(format!(
                    "query {qid} marks unknown key {missing} relevant"
                )));
            }
        }
        Ok(())
    }
}

/// Recall@k, mAP@k, and MRR over a retrieval set.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalMetrics {
    pub ks: Vec<usize>,
    pub recall_at: Vec<f64>,
    pub map_at: Vec<f64>,
    pub mrr: f64,
}

/// Ranks keys per query by cosine similarity (ties broken by ascending key
/// id) and aggregates Recall@k, mAP@k, and MRR over the queries.
///
/// AP@k is normalized by min(|relevant|, k), so single-relevant queries give
/// mAP@1 = Recall@1.
pub fn retrieval_metrics(rs: &RetrievalSet, ks: &[usize]) -> Result<RetrievalMetrics> {
    rs.validate()?;
    if ks.is_empty() || ks.iter().any(|&k| k == 0) {
        return Err(Error::Config("ks must be positive".into()));
    }

    let normalize = |v: &Array1<f64>| -> Result<Array1<f64>> {
        let n = v.dot(v).sqrt();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::Data("cannot rank a zero or non-finite vector".into()));
        }
        Ok(v / n)
    };
    let keys: Vec<(u64, Array1<f64>)> = rs
        .keys
        .iter()
        .map(|(id, v)| Ok((*id, normalize(v)?)))
        .collect::<Result<_>>()?;

    let mut recall_sums = vec![0.0; ks.len()];
    let mut ap_sums = vec![0.0; ks.len()];
    let mut mrr_sum = 0.0;
    for (qid, qvec) in &rs.queries {
        let q = normalize(qvec)?;
        let mut ranked: Vec<(f64, u64)> =
            keys.iter().map(|(id, k)| (q.dot(k), *id)).collect();
        ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let relevant = &rs.relevance[qid];

        let mut first_rank: Option<usize> = None;
        let mut hits_at: Vec<usize> = Vec::new(); // 1-based ranks of relevant hits
        for (rank0, (_, kid)) in ranked.iter().enumerate() {
            if relevant.contains(kid) {
                let rank = rank0 + 1;
                first_rank.get_or_insert(rank);
                hits_at.push(rank);
            }
        }
        if let Some(r) = first_rank {
            mrr_sum += 1.0 / r as f64;
        }
        for (ki, &k) in ks.iter().enumerate() {
            let hits_in_k = hits_at.iter().filter(|&&r| r <= k).count();
            if hits_in_k > 0 {
                recall_sums[ki] += 1.0;
            }
            let ap: f64 = hits_at
                .iter()
                .take_while(|&&r| r <= k)
                .enumerate()
                .map(|(i, &r)| (i + 1) as f64 / r as f64)
                .sum::<f64>()
                / relevant.len().min(k) as f64;
            ap_sums[ki] += ap;
        }
    }
    let n = rs.queries.len() as f64;
    Ok(RetrievalMetrics {
        ks: ks.to_vec(),
        recall_at: recall_sums.into_iter().map(|v| v / n).collect(),
        map_at: ap_sums.into_iter().map(|v| v / n).collect(),
        mrr: mrr_sum / n,
    })
}

/// Zero-shot top-1 accuracy of the event encoder over a split, classifying
/// each event frame against the given prompts.
pub fn zero_shot_split_accuracy(
    encoder: &EncoderParams,
    split: &Split,
    prompts: &PromptSet,
) -> Result<f64> {
    if split.is_empty() {
        return Err(Error::Data("empty split".into()));
    }
    let results: Result<Vec<(usize, usize)>> = split
        .samples
        .par_iter()
        .map(|s| {
            let e = encode_event(encoder, &s.frame)?;
            let (pred, _) = zero_shot_classify(&e, prompts)?;
            Ok((prompts.class_ids[pred], s.class_id))
        })
        .collect();
    let results = results?;
    let (preds, labels): (Vec<usize>, Vec<usize>) = results.into_iter().unzip();
    top1_accuracy(&preds, &labels)
}

/// Same as [`zero_shot_split_accuracy`] but classifying the paired grayscale
/// images through an image encoder.
pub fn zero_shot_image_accuracy(
    encoder: &EncoderParams,
    split: &Split,
    prompts: &PromptSet,
) -> Result<f64> {
    if split.is_empty() {
        return Err(Error::Data("empty split".into()));
    }
    let results: Result<Vec<(usize, usize)>> = split
        .samples
        .par_iter()
        .map(|s| {
            let e = encode_image(encoder, s.image.view())?;
            let (pred, _) = zero_shot_classify(&e, prompts)?;
            Ok((prompts.class_ids[pred], s.class_id))
        })
        .collect();
    let results = results?;
    let (preds, labels): (Vec<usize>, Vec<usize>) = results.into_iter().unzip();
    top1_accuracy(&preds, &labels)
}
