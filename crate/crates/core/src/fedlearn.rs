//! Contamination classifier and its federated training.
//!
//! The model is multinomial logistic regression. Weights are stored flat:
//! a row-major `classes x features` matrix followed by one bias per class.
//! The serialized form is `classes: u32 LE | features: u32 LE | values: f64 LE...`.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envsim::GasVector;
use crate::error::{invalid, Error, Result};

/// Maps a gas reading to classifier features.
///
/// Each gas contributes `u = ln(1 + max(0, c - background) / scale)`, then
/// `u^2`, and finally the smallest `u` across gases, which is large only
/// when every gas is elevated at once.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub background: GasVector,
    pub scale: GasVector,
}

impl Default for FeatureMap {
    fn default() -> Self {
        Self {
            background: GasVector::new(420.0, 1.0, 2.0),
            scale: GasVector::new(800.0, 32.0, 800.0),
        }
    }
}

impl FeatureMap {
    pub const DIM: usize = 7;

    pub fn features(&self, gases: &GasVector) -> Vec<f64> {
        let c = gases.to_array();
        let bg = self.background.to_array();
        let sc = self.scale.to_array();
        let u: [f64; 3] = std::array::from_fn(|g| (1.0 + (c[g] - bg[g]).max(0.0) / sc[g]).ln());
        let mut out = Vec::with_capacity(Self::DIM);
        out.extend_from_slice(&u);
        out.extend(u.iter().map(|v| v * v));
        out.push(u.iter().copied().fold(f64::INFINITY, f64::min));
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelWeights {
    pub classes: usize,
    pub features: usize,
    pub values: Vec<f64>,
    pub version: u64,
}

impl ModelWeights {
    pub fn zeros(classes: usize, features: usize) -> Self {
        Self {
            classes,
            features,
            values: vec![0.0; classes * features + classes],
            version: 0,
        }
    }

    pub fn from_values(classes: usize, features: usize, values: Vec<f64>) -> Result<Self> {
        let expected = classes * features + classes;
        if values.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("weights must be finite"));
        }
        Ok(Self {
            classes,
            features,
            values,
            version: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn weight(&self, class: usize, feature: usize) -> f64 {
        self.values[class * self.features + feature]
    }

    pub fn bias(&self, class: usize) -> f64 {
        self.values[self.classes * self.features + class]
    }

    pub fn bias_mut(&mut self, class: usize) -> &mut f64 {
        let i = self.classes * self.features + class;
        &mut self.values[i]
    }

    fn same_shape(&self, other: &ModelWeights) -> Result<()> {
        if self.classes != other.classes || self.features != other.features {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: other.len(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Dataset {
    pub rows: Vec<Sample>,
}

impl Dataset {
    pub fn new(rows: Vec<Sample>) -> Self {
        Self { rows }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn validate(&self, features: usize, classes: usize) -> Result<()> {
        for r in &self.rows {
            if r.features.len() != features {
                return Err(Error::DimensionMismatch {
                    expected: features,
                    got: r.features.len(),
                });
            }
            if r.label >= classes {
                return Err(invalid(format!("label {} out of range", r.label)));
            }
            if r.features.iter().any(|v| !v.is_finite()) {
                return Err(invalid("features must be finite"));
            }
        }
        Ok(())
    }

    /// Seeded shuffle, then the first `train_fraction` of rows go to train.
    pub fn split<R: Rng + ?Sized>(mut self, train_fraction: f64, rng: &mut R) -> (Dataset, Dataset) {
        self.rows.shuffle(rng);
        let cut = ((self.rows.len() as f64) * train_fraction).round() as usize;
        let test = self.rows.split_off(cut.min(self.rows.len()));
        (self, Dataset::new(test))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalUpdate {
    pub weights: ModelWeights,
    pub n_samples: usize,
    pub robot_id: u32,
    pub session_index: u32,
}

fn scores(weights: &ModelWeights, x: &[f64]) -> Vec<f64> {
    (0..weights.classes)
        .map(|c| {
            let row = &weights.values[c * weights.features..(c + 1) * weights.features];
            row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + weights.bias(c)
        })
        .collect()
}

fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

/// Class probabilities for one feature vector.
pub fn predict(weights: &ModelWeights, features: &[f64]) -> Result<Vec<f64>> {
    if features.len() != weights.features {
        return Err(Error::DimensionMismatch {
            expected: weights.features,
            got: features.len(),
        });
    }
    let mut p = scores(weights, features);
    softmax_in_place(&mut p);
    Ok(p)
}

/// Mean cross-entropy and its gradient over `rows`, same layout as the weights.
pub fn loss_and_gradient(weights: &ModelWeights, rows: &[Sample]) -> (f64, Vec<f64>) {
    let k = weights.classes;
    let f = weights.features;
    let mut grad = vec![0.0; weights.len()];
    if rows.is_empty() {
        return (0.0, grad);
    }
    let mut loss = 0.0;
    for r in rows {
        let mut p = scores(weights, &r.features);
        softmax_in_place(&mut p);
        loss -= p[r.label].max(f64::MIN_POSITIVE).ln();
        for c in 0..k {
            let delta = p[c] - if c == r.label { 1.0 } else { 0.0 };
            for (g, x) in grad[c * f..(c + 1) * f].iter_mut().zip(&r.features) {
                *g += delta * x;
            }
            grad[k * f + c] += delta;
        }
    }
    let n = rows.len() as f64;
    for g in grad.iter_mut() {
        *g /= n;
    }
    (loss / n, grad)
}

pub fn loss(weights: &ModelWeights, data: &Dataset) -> f64 {
    loss_and_gradient(weights, &data.rows).0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainParams {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Mini-batch size; 0 trains on the full batch.
    pub batch_size: usize,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            epochs: 3,
            batch_size: 32,
        }
    }
}

/// Mini-batch SGD from the global weights; epochs reshuffle with `rng`.
pub fn local_train<R: Rng + ?Sized>(
    global: &ModelWeights,
    data: &Dataset,
    params: &TrainParams,
    robot_id: u32,
    session_index: u32,
    rng: &mut R,
) -> Result<LocalUpdate> {
    if !(params.learning_rate >= 0.0) || params.epochs == 0 {
        return Err(invalid("learning rate must be non-negative and epochs >= 1"));
    }
    let mut weights = global.clone();
    if data.is_empty() {
        return Ok(LocalUpdate {
            weights,
            n_samples: 0,
            robot_id,
            session_index,
        });
    }
    data.validate(global.features, global.classes)?;

    let batch = if params.batch_size == 0 {
        data.len()
    } else {
        params.batch_size
    };
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut scratch = Vec::with_capacity(batch);
    for _ in 0..params.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(batch) {
            scratch.clear();
            scratch.extend(chunk.iter().map(|&i| data.rows[i].clone()));
            let (_, grad) = loss_and_gradient(&weights, &scratch);
            for (w, g) in weights.values.iter_mut().zip(&grad) {
                *w -= params.learning_rate * g;
            }
        }
    }
    Ok(LocalUpdate {
        weights,
        n_samples: data.len(),
        robot_id,
        session_index,
    })
}

/// Sample-weighted average of the updates that carry data. Summation runs in
/// ascending robot id so results are bit-reproducible.
pub fn fedavg(updates: &[LocalUpdate]) -> Result<ModelWeights> {
    let mut live: Vec<&LocalUpdate> = updates.iter().filter(|u| u.n_samples > 0).collect();
    if live.is_empty() {
        return Err(Error::NoProgress);
    }
    live.sort_by_key(|u| (u.robot_id, u.session_index));
    for u in &live[1..] {
        live[0].weights.same_shape(&u.weights)?;
    }
    let total: usize = live.iter().map(|u| u.n_samples).sum();
    let mut values = vec![0.0; live[0].weights.len()];
    for u in &live {
        let coef = u.n_samples as f64 / total as f64;
        for (acc, w) in values.iter_mut().zip(&u.weights.values) {
            *acc += coef * w;
        }
    }
    Ok(ModelWeights {
        classes: live[0].weights.classes,
        features: live[0].weights.features,
        values,
        version: live.iter().map(|u| u.weights.version).max().unwrap_or(0) + 1,
    })
}

/// Sample-weighted mean of per-robot mean cross-entropy.
pub fn global_loss(weights: &ModelWeights, datasets: &[Dataset]) -> Result<f64> {
    let total: usize = datasets.iter().map(Dataset::len).sum();
    if total == 0 {
        return Err(invalid("global loss needs at least one sample"));
    }
    let mut acc = 0.0;
    for d in datasets.iter().filter(|d| !d.is_empty()) {
        d.validate(weights.features, weights.classes)?;
        acc += d.len() as f64 / total as f64 * loss(weights, d);
    }
    Ok(acc)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartialMetrics {
    pub accuracy: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionMetrics {
    pub accuracy: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub roc_auc: f64,
}

/// One-vs-rest AUC by trapezoidal integration of the ROC curve; tied scores
/// form a single threshold step.
pub fn binary_roc_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let (mut prev_tpr, mut prev_fpr) = (0.0, 0.0);
    let mut area = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let s = scores[idx[i]];
        while i < idx.len() && scores[idx[i]] == s {
            if positive[idx[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let tpr = tp as f64 / n_pos as f64;
        let fpr = fp as f64 / n_neg as f64;
        area += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
        prev_tpr = tpr;
        prev_fpr = fpr;
    }
    Some(area)
}

/// Accuracy, support-weighted precision/recall/F1, and support-weighted
/// one-vs-rest ROC AUC. A single-class test set returns
/// [`Error::RocAucUndefined`] carrying the remaining metrics.
pub fn evaluate(weights: &ModelWeights, test: &Dataset) -> Result<SessionMetrics> {
    if test.is_empty() {
        return Err(invalid("empty test set"));
    }
    test.validate(weights.features, weights.classes)?;
    let k = weights.classes;
    let n = test.len();

    let probs: Vec<Vec<f64>> = test
        .rows
        .iter()
        .map(|r| predict(weights, &r.features))
        .collect::<Result<_>>()?;
    let preds: Vec<usize> = probs
        .iter()
        .map(|p| {
            p.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0
        })
        .collect();

    let mut tp = vec![0usize; k];
    let mut predicted = vec![0usize; k];
    let mut support = vec![0usize; k];
    for (r, &p) in test.rows.iter().zip(&preds) {
        support[r.label] += 1;
        predicted[p] += 1;
        if p == r.label {
            tp[p] += 1;
        }
    }
    let correct: usize = tp.iter().sum();
    let accuracy = correct as f64 / n as f64;

    let (mut precision, mut f1) = (0.0, 0.0);
    for c in 0..k {
        if support[c] == 0 {
            continue;
        }
        let w = support[c] as f64 / n as f64;
        let p_c = if predicted[c] > 0 {
            tp[c] as f64 / predicted[c] as f64
        } else {
            0.0
        };
        let r_c = tp[c] as f64 / support[c] as f64;
        let f_c = if p_c + r_c > 0.0 {
            2.0 * p_c * r_c / (p_c + r_c)
        } else {
            0.0
        };
        precision += w * p_c;
        f1 += w * f_c;
    }
    // support-weighted recall: sum_c (s_c / n) * (tp_c / s_c) = sum_c tp_c / n
    let recall = correct as f64 / n as f64;

    let present = support.iter().filter(|&&s| s > 0).count();
    if present < 2 {
        return Err(Error::RocAucUndefined(PartialMetrics {
            accuracy,
            f1,
            precision,
            recall,
        }));
    }
    let mut roc_auc = 0.0;
    for c in 0..k {
        if support[c] == 0 {
            continue;
        }
        let s: Vec<f64> = probs.iter().map(|p| p[c]).collect();
        let pos: Vec<bool> = test.rows.iter().map(|r| r.label == c).collect();
        if let Some(auc) = binary_roc_auc(&s, &pos) {
            roc_auc += support[c] as f64 / n as f64 * auc;
        }
    }

    Ok(SessionMetrics {
        accuracy,
        f1,
        precision,
        recall,
        roc_auc,
    })
}

pub fn serialize_weights(weights: &ModelWeights) -> Result<Vec<u8>> {
    if weights.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Encoding("weights must be finite".into()));
    }
    let classes = u32::try_from(weights.classes).map_err(|_| Error::Encoding("too many classes".into()))?;
    let features = u32::try_from(weights.features).map_err(|_| Error::Encoding("too many features".into()))?;
    let mut out = Vec::with_capacity(8 + 8 * weights.len());
    out.extend_from_slice(&classes.to_le_bytes());
    out.extend_from_slice(&features.to_le_bytes());
    for v in &weights.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Serialized size for a model shape.
pub fn serialized_len(classes: usize, features: usize) -> usize {
    8 + 8 * (classes * features + classes)
}

pub fn deserialize_weights(bytes: &[u8]) -> Result<ModelWeights> {
    if bytes.len() < 8 {
        return Err(Error::Decoding("weight blob shorter than its header".into()));
    }
    let classes = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let features = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if classes == 0 || features == 0 {
        return Err(Error::Decoding("header declares an empty model".into()));
    }
    let expected = classes
        .checked_mul(features)
        .and_then(|v| v.checked_add(classes))
        .and_then(|v| v.checked_mul(8))
        .and_then(|v| v.checked_add(8))
        .ok_or_else(|| Error::Decoding("header dimensions overflow".into()))?;
    if bytes.len() != expected {
        return Err(Error::Decoding(format!(
            "header implies {expected} bytes, blob has {}",
            bytes.len()
        )));
    }
    let values: Vec<f64> = bytes[8..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    ModelWeights::from_values(classes, features, values).map_err(|e| Error::Decoding(e.to_string()))
}
