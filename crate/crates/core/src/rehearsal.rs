//! Pseudo-rehearsal and the shallow softmax classifier.
//!
//! Old categories are represented only by their centroids. At every
//! increment each centroid is sampled as a Gaussian, as many times as it has
//! absorbed exemplars, and the linear softmax layer is refit from zero on
//! those pseudo-exemplars plus the increment's real frames.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::FeatureVector;
use crate::learner::CategoryModel;
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoExemplar {
    pub values: Vec<f64>,
    pub label: String,
    /// Index of the generating centroid within its category.
    pub centroid: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub label: String,
    pub features: FeatureVector,
}

impl LabeledSample {
    pub fn new(label: impl Into<String>, features: FeatureVector) -> Self {
        LabeledSample {
            label: label.into(),
            features,
        }
    }
}

/// Draws `count` samples from each centroid's Gaussian, in centroid order.
pub fn sample_pseudo_exemplars(model: &CategoryModel, floor: f64, seed: u64) -> Result<Vec<PseudoExemplar>> {
    if !model.is_trained() {
        return Err(Error::UntrainedModel(model.name.clone()));
    }
    let mut out = Vec::with_capacity(model.total_count() as usize);
    for (i, c) in model.centroids().iter().enumerate() {
        let mut rng = rng::stream(seed, &[i as u64]);
        let d = c.dim();
        let cov = c.covariance(floor);
        let mean = c.mean();
        if c.is_full() {
            let matrix = DMatrix::from_row_slice(d, d, &cov);
            let chol = matrix.cholesky().ok_or_else(|| {
                Error::Invariant(format!("covariance of `{}` is not positive definite", model.name))
            })?;
            let l = chol.l();
            for _ in 0..c.count() {
                let z = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
                let x = &l * z;
                out.push(PseudoExemplar {
                    values: mean.iter().zip(x.iter()).map(|(m, v)| m + v).collect(),
                    label: model.name.clone(),
                    centroid: i,
                });
            }
        } else {
            let sd: Vec<f64> = (0..d).map(|j| cov[j * d + j].sqrt()).collect();
            for _ in 0..c.count() {
                let values = mean
                    .iter()
                    .zip(&sd)
                    .map(|(m, s)| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        m + s * z
                    })
                    .collect();
                out.push(PseudoExemplar {
                    values,
                    label: model.name.clone(),
                    centroid: i,
                });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            learning_rate: 1e-2,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig("learning_rate must be > 0".into()));
        }
        Ok(())
    }
}

/// A single linear layer followed by softmax.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShallowClassifier {
    pub category_order: Vec<String>,
    pub dim: usize,
    /// Row-major, one row per category.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
    pub train_config: TrainConfig,
}

impl ShallowClassifier {
    pub fn zeros(category_order: Vec<String>, dim: usize, train_config: TrainConfig) -> Self {
        let k = category_order.len();
        ShallowClassifier {
            category_order,
            dim,
            weights: vec![0.0; k * dim],
            biases: vec![0.0; k],
            train_config,
        }
    }

    pub fn num_categories(&self) -> usize {
        self.category_order.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.num_categories();
        if k == 0 || self.weights.len() != k * self.dim || self.biases.len() != k {
            return Err(Error::Invariant("classifier shape does not match category_order".into()));
        }
        Ok(())
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: x.len(),
            });
        }
        Ok(())
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.dim)
            .zip(&self.biases)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }

    pub fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        softmax(&self.logits(x))
    }

    /// Mean cross-entropy over `(rows, labels)` and its gradient with respect
    /// to the weights (row-major) and biases.
    pub fn loss_and_gradient(&self, rows: &[&[f64]], labels: &[usize]) -> (f64, Vec<f64>, Vec<f64>) {
        let k = self.num_categories();
        let d = self.dim;
        let mut gw = vec![0.0; k * d];
        let mut gb = vec![0.0; k];
        let mut loss = 0.0;
        for (x, &y) in rows.iter().zip(labels) {
            let p = self.probabilities(x);
            loss -= p[y].max(f64::MIN_POSITIVE).ln();
            for c in 0..k {
                let err = p[c] - if c == y { 1.0 } else { 0.0 };
                gb[c] += err;
                for (g, v) in gw[c * d..(c + 1) * d].iter_mut().zip(x.iter()) {
                    *g += err * v;
                }
            }
        }
        let n = rows.len().max(1) as f64;
        gw.iter_mut().for_each(|g| *g /= n);
        gb.iter_mut().for_each(|g| *g /= n);
        (loss / n, gw, gb)
    }

    pub fn loss(&self, rows: &[&[f64]], labels: &[usize]) -> f64 {
        self.loss_and_gradient(rows, labels).0
    }

    /// Fits from zero weights by mini-batch gradient descent, reshuffling
    /// each epoch from a seed-keyed stream.
    pub fn fit(
        category_order: Vec<String>,
        dim: usize,
        rows: &[&[f64]],
        labels: &[usize],
        config: &TrainConfig,
    ) -> Result<Self> {
        config.validate()?;
        if rows.is_empty() {
            return Err(Error::EmptySamples);
        }
        let mut clf = ShallowClassifier::zeros(category_order, dim, config.clone());
        let mut order: Vec<usize> = (0..rows.len()).collect();
        let mut batch_rows: Vec<&[f64]> = Vec::with_capacity(config.batch_size);
        let mut batch_labels = Vec::with_capacity(config.batch_size);
        for epoch in 0..config.epochs {
            order.sort_unstable();
            order.shuffle(&mut rng::stream(config.seed, &[epoch as u64]));
            for chunk in order.chunks(config.batch_size) {
                batch_rows.clear();
                batch_labels.clear();
                for &i in chunk {
                    batch_rows.push(rows[i]);
                    batch_labels.push(labels[i]);
                }
                let (_, gw, gb) = clf.loss_and_gradient(&batch_rows, &batch_labels);
                for (w, g) in clf.weights.iter_mut().zip(&gw) {
                    *w -= config.learning_rate * g;
                }
                for (b, g) in clf.biases.iter_mut().zip(&gb) {
                    *b -= config.learning_rate * g;
                }
            }
        }
        Ok(clf)
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

/// Trains on `new_data` plus pseudo-exemplars of `old_models`. Category order
/// is the old models' order followed by new labels in first-seen order; a
/// label present in both gets its real rows added to its pseudo-exemplars.
pub fn train(
    new_data: &[LabeledSample],
    old_models: &[&CategoryModel],
    config: &TrainConfig,
    covariance_floor: f64,
) -> Result<ShallowClassifier> {
    let Some(first) = new_data.first() else {
        return Err(Error::EmptySamples);
    };
    let dim = first.features.dim();
    for s in new_data {
        if s.features.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: s.features.dim(),
            });
        }
    }
    for m in old_models {
        if let Some(d) = m.dim() {
            if d != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: d });
            }
        }
    }

    let mut order: Vec<String> = old_models.iter().map(|m| m.name.clone()).collect();
    for s in new_data {
        if !order.contains(&s.label) {
            order.push(s.label.clone());
        }
    }
    let index: BTreeMap<&str, usize> = order.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();

    let mut pseudo = Vec::new();
    for (k, model) in old_models.iter().enumerate() {
        let seed = rng::derive_seed(config.seed, &[k as u64, rng::hash_str(&model.name)]);
        pseudo.extend(sample_pseudo_exemplars(model, covariance_floor, seed)?);
    }

    let mut rows: Vec<&[f64]> = Vec::with_capacity(pseudo.len() + new_data.len());
    let mut labels = Vec::with_capacity(rows.capacity());
    for p in &pseudo {
        rows.push(&p.values);
        labels.push(index[p.label.as_str()]);
    }
    for s in new_data {
        rows.push(s.features.as_slice());
        labels.push(index[s.label.as_str()]);
    }
    ShallowClassifier::fit(order.clone(), dim, &rows, &labels, config)
}

fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

pub fn predict_frame(clf: &ShallowClassifier, x: &[f64]) -> Result<(String, Vec<f64>)> {
    clf.check_dim(x)?;
    let p = clf.probabilities(x);
    Ok((clf.category_order[argmax_first(&p)].clone(), p))
}

/// Majority vote over frame predictions; ties go to the earlier category.
pub fn predict_episode(clf: &ShallowClassifier, frames: &[FeatureVector]) -> Result<(String, BTreeMap<String, usize>)> {
    if frames.is_empty() {
        return Err(Error::EmptySamples);
    }
    let mut votes = vec![0usize; clf.num_categories()];
    for f in frames {
        clf.check_dim(f.as_slice())?;
        votes[argmax_first(&clf.probabilities(f.as_slice()))] += 1;
    }
    let mut winner = 0;
    for (i, &v) in votes.iter().enumerate() {
        if v > votes[winner] {
            winner = i;
        }
    }
    let histogram = clf
        .category_order
        .iter()
        .zip(&votes)
        .filter(|(_, &v)| v > 0)
        .map(|(n, &v)| (n.clone(), v))
        .collect();
    Ok((clf.category_order[winner].clone(), histogram))
}
