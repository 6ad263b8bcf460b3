//! Threshold-driven online clustering of category exemplars and open-set
//! novelty detection against the learned centroids.
//!
//! Each category is clustered on its own: a sample joins its nearest centroid
//! when closer than the distance threshold, otherwise it seeds a new one.
//! Centroids keep Welford accumulators, so means are exact running means and
//! variances never need the raw samples again.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{euclidean, FeatureVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovarianceMode {
    Diagonal,
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnerConfig {
    /// Distance threshold shared by clustering and novelty detection.
    pub distance_threshold: f64,
    /// An episode is novel when more than this fraction of frames are novel.
    pub unknown_frame_fraction: f64,
    pub covariance_mode: CovarianceMode,
    /// Added to every variance before sampling.
    pub covariance_floor: f64,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            distance_threshold: DEFAULT_DISTANCE_THRESHOLD,
            unknown_frame_fraction: 0.5,
            covariance_mode: CovarianceMode::Diagonal,
            covariance_floor: 1e-6,
        }
    }
}

/// Calibrated on the default synthetic generator (dim 32, stddev 0.1); see
/// `session::calibrate_threshold`.
pub const DEFAULT_DISTANCE_THRESHOLD: f64 = 1.5;

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.distance_threshold > 0.0 && self.distance_threshold.is_finite()) {
            return Err(Error::InvalidConfig("distance_threshold must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.unknown_frame_fraction) {
            return Err(Error::InvalidConfig("unknown_frame_fraction must be in [0, 1]".into()));
        }
        if !(self.covariance_floor > 0.0 && self.covariance_floor.is_finite()) {
            return Err(Error::InvalidConfig("covariance_floor must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CentroidRecord {
    mean: Vec<f64>,
    variance: Vec<f64>,
    count: u64,
    sum_sq: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    comoment: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "CentroidRecord", try_from = "CentroidRecord")]
pub struct Centroid {
    mean: Vec<f64>,
    count: u64,
    /// Per-dimension sum of squared deviations from the mean.
    sum_sq: Vec<f64>,
    /// Row-major co-moment matrix, present in full covariance mode.
    comoment: Option<Vec<f64>>,
}

impl From<Centroid> for CentroidRecord {
    fn from(c: Centroid) -> Self {
        CentroidRecord {
            variance: c.variance(),
            mean: c.mean,
            count: c.count,
            sum_sq: c.sum_sq,
            comoment: c.comoment,
        }
    }
}

impl TryFrom<CentroidRecord> for Centroid {
    type Error = Error;

    fn try_from(r: CentroidRecord) -> Result<Self> {
        let d = r.mean.len();
        if d == 0 || r.sum_sq.len() != d || r.variance.len() != d {
            return Err(Error::Invariant("centroid vectors disagree in length".into()));
        }
        if r.count == 0 {
            return Err(Error::Invariant("centroid count must be >= 1".into()));
        }
        if r.sum_sq.iter().any(|&s| s < 0.0) {
            return Err(Error::Invariant("negative centroid variance".into()));
        }
        if matches!(&r.comoment, Some(m) if m.len() != d * d) {
            return Err(Error::Invariant("comoment must be dim x dim".into()));
        }
        Ok(Centroid {
            mean: r.mean,
            count: r.count,
            sum_sq: r.sum_sq,
            comoment: r.comoment,
        })
    }
}

impl Centroid {
    pub fn seed(x: &[f64], mode: CovarianceMode) -> Self {
        let d = x.len();
        Centroid {
            mean: x.to_vec(),
            count: 1,
            sum_sq: vec![0.0; d],
            comoment: (mode == CovarianceMode::Full).then(|| vec![0.0; d * d]),
        }
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn is_full(&self) -> bool {
        self.comoment.is_some()
    }

    /// Folds one sample into the running mean and deviation accumulators.
    pub fn absorb(&mut self, x: &[f64]) {
        self.count += 1;
        let n = self.count as f64;
        let before: Vec<f64> = x.iter().zip(&self.mean).map(|(xi, m)| xi - m).collect();
        for (m, dx) in self.mean.iter_mut().zip(&before) {
            *m += dx / n;
        }
        let after: Vec<f64> = x.iter().zip(&self.mean).map(|(xi, m)| xi - m).collect();
        for ((s, b), a) in self.sum_sq.iter_mut().zip(&before).zip(&after) {
            *s += b * a;
        }
        if let Some(c) = self.comoment.as_mut() {
            let d = before.len();
            for i in 0..d {
                for j in 0..d {
                    c[i * d + j] += before[i] * after[j];
                }
            }
        }
    }

    /// Population variance per dimension, without the floor.
    pub fn variance(&self) -> Vec<f64> {
        let n = self.count as f64;
        self.sum_sq.iter().map(|s| (s / n).max(0.0)).collect()
    }

    /// Covariance used for sampling: row-major `dim x dim`, floor added to
    /// the diagonal. Off-diagonal entries are zero in diagonal mode.
    pub fn covariance(&self, floor: f64) -> Vec<f64> {
        let d = self.dim();
        let n = self.count as f64;
        let mut cov = vec![0.0; d * d];
        match &self.comoment {
            Some(c) => {
                for i in 0..d {
                    for j in 0..d {
                        cov[i * d + j] = 0.5 * (c[i * d + j] + c[j * d + i]) / n;
                    }
                }
            }
            None => {
                for (i, v) in self.variance().into_iter().enumerate() {
                    cov[i * d + i] = v;
                }
            }
        }
        for i in 0..d {
            cov[i * d + i] = cov[i * d + i].max(0.0) + floor;
        }
        cov
    }
}

/// The centroids learned for one category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryModel {
    pub name: String,
    centroids: Vec<Centroid>,
    total_count: u64,
}

impl CategoryModel {
    pub fn new(name: impl Into<String>) -> Self {
        CategoryModel {
            name: name.into(),
            centroids: Vec::new(),
            total_count: 0,
        }
    }

    pub fn centroids(&self) -> &[Centroid] {
        &self.centroids
    }

    pub fn total_count(&self) -> u64 {
        self.total_count
    }

    pub fn is_trained(&self) -> bool {
        !self.centroids.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.centroids.first().map(Centroid::dim)
    }

    pub fn validate(&self) -> Result<()> {
        let sum: u64 = self.centroids.iter().map(Centroid::count).sum();
        if sum != self.total_count {
            return Err(Error::Invariant(format!(
                "category `{}`: total_count {} != sum of centroid counts {sum}",
                self.name, self.total_count
            )));
        }
        if let Some(d) = self.dim() {
            if self.centroids.iter().any(|c| c.dim() != d) {
                return Err(Error::Invariant(format!("category `{}`: mixed dims", self.name)));
            }
        }
        Ok(())
    }

    /// Index and distance of the nearest centroid; lowest index wins ties.
    pub fn nearest(&self, x: &[f64]) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for (i, c) in self.centroids.iter().enumerate() {
            let d = euclidean(c.mean(), x);
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        best
    }
}

/// Clusters `samples` into `model` in order. The model is left untouched if
/// any sample has the wrong dimension.
pub fn cluster_samples(
    model: &mut CategoryModel,
    samples: &[FeatureVector],
    config: &LearnerConfig,
) -> Result<()> {
    let Some(first) = samples.first() else {
        return Err(Error::EmptySamples);
    };
    let dim = model.dim().unwrap_or(first.dim());
    if let Some(bad) = samples.iter().find(|s| s.dim() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: bad.dim(),
        });
    }

    for x in samples {
        let x = x.as_slice();
        match model.nearest(x) {
            Some((i, d)) if d < config.distance_threshold => model.centroids[i].absorb(x),
            _ => model.centroids.push(Centroid::seed(x, config.covariance_mode)),
        }
        model.total_count += 1;
    }
    Ok(())
}

/// The globally nearest centroid's category and distance. Ties go to the
/// lexicographically smallest (category name, centroid index).
pub fn min_distance(models: &BTreeMap<String, CategoryModel>, x: &[f64]) -> Result<(String, f64)> {
    let mut best: Option<(&str, f64)> = None;
    for (name, model) in models {
        if let Some((_, d)) = model.nearest(x) {
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((name, d));
            }
        }
    }
    best.map(|(n, d)| (n.to_string(), d))
        .ok_or(Error::EmptyKnowledgeBase)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Known,
    Novel,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Known => "known",
            Verdict::Novel => "novel",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoveltyReport {
    pub verdict: Verdict,
    /// Fraction of frames at or beyond the threshold.
    pub novel_fraction: f64,
    /// Per-frame distance to the nearest centroid; empty when nothing is learned.
    pub distances: Vec<f64>,
    pub nearest: Vec<String>,
}

/// Episode-level open-set decision: a frame is novel when its nearest
/// centroid is at least `distance_threshold` away, and the episode is novel
/// when the novel fraction exceeds `unknown_frame_fraction`.
pub fn detect_novel(
    models: &BTreeMap<String, CategoryModel>,
    frames: &[FeatureVector],
    config: &LearnerConfig,
) -> Result<NoveltyReport> {
    if frames.is_empty() {
        return Err(Error::EmptySamples);
    }
    let learned_dim = models.values().find_map(CategoryModel::dim);
    let Some(dim) = learned_dim else {
        return Ok(NoveltyReport {
            verdict: Verdict::Novel,
            novel_fraction: 1.0,
            distances: Vec::new(),
            nearest: Vec::new(),
        });
    };
    if let Some(bad) = frames.iter().find(|f| f.dim() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: bad.dim(),
        });
    }

    let mut distances = Vec::with_capacity(frames.len());
    let mut nearest = Vec::with_capacity(frames.len());
    for f in frames {
        let (name, d) = min_distance(models, f.as_slice())?;
        distances.push(d);
        nearest.push(name);
    }
    let novel = distances
        .iter()
        .filter(|&&d| d >= config.distance_threshold)
        .count();
    let novel_fraction = novel as f64 / frames.len() as f64;
    let verdict = if novel_fraction > config.unknown_frame_fraction {
        Verdict::Novel
    } else {
        Verdict::Known
    };
    Ok(NoveltyReport {
        verdict,
        novel_fraction,
        distances,
        nearest,
    })
}

/// Folds a confirmed episode of a known category into that category's model.
pub fn update_known(
    models: &mut BTreeMap<String, CategoryModel>,
    label: &str,
    frames: &[FeatureVector],
    config: &LearnerConfig,
) -> Result<()> {
    let model = models
        .get_mut(label)
        .ok_or_else(|| Error::UnknownCategory(label.to_string()))?;
    cluster_samples(model, frames, config)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fv(v: &[f64]) -> FeatureVector {
        FeatureVector::new(v.to_vec()).unwrap()
    }

    fn cfg(d: f64) -> LearnerConfig {
        LearnerConfig {
            distance_threshold: d,
            ..Default::default()
        }
    }

    fn model_with(name: &str, mean: &[f64], count: u64) -> CategoryModel {
        let mut c = Centroid::seed(mean, CovarianceMode::Diagonal);
        c.count = count;
        CategoryModel {
            name: name.into(),
            centroids: vec![c],
            total_count: count,
        }
    }

    #[test]
    fn first_sample_seeds_model() {
        let mut m = CategoryModel::new("a");
        cluster_samples(&mut m, &[fv(&[0.0, 0.0])], &cfg(1.0)).unwrap();
        assert_eq!(m.centroids().len(), 1);
        assert_eq!(m.centroids()[0].mean(), &[0.0, 0.0]);
        assert_eq!(m.centroids()[0].count(), 1);
    }

    #[test]
    fn close_sample_moves_weighted_mean() {
        let mut m = model_with("a", &[1.0, 0.0], 3);
        cluster_samples(&mut m, &[fv(&[5.0, 4.0])], &cfg(10.0)).unwrap();
        assert_eq!(m.centroids()[0].mean(), &[2.0, 1.0]);
        assert_eq!(m.centroids()[0].count(), 4);
        assert_eq!(m.total_count(), 4);
    }

    #[test]
    fn far_sample_spawns_centroid() {
        let mut m = model_with("a", &[0.0, 0.0], 1);
        cluster_samples(&mut m, &[fv(&[5.0, 0.0])], &cfg(1.0)).unwrap();
        let means: Vec<_> = m.centroids().iter().map(|c| c.mean().to_vec()).collect();
        assert_eq!(means, vec![vec![0.0, 0.0], vec![5.0, 0.0]]);
    }

    #[test]
    fn distance_equal_to_threshold_spawns() {
        let mut m = model_with("a", &[0.0, 0.0], 1);
        cluster_samples(&mut m, &[fv(&[1.0, 0.0])], &cfg(1.0)).unwrap();
        assert_eq!(m.centroids().len(), 2);
    }

    #[test]
    fn cluster_rejects_bad_input_without_mutation() {
        let mut m = model_with("a", &[0.0, 0.0], 1);
        let before = m.clone();
        assert!(matches!(cluster_samples(&mut m, &[], &cfg(1.0)), Err(Error::EmptySamples)));
        let err = cluster_samples(&mut m, &[fv(&[0.1, 0.0]), fv(&[1.0, 2.0, 3.0])], &cfg(1.0));
        assert!(matches!(err, Err(Error::DimensionMismatch { expected: 2, found: 3 })));
        assert_eq!(m, before);
    }

    #[test]
    fn min_distance_and_tie_break() {
        let mut models = BTreeMap::new();
        models.insert("A".to_string(), model_with("A", &[0.0, 0.0], 1));
        models.insert("B".to_string(), model_with("B", &[10.0, 0.0], 1));
        assert_eq!(min_distance(&models, &[1.0, 0.0]).unwrap(), ("A".into(), 1.0));

        let mut models = BTreeMap::new();
        models.insert("B".to_string(), model_with("B", &[2.0, 0.0], 1));
        models.insert("A".to_string(), model_with("A", &[0.0, 0.0], 1));
        assert_eq!(min_distance(&models, &[1.0, 0.0]).unwrap(), ("A".into(), 1.0));

        assert!(matches!(
            min_distance(&BTreeMap::new(), &[1.0]),
            Err(Error::EmptyKnowledgeBase)
        ));
    }

    #[test]
    fn empty_models_mean_novel() {
        let r = detect_novel(&BTreeMap::new(), &[fv(&[0.0])], &cfg(1.0)).unwrap();
        assert_eq!(r.verdict, Verdict::Novel);
    }

    #[test]
    fn zero_distance_frames_are_known() {
        let mut models = BTreeMap::new();
        models.insert("A".to_string(), model_with("A", &[1.0, 1.0], 2));
        let frames = vec![fv(&[1.0, 1.0]); 4];
        let r = detect_novel(&models, &frames, &cfg(0.5)).unwrap();
        assert_eq!(r.verdict, Verdict::Known);
        assert_eq!(r.novel_fraction, 0.0);
        assert_eq!(r.distances, vec![0.0; 4]);
    }

    #[test]
    fn novelty_vote_is_strictly_above_fraction() {
        let mut models = BTreeMap::new();
        models.insert("A".to_string(), model_with("A", &[0.0], 1));
        let frames = vec![fv(&[0.0]), fv(&[5.0])];
        let r = detect_novel(&models, &frames, &cfg(1.0)).unwrap();
        assert_eq!(r.novel_fraction, 0.5);
        assert_eq!(r.verdict, Verdict::Known);
        let r = detect_novel(&models, &frames, &LearnerConfig { unknown_frame_fraction: 0.49, ..cfg(1.0) }).unwrap();
        assert_eq!(r.verdict, Verdict::Novel);
    }

    #[test]
    fn detect_novel_checks_dimension() {
        let mut models = BTreeMap::new();
        models.insert("A".to_string(), model_with("A", &[0.0, 0.0], 1));
        assert!(matches!(
            detect_novel(&models, &[fv(&[0.0])], &cfg(1.0)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn update_known_rules() {
        let mut models = BTreeMap::new();
        let mut m = CategoryModel::new("A");
        let frames = vec![fv(&[0.0, 0.0]), fv(&[0.1, 0.0]), fv(&[3.0, 0.0])];
        cluster_samples(&mut m, &frames, &cfg(1.0)).unwrap();
        models.insert("A".to_string(), m);
        let before = models["A"].clone();

        let mut twin = models.clone();
        update_known(&mut models, "A", &frames, &cfg(1.0)).unwrap();
        update_known(&mut twin, "A", &frames, &cfg(1.0)).unwrap();
        assert_eq!(models, twin);

        let after = &models["A"];
        assert_eq!(after.total_count(), 2 * before.total_count());
        for (b, a) in before.centroids().iter().zip(after.centroids()) {
            assert!(a.count() >= b.count());
        }
        assert_eq!(after.centroids().len(), before.centroids().len());

        assert!(matches!(
            update_known(&mut models, "Z", &frames, &cfg(1.0)),
            Err(Error::UnknownCategory(_))
        ));
    }

    #[test]
    fn full_mode_diagonal_matches_diagonal_mode() {
        let samples: Vec<_> = (0..10)
            .map(|i| fv(&[(i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()]))
            .collect();
        let mut diag = CategoryModel::new("a");
        let mut full = CategoryModel::new("a");
        cluster_samples(&mut diag, &samples, &cfg(100.0)).unwrap();
        let full_cfg = LearnerConfig {
            covariance_mode: CovarianceMode::Full,
            ..cfg(100.0)
        };
        cluster_samples(&mut full, &samples, &full_cfg).unwrap();
        let cd = diag.centroids()[0].covariance(1e-6);
        let cf = full.centroids()[0].covariance(1e-6);
        assert!((cd[0] - cf[0]).abs() < 1e-12);
        assert!((cd[3] - cf[3]).abs() < 1e-12);
        assert_eq!(cf[1], cf[2]);
        assert!(cf[1].abs() > 0.0);
    }

    #[test]
    fn centroid_serialization_checks_invariants() {
        let json = r#"{"mean":[0.0],"variance":[0.0],"count":0,"sum_sq":[0.0]}"#;
        assert!(serde_json::from_str::<Centroid>(json).is_err());
        let mut c = Centroid::seed(&[1.0, 2.0], CovarianceMode::Diagonal);
        c.absorb(&[2.0, 2.5]);
        let back: Centroid = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }
}
