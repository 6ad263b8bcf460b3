//! Episode sources: episode files, JSON manifests, a seeded synthetic
//! generator, and a registry of pluggable feature extractors.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::norms::{Question, DEFAULT_ACTIONS};
use crate::rng;

/// A fixed-dimension vector of finite reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidConfig("feature vector must have dim >= 1".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Parse {
                line: 0,
                message: format!("entry {i} is not finite"),
            });
        }
        Ok(FeatureVector(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for FeatureVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        FeatureVector::new(values)
    }
}

impl From<FeatureVector> for Vec<f64> {
    fn from(v: FeatureVector) -> Self {
        v.0
    }
}

impl AsRef<[f64]> for FeatureVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// One location visit: an ordered batch of frames sharing a dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub id: String,
    pub frames: Vec<FeatureVector>,
    pub label: Option<String>,
    pub answers: BTreeMap<Question, bool>,
}

impl Episode {
    pub fn new(id: impl Into<String>, frames: Vec<FeatureVector>) -> Result<Self> {
        let id = id.into();
        let Some(first) = frames.first() else {
            return Err(Error::EmptyEpisode(id));
        };
        let dim = first.dim();
        if let Some(bad) = frames.iter().find(|f| f.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: bad.dim(),
            });
        }
        Ok(Episode {
            id,
            frames,
            label: None,
            answers: BTreeMap::new(),
        })
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn with_answers(mut self, answers: BTreeMap<Question, bool>) -> Self {
        self.answers = answers;
        self
    }

    pub fn dim(&self) -> usize {
        self.frames[0].dim()
    }

    pub fn check_dim(&self, expected: usize) -> Result<()> {
        if self.dim() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                found: self.dim(),
            });
        }
        Ok(())
    }
}

/// Parses episode text: a `dim=<d>` header followed by rows of `d`
/// comma-separated reals. Lines starting with `#` and blank lines are skipped.
pub fn parse_episode(id: &str, text: &str, expected_dim: usize) -> Result<Episode> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let Some((line, header)) = lines.next() else {
        return Err(Error::EmptyEpisode(id.to_string()));
    };
    let dim: usize = header
        .strip_prefix("dim=")
        .and_then(|d| d.trim().parse().ok())
        .ok_or_else(|| Error::Parse {
            line,
            message: format!("expected `dim=<d>` header, found `{header}`"),
        })?;
    if dim != expected_dim {
        return Err(Error::DimensionMismatch {
            expected: expected_dim,
            found: dim,
        });
    }

    let mut frames = Vec::new();
    for (line, row) in lines {
        let values = row
            .split(',')
            .map(|tok| {
                let tok = tok.trim();
                match tok.parse::<f64>() {
                    Ok(v) if v.is_finite() => Ok(v),
                    _ => Err(Error::Parse {
                        line,
                        message: format!("`{tok}` is not a finite decimal number"),
                    }),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        if values.len() != expected_dim {
            return Err(Error::DimensionMismatch {
                expected: expected_dim,
                found: values.len(),
            });
        }
        frames.push(FeatureVector(values));
    }
    Episode::new(id, frames)
}

/// Loads an episode file. The episode id is the file stem.
pub fn load_episode(path: impl AsRef<Path>, expected_dim: usize) -> Result<Episode> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_episode(&id, &text, expected_dim)
}

/// Canonical episode text. `parse_episode` of the result reproduces the frames
/// exactly; floats are printed in shortest round-trip form.
pub fn format_episode(episode: &Episode) -> String {
    let mut out = format!("dim={}\n", episode.dim());
    for frame in &episode.frames {
        for (i, v) in frame.as_slice().iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            write!(out, "{v}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn write_episode(episode: &Episode, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_episode(episode)).map_err(|e| Error::file(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    /// Scripted yes/no answers keyed by question (`action` for permission,
    /// `operator:action` otherwise).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub answers: BTreeMap<String, bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub dim: usize,
    pub actions: Vec<String>,
    pub episodes: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidConfig("manifest dim must be >= 1".into()));
        }
        if self.actions.is_empty() {
            return Err(Error::EmptyVocabulary);
        }
        let mut seen = BTreeSet::new();
        for e in &self.episodes {
            if !seen.insert(e.id.as_str()) {
                return Err(Error::InvalidConfig(format!("duplicate episode id `{}`", e.id)));
            }
            for key in e.answers.keys() {
                key.parse::<Question>()?;
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let manifest: Manifest = serde_json::from_str(text)?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"
    }

    /// Loads every referenced episode, resolving relative paths against `base`.
    pub fn load_episodes(&self, base: impl AsRef<Path>) -> Result<Vec<Episode>> {
        let base = base.as_ref();
        self.episodes
            .iter()
            .map(|entry| {
                let path = base.join(&entry.path);
                let mut episode = load_episode(&path, self.dim)?;
                episode.id = entry.id.clone();
                episode.label = entry.label.clone();
                episode.answers = parse_answers(&entry.answers)?;
                Ok(episode)
            })
            .collect()
    }
}

fn parse_answers(raw: &BTreeMap<String, bool>) -> Result<BTreeMap<Question, bool>> {
    raw.iter()
        .map(|(k, &v)| Ok((k.parse::<Question>()?, v)))
        .collect()
}

/// Loads a manifest and its episodes from disk.
pub fn load_manifest_with_episodes(path: impl AsRef<Path>) -> Result<(Manifest, Vec<Episode>)> {
    let path = path.as_ref();
    let manifest = Manifest::load(path)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let episodes = manifest.load_episodes(base)?;
    Ok((manifest, episodes))
}

pub const DEFAULT_CATEGORY_NAMES: [&str; 5] = ["bathroom", "classroom", "library", "office", "kitchen"];

/// Synthetic Gaussian-mixture categories standing in for camera episodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorSpec {
    pub num_categories: usize,
    pub centers_per_category: usize,
    pub dim: usize,
    pub per_center_stddev: f64,
    pub frames_per_episode: usize,
    pub visits_per_category: usize,
    /// Centers are drawn uniformly from `[-center_range, center_range]^dim`.
    pub center_range: f64,
    /// Minimum distance between any two centers, in units of the stddev.
    pub min_center_separation: f64,
    pub seed: u64,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        GeneratorSpec {
            num_categories: 5,
            centers_per_category: 1,
            dim: 32,
            per_center_stddev: 0.1,
            frames_per_episode: 20,
            visits_per_category: 2,
            center_range: 1.0,
            min_center_separation: 10.0,
            seed: 0,
        }
    }
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("num_categories", self.num_categories),
            ("centers_per_category", self.centers_per_category),
            ("dim", self.dim),
            ("frames_per_episode", self.frames_per_episode),
            ("visits_per_category", self.visits_per_category),
        ];
        for (name, value) in counts {
            if value == 0 {
                return Err(Error::InvalidSpec(format!("{name} must be >= 1")));
            }
        }
        if !(self.per_center_stddev > 0.0 && self.per_center_stddev.is_finite()) {
            return Err(Error::InvalidSpec("per_center_stddev must be > 0".into()));
        }
        if !(self.center_range > 0.0 && self.center_range.is_finite()) {
            return Err(Error::InvalidSpec("center_range must be > 0".into()));
        }
        if !(self.min_center_separation >= 0.0) {
            return Err(Error::InvalidSpec("min_center_separation must be >= 0".into()));
        }
        Ok(())
    }
}

pub fn category_name(index: usize) -> String {
    DEFAULT_CATEGORY_NAMES
        .get(index)
        .map(|s| s.to_string())
        .unwrap_or_else(|| format!("category{index}"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub manifest: Manifest,
    pub episodes: Vec<Episode>,
    /// Generating centers per category, in category order.
    pub centers: BTreeMap<String, Vec<Vec<f64>>>,
}

impl SyntheticData {
    /// Writes `manifest.json` and one file per episode under `dir`.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir.join("episodes")).map_err(|e| Error::file(dir, e))?;
        for (entry, episode) in self.manifest.episodes.iter().zip(&self.episodes) {
            write_episode(episode, dir.join(&entry.path))?;
        }
        let manifest_path = dir.join("manifest.json");
        fs::write(&manifest_path, self.manifest.to_json()).map_err(|e| Error::file(&manifest_path, e))?;
        Ok(manifest_path)
    }
}

/// Generates a manifest of category visits in a seeded random order. Each
/// visit draws every frame from a uniformly chosen center of its category.
/// Every visit carries scripted answers for the default vocabulary, fixed
/// per category.
pub fn generate_synthetic(spec: &GeneratorSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let sigma = spec.per_center_stddev;
    let min_sep = spec.min_center_separation * sigma;

    let mut center_rng = rng::stream(spec.seed, &[1]);
    let mut all_centers: Vec<Vec<f64>> = Vec::new();
    let mut centers = BTreeMap::new();
    let mut names = Vec::new();
    for c in 0..spec.num_categories {
        let name = category_name(c);
        let mut own = Vec::new();
        for _ in 0..spec.centers_per_category {
            let mut tries = 0;
            let center = loop {
                let candidate: Vec<f64> = (0..spec.dim)
                    .map(|_| center_rng.random_range(-spec.center_range..=spec.center_range))
                    .collect();
                if all_centers.iter().all(|o| euclidean(o, &candidate) >= min_sep) {
                    break candidate;
                }
                tries += 1;
                if tries > 10_000 {
                    return Err(Error::InvalidSpec(
                        "cannot place centers with the requested separation".into(),
                    ));
                }
            };
            all_centers.push(center.clone());
            own.push(center);
        }
        centers.insert(name.clone(), own);
        names.push(name);
    }

    let mut answer_rng = rng::stream(spec.seed, &[2]);
    let truths: Vec<BTreeMap<String, bool>> = names
        .iter()
        .map(|_| {
            DEFAULT_ACTIONS
                .iter()
                .map(|a| (a.to_string(), answer_rng.random_bool(0.5)))
                .collect()
        })
        .collect();

    let mut visits: Vec<(usize, usize)> = (0..spec.num_categories)
        .flat_map(|c| (0..spec.visits_per_category).map(move |v| (c, v)))
        .collect();
    visits.shuffle(&mut rng::stream(spec.seed, &[3]));

    let noise = Normal::new(0.0, sigma).map_err(|e| Error::InvalidSpec(e.to_string()))?;
    let mut entries = Vec::new();
    let mut episodes = Vec::new();
    for (i, &(c, v)) in visits.iter().enumerate() {
        let name = &names[c];
        let id = format!("ep{i:02}-{name}-{v}");
        let mut frame_rng = rng::stream(spec.seed, &[4, i as u64]);
        let own = &centers[name];
        let frames = (0..spec.frames_per_episode)
            .map(|_| {
                let center = &own[frame_rng.random_range(0..own.len())];
                FeatureVector(
                    center
                        .iter()
                        .map(|m| m + noise.sample(&mut frame_rng))
                        .collect(),
                )
            })
            .collect();
        let answers = truths[c].clone();
        let episode = Episode::new(id.clone(), frames)?
            .with_label(name.clone())
            .with_answers(parse_answers(&answers)?);
        entries.push(ManifestEntry {
            id: id.clone(),
            path: format!("episodes/{id}.csv"),
            label: Some(name.clone()),
            answers,
        });
        episodes.push(episode);
    }

    Ok(SyntheticData {
        manifest: Manifest {
            dim: spec.dim,
            actions: DEFAULT_ACTIONS.iter().map(|s| s.to_string()).collect(),
            episodes: entries,
        },
        episodes,
        centers,
    })
}

pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Turns raw sensor bytes into a feature vector.
pub trait FeatureExtractor: Send + Sync {
    /// Output dimension, if fixed independently of the input.
    fn output_dim(&self) -> Option<usize>;
    fn extract(&self, raw: &[u8]) -> Result<FeatureVector>;
}

/// Parses already-numeric input: UTF-8 reals separated by commas or whitespace.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityExtractor;

impl FeatureExtractor for IdentityExtractor {
    fn output_dim(&self) -> Option<usize> {
        None
    }

    fn extract(&self, raw: &[u8]) -> Result<FeatureVector> {
        let text = std::str::from_utf8(raw).map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?;
        let values = text
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| {
                t.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| Error::Parse {
                    line: 1,
                    message: format!("`{t}` is not a finite decimal number"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        FeatureVector::new(values)
    }
}

pub const IDENTITY_EXTRACTOR: &str = "identity";

/// Named extractors for a fixed session dimension. Registration happens at
/// startup; lookups are read-only afterwards.
pub struct ExtractorRegistry {
    dim: usize,
    extractors: BTreeMap<String, Box<dyn FeatureExtractor>>,
}

impl ExtractorRegistry {
    /// A registry holding only the identity extractor.
    pub fn new(dim: usize) -> Self {
        let mut extractors: BTreeMap<String, Box<dyn FeatureExtractor>> = BTreeMap::new();
        extractors.insert(IDENTITY_EXTRACTOR.into(), Box::new(IdentityExtractor));
        ExtractorRegistry { dim, extractors }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn register(&mut self, name: impl Into<String>, extractor: Box<dyn FeatureExtractor>) -> Result<()> {
        if let Some(d) = extractor.output_dim() {
            if d != self.dim {
                return Err(Error::InvalidConfig(format!(
                    "extractor produces dim {d}, session dim is {}",
                    self.dim
                )));
            }
        }
        self.extractors.insert(name.into(), extractor);
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.extractors.keys().map(String::as_str)
    }

    pub fn extract(&self, name: &str, raw: &[u8]) -> Result<FeatureVector> {
        let extractor = self
            .extractors
            .get(name)
            .ok_or_else(|| Error::NoExtractor(name.to_string()))?;
        let v = extractor.extract(raw)?;
        if v.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: v.dim(),
            });
        }
        Ok(v)
    }
}
