//! The per-visit teaching protocol and knowledge-base persistence.
//!
//! One visit runs: novelty check and prediction, label from the oracle,
//! clustering into the confirmed category, classifier refit with
//! pseudo-rehearsal, then a short round of permission questions. Raw frames
//! are dropped once the visit is absorbed.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, Write};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::ingest::{euclidean, Episode, FeatureVector};
use crate::learner::{cluster_samples, detect_novel, CategoryModel, LearnerConfig, NoveltyReport, Verdict};
use crate::norms::{HalvingRule, Norm, NormStore, Question, DEFAULT_ACTIONS, DEFAULT_QUESTION_BUDGET};
use crate::rehearsal::{predict_episode, train, LabeledSample, ShallowClassifier, TrainConfig};
use crate::rng;

pub const KB_VERSION: &str = "1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuestionPolicy {
    /// Uniform random permission questions, keyed by the store seed.
    #[default]
    Random,
    /// Ask exactly the questions an episode carries scripted answers for.
    Scripted,
}

impl std::str::FromStr for QuestionPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(QuestionPolicy::Random),
            "scripted" => Ok(QuestionPolicy::Scripted),
            _ => Err(Error::InvalidConfig(format!("unknown question policy `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub learner: LearnerConfig,
    /// The seed field is overridden per increment from the knowledge-base seed.
    pub train: TrainConfig,
    pub question_policy: QuestionPolicy,
    /// Refit the classifier every k episodes; new categories always refit.
    pub retrain_every: u64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            learner: LearnerConfig::default(),
            train: TrainConfig::default(),
            question_policy: QuestionPolicy::Random,
            retrain_every: 1,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<()> {
        self.learner.validate()?;
        self.train.validate()?;
        if self.retrain_every == 0 {
            return Err(Error::InvalidConfig("retrain_every must be >= 1".into()));
        }
        Ok(())
    }
}

/// Settings the norm store is created with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NormSettings {
    pub actions: Vec<String>,
    pub question_budget: usize,
    pub exclude_certain: bool,
}

impl Default for NormSettings {
    fn default() -> Self {
        NormSettings {
            actions: DEFAULT_ACTIONS.iter().map(|s| s.to_string()).collect(),
            question_budget: DEFAULT_QUESTION_BUDGET,
            exclude_certain: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeBase {
    pub version: String,
    pub dim: usize,
    pub config: SessionConfig,
    pub categories: BTreeMap<String, CategoryModel>,
    /// Categories in the order they were first learned.
    pub learning_order: Vec<String>,
    pub classifier: Option<ShallowClassifier>,
    pub norms: NormStore,
    pub seed: u64,
    pub episodes_seen: u64,
}

/// Read-only result of looking at an episode before its label is known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assessment {
    pub novelty: NoveltyReport,
    /// Classifier vote, whatever the novelty verdict.
    pub classifier_label: Option<String>,
    pub votes: BTreeMap<String, usize>,
    /// What is presented to the teacher: the classifier label for a known
    /// verdict, nothing for a novel one.
    pub predicted_label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnReport {
    pub new_category: bool,
    pub centroids: usize,
    pub retrained: bool,
    #[serde(skip)]
    pub cluster_seconds: f64,
    #[serde(skip)]
    pub train_seconds: f64,
}

impl KnowledgeBase {
    pub fn new(dim: usize, config: SessionConfig, norms: NormSettings, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig("dim must be >= 1".into()));
        }
        config.validate()?;
        if norms.actions.is_empty() {
            return Err(Error::EmptyVocabulary);
        }
        let mut store = NormStore::new(norms.actions, norms.question_budget, rng::derive_seed(seed, &[0x6e6f726d]));
        store.exclude_certain = norms.exclude_certain;
        Ok(KnowledgeBase {
            version: KB_VERSION.to_string(),
            dim,
            config,
            categories: BTreeMap::new(),
            learning_order: Vec::new(),
            classifier: None,
            norms: store,
            seed,
            episodes_seen: 0,
        })
    }

    pub fn check_frames(&self, frames: &[FeatureVector]) -> Result<()> {
        if frames.is_empty() {
            return Err(Error::EmptySamples);
        }
        if let Some(bad) = frames.iter().find(|f| f.dim() != self.dim) {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: bad.dim(),
            });
        }
        Ok(())
    }

    pub fn assess(&self, frames: &[FeatureVector]) -> Result<Assessment> {
        self.check_frames(frames)?;
        let novelty = detect_novel(&self.categories, frames, &self.config.learner)?;
        let (classifier_label, votes) = match &self.classifier {
            Some(clf) => {
                let (label, votes) = predict_episode(clf, frames)?;
                (Some(label), votes)
            }
            None => (None, BTreeMap::new()),
        };
        let predicted_label = match novelty.verdict {
            Verdict::Known => classifier_label.clone(),
            Verdict::Novel => None,
        };
        Ok(Assessment {
            novelty,
            classifier_label,
            votes,
            predicted_label,
        })
    }

    /// Clusters the frames into `label` (creating the category if needed) and
    /// refits the classifier on real frames plus pseudo-exemplars drawn from
    /// the models as they were before this episode.
    pub fn learn(&mut self, label: &str, frames: &[FeatureVector]) -> Result<LearnReport> {
        self.check_frames(frames)?;
        if label.trim().is_empty() {
            return Err(Error::Oracle("empty label".into()));
        }
        let new_category = !self.categories.contains_key(label);
        let old_models: Vec<CategoryModel> = self
            .learning_order
            .iter()
            .map(|n| self.categories[n].clone())
            .collect();

        let t = Instant::now();
        let model = self
            .categories
            .entry(label.to_string())
            .or_insert_with(|| CategoryModel::new(label));
        cluster_samples(model, frames, &self.config.learner)?;
        let centroids = model.centroids().len();
        if new_category {
            self.learning_order.push(label.to_string());
        }
        let cluster_seconds = t.elapsed().as_secs_f64();

        self.episodes_seen += 1;
        let retrained = new_category
            || self.classifier.is_none()
            || self.episodes_seen.is_multiple_of(self.config.retrain_every);
        let t = Instant::now();
        if retrained {
            let new_data: Vec<LabeledSample> = frames
                .iter()
                .map(|f| LabeledSample::new(label, f.clone()))
                .collect();
            let old_refs: Vec<&CategoryModel> = old_models.iter().collect();
            let train_config = TrainConfig {
                seed: rng::derive_seed(self.seed, &[0x7472, self.episodes_seen]),
                ..self.config.train.clone()
            };
            let clf = train(&new_data, &old_refs, &train_config, self.config.learner.covariance_floor)?;
            debug_assert_eq!(clf.category_order, self.learning_order);
            self.classifier = Some(clf);
        }
        Ok(LearnReport {
            new_category,
            centroids,
            retrained,
            cluster_seconds,
            train_seconds: t.elapsed().as_secs_f64(),
        })
    }

    /// Questions for this visit under the configured policy. The random
    /// policy advances the store's round counter.
    pub fn questions_for(&mut self, context: &str, scripted: Option<&BTreeMap<Question, bool>>) -> Result<Vec<Question>> {
        match (self.config.question_policy, scripted) {
            (QuestionPolicy::Scripted, Some(answers)) if !answers.is_empty() => Ok(answers
                .keys()
                .take(self.norms.question_budget)
                .cloned()
                .collect()),
            _ => self.norms.next_questions(context),
        }
    }

    /// Applies every answer or none of them.
    pub fn record_answers(&mut self, context: &str, answers: &[(Question, bool)]) -> Result<Vec<Norm>> {
        if let Some((q, _)) = answers.iter().find(|(q, _)| !self.norms.actions.contains(&q.action)) {
            return Err(Error::UnknownAction(q.action.clone()));
        }
        for (q, a) in answers {
            self.norms.record_answer(context, q, *a)?;
        }
        Ok(self.norms.query_norms(context).into_iter().cloned().collect())
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != KB_VERSION {
            return Err(Error::Version(self.version.clone()));
        }
        self.config.validate()?;
        for (name, model) in &self.categories {
            if *name != model.name {
                return Err(Error::Invariant(format!("category key `{name}` holds model `{}`", model.name)));
            }
            model.validate()?;
            if let Some(d) = model.dim() {
                if d != self.dim {
                    return Err(Error::DimensionMismatch { expected: self.dim, found: d });
                }
            }
        }
        let mut ordered = self.learning_order.clone();
        ordered.sort();
        if ordered != self.categories.keys().cloned().collect::<Vec<_>>() {
            return Err(Error::Invariant("learning_order does not match categories".into()));
        }
        if let Some(clf) = &self.classifier {
            clf.validate()?;
            if clf.dim != self.dim {
                return Err(Error::DimensionMismatch { expected: self.dim, found: clf.dim });
            }
            if let Some(c) = clf.category_order.iter().find(|c| !self.categories.contains_key(*c)) {
                return Err(Error::Invariant(format!("classifier category `{c}` has no model")));
            }
        }
        self.norms.validate(&HalvingRule)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("knowledge base serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        match value.get("version") {
            Some(serde_json::Value::String(v)) if v == KB_VERSION => {}
            Some(v) => return Err(Error::Version(v.as_str().map_or_else(|| v.to_string(), str::to_string))),
            None => return Err(Error::Version("<missing>".into())),
        }
        let kb: KnowledgeBase = serde_json::from_value(value)?;
        kb.validate()?;
        Ok(kb)
    }
}

pub fn save_kb(kb: &KnowledgeBase, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, kb.to_json()).map_err(|e| Error::file(path, e))
}

pub fn load_kb(path: impl AsRef<Path>) -> Result<KnowledgeBase> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    KnowledgeBase::from_json(&text)
}

/// Source of labels and yes/no answers.
pub trait Oracle {
    fn confirm_or_correct(&mut self, predicted: Option<&str>, episode: &Episode) -> Result<String>;
    fn answer(&mut self, context: &str, question: &Question) -> Result<bool>;
}

/// Answers from the episode's ground truth and scripted answers.
#[derive(Debug, Clone, Default)]
pub struct ScriptedOracle {
    /// Answer for questions the script does not cover; `None` fails them.
    pub fallback: Option<bool>,
    current: BTreeMap<Question, bool>,
}

impl ScriptedOracle {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_fallback(answer: bool) -> Self {
        ScriptedOracle {
            fallback: Some(answer),
            current: BTreeMap::new(),
        }
    }
}

impl Oracle for ScriptedOracle {
    fn confirm_or_correct(&mut self, _predicted: Option<&str>, episode: &Episode) -> Result<String> {
        self.current = episode.answers.clone();
        episode
            .label
            .clone()
            .ok_or_else(|| Error::Oracle(format!("no scripted label for `{}`", episode.id)))
    }

    fn answer(&mut self, context: &str, question: &Question) -> Result<bool> {
        self.current
            .get(question)
            .copied()
            .or(self.fallback)
            .ok_or_else(|| Error::Oracle(format!("no scripted answer for `{question}` in `{context}`")))
    }
}

/// A human at a terminal.
pub struct ConsoleOracle<R, W> {
    input: R,
    output: W,
}

impl<R: BufRead, W: Write> ConsoleOracle<R, W> {
    pub fn new(input: R, output: W) -> Self {
        ConsoleOracle { input, output }
    }

    fn read_line(&mut self) -> Result<String> {
        let mut line = String::new();
        if self.input.read_line(&mut line)? == 0 {
            return Err(Error::Oracle("input closed".into()));
        }
        Ok(line.trim().to_string())
    }
}

impl<R: BufRead, W: Write> Oracle for ConsoleOracle<R, W> {
    fn confirm_or_correct(&mut self, predicted: Option<&str>, episode: &Episode) -> Result<String> {
        match predicted {
            Some(p) => write!(self.output, "[{}] I think this is `{p}`. Label (enter to confirm): ", episode.id)?,
            None => write!(self.output, "[{}] I don't know this place. Label: ", episode.id)?,
        }
        self.output.flush()?;
        let line = self.read_line()?;
        match (line.is_empty(), predicted) {
            (false, _) => Ok(line),
            (true, Some(p)) => Ok(p.to_string()),
            (true, None) => Err(Error::Oracle("no label given".into())),
        }
    }

    fn answer(&mut self, context: &str, question: &Question) -> Result<bool> {
        loop {
            write!(self.output, "Is `{}` {} in the {context}? [y/n]: ", question.action, question.operator)?;
            self.output.flush()?;
            match self.read_line()?.to_ascii_lowercase().as_str() {
                "y" | "yes" => return Ok(true),
                "n" | "no" => return Ok(false),
                _ => continue,
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub assess_seconds: f64,
    pub label_seconds: f64,
    pub cluster_seconds: f64,
    pub train_seconds: f64,
    pub questions_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerRecord {
    pub action: String,
    pub operator: crate::norms::DeonticOperator,
    pub answer: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub episode_id: String,
    pub verdict: Verdict,
    pub novel_fraction: f64,
    pub predicted_label: Option<String>,
    pub classifier_label: Option<String>,
    pub confirmed_label: String,
    pub new_category: bool,
    pub questions_asked: Vec<Question>,
    pub answers: Vec<AnswerRecord>,
    #[serde(skip)]
    pub timing: PhaseTimings,
}

/// Runs one visit. On any error, including an oracle failure, `kb` is left
/// exactly as it was. The episode is consumed.
pub fn process_episode(kb: &mut KnowledgeBase, episode: Episode, oracle: &mut dyn Oracle) -> Result<EpisodeOutcome> {
    kb.check_frames(&episode.frames)?;
    let mut timing = PhaseTimings::default();

    let t = Instant::now();
    let assessment = kb.assess(&episode.frames)?;
    timing.assess_seconds = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let label = oracle.confirm_or_correct(assessment.predicted_label.as_deref(), &episode)?;
    timing.label_seconds = t.elapsed().as_secs_f64();

    let mut next = kb.clone();
    let report = next.learn(&label, &episode.frames)?;
    timing.cluster_seconds = report.cluster_seconds;
    timing.train_seconds = report.train_seconds;

    let t = Instant::now();
    let questions = next.questions_for(&label, Some(&episode.answers))?;
    let mut answers = Vec::with_capacity(questions.len());
    for q in &questions {
        answers.push((q.clone(), oracle.answer(&label, q)?));
    }
    next.record_answers(&label, &answers)?;
    timing.questions_seconds = t.elapsed().as_secs_f64();

    *kb = next;
    // The frames go out of scope here.
    let Episode { id: episode_id, .. } = episode;

    Ok(EpisodeOutcome {
        episode_id,
        verdict: assessment.novelty.verdict,
        novel_fraction: assessment.novelty.novel_fraction,
        predicted_label: assessment.predicted_label,
        classifier_label: assessment.classifier_label,
        confirmed_label: label,
        new_category: report.new_category,
        questions_asked: questions,
        answers: answers
            .into_iter()
            .map(|(q, answer)| AnswerRecord {
                action: q.action,
                operator: q.operator,
                answer,
            })
            .collect(),
        timing,
    })
}

fn serialize_metric<S: Serializer>(value: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match value {
        Some(v) => s.serialize_f64(*v),
        None => s.serialize_str("n/a"),
    }
}

fn deserialize_metric<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Option<f64>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Str(String),
    }
    match Raw::deserialize(d)? {
        Raw::Num(v) => Ok(Some(v)),
        Raw::Str(s) if s == "n/a" => Ok(None),
        Raw::Str(s) => Err(serde::de::Error::custom(format!("bad metric `{s}`"))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub episodes: usize,
    pub novel_episodes: usize,
    pub known_episodes: usize,
    /// Fraction of first visits to a category flagged novel.
    #[serde(serialize_with = "serialize_metric", deserialize_with = "deserialize_metric")]
    pub novelty_accuracy_new: Option<f64>,
    /// Fraction of revisits flagged known.
    #[serde(serialize_with = "serialize_metric", deserialize_with = "deserialize_metric")]
    pub novelty_accuracy_known: Option<f64>,
    /// Fraction of revisits whose classifier vote matches the ground truth.
    #[serde(serialize_with = "serialize_metric", deserialize_with = "deserialize_metric")]
    pub label_accuracy: Option<f64>,
    pub distance_threshold: f64,
    pub categories: Vec<String>,
    pub outcomes: Vec<EpisodeOutcome>,
    pub norm_table: Vec<Norm>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timings: Option<Vec<PhaseTimings>>,
}

impl ReplayReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn to_text(&self) -> String {
        let fmt = |m: Option<f64>| m.map_or_else(|| "n/a".to_string(), |v| format!("{v:.3}"));
        let mut out = String::new();
        out.push_str(&format!(
            "episodes: {} ({} novel, {} known)\n",
            self.episodes, self.novel_episodes, self.known_episodes
        ));
        out.push_str(&format!("distance threshold: {}\n", self.distance_threshold));
        out.push_str(&format!("novelty accuracy (new): {}\n", fmt(self.novelty_accuracy_new)));
        out.push_str(&format!("novelty accuracy (known): {}\n", fmt(self.novelty_accuracy_known)));
        out.push_str(&format!("label accuracy: {}\n", fmt(self.label_accuracy)));
        out.push_str(&format!("categories: {}\n", self.categories.join(", ")));
        for o in &self.outcomes {
            out.push_str(&format!(
                "  {:<24} {:<6} predicted={:<12} label={:<12} asked={}\n",
                o.episode_id,
                o.verdict.to_string(),
                o.predicted_label.as_deref().unwrap_or("-"),
                o.confirmed_label,
                o.questions_asked.len()
            ));
        }
        out.push_str(&format_norm_table(&self.norm_table));
        out
    }
}

/// One `context action operator [alpha,beta]` row per norm.
pub fn format_norm_table(norms: &[Norm]) -> String {
    let mut out = String::new();
    for n in norms {
        out.push_str(&format!(
            "{:<12} {:<12} {:<12} {}\n",
            n.context,
            n.action,
            n.operator.to_string(),
            n.interval()
        ));
    }
    out
}

fn ratio(hit: usize, total: usize) -> Option<f64> {
    (total > 0).then(|| hit as f64 / total as f64)
}

/// Replays `episodes` against a fresh knowledge base with a scripted oracle.
pub fn evaluate_replay(
    episodes: Vec<Episode>,
    dim: usize,
    config: &SessionConfig,
    norms: &NormSettings,
    seed: u64,
    include_timings: bool,
) -> Result<(ReplayReport, KnowledgeBase)> {
    if let Some(e) = episodes.iter().find(|e| e.label.is_none()) {
        return Err(Error::MissingGroundTruth(e.id.clone()));
    }
    let mut kb = KnowledgeBase::new(dim, config.clone(), norms.clone(), seed)?;
    let mut oracle = ScriptedOracle::new();
    let n = episodes.len();
    let (mut novel, mut known, mut novel_hit, mut known_hit, mut label_hit) = (0, 0, 0, 0, 0);
    let mut outcomes = Vec::with_capacity(n);
    let mut timings = Vec::with_capacity(n);

    for episode in episodes {
        let truth = episode.label.clone().expect("checked above");
        let truly_novel = !kb.categories.contains_key(&truth);
        let outcome = process_episode(&mut kb, episode, &mut oracle)?;
        if truly_novel {
            novel += 1;
            novel_hit += usize::from(outcome.verdict == Verdict::Novel);
        } else {
            known += 1;
            known_hit += usize::from(outcome.verdict == Verdict::Known);
            label_hit += usize::from(outcome.classifier_label.as_deref() == Some(truth.as_str()));
        }
        timings.push(outcome.timing);
        outcomes.push(outcome);
    }

    let report = ReplayReport {
        episodes: n,
        novel_episodes: novel,
        known_episodes: known,
        novelty_accuracy_new: ratio(novel_hit, novel),
        novelty_accuracy_known: ratio(known_hit, known),
        label_accuracy: ratio(label_hit, known),
        distance_threshold: config.learner.distance_threshold,
        categories: kb.learning_order.clone(),
        outcomes,
        norm_table: kb.norms.iter().cloned().collect(),
        timings: include_timings.then_some(timings),
    };
    Ok((report, kb))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRow {
    pub threshold: f64,
    #[serde(serialize_with = "serialize_metric", deserialize_with = "deserialize_metric")]
    pub novelty_accuracy_new: Option<f64>,
    #[serde(serialize_with = "serialize_metric", deserialize_with = "deserialize_metric")]
    pub novelty_accuracy_known: Option<f64>,
    #[serde(serialize_with = "serialize_metric", deserialize_with = "deserialize_metric")]
    pub label_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub threshold: f64,
    pub rows: Vec<CalibrationRow>,
}

/// 48 log-spaced thresholds from a quarter to eight times the median
/// within-episode spread (median distance of a frame to its episode mean).
pub fn default_threshold_grid(episodes: &[Episode]) -> Vec<f64> {
    let mut spreads: Vec<f64> = episodes
        .iter()
        .filter(|e| !e.frames.is_empty())
        .map(|e| {
            let d = e.dim();
            let n = e.frames.len() as f64;
            let mut mean = vec![0.0; d];
            for f in &e.frames {
                for (m, v) in mean.iter_mut().zip(f.as_slice()) {
                    *m += v / n;
                }
            }
            let mut dist: Vec<f64> = e.frames.iter().map(|f| euclidean(f.as_slice(), &mean)).collect();
            median(&mut dist)
        })
        .collect();
    let spread = median(&mut spreads);
    let spread = if spread > 0.0 { spread } else { 1.0 };
    let (lo, hi) = ((0.25 * spread).ln(), (8.0 * spread).ln());
    (0..48)
        .map(|i| (lo + (hi - lo) * i as f64 / 47.0).exp())
        .collect()
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    values[values.len() / 2]
}

/// Sweeps the distance threshold over `candidates` on a calibration
/// manifest. The score of a threshold is the worse of the two novelty
/// accuracies, then label accuracy; the chosen threshold is the median of
/// the best-scoring candidates.
pub fn calibrate_threshold(
    episodes: &[Episode],
    dim: usize,
    config: &SessionConfig,
    norms: &NormSettings,
    seed: u64,
    candidates: &[f64],
) -> Result<Calibration> {
    if candidates.is_empty() {
        return Err(Error::InvalidConfig("no threshold candidates".into()));
    }
    let mut rows = Vec::with_capacity(candidates.len());
    let mut scores = Vec::with_capacity(candidates.len());
    for &threshold in candidates {
        let mut cfg = config.clone();
        cfg.learner.distance_threshold = threshold;
        let (report, _) = evaluate_replay(episodes.to_vec(), dim, &cfg, norms, seed, false)?;
        let worst = report
            .novelty_accuracy_new
            .unwrap_or(1.0)
            .min(report.novelty_accuracy_known.unwrap_or(1.0));
        scores.push((worst, report.label_accuracy.unwrap_or(1.0)));
        rows.push(CalibrationRow {
            threshold,
            novelty_accuracy_new: report.novelty_accuracy_new,
            novelty_accuracy_known: report.novelty_accuracy_known,
            label_accuracy: report.label_accuracy,
        });
    }
    let best = scores
        .iter()
        .copied()
        .fold((f64::NEG_INFINITY, f64::NEG_INFINITY), |a, b| if b > a { b } else { a });
    let winners: Vec<f64> = candidates
        .iter()
        .zip(&scores)
        .filter(|(_, s)| **s == best)
        .map(|(c, _)| *c)
        .collect();
    Ok(Calibration {
        threshold: winners[winners.len() / 2],
        rows,
    })
}
