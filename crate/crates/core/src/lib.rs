//! Online scene-category learning and context-specific norm learning.
//!
//! Scene categories are learned from episodes of feature vectors with
//! threshold-based online clustering ([`learner`]), open-set novelty
//! detection, and a linear softmax classifier retrained on real exemplars
//! plus Gaussian pseudo-exemplars of earlier categories ([`rehearsal`]).
//! Permission norms are attached to each learned category and carry a
//! belief/plausibility interval updated from yes/no answers ([`norms`]).
//! [`session`] ties both together into the per-visit teaching protocol.

pub mod error;
pub mod fixtures;
pub mod ingest;
pub mod learner;
pub mod norms;
pub mod rehearsal;
pub mod rng;
pub mod session;

pub use error::{Error, Result};
pub use ingest::{
    generate_synthetic, load_episode, write_episode, Episode, ExtractorRegistry, FeatureExtractor,
    FeatureVector, GeneratorSpec, IdentityExtractor, Manifest, ManifestEntry, SyntheticData,
};
pub use learner::{
    cluster_samples, detect_novel, min_distance, update_known, CategoryModel, Centroid,
    CovarianceMode, LearnerConfig, NoveltyReport, Verdict,
};
pub use norms::{
    init_norm, select_questions, update_norm, DeonticOperator, HalvingRule, IntervalRule, Norm,
    NormStore, Question, UncertaintyInterval,
};
pub use rehearsal::{
    predict_episode, predict_frame, sample_pseudo_exemplars, train, LabeledSample,
    PseudoExemplar, ShallowClassifier, TrainConfig,
};
pub use session::{
    calibrate_threshold, default_threshold_grid, evaluate_replay, load_kb, process_episode, save_kb, Assessment, Calibration, ConsoleOracle,
    EpisodeOutcome, KnowledgeBase, NormSettings, Oracle, QuestionPolicy, ReplayReport, ScriptedOracle,
    SessionConfig,
};
