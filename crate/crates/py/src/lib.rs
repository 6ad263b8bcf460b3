//! Python bindings. Structured results cross the boundary as plain dicts and
//! lists built from the JSON forms of the core types.

use std::collections::BTreeMap;

use normscene_core as core;
use normscene_core::ingest::load_manifest_with_episodes;
use normscene_core::{DeonticOperator, Episode, FeatureVector, NormSettings, Question, ScriptedOracle, SessionConfig};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyOSError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

create_exception!(normscene, NormsceneError, PyException);

fn err(e: core::Error) -> PyErr {
    match e {
        core::Error::File { .. } | core::Error::Io(_) => PyOSError::new_err(e.to_string()),
        _ => NormsceneError::new_err(e.to_string()),
    }
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_json_arg<T: for<'de> serde::Deserialize<'de> + Default>(text: Option<&str>) -> PyResult<T> {
    match text {
        Some(t) => serde_json::from_str(t).map_err(|e| PyValueError::new_err(e.to_string())),
        None => Ok(T::default()),
    }
}

fn to_frames(rows: Vec<Vec<f64>>) -> PyResult<Vec<FeatureVector>> {
    rows.into_iter().map(|r| FeatureVector::new(r).map_err(err)).collect()
}

fn question(action: &str, operator: Option<&str>) -> PyResult<Question> {
    let operator = match operator {
        Some(o) => o.parse::<DeonticOperator>().map_err(err)?,
        None => DeonticOperator::Permissible,
    };
    Ok(Question {
        action: action.to_string(),
        operator,
    })
}

fn episode_dict<'py>(py: Python<'py>, e: &Episode) -> PyResult<Bound<'py, PyAny>> {
    let answers: BTreeMap<String, bool> = e.answers.iter().map(|(q, a)| (q.to_string(), *a)).collect();
    let rows: Vec<&[f64]> = e.frames.iter().map(|f| f.as_slice()).collect();
    to_py(
        py,
        &serde_json::json!({ "id": e.id, "label": e.label, "frames": rows, "answers": answers }),
    )
}

/// Scene models, classifier and norms for one learner.
#[pyclass(name = "KnowledgeBase", module = "normscene")]
struct PyKnowledgeBase {
    inner: core::KnowledgeBase,
}

#[pymethods]
impl PyKnowledgeBase {
    /// `session` and `norms` are JSON objects with the same fields as the
    /// CLI config file sections.
    #[new]
    #[pyo3(signature = (dim, seed = 0, session = None, norms = None))]
    fn new(dim: usize, seed: u64, session: Option<&str>, norms: Option<&str>) -> PyResult<Self> {
        let session: SessionConfig = from_json_arg(session)?;
        let norms: NormSettings = from_json_arg(norms)?;
        let inner = core::KnowledgeBase::new(dim, session, norms, seed).map_err(err)?;
        Ok(PyKnowledgeBase { inner })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyKnowledgeBase {
            inner: core::load_kb(path).map_err(err)?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyKnowledgeBase {
            inner: core::KnowledgeBase::from_json(text).map_err(err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        core::save_kb(&self.inner, path).map_err(err)
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim
    }

    #[getter]
    fn categories(&self) -> Vec<String> {
        self.inner.learning_order.clone()
    }

    #[getter]
    fn episodes_seen(&self) -> u64 {
        self.inner.episodes_seen
    }

    #[getter]
    fn distance_threshold(&self) -> f64 {
        self.inner.config.learner.distance_threshold
    }

    /// Novelty verdict and predicted label for a batch of frames.
    fn assess<'py>(&self, py: Python<'py>, frames: Vec<Vec<f64>>) -> PyResult<Bound<'py, PyAny>> {
        let a = self.inner.assess(&to_frames(frames)?).map_err(err)?;
        to_py(
            py,
            &serde_json::json!({
                "verdict": a.novelty.verdict,
                "novel_fraction": a.novelty.novel_fraction,
                "predicted_label": a.predicted_label,
                "classifier_label": a.classifier_label,
                "votes": a.votes,
            }),
        )
    }

    /// Clusters the frames into `label` and retrains the classifier.
    fn learn<'py>(&mut self, py: Python<'py>, label: &str, frames: Vec<Vec<f64>>) -> PyResult<Bound<'py, PyAny>> {
        let fr = to_frames(frames)?;
        let mut next = self.inner.clone();
        let r = next.learn(label, &fr).map_err(err)?;
        self.inner = next;
        to_py(
            py,
            &serde_json::json!({ "new_category": r.new_category, "centroids": r.centroids, "retrained": r.retrained }),
        )
    }

    /// Next permission questions for `context` as `(action, operator)` pairs.
    fn next_questions(&mut self, context: &str) -> PyResult<Vec<(String, String)>> {
        let qs = self.inner.questions_for(context, None).map_err(err)?;
        Ok(qs.into_iter().map(|q| (q.action, q.operator.to_string())).collect())
    }

    /// Applies `(action, answer)` or `(action, operator, answer)` tuples, all
    /// or none. Returns the context's norms.
    fn record_answers<'py>(
        &mut self,
        py: Python<'py>,
        context: &str,
        answers: Vec<Bound<'py, PyAny>>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let mut parsed = Vec::with_capacity(answers.len());
        for a in answers {
            let q = if let Ok((action, answer)) = a.extract::<(String, bool)>() {
                (question(&action, None)?, answer)
            } else {
                let (action, op, answer) = a.extract::<(String, String, bool)>()?;
                (question(&action, Some(&op))?, answer)
            };
            parsed.push(q);
        }
        let mut next = self.inner.clone();
        let norms = next.record_answers(context, &parsed).map_err(err)?;
        self.inner = next;
        to_py(py, &norms)
    }

    /// All norms, or those of one context.
    #[pyo3(signature = (context = None))]
    fn norms<'py>(&self, py: Python<'py>, context: Option<&str>) -> PyResult<Bound<'py, PyAny>> {
        let norms: Vec<&core::Norm> = match context {
            Some(c) => self.inner.norms.query_norms(c),
            None => self.inner.norms.iter().collect(),
        };
        to_py(py, &norms)
    }

    /// One full visit against a scripted teacher: `label` is the confirmed
    /// category, `answers` maps question strings such as `"walk"` or
    /// `"forbidden:walk"` to yes/no. Unscripted questions are answered with
    /// `fallback`, or fail the visit when it is None.
    #[pyo3(signature = (episode_id, frames, label, answers = None, fallback = None))]
    fn process_episode<'py>(
        &mut self,
        py: Python<'py>,
        episode_id: &str,
        frames: Vec<Vec<f64>>,
        label: &str,
        answers: Option<BTreeMap<String, bool>>,
        fallback: Option<bool>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let mut scripted = BTreeMap::new();
        for (k, v) in answers.unwrap_or_default() {
            scripted.insert(k.parse::<Question>().map_err(err)?, v);
        }
        let episode = Episode::new(episode_id, to_frames(frames)?)
            .map_err(err)?
            .with_label(label)
            .with_answers(scripted);
        let mut oracle = fallback.map_or_else(ScriptedOracle::new, ScriptedOracle::with_fallback);
        let outcome = core::process_episode(&mut self.inner, episode, &mut oracle).map_err(err)?;
        to_py(py, &outcome)
    }

    fn __repr__(&self) -> String {
        format!(
            "KnowledgeBase(dim={}, categories={:?}, norms={})",
            self.inner.dim,
            self.inner.learning_order,
            self.inner.norms.len()
        )
    }
}

/// Writes a synthetic manifest under `out_dir` and returns the manifest path.
/// `spec` is a JSON object of generator fields; missing fields take defaults.
#[pyfunction]
#[pyo3(signature = (out_dir, spec = None, campus = false))]
fn synth(out_dir: &str, spec: Option<&str>, campus: bool) -> PyResult<String> {
    let spec: core::GeneratorSpec = from_json_arg(spec)?;
    let data = if campus {
        core::fixtures::campus_manifest(&spec)
    } else {
        core::generate_synthetic(&spec)
    }
    .map_err(err)?;
    let path = data.write_to(out_dir).map_err(err)?;
    Ok(path.display().to_string())
}

/// Loads a manifest and its episodes as dicts.
#[pyfunction]
fn load_manifest<'py>(py: Python<'py>, path: &str) -> PyResult<(usize, Vec<String>, Vec<Bound<'py, PyAny>>)> {
    let (manifest, episodes) = load_manifest_with_episodes(path).map_err(err)?;
    let eps = episodes.iter().map(|e| episode_dict(py, e)).collect::<PyResult<Vec<_>>>()?;
    Ok((manifest.dim, manifest.actions, eps))
}

#[pyfunction]
fn load_episode<'py>(py: Python<'py>, path: &str, dim: usize) -> PyResult<Bound<'py, PyAny>> {
    episode_dict(py, &core::load_episode(path, dim).map_err(err)?)
}

/// Replays a manifest with a scripted teacher. Returns the report dict and
/// the final knowledge base.
#[pyfunction]
#[pyo3(signature = (manifest, seed = 0, session = None, norms = None))]
fn replay<'py>(
    py: Python<'py>,
    manifest: &str,
    seed: u64,
    session: Option<&str>,
    norms: Option<&str>,
) -> PyResult<(Bound<'py, PyAny>, PyKnowledgeBase)> {
    let (m, episodes) = load_manifest_with_episodes(manifest).map_err(err)?;
    let session: SessionConfig = from_json_arg(session)?;
    let norms = match norms {
        Some(_) => from_json_arg::<NormSettings>(norms)?,
        None => NormSettings {
            actions: m.actions.clone(),
            ..Default::default()
        },
    };
    let (report, kb) = core::evaluate_replay(episodes, m.dim, &session, &norms, seed, false).map_err(err)?;
    Ok((to_py(py, &report)?, PyKnowledgeBase { inner: kb }))
}

/// Interval after a first answer.
#[pyfunction]
fn init_interval(answer: bool) -> (f64, f64) {
    let n = core::init_norm("", "", DeonticOperator::Permissible, answer);
    (n.alpha, n.beta)
}

/// Interval after replaying a sequence of answers from scratch.
#[pyfunction]
fn interval_after(answers: Vec<bool>) -> PyResult<(f64, f64)> {
    let (first, rest) = answers
        .split_first()
        .ok_or_else(|| PyValueError::new_err("need at least one answer"))?;
    let mut n = core::init_norm("", "", DeonticOperator::Permissible, *first);
    for a in rest {
        n = core::update_norm(n, *a);
    }
    Ok((n.alpha, n.beta))
}

#[pymodule]
fn normscene(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("NormsceneError", m.py().get_type::<NormsceneError>())?;
    m.add_class::<PyKnowledgeBase>()?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(load_manifest, m)?)?;
    m.add_function(wrap_pyfunction!(load_episode, m)?)?;
    m.add_function(wrap_pyfunction!(replay, m)?)?;
    m.add_function(wrap_pyfunction!(init_interval, m)?)?;
    m.add_function(wrap_pyfunction!(interval_after, m)?)?;
    Ok(())
}
