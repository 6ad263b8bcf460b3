//! The five-context, two-visit campus answer script and a synthetic manifest
//! that carries it.

use std::collections::BTreeMap;

use crate::error::Result;
use crate::ingest::{generate_synthetic, GeneratorSpec, SyntheticData};
use crate::norms::Question;

/// `(context, [first visit answers, second visit answers])`, at most three
/// distinct permission questions per visit.
pub const CAMPUS_SCRIPT: [(&str, [&[(&str, bool)]; 2]); 5] = [
    (
        "bathroom",
        [
            &[("talkLoudly", false), ("watch", false), ("walk", true)],
            &[("talkQuietly", true), ("beQuiet", true), ("listen", true)],
        ],
    ),
    (
        "classroom",
        [
            &[("talkLoudly", false), ("talkQuietly", false), ("beQuiet", false)],
            &[("talkQuietly", true), ("beQuiet", true), ("listen", true)],
        ],
    ),
    (
        "library",
        [
            &[("talkQuietly", false), ("beQuiet", true), ("watch", true)],
            &[("talkQuietly", true), ("beQuiet", false), ("talkLoudly", false)],
        ],
    ),
    (
        "office",
        [
            &[("talkLoudly", false), ("beQuiet", false), ("walk", true)],
            &[("talkQuietly", true), ("beQuiet", true), ("listen", true)],
        ],
    ),
    (
        "kitchen",
        [
            &[("talkLoudly", true), ("talkQuietly", true), ("listen", true)],
            &[("talkQuietly", false), ("beQuiet", true), ("watch", true)],
        ],
    ),
];

/// Scripted answers for the `visit`-th visit (0-based) to `context`.
pub fn campus_answers(context: &str, visit: usize) -> Option<Vec<(Question, bool)>> {
    CAMPUS_SCRIPT
        .iter()
        .find(|(c, _)| *c == context)
        .and_then(|(_, visits)| visits.get(visit))
        .map(|answers| answers.iter().map(|&(a, v)| (Question::permission(a), v)).collect())
}

/// A 5-category x 2-visit synthetic manifest whose scripted answers follow
/// [`CAMPUS_SCRIPT`] in visit order.
pub fn campus_manifest(spec: &GeneratorSpec) -> Result<SyntheticData> {
    let spec = GeneratorSpec {
        num_categories: 5,
        visits_per_category: 2,
        ..spec.clone()
    };
    let mut data = generate_synthetic(&spec)?;
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    for (entry, episode) in data.manifest.episodes.iter_mut().zip(data.episodes.iter_mut()) {
        let label = entry.label.clone().expect("synthetic episodes are labelled");
        let visit = seen.entry(label.clone()).or_default();
        let answers = campus_answers(&label, *visit).unwrap_or_default();
        *visit += 1;
        entry.answers = answers.iter().map(|(q, v)| (q.to_string(), *v)).collect();
        episode.answers = answers.into_iter().collect();
    }
    Ok(data)
}
