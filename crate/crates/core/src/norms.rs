//! Context-specific deontic norms with belief/plausibility intervals.
//!
//! A norm states that an action is obligatory, forbidden or permissible in a
//! context, with an interval `[alpha, beta]` bounding belief and
//! plausibility. The first yes/no answer creates the norm at `[1, 1]` or
//! `[0, 0]`; later answers move the interval through an [`IntervalRule`].

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Default robot action vocabulary.
pub const DEFAULT_ACTIONS: [&str; 6] = ["talkLoudly", "talkQuietly", "beQuiet", "listen", "watch", "walk"];

pub const DEFAULT_QUESTION_BUDGET: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeonticOperator {
    Obligatory,
    Forbidden,
    Permissible,
}

impl fmt::Display for DeonticOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DeonticOperator::Obligatory => "obligatory",
            DeonticOperator::Forbidden => "forbidden",
            DeonticOperator::Permissible => "permissible",
        })
    }
}

impl FromStr for DeonticOperator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "obligatory" | "o" => Ok(DeonticOperator::Obligatory),
            "forbidden" | "f" => Ok(DeonticOperator::Forbidden),
            "permissible" | "p" => Ok(DeonticOperator::Permissible),
            _ => Err(Error::InvalidConfig(format!("unknown deontic operator `{s}`"))),
        }
    }
}

/// A yes/no question about one (action, operator) pair.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Question {
    pub action: String,
    pub operator: DeonticOperator,
}

impl Question {
    pub fn new(action: impl Into<String>, operator: DeonticOperator) -> Self {
        Question {
            action: action.into(),
            operator,
        }
    }

    pub fn permission(action: impl Into<String>) -> Self {
        Question::new(action, DeonticOperator::Permissible)
    }
}

/// `action` for permission questions, `operator:action` otherwise.
impl fmt::Display for Question {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.operator {
            DeonticOperator::Permissible => f.write_str(&self.action),
            op => write!(f, "{op}:{}", self.action),
        }
    }
}

impl FromStr for Question {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (op, action) = match s.split_once(':') {
            Some((op, action)) => (op.parse()?, action),
            None => (DeonticOperator::Permissible, s),
        };
        if action.is_empty() {
            return Err(Error::InvalidConfig(format!("empty action in question `{s}`")));
        }
        Ok(Question::new(action, op))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyInterval {
    pub alpha: f64,
    pub beta: f64,
}

impl UncertaintyInterval {
    pub const CERTAIN_YES: Self = UncertaintyInterval { alpha: 1.0, beta: 1.0 };
    pub const CERTAIN_NO: Self = UncertaintyInterval { alpha: 0.0, beta: 0.0 };

    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        let iv = UncertaintyInterval { alpha, beta };
        if !iv.is_valid() {
            return Err(Error::Invariant(format!("invalid interval [{alpha}, {beta}]")));
        }
        Ok(iv)
    }

    pub fn is_valid(&self) -> bool {
        0.0 <= self.alpha && self.alpha <= self.beta && self.beta <= 1.0
    }

    pub fn is_certain(&self) -> bool {
        *self == Self::CERTAIN_YES || *self == Self::CERTAIN_NO
    }
}

impl fmt::Display for UncertaintyInterval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{}]", self.alpha, self.beta)
    }
}

/// How yes/no evidence creates and moves an interval.
pub trait IntervalRule {
    fn initial(&self, answer: bool) -> UncertaintyInterval;
    fn update(&self, interval: UncertaintyInterval, answer: bool) -> UncertaintyInterval;
}

/// A yes halves the gap between plausibility and 1; a no halves belief.
#[derive(Debug, Clone, Copy, Default)]
pub struct HalvingRule;

impl IntervalRule for HalvingRule {
    fn initial(&self, answer: bool) -> UncertaintyInterval {
        if answer {
            UncertaintyInterval::CERTAIN_YES
        } else {
            UncertaintyInterval::CERTAIN_NO
        }
    }

    fn update(&self, iv: UncertaintyInterval, answer: bool) -> UncertaintyInterval {
        if answer {
            UncertaintyInterval {
                alpha: iv.alpha,
                beta: (iv.beta + 1.0) / 2.0,
            }
        } else {
            UncertaintyInterval {
                alpha: iv.alpha / 2.0,
                beta: iv.beta,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Norm {
    pub context: String,
    pub action: String,
    pub operator: DeonticOperator,
    pub alpha: f64,
    pub beta: f64,
    pub evidence: Vec<bool>,
}

impl Norm {
    pub fn interval(&self) -> UncertaintyInterval {
        UncertaintyInterval {
            alpha: self.alpha,
            beta: self.beta,
        }
    }

    fn set_interval(&mut self, iv: UncertaintyInterval) {
        self.alpha = iv.alpha;
        self.beta = iv.beta;
    }

    pub fn key(&self) -> NormKey {
        NormKey {
            context: self.context.clone(),
            action: self.action.clone(),
            operator: self.operator,
        }
    }

    /// Recomputes the interval from the evidence list.
    pub fn replay(&self, rule: &dyn IntervalRule) -> Option<UncertaintyInterval> {
        let (first, rest) = self.evidence.split_first()?;
        Some(rest.iter().fold(rule.initial(*first), |iv, &a| rule.update(iv, a)))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NormKey {
    pub context: String,
    pub action: String,
    pub operator: DeonticOperator,
}

pub fn init_norm_with(
    rule: &dyn IntervalRule,
    context: &str,
    action: &str,
    operator: DeonticOperator,
    answer: bool,
) -> Norm {
    let iv = rule.initial(answer);
    Norm {
        context: context.to_string(),
        action: action.to_string(),
        operator,
        alpha: iv.alpha,
        beta: iv.beta,
        evidence: vec![answer],
    }
}

pub fn init_norm(context: &str, action: &str, operator: DeonticOperator, answer: bool) -> Norm {
    init_norm_with(&HalvingRule, context, action, operator, answer)
}

pub fn update_norm_with(rule: &dyn IntervalRule, mut norm: Norm, answer: bool) -> Norm {
    let iv = rule.update(norm.interval(), answer);
    norm.set_interval(iv);
    norm.evidence.push(answer);
    norm
}

pub fn update_norm(norm: Norm, answer: bool) -> Norm {
    update_norm_with(&HalvingRule, norm, answer)
}

/// Draws `min(budget, |candidates|)` distinct permission questions uniformly
/// without replacement.
pub fn select_questions(store: &NormStore, context: &str, budget: usize, seed: u64) -> Result<Vec<Question>> {
    if store.actions.is_empty() {
        return Err(Error::EmptyVocabulary);
    }
    let candidates: Vec<&String> = store
        .actions
        .iter()
        .filter(|a| {
            !store.exclude_certain
                || store
                    .get(context, a, DeonticOperator::Permissible)
                    .is_none_or(|n| !n.interval().is_certain())
        })
        .collect();
    let k = budget.min(candidates.len());
    let mut rng = rng::stream(seed, &[rng::hash_str(context)]);
    Ok(index::sample(&mut rng, candidates.len(), k)
        .into_iter()
        .map(|i| Question::permission(candidates[i].as_str()))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct NormStoreRecord {
    actions: Vec<String>,
    question_budget: usize,
    rng_seed: u64,
    rounds: u64,
    #[serde(default)]
    exclude_certain: bool,
    norms: Vec<Norm>,
}

/// All norms, keyed by (context, action, operator), plus the question policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "NormStoreRecord", try_from = "NormStoreRecord")]
pub struct NormStore {
    norms: BTreeMap<NormKey, Norm>,
    pub actions: Vec<String>,
    pub question_budget: usize,
    pub rng_seed: u64,
    /// Number of question rounds drawn so far; keys each round's seed.
    pub rounds: u64,
    /// Skip permission norms already at [0,0] or [1,1] when choosing questions.
    pub exclude_certain: bool,
}

impl From<NormStore> for NormStoreRecord {
    fn from(s: NormStore) -> Self {
        NormStoreRecord {
            actions: s.actions,
            question_budget: s.question_budget,
            rng_seed: s.rng_seed,
            rounds: s.rounds,
            exclude_certain: s.exclude_certain,
            norms: s.norms.into_values().collect(),
        }
    }
}

impl TryFrom<NormStoreRecord> for NormStore {
    type Error = Error;

    fn try_from(r: NormStoreRecord) -> Result<Self> {
        let mut store = NormStore {
            norms: BTreeMap::new(),
            actions: r.actions,
            question_budget: r.question_budget,
            rng_seed: r.rng_seed,
            rounds: r.rounds,
            exclude_certain: r.exclude_certain,
        };
        for norm in r.norms {
            if store.norms.insert(norm.key(), norm.clone()).is_some() {
                return Err(Error::DuplicateNorm {
                    context: norm.context,
                    action: norm.action,
                    operator: norm.operator,
                });
            }
        }
        Ok(store)
    }
}

impl NormStore {
    pub fn new(actions: Vec<String>, question_budget: usize, rng_seed: u64) -> Self {
        NormStore {
            norms: BTreeMap::new(),
            actions,
            question_budget,
            rng_seed,
            rounds: 0,
            exclude_certain: false,
        }
    }

    pub fn with_default_actions(rng_seed: u64) -> Self {
        Self::new(
            DEFAULT_ACTIONS.iter().map(|s| s.to_string()).collect(),
            DEFAULT_QUESTION_BUDGET,
            rng_seed,
        )
    }

    pub fn len(&self) -> usize {
        self.norms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.norms.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Norm> {
        self.norms.values()
    }

    pub fn get(&self, context: &str, action: &str, operator: DeonticOperator) -> Option<&Norm> {
        self.norms.get(&NormKey {
            context: context.to_string(),
            action: action.to_string(),
            operator,
        })
    }

    /// Inserts a freshly initialized norm; fails if the key is taken.
    pub fn insert_new(&mut self, norm: Norm) -> Result<&Norm> {
        use std::collections::btree_map::Entry;
        match self.norms.entry(norm.key()) {
            Entry::Occupied(_) => Err(Error::DuplicateNorm {
                context: norm.context,
                action: norm.action,
                operator: norm.operator,
            }),
            Entry::Vacant(v) => Ok(v.insert(norm)),
        }
    }

    pub fn record_answer_with(
        &mut self,
        rule: &dyn IntervalRule,
        context: &str,
        question: &Question,
        answer: bool,
    ) -> Result<&Norm> {
        if !self.actions.contains(&question.action) {
            return Err(Error::UnknownAction(question.action.clone()));
        }
        let key = NormKey {
            context: context.to_string(),
            action: question.action.clone(),
            operator: question.operator,
        };
        let norm = match self.norms.remove(&key) {
            Some(existing) => update_norm_with(rule, existing, answer),
            None => init_norm_with(rule, context, &question.action, question.operator, answer),
        };
        Ok(self.norms.entry(key).or_insert(norm))
    }

    pub fn record_answer(&mut self, context: &str, question: &Question, answer: bool) -> Result<&Norm> {
        self.record_answer_with(&HalvingRule, context, question, answer)
    }

    /// Norms for `context`, ordered by (action, operator).
    pub fn query_norms(&self, context: &str) -> Vec<&Norm> {
        self.norms.values().filter(|n| n.context == context).collect()
    }

    pub fn contexts(&self) -> Vec<&str> {
        let mut out: Vec<&str> = self.norms.values().map(|n| n.context.as_str()).collect();
        out.dedup();
        out
    }

    /// Draws the next round of questions for `context` and advances the
    /// round counter.
    pub fn next_questions(&mut self, context: &str) -> Result<Vec<Question>> {
        let seed = rng::derive_seed(self.rng_seed, &[self.rounds]);
        let questions = select_questions(self, context, self.question_budget, seed)?;
        self.rounds += 1;
        Ok(questions)
    }

    /// Checks interval validity and that every evidence list replays to its
    /// stored interval under `rule`.
    pub fn validate(&self, rule: &dyn IntervalRule) -> Result<()> {
        for norm in self.norms.values() {
            if !norm.interval().is_valid() {
                return Err(Error::Invariant(format!("invalid interval on {:?}", norm.key())));
            }
            if norm.replay(rule) != Some(norm.interval()) {
                return Err(Error::Invariant(format!(
                    "evidence does not replay to stored interval on {:?}",
                    norm.key()
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const P: DeonticOperator = DeonticOperator::Permissible;

    fn iv(a: f64, b: f64) -> UncertaintyInterval {
        UncertaintyInterval { alpha: a, beta: b }
    }

    #[test]
    fn init_from_first_answer() {
        assert_eq!(init_norm("library", "talkQuietly", P, false).interval(), iv(0.0, 0.0));
        assert_eq!(init_norm("kitchen", "talkLoudly", P, true).interval(), iv(1.0, 1.0));
    }

    #[test]
    fn duplicate_init_is_rejected() {
        let mut store = NormStore::with_default_actions(0);
        store.insert_new(init_norm("kitchen", "walk", P, true)).unwrap();
        assert!(matches!(
            store.insert_new(init_norm("kitchen", "walk", P, false)),
            Err(Error::DuplicateNorm { .. })
        ));
    }

    #[test]
    fn halving_updates() {
        let n = update_norm(init_norm("library", "talkQuietly", P, false), true);
        assert_eq!(n.interval(), iv(0.0, 0.5));
        assert_eq!(n.evidence, vec![false, true]);
        let n = update_norm(init_norm("kitchen", "talkQuietly", P, true), false);
        assert_eq!(n.interval(), iv(0.5, 1.0));
        let n = update_norm(init_norm("kitchen", "walk", P, true), true);
        assert_eq!(n.interval(), iv(1.0, 1.0));
    }

    #[test]
    fn select_questions_sizes() {
        let store = NormStore::with_default_actions(0);
        let q = select_questions(&store, "office", 3, 11).unwrap();
        assert_eq!(q.len(), 3);
        let mut actions: Vec<_> = q.iter().map(|q| q.action.clone()).collect();
        actions.sort();
        actions.dedup();
        assert_eq!(actions.len(), 3);
        assert!(q.iter().all(|q| q.operator == P));

        assert!(select_questions(&store, "office", 0, 11).unwrap().is_empty());

        let all = select_questions(&store, "office", 10, 11).unwrap();
        let mut actions: Vec<_> = all.iter().map(|q| q.action.as_str()).collect();
        actions.sort();
        let mut expected = DEFAULT_ACTIONS.to_vec();
        expected.sort();
        assert_eq!(actions, expected);

        assert_eq!(q, select_questions(&store, "office", 3, 11).unwrap());

        let empty = NormStore::new(vec![], 3, 0);
        assert!(matches!(select_questions(&empty, "x", 3, 0), Err(Error::EmptyVocabulary)));
    }

    #[test]
    fn exclusion_flag_skips_certain_norms() {
        let mut store = NormStore::with_default_actions(0);
        for a in &DEFAULT_ACTIONS[..5] {
            store.record_answer("office", &Question::permission(*a), true).unwrap();
        }
        store.exclude_certain = true;
        let q = select_questions(&store, "office", 3, 1).unwrap();
        assert_eq!(q, vec![Question::permission("walk")]);
    }

    #[test]
    fn record_answer_dispatches() {
        let mut store = NormStore::with_default_actions(0);
        let q = Question::permission("watch");
        assert_eq!(store.record_answer("bathroom", &q, false).unwrap().interval(), iv(0.0, 0.0));
        assert_eq!(store.record_answer("bathroom", &q, false).unwrap().interval(), iv(0.0, 0.0));
        assert_eq!(store.len(), 1);
        assert!(matches!(
            store.record_answer("bathroom", &Question::permission("fly"), true),
            Err(Error::UnknownAction(_))
        ));
        store.validate(&HalvingRule).unwrap();
    }

    #[test]
    fn query_is_sorted_and_scoped() {
        let mut store = NormStore::with_default_actions(0);
        assert!(store.query_norms("library").is_empty());
        for a in ["watch", "beQuiet", "walk"] {
            store.record_answer("library", &Question::permission(a), true).unwrap();
        }
        store.record_answer("kitchen", &Question::permission("listen"), true).unwrap();
        let got: Vec<_> = store.query_norms("library").iter().map(|n| n.action.clone()).collect();
        assert_eq!(got, vec!["beQuiet", "walk", "watch"]);
        assert_eq!(store.query_norms("library"), store.query_norms("library"));
    }

    #[test]
    fn other_operators_are_storable() {
        let mut store = NormStore::with_default_actions(0);
        let q = Question::new("beQuiet", DeonticOperator::Obligatory);
        store.record_answer("library", &q, true).unwrap();
        store.record_answer("library", &Question::permission("beQuiet"), false).unwrap();
        assert_eq!(store.query_norms("library").len(), 2);
    }

    #[test]
    fn question_string_form() {
        assert_eq!("walk".parse::<Question>().unwrap(), Question::permission("walk"));
        let q: Question = "forbidden:walk".parse().unwrap();
        assert_eq!(q.operator, DeonticOperator::Forbidden);
        assert_eq!(q.to_string(), "forbidden:walk");
        assert!("bogus:walk".parse::<Question>().is_err());
    }

    #[test]
    fn store_serialization_rejects_duplicates() {
        let mut store = NormStore::with_default_actions(4);
        store.record_answer("a", &Question::permission("walk"), true).unwrap();
        let json = serde_json::to_value(&store).unwrap();
        let back: NormStore = serde_json::from_value(json.clone()).unwrap();
        assert_eq!(back, store);
        let mut dup = json;
        let n = dup["norms"][0].clone();
        dup["norms"].as_array_mut().unwrap().push(n);
        assert!(serde_json::from_value::<NormStore>(dup).is_err());
    }
}
