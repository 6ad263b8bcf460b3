//! Acceptance suite. Each test prints one `[PASS]`/`[FAIL]` line for its
//! criterion and then asserts it. Run with `--nocapture` to see the lines.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use normscene_core::fixtures::{campus_manifest, CAMPUS_SCRIPT};
use normscene_core::rehearsal::ShallowClassifier;
use normscene_core::session::{default_threshold_grid, NormSettings, SessionConfig};
use normscene_core::{
    calibrate_threshold, cluster_samples, evaluate_replay, generate_synthetic, load_kb, predict_frame,
    process_episode, sample_pseudo_exemplars, save_kb, train, CategoryModel, DeonticOperator, FeatureVector,
    GeneratorSpec, KnowledgeBase, LabeledSample, LearnerConfig, NormStore, Question, QuestionPolicy,
    ScriptedOracle, TrainConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn criterion(name: &str, ok: bool, detail: String) {
    println!("[{}] {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "{name}: {detail}");
}

/// Permission table, rows by action, columns bathroom, classroom, library,
/// office, kitchen. `None` marks an action never asked about there.
const TABLE: [(&str, [Option<(f64, f64)>; 5]); 6] = [
    ("talkLoudly", [Some((0.0, 0.0)), Some((0.0, 0.0)), Some((0.0, 0.0)), Some((0.0, 0.0)), Some((1.0, 1.0))]),
    ("talkQuietly", [Some((1.0, 1.0)), Some((0.0, 0.5)), Some((0.0, 0.5)), Some((1.0, 1.0)), Some((0.5, 1.0))]),
    ("beQuiet", [Some((1.0, 1.0)), Some((0.0, 0.5)), Some((0.5, 1.0)), Some((0.0, 0.5)), Some((1.0, 1.0))]),
    ("listen", [Some((1.0, 1.0)), Some((1.0, 1.0)), None, Some((1.0, 1.0)), Some((1.0, 1.0))]),
    ("watch", [Some((0.0, 0.0)), None, Some((1.0, 1.0)), None, Some((1.0, 1.0))]),
    ("walk", [Some((1.0, 1.0)), None, None, Some((1.0, 1.0)), None]),
];
const CONTEXTS: [&str; 5] = ["bathroom", "classroom", "library", "office", "kitchen"];

/// Exact comparison of every table cell against the store; returns mismatches.
fn table_mismatches(store: &NormStore) -> Vec<String> {
    let mut bad = Vec::new();
    for (action, row) in TABLE {
        for (context, cell) in CONTEXTS.iter().zip(row) {
            let got = store
                .get(context, action, DeonticOperator::Permissible)
                .map(|n| (n.alpha, n.beta));
            if got != cell {
                bad.push(format!("{context}/{action}: expected {cell:?}, got {got:?}"));
            }
        }
    }
    let populated = TABLE.iter().flat_map(|(_, r)| r.iter()).filter(|c| c.is_some()).count();
    if store.len() != populated {
        bad.push(format!("store has {} norms, table has {populated}", store.len()));
    }
    bad
}

fn scripted_session() -> SessionConfig {
    SessionConfig {
        question_policy: QuestionPolicy::Scripted,
        ..SessionConfig::default()
    }
}

#[test]
fn table_reproduction() {
    let start = Instant::now();
    // Visit order: every first visit, then every second visit.
    let mut store = NormStore::with_default_actions(0);
    for visit in 0..2 {
        for (context, visits) in CAMPUS_SCRIPT {
            let answers = visits[visit];
            assert!(answers.len() <= 3);
            for &(action, answer) in answers {
                store.record_answer(context, &Question::permission(action), answer).unwrap();
            }
        }
    }
    let direct = table_mismatches(&store);

    // The same script through the full session on a synthetic campus.
    let data = campus_manifest(&GeneratorSpec { seed: 11, ..Default::default() }).unwrap();
    let (_, kb) = evaluate_replay(data.episodes, 32, &scripted_session(), &NormSettings::default(), 11, false).unwrap();
    let via_session = table_mismatches(&kb.norms);
    let elapsed = start.elapsed();

    criterion(
        "table reproduction (exact)",
        direct.is_empty() && via_session.is_empty() && elapsed < Duration::from_secs(1),
        format!("direct mismatches {direct:?}, session mismatches {via_session:?}, {elapsed:?} (< 1 s)"),
    );
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn mean_of(members: &[Vec<f64>]) -> Vec<f64> {
    let n = members.len() as f64;
    (0..members[0].len())
        .map(|j| members.iter().map(|m| m[j]).sum::<f64>() / n)
        .collect()
}

#[test]
fn clustering_oracle_equivalence() {
    let start = Instant::now();
    let mut worst_mean: f64 = 0.0;
    let mut worst_var: f64 = 0.0;
    let mut structure_ok = true;
    for trial in 0..16u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + trial);
        let dim = 1 + (trial as usize % 8);
        let threshold = rng.random_range(0.5..3.0);
        let samples: Vec<Vec<f64>> = (0..200)
            .map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();

        // Naive re-run holding member lists.
        let mut clusters: Vec<Vec<Vec<f64>>> = Vec::new();
        for x in &samples {
            let best = clusters
                .iter()
                .enumerate()
                .map(|(i, m)| (i, dist(&mean_of(m), x)))
                .fold(None, |b: Option<(usize, f64)>, c| match b {
                    Some(bb) if bb.1 <= c.1 => Some(bb),
                    _ => Some(c),
                });
            match best {
                Some((i, d)) if d < threshold => clusters[i].push(x.clone()),
                _ => clusters.push(vec![x.clone()]),
            }
        }

        let mut model = CategoryModel::new("y");
        let fvs: Vec<_> = samples.iter().map(|s| FeatureVector::new(s.clone()).unwrap()).collect();
        cluster_samples(&mut model, &fvs, &LearnerConfig { distance_threshold: threshold, ..Default::default() }).unwrap();

        structure_ok &= model.centroids().len() == clusters.len();
        for (c, members) in model.centroids().iter().zip(&clusters) {
            structure_ok &= c.count() as usize == members.len();
            let m = mean_of(members);
            for (a, b) in c.mean().iter().zip(&m) {
                worst_mean = worst_mean.max((a - b).abs());
            }
            if members.len() >= 2 {
                let n = members.len() as f64;
                for (j, v) in c.variance().iter().enumerate() {
                    let two_pass = members.iter().map(|x| (x[j] - m[j]).powi(2)).sum::<f64>() / n;
                    worst_var = worst_var.max((v - two_pass).abs());
                }
            }
        }
    }
    let elapsed = start.elapsed();
    criterion(
        "clustering oracle equivalence",
        structure_ok && worst_mean <= 1e-9 && worst_var <= 1e-7 && elapsed < Duration::from_secs(5),
        format!("max mean err {worst_mean:.2e} (<= 1e-9), max variance err {worst_var:.2e} (<= 1e-7), {elapsed:?} (< 5 s)"),
    );
}

#[test]
fn pseudo_exemplar_counts() {
    let mut checked = 0;
    let mut ok = true;
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = 1 + (seed as usize % 6);
        let n = rng.random_range(1..150);
        let samples: Vec<_> = (0..n)
            .map(|_| FeatureVector::new((0..dim).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap())
            .collect();
        let mode = if seed % 2 == 0 {
            normscene_core::CovarianceMode::Diagonal
        } else {
            normscene_core::CovarianceMode::Full
        };
        let cfg = LearnerConfig { distance_threshold: rng.random_range(0.5..4.0), covariance_mode: mode, ..Default::default() };
        let mut model = CategoryModel::new("y");
        cluster_samples(&mut model, &samples, &cfg).unwrap();
        let pseudo = sample_pseudo_exemplars(&model, cfg.covariance_floor, seed).unwrap();
        let mut per_centroid = vec![0u64; model.centroids().len()];
        for p in &pseudo {
            per_centroid[p.centroid] += 1;
        }
        for (c, got) in model.centroids().iter().zip(&per_centroid) {
            ok &= c.count() == *got;
            checked += 1;
        }
        ok &= pseudo.len() as u64 == model.total_count();
    }
    criterion(
        "pseudo-exemplar counts",
        ok,
        format!("{checked} centroids across 10 models, per-centroid draws equal exemplar counts"),
    );
}

#[test]
fn gradient_check() {
    let mut worst: f64 = 0.0;
    for instance in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + instance);
        let dim = rng.random_range(1..=5);
        let k = rng.random_range(1..=3);
        let order: Vec<String> = (0..k).map(|i| format!("c{i}")).collect();
        let mut clf = ShallowClassifier::zeros(order, dim, TrainConfig::default());
        clf.weights.iter_mut().for_each(|w| *w = rng.random_range(-1.0..1.0));
        clf.biases.iter_mut().for_each(|b| *b = rng.random_range(-1.0..1.0));
        let n = rng.random_range(1..=6);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let (_, gw, gb) = clf.loss_and_gradient(&refs, &labels);

        let h = 1e-5;
        let rel = |a: f64, num: f64| (a - num).abs() / a.abs().max(num.abs()).max(1e-6);
        for i in 0..clf.weights.len() {
            let mut plus = clf.clone();
            plus.weights[i] += h;
            let mut minus = clf.clone();
            minus.weights[i] -= h;
            let num = (plus.loss(&refs, &labels) - minus.loss(&refs, &labels)) / (2.0 * h);
            worst = worst.max(rel(gw[i], num));
        }
        for i in 0..clf.biases.len() {
            let mut plus = clf.clone();
            plus.biases[i] += h;
            let mut minus = clf.clone();
            minus.biases[i] -= h;
            let num = (plus.loss(&refs, &labels) - minus.loss(&refs, &labels)) / (2.0 * h);
            worst = worst.max(rel(gb[i], num));
        }
    }
    criterion(
        "gradient check",
        worst <= 1e-4,
        format!("max relative error {worst:.2e} over 20 instances (<= 1e-4)"),
    );
}

fn accuracy(clf: &ShallowClassifier, data: &[LabeledSample]) -> f64 {
    let hits = data
        .iter()
        .filter(|s| predict_frame(clf, s.features.as_slice()).unwrap().0 == s.label)
        .count();
    hits as f64 / data.len() as f64
}

#[test]
fn anti_forgetting() {
    let data = generate_synthetic(&GeneratorSpec {
        num_categories: 3,
        per_center_stddev: 0.3,
        frames_per_episode: 40,
        visits_per_category: 2,
        seed: 31,
        ..Default::default()
    })
    .unwrap();
    // First visit of each category trains, second visit is held out.
    let mut train_sets: Vec<(String, Vec<LabeledSample>)> = Vec::new();
    let mut held_out = Vec::new();
    for e in &data.episodes {
        let label = e.label.clone().unwrap();
        let rows: Vec<_> = e.frames.iter().map(|f| LabeledSample::new(label.clone(), f.clone())).collect();
        if train_sets.iter().any(|(l, _)| *l == label) {
            held_out.extend(rows);
        } else {
            train_sets.push((label, rows));
        }
    }
    assert_eq!(train_sets.len(), 3);

    let learner = LearnerConfig { distance_threshold: 5.0, ..Default::default() };
    let cfg = TrainConfig { seed: 4, ..Default::default() };
    let mut models: Vec<CategoryModel> = Vec::new();
    let mut clf = None;
    for (label, rows) in &train_sets {
        let old: Vec<&CategoryModel> = models.iter().collect();
        clf = Some(train(rows, &old, &cfg, learner.covariance_floor).unwrap());
        let mut m = CategoryModel::new(label);
        let frames: Vec<_> = rows.iter().map(|r| r.features.clone()).collect();
        cluster_samples(&mut m, &frames, &learner).unwrap();
        models.push(m);
    }
    let incremental = accuracy(clf.as_ref().unwrap(), &held_out);
    let all: Vec<_> = train_sets.iter().flat_map(|(_, r)| r.iter().cloned()).collect();
    let joint = accuracy(&train(&all, &[], &cfg, learner.covariance_floor).unwrap(), &held_out);
    let gap = (joint - incremental) * 100.0;
    criterion(
        "anti-forgetting at desk scale",
        gap.abs() <= 5.0,
        format!("incremental {:.1}%, joint {:.1}%, gap {gap:.1} points (<= 5)", incremental * 100.0, joint * 100.0),
    );
}

const CALIBRATION_SEED: u64 = 1001;
const EVALUATION_SEED: u64 = 7;

fn calibrated_config() -> SessionConfig {
    let calibration = generate_synthetic(&GeneratorSpec { seed: CALIBRATION_SEED, ..Default::default() }).unwrap();
    let grid = default_threshold_grid(&calibration.episodes);
    let cal = calibrate_threshold(&calibration.episodes, 32, &SessionConfig::default(), &NormSettings::default(), CALIBRATION_SEED, &grid)
        .unwrap();
    let mut config = SessionConfig::default();
    config.learner.distance_threshold = cal.threshold;
    config
}

#[test]
fn open_set_surrogate() {
    let start = Instant::now();
    let config = calibrated_config();
    let data = generate_synthetic(&GeneratorSpec { seed: EVALUATION_SEED, ..Default::default() }).unwrap();
    assert_ne!(CALIBRATION_SEED, EVALUATION_SEED);
    let (report, _) = evaluate_replay(data.episodes, 32, &config, &NormSettings::default(), EVALUATION_SEED, false).unwrap();
    let elapsed = start.elapsed();
    let new = report.novelty_accuracy_new.unwrap();
    let known = report.novelty_accuracy_known.unwrap();
    let label = report.label_accuracy.unwrap();
    criterion(
        "open-set surrogate",
        report.novel_episodes == 5
            && report.known_episodes == 5
            && new >= 0.8
            && known >= 0.8
            && label >= 0.9
            && elapsed < Duration::from_secs(60),
        format!(
            "D={:.4}, novel {new:.2} (>= 0.8), known {known:.2} (>= 0.8), label {label:.2} (>= 0.9), {elapsed:?} (< 60 s)",
            config.learner.distance_threshold
        ),
    );
}

#[test]
fn determinism() {
    let data = generate_synthetic(&GeneratorSpec { seed: EVALUATION_SEED, ..Default::default() }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for run in 0..2 {
        let (report, kb) =
            evaluate_replay(data.episodes.clone(), 32, &SessionConfig::default(), &NormSettings::default(), 3, false).unwrap();
        let report_path = dir.path().join(format!("report{run}.json"));
        std::fs::write(&report_path, report.to_json()).unwrap();
        let kb_path = dir.path().join(format!("kb{run}.json"));
        save_kb(&kb, &kb_path).unwrap();
        files.push((std::fs::read(report_path).unwrap(), std::fs::read(kb_path).unwrap()));
    }
    criterion(
        "determinism",
        files[0] == files[1],
        format!("report {} bytes, kb {} bytes, byte-identical across runs", files[0].0.len(), files[0].1.len()),
    );
}

#[test]
fn persistence() {
    let dir = tempfile::tempdir().unwrap();

    // Norm table survives a round trip exactly.
    let campus = campus_manifest(&GeneratorSpec { seed: 11, ..Default::default() }).unwrap();
    let (_, kb) = evaluate_replay(campus.episodes, 32, &scripted_session(), &NormSettings::default(), 11, false).unwrap();
    let path = dir.path().join("campus.json");
    save_kb(&kb, &path).unwrap();
    let loaded = load_kb(&path).unwrap();
    let table_ok = loaded == kb && table_mismatches(&loaded.norms).is_empty();

    // A learned scene model keeps predicting and learning identically after
    // reload: stop half-way, reload, finish, and compare with an
    // uninterrupted run.
    let config = calibrated_config();
    let data = generate_synthetic(&GeneratorSpec { seed: EVALUATION_SEED, ..Default::default() }).unwrap();
    let (_, full) =
        evaluate_replay(data.episodes.clone(), 32, &config, &NormSettings::default(), EVALUATION_SEED, false).unwrap();
    let (_, mut half) =
        evaluate_replay(data.episodes[..5].to_vec(), 32, &config, &NormSettings::default(), EVALUATION_SEED, false).unwrap();
    let half_path = dir.path().join("half.json");
    save_kb(&half, &half_path).unwrap();
    let mut resumed = load_kb(&half_path).unwrap();
    let mut oracle = ScriptedOracle::new();
    let mut outcomes_match = true;
    for e in &data.episodes[5..] {
        let a = process_episode(&mut half, e.clone(), &mut oracle).unwrap();
        let b = process_episode(&mut resumed, e.clone(), &mut oracle).unwrap();
        outcomes_match &= serde_json::to_string(&a).unwrap() == serde_json::to_string(&b).unwrap();
    }
    let resumed_ok = outcomes_match && resumed.to_json() == full.to_json() && half.to_json() == full.to_json();
    resumed.validate().unwrap();

    // Clustering and pseudo-exemplar invariants on the reloaded models.
    let reloaded = KnowledgeBase::from_json(&full.to_json()).unwrap();
    let mut counts_ok = true;
    for m in reloaded.categories.values() {
        m.validate().unwrap();
        let pseudo = sample_pseudo_exemplars(m, reloaded.config.learner.covariance_floor, 1).unwrap();
        let mut per: BTreeMap<usize, u64> = BTreeMap::new();
        for p in &pseudo {
            *per.entry(p.centroid).or_default() += 1;
        }
        counts_ok &= m.centroids().iter().enumerate().all(|(i, c)| per.get(&i) == Some(&c.count()));
    }

    criterion(
        "persistence",
        table_ok && resumed_ok && counts_ok,
        format!("norm table exact after reload: {table_ok}; resumed replay identical: {resumed_ok}; pseudo counts after reload: {counts_ok}"),
    );
}
