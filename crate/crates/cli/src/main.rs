//! `normscene` command-line tool.
//!
//! Exit codes: 0 on success, 1 when work fails after it has started, 2 for
//! bad arguments, invalid configuration or unreadable inputs.

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use normscene_core::fixtures::campus_manifest;
use normscene_core::ingest::load_manifest_with_episodes;
use normscene_core::session::format_norm_table;
use normscene_core::{
    calibrate_threshold, default_threshold_grid, evaluate_replay, generate_synthetic, load_kb, save_kb,
    CovarianceMode, Episode, GeneratorSpec, KnowledgeBase, Manifest, Norm, NormSettings, QuestionPolicy,
    SessionConfig,
};
use serde::Deserialize;
use serde_json::json;

#[derive(Parser)]
#[command(name = "normscene", version, about = "Online scene-category and social-norm learner")]
struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
    /// JSON file with optional `session` and `norms` objects.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic manifest and its episode files.
    Synth(SynthArgs),
    /// Replay a manifest with a scripted teacher and report metrics.
    Replay(ReplayArgs),
    /// Sweep the distance threshold on a calibration manifest.
    Calibrate(CalibrateArgs),
    /// Print the norms stored in a knowledge base.
    Norms(NormsArgs),
    /// Run the HTTP teaching service.
    Serve(ServeArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 5)]
    categories: usize,
    #[arg(long, default_value_t = 1)]
    centers: usize,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    #[arg(long, default_value_t = 0.1)]
    stddev: f64,
    #[arg(long, default_value_t = 20)]
    frames: usize,
    #[arg(long, default_value_t = 2)]
    visits: usize,
    #[arg(long, default_value_t = 1.0)]
    center_range: f64,
    /// Minimum distance between centers, in units of the stddev.
    #[arg(long, default_value_t = 10.0)]
    min_separation: f64,
    /// Use the five-context campus answer script (forces 5 categories, 2 visits).
    #[arg(long)]
    campus: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Default)]
struct Overrides {
    /// Distance threshold D.
    #[arg(long)]
    threshold: Option<f64>,
    /// Novel-frame fraction above which an episode is novel.
    #[arg(long)]
    unknown_fraction: Option<f64>,
    #[arg(long, value_enum)]
    covariance: Option<Covariance>,
    #[arg(long)]
    covariance_floor: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long, value_enum)]
    question_policy: Option<Policy>,
    #[arg(long)]
    retrain_every: Option<u64>,
    /// Questions per visit.
    #[arg(long)]
    budget: Option<usize>,
    /// Skip questions whose answer is already certain.
    #[arg(long)]
    exclude_certain: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Covariance {
    Diagonal,
    Full,
}

#[derive(Clone, Copy, ValueEnum)]
enum Policy {
    Random,
    Scripted,
}

#[derive(Args)]
struct ReplayArgs {
    manifest: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
    /// Fix the threshold by a sweep on this manifest before replaying.
    #[arg(long, conflicts_with = "threshold")]
    calibration_manifest: Option<PathBuf>,
    #[arg(long)]
    save_kb: Option<PathBuf>,
    /// Include per-episode phase timings (makes output non-reproducible).
    #[arg(long)]
    timings: bool,
}

#[derive(Args)]
struct CalibrateArgs {
    manifest: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct NormsArgs {
    #[arg(long)]
    kb: PathBuf,
    #[arg(long)]
    context: Option<String>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    /// Start from this knowledge base instead of an empty one.
    #[arg(long, conflicts_with = "dim")]
    kb: Option<PathBuf>,
    /// Feature dimension of a fresh knowledge base.
    #[arg(long)]
    dim: Option<usize>,
    /// Default target of `POST /kb/save`.
    #[arg(long)]
    save_path: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    #[serde(default)]
    session: SessionConfig,
    #[serde(default)]
    norms: NormOverrides,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct NormOverrides {
    actions: Option<Vec<String>>,
    question_budget: Option<usize>,
    exclude_certain: Option<bool>,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

type Outcome = Result<(), Failure>;

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure::Usage(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Synth(a) => synth(&cli, a),
        Command::Replay(a) => replay(&cli, a),
        Command::Calibrate(a) => calibrate(&cli, a),
        Command::Norms(a) => norms(&cli, a),
        Command::Serve(a) => serve(&cli, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}

/// Writes to stdout, ignoring a closed pipe.
fn emit(text: &str) {
    use std::io::Write;
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn print_json(v: &serde_json::Value) {
    emit(&(serde_json::to_string_pretty(v).expect("json value serializes") + "\n"));
}

fn synth(cli: &Cli, a: &SynthArgs) -> Outcome {
    let spec = GeneratorSpec {
        num_categories: a.categories,
        centers_per_category: a.centers,
        dim: a.dim,
        per_center_stddev: a.stddev,
        frames_per_episode: a.frames,
        visits_per_category: a.visits,
        center_range: a.center_range,
        min_center_separation: a.min_separation,
        seed: cli.seed,
    };
    spec.validate().map_err(usage)?;
    let data = if a.campus { campus_manifest(&spec) } else { generate_synthetic(&spec) }.map_err(runtime)?;
    let manifest = data.write_to(&a.out).map_err(runtime)?;
    match cli.format {
        Format::Text => emit(&format!("wrote {} ({} episodes)\n", manifest.display(), data.episodes.len())),
        Format::Json => print_json(&json!({ "manifest": manifest, "episodes": data.episodes.len() })),
    }
    Ok(())
}

/// Session and norm settings from defaults, then the config file, then flags.
/// `actions` fills in the vocabulary when the config file names none.
fn settings(cli: &Cli, o: &Overrides, actions: Option<&[String]>) -> Result<(SessionConfig, NormSettings), Failure> {
    let file = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
            serde_json::from_str::<ConfigFile>(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?
        }
        None => ConfigFile::default(),
    };
    let mut session = file.session;
    let mut norms = NormSettings::default();
    if let Some(actions) = file.norms.actions.as_deref().or(actions) {
        norms.actions = actions.to_vec();
    }
    if let Some(b) = file.norms.question_budget {
        norms.question_budget = b;
    }
    if let Some(x) = file.norms.exclude_certain {
        norms.exclude_certain = x;
    }

    if let Some(v) = o.threshold {
        session.learner.distance_threshold = v;
    }
    if let Some(v) = o.unknown_fraction {
        session.learner.unknown_frame_fraction = v;
    }
    if let Some(v) = o.covariance {
        session.learner.covariance_mode = match v {
            Covariance::Diagonal => CovarianceMode::Diagonal,
            Covariance::Full => CovarianceMode::Full,
        };
    }
    if let Some(v) = o.covariance_floor {
        session.learner.covariance_floor = v;
    }
    if let Some(v) = o.epochs {
        session.train.epochs = v;
    }
    if let Some(v) = o.learning_rate {
        session.train.learning_rate = v;
    }
    if let Some(v) = o.batch_size {
        session.train.batch_size = v;
    }
    if let Some(v) = o.question_policy {
        session.question_policy = match v {
            Policy::Random => QuestionPolicy::Random,
            Policy::Scripted => QuestionPolicy::Scripted,
        };
    }
    if let Some(v) = o.retrain_every {
        session.retrain_every = v;
    }
    if let Some(v) = o.budget {
        norms.question_budget = v;
    }
    if o.exclude_certain {
        norms.exclude_certain = true;
    }

    session.validate().map_err(usage)?;
    if norms.actions.is_empty() {
        return Err(usage("action vocabulary is empty"));
    }
    Ok((session, norms))
}

fn load_inputs(path: &Path) -> Result<(Manifest, Vec<Episode>), Failure> {
    if !path.exists() {
        return Err(usage(format!("manifest {} not found", path.display())));
    }
    load_manifest_with_episodes(path).map_err(usage)
}

fn replay(cli: &Cli, a: &ReplayArgs) -> Outcome {
    let (manifest, episodes) = load_inputs(&a.manifest)?;
    let (mut session, norms) = settings(cli, &a.overrides, Some(&manifest.actions))?;
    let calibration = match &a.calibration_manifest {
        Some(path) => {
            let (cal_manifest, cal_episodes) = load_inputs(path)?;
            if cal_manifest.dim != manifest.dim {
                return Err(usage("calibration manifest has a different dimension"));
            }
            let grid = default_threshold_grid(&cal_episodes);
            let cal = calibrate_threshold(&cal_episodes, cal_manifest.dim, &session, &norms, cli.seed, &grid)
                .map_err(runtime)?;
            session.learner.distance_threshold = cal.threshold;
            Some(cal)
        }
        None => None,
    };

    let (report, kb) = evaluate_replay(episodes, manifest.dim, &session, &norms, cli.seed, a.timings).map_err(runtime)?;
    if let Some(path) = &a.save_kb {
        save_kb(&kb, path).map_err(runtime)?;
    }
    match cli.format {
        Format::Json => emit(&report.to_json()),
        Format::Text => {
            if let Some(cal) = &calibration {
                emit(&format!("calibrated threshold {:.6} over {} candidates\n", cal.threshold, cal.rows.len()));
            }
            emit(&report.to_text());
        }
    }
    Ok(())
}

fn calibrate(cli: &Cli, a: &CalibrateArgs) -> Outcome {
    let (manifest, episodes) = load_inputs(&a.manifest)?;
    let (session, norms) = settings(cli, &a.overrides, Some(&manifest.actions))?;
    let grid = match a.overrides.threshold {
        Some(d) => vec![d],
        None => default_threshold_grid(&episodes),
    };
    let cal = calibrate_threshold(&episodes, manifest.dim, &session, &norms, cli.seed, &grid).map_err(runtime)?;
    match cli.format {
        Format::Json => print_json(&serde_json::to_value(&cal).expect("calibration serializes")),
        Format::Text => {
            let fmt = |m: Option<f64>| m.map_or_else(|| "n/a".to_string(), |v| format!("{v:.3}"));
            for r in &cal.rows {
                emit(&format!(
                    "D={:<10.6} new={} known={} label={}\n",
                    r.threshold,
                    fmt(r.novelty_accuracy_new),
                    fmt(r.novelty_accuracy_known),
                    fmt(r.label_accuracy)
                ));
            }
            emit(&format!("chosen threshold {:.6}\n", cal.threshold));
        }
    }
    Ok(())
}

fn norms(cli: &Cli, a: &NormsArgs) -> Outcome {
    if !a.kb.exists() {
        return Err(usage(format!("knowledge base {} not found", a.kb.display())));
    }
    let kb = load_kb(&a.kb).map_err(runtime)?;
    let rows: Vec<Norm> = match &a.context {
        Some(c) => kb.norms.query_norms(c).into_iter().cloned().collect(),
        None => kb.norms.iter().cloned().collect(),
    };
    match cli.format {
        Format::Json => print_json(&serde_json::to_value(&rows).expect("norms serialize")),
        Format::Text => emit(&format_norm_table(&rows)),
    }
    Ok(())
}

fn serve(cli: &Cli, a: &ServeArgs) -> Outcome {
    let addr: SocketAddr = format!("{}:{}", a.host, a.port).parse().map_err(usage)?;
    let kb = match (&a.kb, a.dim) {
        (Some(path), _) => {
            if !path.exists() {
                return Err(usage(format!("knowledge base {} not found", path.display())));
            }
            load_kb(path).map_err(usage)?
        }
        (None, Some(dim)) => {
            let (session, norms) = settings(cli, &a.overrides, None)?;
            KnowledgeBase::new(dim, session, norms, cli.seed).map_err(usage)?
        }
        (None, None) => return Err(usage("give --kb or --dim")),
    };
    let service = normscene_service::Service::new(kb, a.save_path.clone());
    let runtime_ = tokio::runtime::Runtime::new().map_err(runtime)?;
    eprintln!("listening on http://{addr}");
    runtime_.block_on(normscene_service::serve(service, addr)).map_err(runtime)
}
