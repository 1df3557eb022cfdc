//! The `mctm` command line.
//!
//! Every option can also come from a TOML file given with `--config`, one
//! table per subcommand (`[train]`, `[score]`, ...) with keys spelled like
//! the flags but with underscores. Flags win over the file, the file wins
//! over built-in defaults. Path options can also be set from environment
//! variables.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::anomaly::{least_likely, localise, PredictiveState, ScoreOptions, Scorer, ScoringModel};
use crate::em::{em_fit_restarts, EmConfig};
use crate::error::MctmError;
use crate::evaluation::{accuracy, auc_pr, best_accuracy, format_curve_csv, localisation_recall, pr_curve, LabelledScores};
use crate::generative::{generate, inject_uniform_anomalies};
use crate::gibbs::{gs_fit, GibbsConfig};
use crate::ingest::{build_corpus, parse_events, ClipConfig, FrameLayout, DEFAULT_CELL, DEFAULT_MIN_WORDS};
use crate::io::{
    format_labels, format_scores, params_to_json, read_corpus, read_labels, read_scores, read_text,
    write_corpus, write_text, Algorithm, LocalisedToken, ModelFile, ScoreRecord,
};
use crate::model::{make_prior, Corpus, ModelSpec, PriorKind};
use crate::rng::derive_seed;
use crate::vb::{vb_fit_restarts, VbConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Numerical(_) => EXIT_NUMERICAL,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numerical(m) => m,
        }
    }
}

impl From<MctmError> for CliError {
    fn from(e: MctmError) -> Self {
        if e.is_numerical() {
            return CliError::Numerical(e.to_string());
        }
        match e {
            MctmError::InvalidSpec(_) | MctmError::InvalidHyperparams(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

#[derive(Parser, Debug)]
#[command(name = "mctm", version, about = "Markov clustering topic model: learn behaviours from clip documents and score new clips for anomalies")]
pub struct Cli {
    /// TOML file with a table per subcommand; flags take precedence over it
    #[arg(long, global = true, env = "MCTM_CONFIG")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Draw a synthetic corpus (and optionally a test stream with anomalies)
    Generate(GenerateArgs),
    /// Turn a motion-event CSV into a corpus of clip documents
    Featurize(FeaturizeArgs),
    /// Fit a model to a corpus
    Train(TrainArgs),
    /// Score each document of a test stream
    Score(ScoreArgs),
    /// List the least likely words of each test document
    Localise(LocaliseArgs),
    /// Precision-recall and accuracy of score files against labels
    Eval(EvalArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Approximation {
    Plugin,
    Mc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Start {
    /// Use the initial-state estimate directly
    Prior,
    /// Continue from the belief after the training corpus
    Propagate,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerateArgs {
    /// Vocabulary size [default: 50, or the layout's size with --frame]
    #[arg(long)]
    pub vocab: Option<usize>,
    /// Frame size WxH in pixels; sets the vocabulary to 4 directions per cell
    #[arg(long)]
    pub frame: Option<String>,
    /// Cell size in pixels, with --frame [default: 8]
    #[arg(long)]
    pub cell: Option<u32>,
    /// Number of topics [default: 8]
    #[arg(long)]
    pub topics: Option<usize>,
    /// Number of behaviours [default: 4]
    #[arg(long)]
    pub behaviours: Option<usize>,
    /// Prior the true parameters are drawn from: 1, H or H+1 [default: H+1]
    #[arg(long)]
    pub prior: Option<PriorKind>,
    /// Training documents [default: 200]
    #[arg(long)]
    pub docs: Option<usize>,
    /// Words per document [default: 40]
    #[arg(long)]
    pub doc_length: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Corpus output; ground truth goes next to it as .truth.json
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Documents continuing the same chain, written to --test-out [default: 0]
    #[arg(long)]
    pub test_docs: Option<usize>,
    /// Test corpus output; labels go to .labels and truth to .truth.json beside it
    #[arg(long)]
    pub test_out: Option<PathBuf>,
    /// Share of test documents made abnormal [default: 0.05]
    #[arg(long)]
    pub anomaly_rate: Option<f64>,
    /// Share of an abnormal document's words replaced [default: 0.5]
    #[arg(long)]
    pub anomaly_fraction: Option<f64>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct FeaturizeArgs {
    /// Event CSV: frame,cell_x,cell_y,dir
    #[arg(long, env = "MCTM_EVENTS")]
    pub events: Option<PathBuf>,
    /// Frame size WxH in pixels [default: 360x288]
    #[arg(long)]
    pub frame: Option<String>,
    /// Cell size in pixels [default: 8]
    #[arg(long)]
    pub cell: Option<u32>,
    /// Frames per second of the source video (required)
    #[arg(long)]
    pub fps: Option<f64>,
    /// Clip length in seconds [default: 1]
    #[arg(long)]
    pub clip_seconds: Option<f64>,
    /// Clips with fewer words are dropped [default: 20]
    #[arg(long)]
    pub min_words: Option<usize>,
    /// Corpus output; kept clip indices go to .index beside it
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainArgs {
    #[arg(long, env = "MCTM_TRAIN_CORPUS")]
    pub corpus: Option<PathBuf>,
    /// Model output; run metadata goes to .meta.json beside it
    #[arg(long, env = "MCTM_MODEL")]
    pub out: Option<PathBuf>,
    /// Vocabulary size [default: largest word id + 1]
    #[arg(long)]
    pub vocab: Option<usize>,
    /// [default: 8]
    #[arg(long)]
    pub topics: Option<usize>,
    /// [default: 4]
    #[arg(long)]
    pub behaviours: Option<usize>,
    /// em, vb or gs [default: em]
    #[arg(long)]
    pub algo: Option<Algorithm>,
    /// 1, H or H+1 [default: H]
    #[arg(long)]
    pub prior: Option<PriorKind>,
    /// EM/VB iterations [default: 100]
    #[arg(long)]
    pub iters: Option<usize>,
    /// Stop EM/VB early once changes fall below this [default: off]
    #[arg(long)]
    pub tol: Option<f64>,
    /// Gibbs sweeps discarded before sampling [default: 500]
    #[arg(long)]
    pub burn_in: Option<usize>,
    /// Gibbs sweeps between retained samples [default: 100]
    #[arg(long)]
    pub spacing: Option<usize>,
    /// Gibbs samples retained [default: 5]
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Initialisations per EM or VB run; the one with the best objective is kept [default: 1]
    #[arg(long)]
    pub restarts: Option<usize>,
    /// Independent runs with derived seeds, one model file each [default: 1]
    #[arg(long)]
    pub runs: Option<usize>,
    /// Runs trained in parallel [default: 1]
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct StreamArgs {
    #[arg(long, env = "MCTM_MODEL")]
    pub model: Option<PathBuf>,
    /// Test corpus, scored in order as one stream
    #[arg(long, env = "MCTM_TEST_CORPUS")]
    pub corpus: Option<PathBuf>,
    /// Training corpus, for an exact propagated start
    #[arg(long, env = "MCTM_TRAIN_CORPUS")]
    pub train_corpus: Option<PathBuf>,
    /// plugin or mc [default: plugin]
    #[arg(long, value_enum)]
    pub approx: Option<Approximation>,
    /// Parameter samples for mc [default: 5]
    #[arg(long)]
    pub mc_samples: Option<usize>,
    /// Seed for posterior draws in mc mode [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// prior or propagate [default: propagate]
    #[arg(long, value_enum)]
    pub start: Option<Start>,
    /// Frame size WxH, to report cell positions and directions
    #[arg(long)]
    pub frame: Option<String>,
    /// Cell size in pixels, with --frame [default: 8]
    #[arg(long)]
    pub cell: Option<u32>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub stream: StreamArgs,
    /// Score file output; per-document timings go to .timing beside it
    #[arg(long, env = "MCTM_SCORES")]
    pub out: Option<PathBuf>,
    /// Shorter documents are normal by default [default: 20]
    #[arg(long)]
    pub min_words: Option<usize>,
    /// Also record this many least likely words per document [default: 0]
    #[arg(long)]
    pub top_n: Option<usize>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct LocaliseArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub stream: StreamArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Least likely words listed per document [default: 10]
    #[arg(long)]
    pub top_n: Option<usize>,
    /// Ground truth from `generate --test-out`, to measure localisation recall
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// With --truth: list this share of each abnormal document's injected words instead of --top-n
    #[arg(long)]
    pub truth_fraction: Option<f64>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalArgs {
    /// One or more score files (e.g. one per run)
    #[arg(long, num_args = 1..)]
    pub scores: Vec<PathBuf>,
    /// One label per scored document: 1 abnormal, 0 normal
    #[arg(long, env = "MCTM_LABELS")]
    pub labels: Option<PathBuf>,
    /// Also report accuracy when scores at or below this are flagged
    #[arg(long, allow_hyphen_values = true)]
    pub threshold: Option<f64>,
    /// Precision-recall points as CSV (one file per score file when several)
    #[arg(long)]
    pub curve_out: Option<PathBuf>,
    /// Report output [default: stdout]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Fills options missing from `flags` with the config table's values.
fn merge<T: Serialize + DeserializeOwned + Default>(flags: &T, table: Option<&toml::Value>, name: &str) -> CliResult<T> {
    let Some(table) = table else {
        return serde_json::from_value(serde_json::to_value(flags).expect("args serialise"))
            .map_err(|e| usage(e.to_string()));
    };
    let mut merged = serde_json::to_value(flags).expect("args serialise");
    let from_file = serde_json::to_value(table).map_err(|e| usage(format!("config [{name}]: {e}")))?;
    let (Some(obj), Some(file_obj)) = (merged.as_object_mut(), from_file.as_object()) else {
        return Err(usage(format!("config [{name}] must be a table")));
    };
    let known = serde_json::to_value(T::default()).expect("args serialise");
    for (k, v) in file_obj {
        if known.get(k).is_none() {
            return Err(usage(format!("config [{name}]: unknown option {k:?}")));
        }
        let unset = match obj.get(k) {
            None | Some(Value::Null) => true,
            Some(Value::Array(a)) => a.is_empty(),
            _ => false,
        };
        if unset {
            obj.insert(k.clone(), v.clone());
        }
    }
    serde_json::from_value(merged).map_err(|e| usage(format!("config [{name}]: {e}")))
}

fn load_config(path: Option<&Path>) -> CliResult<Option<toml::Table>> {
    let Some(path) = path else { return Ok(None) };
    let text = read_text(path)?;
    toml::from_str(&text)
        .map(Some)
        .map_err(|e| usage(format!("config {}: {e}", path.display())))
}

fn required<T: Clone>(v: &Option<T>, flag: &str) -> CliResult<T> {
    v.clone().ok_or_else(|| usage(format!("missing required option --{flag}")))
}

/// `base` with its extension replaced.
fn sibling(base: &Path, ext: &str) -> PathBuf {
    base.with_extension(ext)
}

fn parse_frame(s: &str, cell: u32) -> CliResult<FrameLayout> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| usage(format!("frame {s:?} is not WxH")))?;
    let w: u32 = w.trim().parse().map_err(|_| usage(format!("bad frame width in {s:?}")))?;
    let h: u32 = h.trim().parse().map_err(|_| usage(format!("bad frame height in {s:?}")))?;
    FrameLayout::new(w, h, cell).map_err(|e| usage(e.to_string()))
}

fn write_json(path: &Path, v: &Value) -> CliResult<()> {
    let mut s = serde_json::to_string_pretty(v).expect("json serialises");
    s.push('\n');
    Ok(write_text(path, &s)?)
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    let config = load_config(cli.config.as_deref())?;
    let table = |name: &str| config.as_ref().and_then(|c| c.get(name));
    match &cli.command {
        Command::Generate(a) => cmd_generate(&merge(a, table("generate"), "generate")?),
        Command::Featurize(a) => cmd_featurize(&merge(a, table("featurize"), "featurize")?),
        Command::Train(a) => cmd_train(&merge(a, table("train"), "train")?),
        Command::Score(a) => cmd_score(&merge(a, table("score"), "score")?),
        Command::Localise(a) => cmd_localise(&merge(a, table("localise"), "localise")?),
        Command::Eval(a) => cmd_eval(&merge(a, table("eval"), "eval")?),
    }
}

fn cmd_generate(a: &GenerateArgs) -> CliResult<()> {
    let out = required(&a.out, "out")?;
    let vocab = match (&a.frame, a.vocab) {
        (Some(f), None) => parse_frame(f, a.cell.unwrap_or(DEFAULT_CELL))?.vocab_size(),
        (None, v) => v.unwrap_or(50),
        (Some(_), Some(_)) => return Err(usage("give either --vocab or --frame, not both")),
    };
    let spec = ModelSpec::new(vocab, a.topics.unwrap_or(8), a.behaviours.unwrap_or(4))?;
    let prior = a.prior.unwrap_or(PriorKind::TypeHPlus1);
    let seed = a.seed.unwrap_or(0);
    let docs = a.docs.unwrap_or(200);
    let test_docs = a.test_docs.unwrap_or(0);
    let doc_length = a.doc_length.unwrap_or(40);
    if docs == 0 || doc_length == 0 {
        return Err(usage("--docs and --doc-length must be positive"));
    }
    if test_docs > 0 && a.test_out.is_none() {
        return Err(usage("--test-docs needs --test-out"));
    }
    let total = docs + test_docs;
    let data = generate(&spec, &make_prior(prior, &spec), total, &vec![doc_length; total], seed)?;
    let words: Vec<Vec<u32>> = data.corpus.docs().iter().map(|d| d.words.clone()).collect();
    let train = Corpus::from_words(spec, words[..docs].to_vec())?;
    write_corpus(&out, &train)?;
    let truth = json!({
        "seed": seed,
        "prior": prior,
        "spec": spec,
        "true_params": params_to_json(&data.true_params),
        "true_behaviours": data.true_behaviours[..docs],
        "true_topics": data.true_topics[..docs],
    });
    write_json(&sibling(&out, "truth.json"), &truth)?;

    if test_docs > 0 {
        let test_out = a.test_out.clone().expect("checked above");
        let test = Corpus::from_words(spec, words[docs..].to_vec())?;
        let injected = inject_uniform_anomalies(
            &test,
            a.anomaly_rate.unwrap_or(0.05),
            a.anomaly_fraction.unwrap_or(0.5),
            derive_seed(seed, 1),
        )
        .map_err(|e| usage(e.to_string()))?;
        write_corpus(&test_out, &injected.corpus)?;
        write_text(&sibling(&test_out, "labels"), &format_labels(&injected.labels))?;
        let test_truth = json!({
            "labels": injected.labels,
            "abnormal_tokens": injected.abnormal_tokens,
            "true_behaviours": data.true_behaviours[docs..],
        });
        write_json(&sibling(&test_out, "truth.json"), &test_truth)?;
    }
    Ok(())
}

fn cmd_featurize(a: &FeaturizeArgs) -> CliResult<()> {
    let events_path = required(&a.events, "events")?;
    let out = required(&a.out, "out")?;
    let fps = required(&a.fps, "fps")?;
    let layout = parse_frame(a.frame.as_deref().unwrap_or("360x288"), a.cell.unwrap_or(DEFAULT_CELL))?;
    let clip = ClipConfig {
        fps,
        clip_seconds: a.clip_seconds.unwrap_or(1.0),
        min_words: a.min_words.unwrap_or(DEFAULT_MIN_WORDS),
    };
    clip.frames_per_clip().map_err(|e| usage(e.to_string()))?;
    let events = parse_events(&read_text(&events_path)?).map_err(|e| CliError::Data(format!("{}: {e}", events_path.display())))?;
    let built = build_corpus(&events, &layout, &clip)?;
    write_corpus(&out, &built.corpus)?;
    let index: String = built.kept_windows.iter().map(|w| format!("{w}\n")).collect();
    write_text(&sibling(&out, "index"), &index)?;
    let (dw, dh) = layout.dropped_pixels();
    eprintln!(
        "{} of {} clips kept; vocabulary {} words ({}x{} cells{})",
        built.corpus.num_docs(),
        built.num_windows,
        layout.vocab_size(),
        layout.cols(),
        layout.rows(),
        if dw + dh > 0 { format!(", {dw}x{dh} edge pixels unused") } else { String::new() }
    );
    Ok(())
}

struct TrainedRun {
    model: ModelFile,
    meta: Value,
}

fn train_once(corpus: &Corpus, a: &TrainArgs, spec: &ModelSpec, seed: u64) -> CliResult<TrainedRun> {
    let prior = a.prior.unwrap_or(PriorKind::TypeH);
    let hyper = make_prior(prior, spec);
    let algorithm = a.algo.unwrap_or(Algorithm::Em);
    let iters = a.iters.unwrap_or(100);
    let restarts = a.restarts.unwrap_or(1);
    let mut meta = json!({
        "algorithm": algorithm,
        "prior": prior,
        "seed": seed,
        "spec": spec,
        "train_docs": corpus.num_docs(),
        "train_tokens": corpus.num_tokens(),
    });
    let (params, posterior, samples) = match algorithm {
        Algorithm::Em => {
            let cfg = EmConfig { max_iters: iters, tol: a.tol };
            let fit = em_fit_restarts(corpus, &hyper, spec, seed, &cfg, restarts)?;
            meta["restarts"] = json!(restarts);
            meta["init_seed"] = json!(fit.trace.init_seed);
            meta["iterations"] = json!(fit.trace.iterations);
            meta["converged"] = json!(fit.trace.converged);
            meta["objective"] = json!(fit.trace.objective);
            meta["final_objective"] = json!(fit.trace.final_objective);
            meta["support_lost"] = json!(fit.trace.support_lost);
            (fit.params, None, Vec::new())
        }
        Algorithm::Vb => {
            let cfg = VbConfig {
                max_iters: iters,
                tol: a.tol,
                track_elbo: true,
            };
            let fit = vb_fit_restarts(corpus, &hyper, spec, seed, &cfg, restarts)?;
            meta["restarts"] = json!(restarts);
            meta["final_elbo"] = json!(fit.trace.final_elbo);
            meta["init_seed"] = json!(fit.trace.init_seed);
            meta["iterations"] = json!(fit.trace.iterations);
            meta["converged"] = json!(fit.trace.converged);
            meta["elbo"] = json!(fit.trace.elbo);
            meta["max_change"] = json!(fit.trace.max_change);
            (fit.params, Some(fit.posterior), Vec::new())
        }
        Algorithm::Gs => {
            let cfg = GibbsConfig {
                burn_in: a.burn_in.unwrap_or(500),
                spacing: a.spacing.unwrap_or(100),
                num_samples: a.samples.unwrap_or(5),
                audit: false,
            };
            let fit = gs_fit(corpus, &hyper, spec, seed, &cfg).map_err(|e| match e {
                MctmError::InvalidInput(m) => usage(m),
                other => other.into(),
            })?;
            meta["sweeps"] = json!(fit.sweeps);
            meta["burn_in"] = json!(cfg.burn_in);
            meta["spacing"] = json!(cfg.spacing);
            meta["num_samples"] = json!(cfg.num_samples);
            (fit.params, None, fit.samples)
        }
    };
    let train_belief = PredictiveState::after_training(&params, corpus)
        .ok()
        .map(|s| s.behaviour_belief);
    Ok(TrainedRun {
        model: ModelFile {
            prior: Some(prior),
            hyper,
            algorithm,
            params,
            posterior,
            samples,
            train_belief,
        },
        meta,
    })
}

fn run_path(out: &Path, run: usize) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let ext = out.extension().map(|e| e.to_string_lossy().into_owned()).unwrap_or_else(|| "json".into());
    out.with_file_name(format!("{stem}.run{run:02}.{ext}"))
}

fn cmd_train(a: &TrainArgs) -> CliResult<()> {
    let corpus_path = required(&a.corpus, "corpus")?;
    let out = required(&a.out, "out")?;
    let runs = a.runs.unwrap_or(1);
    let jobs = a.jobs.unwrap_or(1);
    if runs == 0 || jobs == 0 {
        return Err(usage("--runs and --jobs must be positive"));
    }
    if a.iters == Some(0) {
        return Err(usage("--iters must be positive"));
    }
    match a.restarts {
        Some(0) => return Err(usage("--restarts must be positive")),
        Some(r) if r > 1 && a.algo == Some(Algorithm::Gs) => {
            return Err(usage("--restarts applies to em and vb"))
        }
        _ => {}
    }
    let raw = read_corpus(&corpus_path, a.vocab)?;
    let spec = ModelSpec::new(raw.spec().num_words, a.topics.unwrap_or(8), a.behaviours.unwrap_or(4))?;
    let corpus = raw.with_spec(spec)?;
    if corpus.is_empty() {
        return Err(CliError::Data(format!("{} holds no documents", corpus_path.display())));
    }
    let seed = a.seed.unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Data(e.to_string()))?;
    let results: Vec<CliResult<TrainedRun>> = pool.install(|| {
        (0..runs)
            .into_par_iter()
            .map(|r| train_once(&corpus, a, &spec, derive_seed(seed, r as u64)))
            .collect()
    });
    let mut summary = Vec::with_capacity(runs);
    for (r, res) in results.into_iter().enumerate() {
        let run = res?;
        let path = if runs == 1 { out.clone() } else { run_path(&out, r) };
        run.model.save(&path)?;
        write_json(&sibling(&path, "meta.json"), &run.meta)?;
        summary.push(json!({
            "run": r,
            "model": path.file_name().map(|f| f.to_string_lossy().into_owned()),
            "seed": run.meta["seed"],
            "final_objective": run.meta.get("final_objective"),
            "final_elbo": run.meta.get("final_elbo"),
        }));
    }
    if runs > 1 {
        write_json(&sibling(&out, "summary.json"), &json!({ "runs": summary }))?;
    }
    Ok(())
}

/// Scorer over the model's plug-in parameters or its Monte Carlo samples.
fn build_scorer(s: &StreamArgs, opts: ScoreOptions) -> CliResult<(Scorer, ModelFile, Corpus)> {
    let model_path = required(&s.model, "model")?;
    let corpus_path = required(&s.corpus, "corpus")?;
    let model = ModelFile::load(&model_path)?;
    let spec = model.spec();
    let corpus = read_corpus(&corpus_path, Some(spec.num_words))?;
    let param_sets = match s.approx.unwrap_or(Approximation::Plugin) {
        Approximation::Plugin => vec![model.params.clone()],
        Approximation::Mc => {
            if !model.supports_monte_carlo() {
                return Err(usage(format!(
                    "{} was trained with {} and has no posterior or samples; use --approx plugin",
                    model_path.display(),
                    model.algorithm
                )));
            }
            model
                .monte_carlo_params(s.mc_samples.unwrap_or(5), s.seed.unwrap_or(0))
                .map_err(|e| usage(e.to_string()))?
        }
    };
    let train = match &s.train_corpus {
        Some(p) => Some(read_corpus(p, Some(spec.num_words))?.with_spec(spec)?),
        None => None,
    };
    let mut states = Vec::with_capacity(param_sets.len());
    for p in &param_sets {
        let st = match (s.start.unwrap_or(Start::Propagate), &train, &model.train_belief) {
            (Start::Prior, _, _) => PredictiveState::prior(p),
            (Start::Propagate, Some(t), _) => PredictiveState::after_training(p, t)?,
            // Without the corpus, every parameter set continues from the
            // belief stored with the model's point estimates.
            (Start::Propagate, None, Some(b)) => PredictiveState::filtered(b.clone(), 0)?,
            (Start::Propagate, None, None) => PredictiveState::prior(p),
        };
        states.push(st);
    }
    let models = param_sets
        .into_iter()
        .map(ScoringModel::new)
        .collect::<Result<Vec<_>, _>>()?;
    Ok((Scorer::new(models, states, opts)?, model, corpus))
}

fn layout_for(s: &StreamArgs, model: &ModelFile) -> CliResult<Option<FrameLayout>> {
    let Some(f) = &s.frame else { return Ok(None) };
    let layout = parse_frame(f, s.cell.unwrap_or(DEFAULT_CELL))?;
    if layout.vocab_size() != model.spec().num_words {
        return Err(usage(format!(
            "frame layout has {} words but the model has {}",
            layout.vocab_size(),
            model.spec().num_words
        )));
    }
    Ok(Some(layout))
}

fn localised(word_log_liks: &[f64], words: &[u32], layout: Option<&FrameLayout>, top_n: usize) -> CliResult<Vec<LocalisedToken>> {
    Ok(match layout {
        Some(l) => localise(word_log_liks, words, l, top_n)?
            .into_iter()
            .map(LocalisedToken::from)
            .collect(),
        None => least_likely(word_log_liks, top_n)
            .into_iter()
            .map(|token| LocalisedToken { token, place: None })
            .collect(),
    })
}

fn cmd_score(a: &ScoreArgs) -> CliResult<()> {
    let out = required(&a.out, "out")?;
    let top_n = a.top_n.unwrap_or(0);
    let opts = ScoreOptions {
        min_words: a.min_words.unwrap_or(DEFAULT_MIN_WORDS),
        word_marginals: top_n > 0,
    };
    let (mut scorer, model, corpus) = build_scorer(&a.stream, opts)?;
    let layout = layout_for(&a.stream, &model)?;
    let mut records = Vec::with_capacity(corpus.num_docs());
    let mut timing = String::from("# index\tseconds\n");
    let mut total = 0.0;
    for (i, doc) in corpus.docs().iter().enumerate() {
        let started = Instant::now();
        let scored = scorer.score(&doc.words)?;
        let secs = started.elapsed().as_secs_f64();
        total += secs;
        timing.push_str(&format!("{i}\t{secs:.9}\n"));
        let localisation = match &scored.word_log_liks {
            Some(wl) => localised(wl, &doc.words, layout.as_ref(), top_n)?,
            None => Vec::new(),
        };
        records.push(ScoreRecord {
            index: i,
            length: scored.length,
            log_lik: scored.log_lik,
            score: scored.score,
            localisation,
        });
    }
    write_text(&out, &format_scores(&records))?;
    write_text(&sibling(&out, "timing"), &timing)?;
    if !records.is_empty() {
        eprintln!(
            "scored {} documents, {:.3} ms per document",
            records.len(),
            1e3 * total / records.len() as f64
        );
    }
    Ok(())
}

fn cmd_localise(a: &LocaliseArgs) -> CliResult<()> {
    let opts = ScoreOptions {
        min_words: 1,
        word_marginals: true,
    };
    let (mut scorer, model, corpus) = build_scorer(&a.stream, opts)?;
    let layout = layout_for(&a.stream, &model)?;
    let truth: Option<Vec<Vec<usize>>> = match &a.truth {
        None => None,
        Some(p) => {
            let v: Value = serde_json::from_str(&read_text(p)?).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
            let toks = serde_json::from_value(v["abnormal_tokens"].clone())
                .map_err(|e| CliError::Data(format!("{}: abnormal_tokens: {e}", p.display())))?;
            Some(toks)
        }
    };
    if let Some(t) = &truth {
        if t.len() != corpus.num_docs() {
            return Err(CliError::Data(format!(
                "truth covers {} documents, corpus has {}",
                t.len(),
                corpus.num_docs()
            )));
        }
    }
    if a.truth_fraction.is_some() && truth.is_none() {
        return Err(usage("--truth-fraction needs --truth"));
    }
    let top_n = a.top_n.unwrap_or(10);
    if top_n == 0 {
        return Err(usage("--top-n must be positive"));
    }
    let mut text = String::from("# index\tlocalisation\n");
    let mut recalls = Vec::new();
    for (i, doc) in corpus.docs().iter().enumerate() {
        let scored = scorer.score(&doc.words)?;
        let wl = scored.word_log_liks.expect("word marginals requested");
        let truth_here = truth.as_ref().map(|t| &t[i]).filter(|t| !t.is_empty());
        let n = match (a.truth_fraction, truth_here) {
            (Some(f), Some(t)) => ((f * t.len() as f64).round() as usize).max(1),
            _ => top_n,
        };
        let found = localised(&wl, &doc.words, layout.as_ref(), n)?;
        if let Some(t) = truth_here {
            let tokens: Vec<usize> = found.iter().map(|l| l.token).collect();
            recalls.push(localisation_recall(&tokens, t, n)?);
        }
        let record = ScoreRecord {
            index: i,
            length: doc.len(),
            log_lik: scored.log_lik,
            score: scored.score,
            localisation: found,
        };
        let line = format_scores(std::slice::from_ref(&record));
        let fields: Vec<&str> = line.lines().nth(1).expect("one record").split('\t').collect();
        text.push_str(&format!("{i}\t{}\n", fields[4]));
    }
    match &a.out {
        Some(p) => write_text(p, &text)?,
        None => print!("{text}"),
    }
    if truth.is_some() {
        let mean = if recalls.is_empty() {
            Value::Null
        } else {
            json!(recalls.iter().sum::<f64>() / recalls.len() as f64)
        };
        eprintln!("{}", json!({ "abnormal_documents": recalls.len(), "mean_localisation_recall": mean }));
    }
    Ok(())
}

fn finite_or_null(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

fn cmd_eval(a: &EvalArgs) -> CliResult<()> {
    if a.scores.is_empty() {
        return Err(usage("missing required option --scores"));
    }
    let labels_path = required(&a.labels, "labels")?;
    let labels = read_labels(&labels_path)?;
    let mut runs = Vec::with_capacity(a.scores.len());
    let mut aucs = Vec::with_capacity(a.scores.len());
    for (r, path) in a.scores.iter().enumerate() {
        let records = read_scores(path)?;
        if records.len() != labels.len() {
            return Err(CliError::Data(format!(
                "{} has {} documents but {} has {} labels",
                path.display(),
                records.len(),
                labels_path.display(),
                labels.len()
            )));
        }
        let data = LabelledScores::new(records.iter().map(|r| r.score).collect(), labels.clone())?;
        let curve = pr_curve(&data)?;
        let auc = auc_pr(&curve)?;
        if let Some(c) = &a.curve_out {
            let p = if a.scores.len() == 1 { c.clone() } else { run_path(c, r) };
            write_text(&p, &format_curve_csv(&curve))?;
        }
        let (thr, best) = best_accuracy(&data);
        let mut entry = json!({
            "scores": path.display().to_string(),
            "auc_pr": auc,
            "best_accuracy": best,
            "best_threshold": finite_or_null(thr),
        });
        if let Some(t) = a.threshold {
            entry["accuracy"] = json!(accuracy(&data, t));
        }
        aucs.push(auc);
        runs.push(entry);
    }
    let n = aucs.len() as f64;
    let (best, worst) = aucs.iter().enumerate().fold((0, 0), |(b, w), (i, v)| {
        (if *v > aucs[b] { i } else { b }, if *v < aucs[w] { i } else { w })
    });
    let report = json!({
        "documents": labels.len(),
        "abnormal": labels.iter().filter(|l| **l).count(),
        "mean_auc_pr": aucs.iter().sum::<f64>() / n,
        "min_auc_pr": aucs[worst],
        "max_auc_pr": aucs[best],
        "best_run": best,
        "worst_run": worst,
        "runs": runs,
    });
    let mut text = serde_json::to_string_pretty(&report).expect("json serialises");
    text.push('\n');
    match &a.out {
        Some(p) => write_text(p, &text)?,
        None => print!("{text}"),
    }
    Ok(())
}
