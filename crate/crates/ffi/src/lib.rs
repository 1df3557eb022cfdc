//! C ABI over `mctm`: train or load a model, then score a document stream.
//!
//! Models and scorers are opaque heap handles released with their `_free`
//! function. Every fallible call returns an [`MctmStatus`]; on failure the
//! message is available from [`mctm_last_error`] on the same thread.
//!
//! A corpus crosses the boundary as one flat `uint32_t` array of word ids
//! plus one length per document.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use mctm::anomaly::{PredictiveState, ScoreOptions, Scorer, ScoringModel};
use mctm::em::{em_fit_restarts, EmConfig};
use mctm::gibbs::{gs_fit, GibbsConfig};
use mctm::io::{Algorithm, ModelFile};
use mctm::vb::{vb_fit_restarts, VbConfig};
use mctm::{make_prior, Corpus, MctmError, ModelSpec, PriorKind};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MctmStatus {
    Ok = 0,
    /// A required pointer was null.
    NullPointer = 1,
    /// An argument is out of range or inconsistent with the model.
    InvalidArgument = 2,
    /// Input data or a model file is malformed.
    Data = 3,
    /// The data has zero probability or a computation failed.
    Numerical = 4,
    Io = 5,
    /// A Rust panic was caught at the boundary.
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MctmAlgorithm {
    Em = 0,
    Vb = 1,
    Gs = 2,
}

/// Dirichlet prior family: flat, the reference setting H, or H plus one.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MctmPrior {
    Flat = 0,
    H = 1,
    HPlusOne = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MctmTrainOptions {
    pub num_topics: usize,
    pub num_behaviours: usize,
    pub algorithm: MctmAlgorithm,
    pub prior: MctmPrior,
    /// EM and VB iterations.
    pub iterations: usize,
    /// EM and VB initialisations; the best objective is kept.
    pub restarts: usize,
    pub burn_in: usize,
    pub spacing: usize,
    /// Retained Gibbs samples.
    pub samples: usize,
    pub seed: u64,
}

/// Trained model: point estimates plus any posterior or samples.
pub struct MctmModel {
    inner: ModelFile,
}

/// Online scorer holding the predictive state of a test stream.
pub struct MctmScorer {
    inner: Scorer,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(MctmStatus, String);

type FfiResult<T> = Result<T, Failure>;

impl From<MctmError> for Failure {
    fn from(e: MctmError) -> Self {
        let status = if e.is_numerical() {
            MctmStatus::Numerical
        } else {
            match e {
                MctmError::InvalidSpec(_) | MctmError::InvalidHyperparams(_) | MctmError::InvalidInput(_) => {
                    MctmStatus::InvalidArgument
                }
                MctmError::Io { .. } => MctmStatus::Io,
                _ => MctmStatus::Data,
            }
        };
        Failure(status, e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(MctmStatus::InvalidArgument, msg.into())
}

fn null(what: &str) -> Failure {
    Failure(MctmStatus::NullPointer, format!("{what} is null"))
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> FfiResult<()>) -> MctmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            MctmStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal error: {msg}"));
            MctmStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> FfiResult<&'a [T]> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn path_arg(p: *const c_char) -> FfiResult<PathBuf> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| invalid("path is not UTF-8"))?;
    Ok(PathBuf::from(s))
}

/// Splits a flat word array into documents.
unsafe fn documents(words: *const u32, lengths: *const usize, num_docs: usize) -> FfiResult<Vec<Vec<u32>>> {
    let lengths = slice(lengths, num_docs, "doc_lengths")?;
    let total = lengths
        .iter()
        .try_fold(0usize, |acc, n| acc.checked_add(*n))
        .ok_or_else(|| invalid("document lengths overflow"))?;
    let flat = slice(words, total, "words")?;
    let mut docs = Vec::with_capacity(num_docs);
    let mut at = 0;
    for &n in lengths {
        docs.push(flat[at..at + n].to_vec());
        at += n;
    }
    Ok(docs)
}

unsafe fn model_ref<'a>(model: *const MctmModel) -> FfiResult<&'a MctmModel> {
    model.as_ref().ok_or_else(|| null("model"))
}

/// Message for the last failed call on this thread, or null after a
/// success. The pointer stays valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn mctm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// EM with prior H, 8 topics, 4 behaviours, 100 iterations and one
/// initialisation; Gibbs settings 500 burn-in, 100 spacing, 5 samples.
#[no_mangle]
pub extern "C" fn mctm_train_options_default() -> MctmTrainOptions {
    MctmTrainOptions {
        num_topics: 8,
        num_behaviours: 4,
        algorithm: MctmAlgorithm::Em,
        prior: MctmPrior::H,
        iterations: 100,
        restarts: 1,
        burn_in: 500,
        spacing: 100,
        samples: 5,
        seed: 0,
    }
}

fn train(corpus: &Corpus, o: &MctmTrainOptions) -> FfiResult<ModelFile> {
    let spec = *corpus.spec();
    let prior = match o.prior {
        MctmPrior::Flat => PriorKind::Type1,
        MctmPrior::H => PriorKind::TypeH,
        MctmPrior::HPlusOne => PriorKind::TypeHPlus1,
    };
    let hyper = make_prior(prior, &spec);
    if o.iterations == 0 || o.restarts == 0 {
        return Err(invalid("iterations and restarts must be positive"));
    }
    let (algorithm, params, posterior, samples) = match o.algorithm {
        MctmAlgorithm::Em => {
            let cfg = EmConfig { max_iters: o.iterations, tol: None };
            let fit = em_fit_restarts(corpus, &hyper, &spec, o.seed, &cfg, o.restarts)?;
            (Algorithm::Em, fit.params, None, Vec::new())
        }
        MctmAlgorithm::Vb => {
            let cfg = VbConfig {
                max_iters: o.iterations,
                tol: None,
                track_elbo: false,
            };
            let fit = vb_fit_restarts(corpus, &hyper, &spec, o.seed, &cfg, o.restarts)?;
            (Algorithm::Vb, fit.params, Some(fit.posterior), Vec::new())
        }
        MctmAlgorithm::Gs => {
            let cfg = GibbsConfig {
                burn_in: o.burn_in,
                spacing: o.spacing,
                num_samples: o.samples,
                audit: false,
            };
            let fit = gs_fit(corpus, &hyper, &spec, o.seed, &cfg)?;
            (Algorithm::Gs, fit.params, None, fit.samples)
        }
    };
    let train_belief = PredictiveState::after_training(&params, corpus)
        .ok()
        .map(|s| s.behaviour_belief);
    Ok(ModelFile {
        prior: Some(prior),
        hyper,
        algorithm,
        params,
        posterior,
        samples,
        train_belief,
    })
}

/// Trains a model on `num_docs` documents, stored back to back in `words`
/// with `doc_lengths[t]` words each. `num_words` is the vocabulary size, or
/// 0 for the largest word id plus one.
///
/// # Safety
/// `words` must hold the sum of `doc_lengths` entries, `doc_lengths` must
/// hold `num_docs` entries and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mctm_train(
    words: *const u32,
    doc_lengths: *const usize,
    num_docs: usize,
    num_words: usize,
    options: *const MctmTrainOptions,
    out: *mut *mut MctmModel,
) -> MctmStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let o = options.as_ref().ok_or_else(|| null("options"))?;
        let docs = documents(words, doc_lengths, num_docs)?;
        if docs.is_empty() {
            return Err(Failure(MctmStatus::Data, "corpus holds no documents".into()));
        }
        let vocab = if num_words == 0 {
            docs.iter().flatten().max().map_or(1, |w| *w as usize + 1)
        } else {
            num_words
        };
        let spec = ModelSpec::new(vocab, o.num_topics, o.num_behaviours)?;
        let corpus = Corpus::from_words(spec, docs)?;
        let model = train(&corpus, o)?;
        *out = Box::into_raw(Box::new(MctmModel { inner: model }));
        Ok(())
    })
}

/// Loads a JSON model file written by `mctm train` or [`mctm_model_save`].
///
/// # Safety
/// `path` must be a nul-terminated string and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mctm_model_load(path: *const c_char, out: *mut *mut MctmModel) -> MctmStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let model = ModelFile::load(&path_arg(path)?)?;
        *out = Box::into_raw(Box::new(MctmModel { inner: model }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library and `path` must be a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn mctm_model_save(model: *const MctmModel, path: *const c_char) -> MctmStatus {
    guard(|| {
        let m = model_ref(model)?;
        m.inner.save(&path_arg(path)?)?;
        Ok(())
    })
}

/// Writes the vocabulary, topic and behaviour counts; any output may be null.
///
/// # Safety
/// `model` must come from this library; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn mctm_model_dims(
    model: *const MctmModel,
    num_words: *mut usize,
    num_topics: *mut usize,
    num_behaviours: *mut usize,
) -> MctmStatus {
    guard(|| {
        let spec = model_ref(model)?.inner.spec();
        for (p, v) in [
            (num_words, spec.num_words),
            (num_topics, spec.num_topics),
            (num_behaviours, spec.num_behaviours),
        ] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// True when the model carries a VB posterior or Gibbs samples.
///
/// # Safety
/// `model` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn mctm_model_supports_monte_carlo(model: *const MctmModel) -> bool {
    model.as_ref().is_some_and(|m| m.inner.supports_monte_carlo())
}

/// # Safety
/// `model` must be null or come from this library, and is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn mctm_model_free(model: *mut MctmModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Creates a scorer for a test stream that follows the training data.
///
/// With `num_train_docs > 0` the start state is filtered through that
/// training corpus; otherwise the belief saved with the model is used, or
/// the initial distribution if none was saved. `mc_samples` of 0 scores
/// with the point estimates; more averages that many posterior parameter
/// sets (VB or Gibbs models only). Documents shorter than `min_words`
/// score `+inf`. `word_marginals` enables per-word scores.
///
/// # Safety
/// `model` must come from this library; the training arrays follow the
/// layout of [`mctm_train`]; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mctm_scorer_new(
    model: *const MctmModel,
    train_words: *const u32,
    train_lengths: *const usize,
    num_train_docs: usize,
    mc_samples: usize,
    seed: u64,
    min_words: usize,
    word_marginals: bool,
    out: *mut *mut MctmScorer,
) -> MctmStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let m = &model_ref(model)?.inner;
        let spec = m.spec();
        let param_sets = if mc_samples == 0 {
            vec![m.params.clone()]
        } else {
            if !m.supports_monte_carlo() {
                return Err(invalid(format!(
                    "a {} model has no posterior or samples for Monte Carlo scoring",
                    m.algorithm
                )));
            }
            m.monte_carlo_params(mc_samples, seed).map_err(|e| invalid(e.to_string()))?
        };
        let train = if num_train_docs > 0 {
            Some(Corpus::from_words(spec, documents(train_words, train_lengths, num_train_docs)?)?)
        } else {
            None
        };
        let mut states = Vec::with_capacity(param_sets.len());
        for p in &param_sets {
            states.push(match (&train, &m.train_belief) {
                (Some(t), _) => PredictiveState::after_training(p, t)?,
                (None, Some(b)) => PredictiveState::filtered(b.clone(), 0)?,
                (None, None) => PredictiveState::prior(p),
            });
        }
        let models = param_sets
            .into_iter()
            .map(ScoringModel::new)
            .collect::<Result<Vec<_>, _>>()?;
        let opts = ScoreOptions {
            min_words: min_words.max(1),
            word_marginals,
        };
        let scorer = Scorer::new(models, states, opts)?;
        *out = Box::into_raw(Box::new(MctmScorer { inner: scorer }));
        Ok(())
    })
}

/// Scores the next document of the stream and advances the state.
///
/// `log_lik` receives the log predictive likelihood and `score` that value
/// less the log of the length (lower is more abnormal). With a non-null
/// `word_log_liks`, `len` per-word log probabilities are written; the
/// scorer must have been created with `word_marginals`.
///
/// # Safety
/// `scorer` must come from this library, `words` must hold `len` entries,
/// and non-null outputs must be writable (`word_log_liks` for `len` values).
#[no_mangle]
pub unsafe extern "C" fn mctm_scorer_score(
    scorer: *mut MctmScorer,
    words: *const u32,
    len: usize,
    log_lik: *mut f64,
    score: *mut f64,
    word_log_liks: *mut f64,
) -> MctmStatus {
    guard(|| {
        let s = scorer.as_mut().ok_or_else(|| null("scorer"))?;
        if !word_log_liks.is_null() && !s.inner.options().word_marginals {
            return Err(invalid("scorer was created without word marginals"));
        }
        let doc = slice(words, len, "words")?;
        let scored = s.inner.score(doc)?;
        if !log_lik.is_null() {
            *log_lik = scored.log_lik;
        }
        if !score.is_null() {
            *score = scored.score;
        }
        if let (false, Some(wl)) = (word_log_liks.is_null(), &scored.word_log_liks) {
            ptr::copy_nonoverlapping(wl.as_ptr(), word_log_liks, wl.len());
        }
        Ok(())
    })
}

/// # Safety
/// `scorer` must be null or come from this library, and is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn mctm_scorer_free(scorer: *mut MctmScorer) {
    if !scorer.is_null() {
        drop(Box::from_raw(scorer));
    }
}
