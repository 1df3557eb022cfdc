//! Online scoring of test documents against a fixed trained model.
//!
//! The predictive state is the filtered behaviour belief after the last
//! scored document. Each new document's marginal likelihood mixes its
//! per-behaviour emission over the belief propagated through Ξ; the
//! belief is then updated by Bayes' rule. Scores are `log p - log N`, so
//! lower is more anomalous.

use ndarray::{Array1, Array2};

use crate::error::{MctmError, Result};
use crate::forward_backward::{emission_logs, forward, mixture_table};
use crate::ingest::{Direction, FrameLayout};
use crate::model::{Corpus, ModelParams, WordId};
use crate::special::{ln_prob, logsumexp, logsumexp_iter};

pub use crate::ingest::DEFAULT_MIN_WORDS;

/// A model with its word-mixture table precomputed for fast scoring.
#[derive(Debug, Clone)]
pub struct ScoringModel {
    params: ModelParams,
    w: Array2<f64>,
    log_w: Array2<f64>,
}

impl ScoringModel {
    pub fn new(params: ModelParams) -> Result<ScoringModel> {
        params.ensure_valid(&params.spec())?;
        let w = mixture_table(&params);
        let log_w = w.mapv(ln_prob);
        Ok(ScoringModel { params, w, log_w })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn num_behaviours(&self) -> usize {
        self.params.pi.len()
    }

    fn check_words(&self, words: &[WordId]) -> Result<()> {
        let v = self.w.nrows();
        match words.iter().find(|w| **w as usize >= v) {
            Some(w) => Err(MctmError::InvalidInput(format!(
                "word {w} outside the model vocabulary of {v}"
            ))),
            None => Ok(()),
        }
    }

    /// `log p(words | z)` for every behaviour.
    fn log_emission(&self, words: &[WordId]) -> Array1<f64> {
        let mut em = Array1::zeros(self.num_behaviours());
        for &x in words {
            em += &self.log_w.row(x as usize);
        }
        em
    }

    /// Behaviour distribution for the document after the one `state` describes.
    pub fn predictive(&self, state: &PredictiveState) -> Array1<f64> {
        match state.last_doc_index {
            None => state.behaviour_belief.clone(),
            Some(_) => self.params.xi.dot(&state.behaviour_belief),
        }
    }
}

/// Where the first test document's behaviour distribution comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StartMode {
    /// `π̂` is used directly.
    Prior,
    /// The filtered belief after the training corpus, propagated through Ξ.
    #[default]
    Propagate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveState {
    /// `p(z_t | x_{1:t})`, or the predictive distribution itself when
    /// `last_doc_index` is `None`.
    pub behaviour_belief: Array1<f64>,
    /// Index of the document the belief was filtered on; `None` before any
    /// document, in which case the belief is not propagated.
    pub last_doc_index: Option<usize>,
}

impl PredictiveState {
    pub fn prior(params: &ModelParams) -> PredictiveState {
        PredictiveState {
            behaviour_belief: params.pi.clone(),
            last_doc_index: None,
        }
    }

    /// A belief filtered on some earlier document, to be propagated before use.
    pub fn filtered(belief: Array1<f64>, last_doc_index: usize) -> Result<PredictiveState> {
        let s = belief.sum();
        if belief.iter().any(|p| !(*p >= 0.0)) || (s - 1.0).abs() > 1e-9 {
            return Err(MctmError::NotNormalised { sum: s });
        }
        Ok(PredictiveState {
            behaviour_belief: belief,
            last_doc_index: Some(last_doc_index),
        })
    }

    /// Filtered belief after the last training document.
    pub fn after_training(params: &ModelParams, train: &Corpus) -> Result<PredictiveState> {
        train.require_non_empty()?;
        let la = forward(params, &emission_logs(params, train));
        let t = train.num_docs() - 1;
        let col = la.column(t);
        let norm = logsumexp_iter(col.iter().copied());
        if norm == f64::NEG_INFINITY {
            return Err(MctmError::ImpossibleCorpus);
        }
        Ok(PredictiveState {
            behaviour_belief: col.mapv(|a| (a - norm).exp()),
            last_doc_index: Some(t),
        })
    }
}

pub fn init_state(params: &ModelParams, mode: StartMode, train: Option<&Corpus>) -> Result<PredictiveState> {
    match (mode, train) {
        (StartMode::Prior, _) => Ok(PredictiveState::prior(params)),
        (StartMode::Propagate, Some(c)) => PredictiveState::after_training(params, c),
        (StartMode::Propagate, None) => Err(MctmError::InvalidInput(
            "propagated start needs the training corpus".into(),
        )),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredDocument {
    pub log_lik: f64,
    pub length: usize,
    /// `log_lik - ln(length)`, or `+inf` for a document too short to evaluate.
    pub score: f64,
    pub evaluated: bool,
    pub word_log_liks: Option<Vec<f64>>,
}

pub fn normalise_score(log_lik: f64, length: usize) -> f64 {
    debug_assert!(length >= 1);
    log_lik - (length as f64).ln()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreOptions {
    /// Shorter documents are normal by default (score `+inf`) but still update the state.
    pub min_words: usize,
    pub word_marginals: bool,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        ScoreOptions {
            min_words: DEFAULT_MIN_WORDS,
            word_marginals: false,
        }
    }
}

struct Step {
    log_lik: f64,
    predictive: Array1<f64>,
    next: PredictiveState,
}

fn step(model: &ScoringModel, state: &PredictiveState, words: &[WordId]) -> Step {
    let predictive = model.predictive(state);
    let mut joint = model.log_emission(words);
    for (j, p) in joint.iter_mut().zip(predictive.iter()) {
        *j += ln_prob(*p);
    }
    let log_lik = logsumexp(joint.as_slice().expect("contiguous"));
    let next_index = state.last_doc_index.map_or(0, |i| i + 1);
    let next = if log_lik == f64::NEG_INFINITY {
        PredictiveState::prior(&model.params)
    } else {
        let mut belief = joint.mapv(|j| (j - log_lik).exp());
        belief /= belief.sum();
        PredictiveState {
            behaviour_belief: belief,
            last_doc_index: Some(next_index),
        }
    };
    Step {
        log_lik,
        predictive,
        next,
    }
}

fn word_probs(model: &ScoringModel, predictive: &Array1<f64>, words: &[WordId]) -> Vec<f64> {
    words
        .iter()
        .map(|&x| model.w.row(x as usize).dot(predictive))
        .collect()
}

fn finish(log_lik: f64, length: usize, word_log_liks: Option<Vec<f64>>, opts: &ScoreOptions) -> ScoredDocument {
    let evaluated = length >= opts.min_words.max(1);
    let score = if !evaluated {
        f64::INFINITY
    } else if log_lik == f64::NEG_INFINITY {
        f64::NEG_INFINITY
    } else {
        normalise_score(log_lik, length)
    };
    ScoredDocument {
        log_lik,
        length,
        score,
        evaluated,
        word_log_liks,
    }
}

fn check_doc(words: &[WordId]) -> Result<()> {
    if words.is_empty() {
        return Err(MctmError::InvalidInput("cannot score an empty document".into()));
    }
    Ok(())
}

/// Scores one document with point-estimate parameters and advances the state.
pub fn score_plugin(
    state: &PredictiveState,
    words: &[WordId],
    model: &ScoringModel,
    opts: &ScoreOptions,
) -> Result<(ScoredDocument, PredictiveState)> {
    check_doc(words)?;
    model.check_words(words)?;
    let s = step(model, state, words);
    let wl = opts
        .word_marginals
        .then(|| word_probs(model, &s.predictive, words).into_iter().map(ln_prob).collect());
    Ok((finish(s.log_lik, words.len(), wl, opts), s.next))
}

/// Monte Carlo average of the plug-in likelihood over parameter samples,
/// each sample carrying its own predictive state.
pub fn score_mc(
    states: &[PredictiveState],
    words: &[WordId],
    models: &[ScoringModel],
    opts: &ScoreOptions,
) -> Result<(ScoredDocument, Vec<PredictiveState>)> {
    check_doc(words)?;
    if models.is_empty() || states.len() != models.len() {
        return Err(MctmError::InvalidInput(format!(
            "{} states for {} parameter samples",
            states.len(),
            models.len()
        )));
    }
    let mut lls = Vec::with_capacity(models.len());
    let mut next = Vec::with_capacity(models.len());
    let mut word_acc = opts.word_marginals.then(|| vec![0.0; words.len()]);
    for (m, st) in models.iter().zip(states) {
        m.check_words(words)?;
        let s = step(m, st, words);
        if let Some(acc) = word_acc.as_mut() {
            for (a, p) in acc.iter_mut().zip(word_probs(m, &s.predictive, words)) {
                *a += p;
            }
        }
        lls.push(s.log_lik);
        next.push(s.next);
    }
    let n = models.len() as f64;
    let log_lik = logsumexp(&lls) - n.ln();
    let wl = word_acc.map(|acc| acc.into_iter().map(|p| ln_prob(p / n)).collect());
    Ok((finish(log_lik, words.len(), wl, opts), next))
}

/// Scores a whole test stream in order. One model means plug-in scoring,
/// several mean Monte Carlo averaging.
#[derive(Debug, Clone)]
pub struct Scorer {
    models: Vec<ScoringModel>,
    states: Vec<PredictiveState>,
    opts: ScoreOptions,
}

impl Scorer {
    pub fn new(models: Vec<ScoringModel>, states: Vec<PredictiveState>, opts: ScoreOptions) -> Result<Scorer> {
        if models.is_empty() || models.len() != states.len() {
            return Err(MctmError::InvalidInput(format!(
                "{} states for {} models",
                states.len(),
                models.len()
            )));
        }
        for (m, s) in models.iter().zip(&states) {
            if s.behaviour_belief.len() != m.num_behaviours() {
                return Err(MctmError::InvalidInput(
                    "predictive state size differs from the model".into(),
                ));
            }
        }
        Ok(Scorer { models, states, opts })
    }

    pub fn plugin(model: ScoringModel, state: PredictiveState, opts: ScoreOptions) -> Result<Scorer> {
        Scorer::new(vec![model], vec![state], opts)
    }

    pub fn states(&self) -> &[PredictiveState] {
        &self.states
    }

    pub fn options(&self) -> &ScoreOptions {
        &self.opts
    }

    pub fn score(&mut self, words: &[WordId]) -> Result<ScoredDocument> {
        if self.models.len() == 1 {
            let (doc, next) = score_plugin(&self.states[0], words, &self.models[0], &self.opts)?;
            self.states[0] = next;
            Ok(doc)
        } else {
            let (doc, next) = score_mc(&self.states, words, &self.models, &self.opts)?;
            self.states = next;
            Ok(doc)
        }
    }

    pub fn score_corpus(&mut self, corpus: &Corpus) -> Result<Vec<ScoredDocument>> {
        corpus.docs().iter().map(|d| self.score(&d.words)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Localisation {
    pub token: usize,
    pub cell_x: usize,
    pub cell_y: usize,
    pub direction: Direction,
}

/// Token indices of the `top_n` least likely words, least likely first; ties keep token order.
pub fn least_likely(word_log_liks: &[f64], top_n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..word_log_liks.len()).collect();
    idx.sort_by(|&a, &b| word_log_liks[a].total_cmp(&word_log_liks[b]).then(a.cmp(&b)));
    idx.truncate(top_n);
    idx
}

pub fn localise(
    word_log_liks: &[f64],
    words: &[WordId],
    layout: &FrameLayout,
    top_n: usize,
) -> Result<Vec<Localisation>> {
    if word_log_liks.len() != words.len() {
        return Err(MctmError::InvalidInput(format!(
            "{} word likelihoods for {} words",
            word_log_liks.len(),
            words.len()
        )));
    }
    least_likely(word_log_liks, top_n)
        .into_iter()
        .map(|i| {
            let (cell_x, cell_y, direction) = layout.decode(words[i])?;
            Ok(Localisation {
                token: i,
                cell_x,
                cell_y,
                direction,
            })
        })
        .collect()
}
