//! Synthetic corpora drawn from the model's generative process.

use ndarray::Axis;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::error::{MctmError, Result};
use crate::model::{random_init, Corpus, Document, Hyperparams, ModelParams, ModelSpec, WordId};
use crate::rng::{self, labels};

#[derive(Debug, Clone)]
pub struct GeneratedDataset {
    pub corpus: Corpus,
    pub true_params: ModelParams,
    /// `true_topics[t][i]` is the topic of token `i` in document `t`.
    pub true_topics: Vec<Vec<usize>>,
    pub true_behaviours: Vec<usize>,
}

/// Draws parameters from the priors (stream `params`) and then a corpus from
/// them (stream `tokens`), both keyed by `seed`.
pub fn generate(
    spec: &ModelSpec,
    hyper: &Hyperparams,
    num_docs: usize,
    doc_lengths: &[usize],
    seed: u64,
) -> Result<GeneratedDataset> {
    let params = random_init(spec, hyper, seed)?;
    generate_from(&params, num_docs, doc_lengths, seed)
}

/// The generative process with the parameter draws replaced by `params`.
pub fn generate_from(
    params: &ModelParams,
    num_docs: usize,
    doc_lengths: &[usize],
    seed: u64,
) -> Result<GeneratedDataset> {
    let spec = params.spec();
    params.ensure_valid(&spec)?;
    if doc_lengths.len() != num_docs {
        return Err(MctmError::InvalidInput(format!(
            "{} document lengths given for {num_docs} documents",
            doc_lengths.len()
        )));
    }
    if let Some(t) = doc_lengths.iter().position(|n| *n == 0) {
        return Err(MctmError::InvalidInput(format!("document {t} has zero length")));
    }

    let columns = |m: &ndarray::Array2<f64>| -> Result<Vec<WeightedIndex<f64>>> {
        m.axis_iter(Axis(1))
            .map(|c| {
                WeightedIndex::new(c.iter().copied())
                    .map_err(|e| MctmError::InvalidParams(e.to_string()))
            })
            .collect()
    };
    let word_dists = columns(&params.phi)?;
    let topic_dists = columns(&params.theta)?;
    let next_dists = columns(&params.xi)?;
    let first_dist = WeightedIndex::new(params.pi.iter().copied())
        .map_err(|e| MctmError::InvalidParams(e.to_string()))?;

    let mut rng = rng::stream(seed, labels::TOKENS);
    let mut docs = Vec::with_capacity(num_docs);
    let mut true_topics = Vec::with_capacity(num_docs);
    let mut true_behaviours = Vec::with_capacity(num_docs);
    let mut prev = 0;
    for (t, &n) in doc_lengths.iter().enumerate() {
        let z = if t == 0 {
            first_dist.sample(&mut rng)
        } else {
            next_dists[prev].sample(&mut rng)
        };
        let mut words = Vec::with_capacity(n);
        let mut topics = Vec::with_capacity(n);
        for _ in 0..n {
            let y = topic_dists[z].sample(&mut rng);
            let x = word_dists[y].sample(&mut rng);
            topics.push(y);
            words.push(x as WordId);
        }
        docs.push(Document::new(words));
        true_topics.push(topics);
        true_behaviours.push(z);
        prev = z;
    }

    Ok(GeneratedDataset {
        corpus: Corpus::new(spec, docs)?,
        true_params: params.clone(),
        true_topics,
        true_behaviours,
    })
}

/// A test stream with some documents corrupted by uniformly drawn words.
#[derive(Debug, Clone)]
pub struct InjectedAnomalies {
    pub corpus: Corpus,
    /// `true` for corrupted documents.
    pub labels: Vec<bool>,
    /// Replaced token positions per document (empty for normal ones).
    pub abnormal_tokens: Vec<Vec<usize>>,
}

/// Picks `round(rate · T)` documents and replaces `ceil(token_fraction · N)`
/// of each one's tokens with a different, uniformly drawn word.
pub fn inject_uniform_anomalies(
    corpus: &Corpus,
    rate: f64,
    token_fraction: f64,
    seed: u64,
) -> Result<InjectedAnomalies> {
    if !(0.0..=1.0).contains(&rate) || !(token_fraction > 0.0 && token_fraction <= 1.0) {
        return Err(MctmError::InvalidInput(format!(
            "anomaly rate {rate} and token fraction {token_fraction} must lie in [0, 1] and (0, 1]"
        )));
    }
    let vocab = corpus.spec().num_words;
    if vocab < 2 {
        return Err(MctmError::InvalidInput("need at least two words to inject anomalies".into()));
    }
    let mut rng = rng::stream(seed, labels::ANOMALIES);
    let t_count = corpus.num_docs();
    let chosen = (rate * t_count as f64).round() as usize;
    let mut labels = vec![false; t_count];
    for t in rand::seq::index::sample(&mut rng, t_count, chosen) {
        labels[t] = true;
    }
    let mut docs = Vec::with_capacity(t_count);
    let mut abnormal_tokens = Vec::with_capacity(t_count);
    for (doc, &bad) in corpus.docs().iter().zip(&labels) {
        let mut words = doc.words.clone();
        let mut replaced = Vec::new();
        if bad {
            let n = words.len();
            let k = ((token_fraction * n as f64).ceil() as usize).clamp(1, n);
            replaced = rand::seq::index::sample(&mut rng, n, k).into_vec();
            replaced.sort_unstable();
            for &i in &replaced {
                // Uniform over the other words, so every replacement is a real change.
                let draw = rng.random_range(0..vocab - 1) as WordId;
                words[i] = if draw >= words[i] { draw + 1 } else { draw };
            }
        }
        docs.push(Document::new(words));
        abnormal_tokens.push(replaced);
    }
    Ok(InjectedAnomalies {
        corpus: Corpus::new(*corpus.spec(), docs)?,
        labels,
        abnormal_tokens,
    })
}
