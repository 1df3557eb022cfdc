//! Exact forward-backward inference over the behaviour chain.
//!
//! Everything runs in the log domain. The per-document emission
//! `log p(x_t | z_t = z) = Σ_i log Σ_y φ[x_i, y] θ[y, z]` is computed once
//! and shared by the forward pass, the backward pass and the posteriors.
//! The same code accepts the sub-stochastic digamma-transformed parameters of
//! the variational learner; normalising by `K` absorbs the deficit.

use ndarray::{Array1, Array2, Axis};

use crate::error::{MctmError, Result};
use crate::model::{CountMode, Corpus, ModelParams, SufficientCounts};
use crate::special::{ln_prob, logsumexp, logsumexp_iter};

/// Forward/backward messages for one corpus, indexed `[z, t]`.
#[derive(Debug, Clone)]
pub struct Messages {
    pub log_alpha: Array2<f64>,
    pub log_beta: Array2<f64>,
    /// `log K = log Σ_z α_z(1) β_z(1)`.
    pub log_k: f64,
    pub log_emission: Array2<f64>,
}

impl Messages {
    pub fn num_docs(&self) -> usize {
        self.log_alpha.ncols()
    }

    /// `p(z_T | x_{1:T})`, the filtered belief after the last document.
    pub fn last_filtered_belief(&self) -> Array1<f64> {
        let t = self.num_docs() - 1;
        let col = self.log_alpha.column(t);
        let norm = logsumexp_iter(col.iter().copied());
        col.mapv(|a| (a - norm).exp())
    }
}

/// Hidden-variable posteriors given the whole corpus.
#[derive(Debug, Clone)]
pub struct Posteriors {
    /// `p(z_1 = z | x)`
    pub z1: Array1<f64>,
    /// Entry `t - 1` holds `p(z_t = z', z_{t-1} = z | x)` at `[z', z]`, for `t >= 2`.
    pub pair_zz: Vec<Array2<f64>>,
    /// `token_yz[t][i][[y, z]] = p(y_{i,t} = y, z_t = z | x)`
    pub token_yz: Vec<Vec<Array2<f64>>>,
    /// `token_y[t][i][y] = p(y_{i,t} = y | x)`
    pub token_y: Vec<Vec<Array1<f64>>>,
}

/// `W[x, z] = Σ_y φ[x, y] θ[y, z]`, the per-token word likelihood under behaviour `z`.
pub fn mixture_table(params: &ModelParams) -> Array2<f64> {
    params.phi.dot(&params.theta)
}

/// Log emission matrix `[z, t]`. A token with zero mixture probability gives `-inf`.
pub fn emission_logs(params: &ModelParams, corpus: &Corpus) -> Array2<f64> {
    let log_w = mixture_table(params).mapv(ln_prob);
    emission_logs_with_table(&log_w, corpus)
}

pub(crate) fn emission_logs_with_table(log_w: &Array2<f64>, corpus: &Corpus) -> Array2<f64> {
    let z_count = log_w.ncols();
    let mut em = Array2::zeros((z_count, corpus.num_docs()));
    for (t, doc) in corpus.docs().iter().enumerate() {
        for z in 0..z_count {
            em[[z, t]] = doc.words.iter().map(|&x| log_w[[x as usize, z]]).sum();
        }
    }
    em
}

fn log_matrix(m: &Array2<f64>) -> Array2<f64> {
    m.mapv(ln_prob)
}

pub fn forward(params: &ModelParams, log_emission: &Array2<f64>) -> Array2<f64> {
    let (z_count, t_count) = log_emission.dim();
    let log_xi = log_matrix(&params.xi);
    let mut la = Array2::from_elem((z_count, t_count), f64::NEG_INFINITY);
    if t_count == 0 {
        return la;
    }
    for z in 0..z_count {
        la[[z, 0]] = ln_prob(params.pi[z]) + log_emission[[z, 0]];
    }
    let mut scratch = vec![0.0; z_count];
    for t in 1..t_count {
        for z in 0..z_count {
            for (zp, s) in scratch.iter_mut().enumerate() {
                *s = la[[zp, t - 1]] + log_xi[[z, zp]];
            }
            la[[z, t]] = log_emission[[z, t]] + logsumexp(&scratch);
        }
    }
    la
}

pub fn backward(params: &ModelParams, log_emission: &Array2<f64>) -> Array2<f64> {
    let (z_count, t_count) = log_emission.dim();
    let log_xi = log_matrix(&params.xi);
    let mut lb = Array2::zeros((z_count, t_count));
    let mut scratch = vec![0.0; z_count];
    for t in (0..t_count.saturating_sub(1)).rev() {
        for z in 0..z_count {
            for (zn, s) in scratch.iter_mut().enumerate() {
                *s = lb[[zn, t + 1]] + log_xi[[zn, z]] + log_emission[[zn, t + 1]];
            }
            lb[[z, t]] = logsumexp(&scratch);
        }
    }
    lb
}

pub fn messages(params: &ModelParams, corpus: &Corpus) -> Result<Messages> {
    corpus.require_non_empty()?;
    let log_emission = emission_logs(params, corpus);
    Ok(messages_from_emission(params, log_emission))
}

pub(crate) fn messages_from_emission(params: &ModelParams, log_emission: Array2<f64>) -> Messages {
    let log_alpha = forward(params, &log_emission);
    let log_beta = backward(params, &log_emission);
    let log_k = logsumexp_iter(
        log_alpha
            .column(0)
            .iter()
            .zip(log_beta.column(0).iter())
            .map(|(a, b)| a + b),
    );
    Messages {
        log_alpha,
        log_beta,
        log_k,
        log_emission,
    }
}

/// `log p(x_{1:T} | Ω) = log Σ_z α_z(T)`.
pub fn log_marginal_likelihood(messages: &Messages) -> f64 {
    let t = messages.num_docs() - 1;
    logsumexp_iter(messages.log_alpha.column(t).iter().copied())
}

fn check_normaliser(log_k: f64) -> Result<()> {
    if log_k == f64::NEG_INFINITY {
        return Err(MctmError::ImpossibleCorpus);
    }
    if !log_k.is_finite() {
        return Err(MctmError::Numerical(format!("log normaliser is {log_k}")));
    }
    Ok(())
}

/// Walks every posterior quantity once, handing each to `sink`.
fn visit_posteriors<S: PosteriorSink>(
    params: &ModelParams,
    corpus: &Corpus,
    msgs: &Messages,
    sink: &mut S,
) -> Result<()> {
    check_normaliser(msgs.log_k)?;
    let w = mixture_table(params);
    let log_xi = log_matrix(&params.xi);
    let (y_count, z_count) = params.theta.dim();
    let la = &msgs.log_alpha;
    let lb = &msgs.log_beta;
    let log_k = msgs.log_k;

    let z1: Array1<f64> = (0..z_count)
        .map(|z| (la[[z, 0]] + lb[[z, 0]] - log_k).exp())
        .collect();
    sink.first(&z1);

    let mut pair = Array2::zeros((z_count, z_count));
    let mut state = vec![0.0; z_count];
    let mut yz = Array2::zeros((y_count, z_count));
    for (t, doc) in corpus.docs().iter().enumerate() {
        if t >= 1 {
            for zn in 0..z_count {
                let tail = msgs.log_emission[[zn, t]] + lb[[zn, t]] - log_k;
                for zp in 0..z_count {
                    pair[[zn, zp]] = (la[[zp, t - 1]] + log_xi[[zn, zp]] + tail).exp();
                }
            }
            sink.pair(t, &pair);
        }
        for (z, s) in state.iter_mut().enumerate() {
            *s = (la[[z, t]] + lb[[z, t]] - log_k).exp();
        }
        for (i, &x) in doc.words.iter().enumerate() {
            let x = x as usize;
            for z in 0..z_count {
                let wz = w[[x, z]];
                // The leave-one-out product is α_z(t) β_z(t) / W[x, z]; a zero
                // mixture means every φθ term for this (x, z) is zero as well.
                let scale = if wz > 0.0 { state[z] / wz } else { 0.0 };
                for y in 0..y_count {
                    yz[[y, z]] = params.phi[[x, y]] * params.theta[[y, z]] * scale;
                }
            }
            sink.token(t, i, x, &yz);
        }
    }
    Ok(())
}

trait PosteriorSink {
    fn first(&mut self, z1: &Array1<f64>);
    fn pair(&mut self, t: usize, pair: &Array2<f64>);
    fn token(&mut self, t: usize, i: usize, x: usize, yz: &Array2<f64>);
}

struct Collect {
    post: Posteriors,
}

impl PosteriorSink for Collect {
    fn first(&mut self, z1: &Array1<f64>) {
        self.post.z1 = z1.clone();
    }

    fn pair(&mut self, _t: usize, pair: &Array2<f64>) {
        self.post.pair_zz.push(pair.clone());
    }

    fn token(&mut self, t: usize, _i: usize, _x: usize, yz: &Array2<f64>) {
        while self.post.token_yz.len() <= t {
            self.post.token_yz.push(Vec::new());
            self.post.token_y.push(Vec::new());
        }
        self.post.token_yz[t].push(yz.clone());
        self.post.token_y[t].push(yz.sum_axis(Axis(1)));
    }
}

struct Accumulate {
    counts: SufficientCounts,
}

impl PosteriorSink for Accumulate {
    fn first(&mut self, z1: &Array1<f64>) {
        self.counts.n_z1.assign(z1);
    }

    fn pair(&mut self, _t: usize, pair: &Array2<f64>) {
        self.counts.n_zz += pair;
    }

    fn token(&mut self, _t: usize, _i: usize, x: usize, yz: &Array2<f64>) {
        self.counts.n_yz += yz;
        let mut row = self.counts.n_xy.row_mut(x);
        for (y, r) in yz.rows().into_iter().enumerate() {
            row[y] += r.sum();
        }
    }
}

pub fn posteriors(params: &ModelParams, corpus: &Corpus, messages: &Messages) -> Result<Posteriors> {
    let mut sink = Collect {
        post: Posteriors {
            z1: Array1::zeros(0),
            pair_zz: Vec::with_capacity(corpus.num_docs().saturating_sub(1)),
            token_yz: Vec::with_capacity(corpus.num_docs()),
            token_y: Vec::with_capacity(corpus.num_docs()),
        },
    };
    visit_posteriors(params, corpus, messages, &mut sink)?;
    Ok(sink.post)
}

pub fn expected_counts(posteriors: &Posteriors, corpus: &Corpus) -> SufficientCounts {
    let mut counts = SufficientCounts::zeros(corpus.spec(), CountMode::Expected);
    counts.n_z1.assign(&posteriors.z1);
    for p in &posteriors.pair_zz {
        counts.n_zz += p;
    }
    for (doc, (yz_list, y_list)) in corpus
        .docs()
        .iter()
        .zip(posteriors.token_yz.iter().zip(&posteriors.token_y))
    {
        for ((&x, yz), y) in doc.words.iter().zip(yz_list).zip(y_list) {
            counts.n_yz += yz;
            let mut row = counts.n_xy.row_mut(x as usize);
            row += y;
        }
    }
    counts
}

/// One E-step: expected counts and `log p(x | Ω)` without materialising
/// per-token posteriors.
pub fn e_step(params: &ModelParams, corpus: &Corpus) -> Result<(SufficientCounts, f64)> {
    let msgs = messages(params, corpus)?;
    let mut sink = Accumulate {
        counts: SufficientCounts::zeros(corpus.spec(), CountMode::Expected),
    };
    visit_posteriors(params, corpus, &msgs, &mut sink)?;
    Ok((sink.counts, log_marginal_likelihood(&msgs)))
}
