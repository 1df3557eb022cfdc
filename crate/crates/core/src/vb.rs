//! Variational Bayes learner.
//!
//! The parameter posterior is kept as Dirichlet hyperparameters. The
//! hidden-variable update is the ordinary forward-backward pass run on the
//! digamma-transformed ("tilde") parameters.

use ndarray::{Array1, Array2, ArrayView1, Axis};

use crate::error::{MctmError, Result};
use crate::forward_backward::{e_step, log_marginal_likelihood, messages};
use crate::model::{
    random_init, Corpus, Hyperparams, ModelParams, ModelSpec, SufficientCounts,
};
use crate::rng::{self, derive_seed, labels, restart_seed};
use crate::sampling::sample_dirichlet;
use crate::special::{digamma, ln_gamma};

/// Posterior Dirichlet hyperparameters, one column per conditioning value.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorHyperparams {
    pub beta_t: Array2<f64>,
    pub alpha_t: Array2<f64>,
    pub eta_t: Array1<f64>,
    pub gamma_t: Array2<f64>,
}

impl PosteriorHyperparams {
    pub fn spec(&self) -> ModelSpec {
        ModelSpec {
            num_words: self.beta_t.nrows(),
            num_topics: self.alpha_t.nrows(),
            num_behaviours: self.eta_t.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = self
            .beta_t
            .iter()
            .chain(self.alpha_t.iter())
            .chain(self.eta_t.iter())
            .chain(self.gamma_t.iter());
        for v in all {
            if !(*v > 0.0) || !v.is_finite() {
                return Err(MctmError::InvalidParams(format!(
                    "posterior hyperparameter {v} is not positive"
                )));
            }
        }
        let s = self.spec();
        let ok = self.beta_t.ncols() == s.num_topics
            && self.alpha_t.ncols() == s.num_behaviours
            && self.gamma_t.dim() == (s.num_behaviours, s.num_behaviours);
        if !ok {
            return Err(MctmError::InvalidParams(
                "posterior hyperparameter shapes are inconsistent".into(),
            ));
        }
        Ok(())
    }

    fn max_abs_diff(&self, other: &PosteriorHyperparams) -> f64 {
        let d = |a: &Array2<f64>, b: &Array2<f64>| {
            a.iter()
                .zip(b.iter())
                .map(|(u, v)| (u - v).abs())
                .fold(0.0, f64::max)
        };
        let pi = self
            .eta_t
            .iter()
            .zip(other.eta_t.iter())
            .map(|(u, v)| (u - v).abs())
            .fold(0.0, f64::max);
        d(&self.beta_t, &other.beta_t)
            .max(d(&self.alpha_t, &other.alpha_t))
            .max(d(&self.gamma_t, &other.gamma_t))
            .max(pi)
    }
}

/// Digamma-transformed parameters `exp(ψ(a) - ψ(Σ a))`; columns sum to at most one.
#[derive(Debug, Clone, PartialEq)]
pub struct TildeParams(pub ModelParams);

impl TildeParams {
    pub fn as_params(&self) -> &ModelParams {
        &self.0
    }
}

fn add_prior(counts: &Array2<f64>, prior: &[f64]) -> Array2<f64> {
    let mut out = counts.clone();
    for mut col in out.axis_iter_mut(Axis(1)) {
        for (v, a) in col.iter_mut().zip(prior) {
            *v += a;
        }
    }
    out
}

pub fn vb_m_step(counts: &SufficientCounts, hyper: &Hyperparams) -> PosteriorHyperparams {
    PosteriorHyperparams {
        beta_t: add_prior(&counts.n_xy, &hyper.beta),
        alpha_t: add_prior(&counts.n_yz, &hyper.alpha),
        eta_t: &counts.n_z1 + &Array1::from(hyper.eta.clone()),
        gamma_t: add_prior(&counts.n_zz, &hyper.gamma),
    }
}

fn tilde_column(col: ArrayView1<f64>) -> Array1<f64> {
    let psi_sum = digamma(col.sum());
    col.mapv(|a| (digamma(a) - psi_sum).exp())
}

fn map_columns(m: &Array2<f64>, f: impl Fn(ArrayView1<f64>) -> Array1<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(m.dim());
    for (k, col) in m.axis_iter(Axis(1)).enumerate() {
        out.column_mut(k).assign(&f(col));
    }
    out
}

pub fn tilde_params(post: &PosteriorHyperparams) -> TildeParams {
    TildeParams(ModelParams {
        phi: map_columns(&post.beta_t, tilde_column),
        theta: map_columns(&post.alpha_t, tilde_column),
        xi: map_columns(&post.gamma_t, tilde_column),
        pi: tilde_column(post.eta_t.view()),
    })
}

/// Posterior means: each column of hyperparameters normalised.
pub fn point_estimates(post: &PosteriorHyperparams) -> ModelParams {
    let norm = |c: ArrayView1<f64>| {
        let s = c.sum();
        c.mapv(|a| a / s)
    };
    ModelParams {
        phi: map_columns(&post.beta_t, norm),
        theta: map_columns(&post.alpha_t, norm),
        xi: map_columns(&post.gamma_t, norm),
        pi: norm(post.eta_t.view()),
    }
}

/// Independent parameter sets drawn column-wise from the posterior Dirichlets.
pub fn sample_posterior(post: &PosteriorHyperparams, num_samples: usize, seed: u64) -> Vec<ModelParams> {
    let mut rng = rng::stream(seed, labels::POSTERIOR);
    let mut draw = |m: &Array2<f64>| -> Array2<f64> {
        let mut out = Array2::zeros(m.dim());
        for (k, col) in m.axis_iter(Axis(1)).enumerate() {
            let alpha = col.to_vec();
            out.column_mut(k)
                .assign(&Array1::from(sample_dirichlet(&alpha, &mut rng)));
        }
        out
    };
    (0..num_samples)
        .map(|_| {
            let phi = draw(&post.beta_t);
            let theta = draw(&post.alpha_t);
            let xi = draw(&post.gamma_t);
            let pi = draw(&post.eta_t.view().insert_axis(Axis(1)).to_owned())
                .column(0)
                .to_owned();
            ModelParams { phi, theta, xi, pi }
        })
        .collect()
}

fn dirichlet_kl(q: ArrayView1<f64>, p: &[f64]) -> f64 {
    let q_sum = q.sum();
    let p_sum: f64 = p.iter().sum();
    let psi_sum = digamma(q_sum);
    let mut kl = ln_gamma(q_sum) - ln_gamma(p_sum);
    for (&a, &b) in q.iter().zip(p) {
        kl += ln_gamma(b) - ln_gamma(a) + (a - b) * (digamma(a) - psi_sum);
    }
    kl
}

/// `KL(q(Ω) || p(Ω))` summed over every Dirichlet factor.
pub fn posterior_kl(post: &PosteriorHyperparams, hyper: &Hyperparams) -> f64 {
    let cols = |m: &Array2<f64>, prior: &[f64]| -> f64 {
        m.axis_iter(Axis(1)).map(|c| dirichlet_kl(c, prior)).sum()
    };
    cols(&post.beta_t, &hyper.beta)
        + cols(&post.alpha_t, &hyper.alpha)
        + cols(&post.gamma_t, &hyper.gamma)
        + dirichlet_kl(post.eta_t.view(), &hyper.eta)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VbConfig {
    pub max_iters: usize,
    /// Stop when no posterior hyperparameter moves by more than this.
    pub tol: Option<f64>,
    /// Record the evidence lower bound each iteration (one extra KL per iteration).
    pub track_elbo: bool,
}

impl Default for VbConfig {
    fn default() -> Self {
        VbConfig {
            max_iters: 100,
            tol: Some(1e-6),
            track_elbo: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VbTrace {
    pub max_change: Vec<f64>,
    /// ELBO of the posterior entering each iteration, with the hidden
    /// variables at their optimum for it. Non-decreasing.
    pub elbo: Option<Vec<f64>>,
    pub iterations: usize,
    pub converged: bool,
    pub init_seed: u64,
    /// ELBO of the returned posterior.
    pub final_elbo: f64,
}

#[derive(Debug, Clone)]
pub struct VbFit {
    pub posterior: PosteriorHyperparams,
    pub params: ModelParams,
    pub trace: VbTrace,
}

pub fn vb_fit(
    corpus: &Corpus,
    hyper: &Hyperparams,
    spec: &ModelSpec,
    seed: u64,
    config: &VbConfig,
) -> Result<VbFit> {
    corpus.require_non_empty()?;
    hyper.check_spec(spec)?;
    if corpus.spec() != spec {
        return Err(MctmError::InvalidInput(
            "corpus spec differs from the requested model spec".into(),
        ));
    }
    // The first hidden-variable distribution comes from a random parameter draw.
    let mut start = None;
    for attempt in 0..crate::em::MAX_INIT_ATTEMPTS {
        let init_seed = derive_seed(seed, attempt);
        let init = random_init(spec, &hyper.at_least(1.0), init_seed)?;
        match e_step(&init, corpus) {
            Ok((counts, _)) => {
                start = Some((vb_m_step(&counts, hyper), init_seed));
                break;
            }
            Err(MctmError::ImpossibleCorpus) => continue,
            Err(e) => return Err(e),
        }
    }
    let (mut post, init_seed) = start.ok_or_else(|| {
        MctmError::Numerical("corpus impossible under every random initialisation".into())
    })?;

    let mut max_change = Vec::with_capacity(config.max_iters);
    let mut elbo = config.track_elbo.then(Vec::new);
    let mut converged = false;
    for _ in 0..config.max_iters {
        let tilde = tilde_params(&post);
        let (counts, log_norm) = e_step(tilde.as_params(), corpus)?;
        if let Some(trace) = elbo.as_mut() {
            trace.push(log_norm - posterior_kl(&post, hyper));
        }
        let next = vb_m_step(&counts, hyper);
        let change = next.max_abs_diff(&post);
        if change.is_nan() {
            return Err(MctmError::Numerical("VB update produced NaN".into()));
        }
        max_change.push(change);
        post = next;
        if config.tol.is_some_and(|tol| change < tol) {
            converged = true;
            break;
        }
    }
    let final_elbo = elbo_of(&post, corpus, hyper)?;
    let params = point_estimates(&post);
    Ok(VbFit {
        posterior: post,
        params,
        trace: VbTrace {
            iterations: max_change.len(),
            max_change,
            elbo,
            converged,
            init_seed,
            final_elbo,
        },
    })
}

/// `log K̃ - KL(q || p)` with the hidden variables at their optimum for `post`.
pub fn elbo_of(post: &PosteriorHyperparams, corpus: &Corpus, hyper: &Hyperparams) -> Result<f64> {
    let tilde = tilde_params(post);
    let log_norm = log_marginal_likelihood(&messages(tilde.as_params(), corpus)?);
    Ok(log_norm - posterior_kl(post, hyper))
}

/// Best of `restarts` fits from independent initialisations, by final ELBO.
pub fn vb_fit_restarts(
    corpus: &Corpus,
    hyper: &Hyperparams,
    spec: &ModelSpec,
    seed: u64,
    config: &VbConfig,
    restarts: usize,
) -> Result<VbFit> {
    let mut best: Option<VbFit> = None;
    for r in 0..restarts.max(1) {
        let fit = vb_fit(corpus, hyper, spec, restart_seed(seed, r), config)?;
        if best
            .as_ref()
            .is_none_or(|b| fit.trace.final_elbo > b.trace.final_elbo)
        {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one restart"))
}
