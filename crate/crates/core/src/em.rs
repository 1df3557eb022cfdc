//! MAP estimation by expectation-maximisation.

use ndarray::{Array1, Array2, ArrayView1, Axis};

use crate::error::{MctmError, Result};
use crate::forward_backward::{e_step, log_marginal_likelihood, messages};
use crate::model::{random_init, Corpus, Hyperparams, ModelParams, ModelSpec, SufficientCounts};
use crate::rng::{derive_seed, restart_seed};

/// Initialisations tried before giving up on a corpus the random draws cannot explain.
pub const MAX_INIT_ATTEMPTS: u64 = 5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmConfig {
    pub max_iters: usize,
    /// Stop once the objective moves by less than this; `None` runs all iterations.
    pub tol: Option<f64>,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            max_iters: 100,
            tol: Some(1e-6),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmTrace {
    /// Log MAP objective of the parameters entering each completed iteration.
    pub objective: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Objective of the returned parameters.
    pub final_objective: f64,
    /// Seed of the initialisation that was used.
    pub init_seed: u64,
    /// An M-step left some observed word with zero probability under every
    /// topic; the parameters before that step were kept.
    pub support_lost: bool,
}

#[derive(Debug, Clone)]
pub struct EmFit {
    pub params: ModelParams,
    pub trace: EmTrace,
}

/// `(prior + count - 1)_+` normalised down each column; an all-zero column
/// falls back to uniform.
fn truncated_mode(counts: &Array2<f64>, prior: &[f64]) -> Array2<f64> {
    let mut out = counts.clone();
    for mut col in out.axis_iter_mut(Axis(1)) {
        for (v, a) in col.iter_mut().zip(prior) {
            *v = (*v + (a - 1.0)).max(0.0);
        }
    }
    crate::model::normalise_columns(&mut out);
    out
}

pub fn m_step(counts: &SufficientCounts, hyper: &Hyperparams) -> ModelParams {
    let pi_col = counts.n_z1.view().insert_axis(Axis(1)).to_owned();
    let pi = truncated_mode(&pi_col, &hyper.eta).column(0).to_owned();
    ModelParams {
        phi: truncated_mode(&counts.n_xy, &hyper.beta),
        theta: truncated_mode(&counts.n_yz, &hyper.alpha),
        xi: truncated_mode(&counts.n_zz, &hyper.gamma),
        pi,
    }
}

/// `Σ_i (a_i - 1) log p_i` over one simplex, dropping the Dirichlet normaliser.
///
/// A zero entry under an exponent above zero makes the density zero. Under a
/// negative exponent (concentration below one) the density is unbounded at
/// the boundary; such entries are evaluated at the smallest positive double
/// so the objective stays finite.
fn log_dirichlet_kernel(p: ArrayView1<f64>, prior: &[f64]) -> f64 {
    p.iter()
        .zip(prior)
        .map(|(&v, &a)| {
            let e = a - 1.0;
            if e == 0.0 {
                0.0
            } else if v > 0.0 {
                e * v.ln()
            } else if e > 0.0 {
                f64::NEG_INFINITY
            } else {
                e * f64::MIN_POSITIVE.ln()
            }
        })
        .sum()
}

pub fn log_prior(params: &ModelParams, hyper: &Hyperparams) -> f64 {
    let cols = |m: &Array2<f64>, prior: &[f64]| -> f64 {
        m.axis_iter(Axis(1))
            .map(|c| log_dirichlet_kernel(c, prior))
            .sum()
    };
    cols(&params.phi, &hyper.beta)
        + cols(&params.theta, &hyper.alpha)
        + cols(&params.xi, &hyper.gamma)
        + log_dirichlet_kernel(params.pi.view(), &hyper.eta)
}

/// `log p(x | Ω) + log p(Ω | priors)`, up to the priors' constant normalisers.
pub fn log_map_objective(params: &ModelParams, corpus: &Corpus, hyper: &Hyperparams) -> Result<f64> {
    let msgs = messages(params, corpus)?;
    Ok(log_marginal_likelihood(&msgs) + log_prior(params, hyper))
}

pub fn em_fit(
    corpus: &Corpus,
    hyper: &Hyperparams,
    spec: &ModelSpec,
    seed: u64,
    config: &EmConfig,
) -> Result<EmFit> {
    corpus.require_non_empty()?;
    hyper.check_spec(spec)?;
    if corpus.spec() != spec {
        return Err(MctmError::InvalidInput(
            "corpus spec differs from the requested model spec".into(),
        ));
    }
    for attempt in 0..MAX_INIT_ATTEMPTS {
        let init_seed = derive_seed(seed, attempt);
        let init = random_init(spec, &hyper.at_least(1.0), init_seed)?;
        match run_from(corpus, hyper, init, init_seed, config) {
            Err(MctmError::ImpossibleCorpus) => continue,
            other => return other,
        }
    }
    Err(MctmError::Numerical(format!(
        "corpus impossible under {MAX_INIT_ATTEMPTS} random initialisations"
    )))
}

/// Best of `restarts` fits from independent initialisations, by final objective.
pub fn em_fit_restarts(
    corpus: &Corpus,
    hyper: &Hyperparams,
    spec: &ModelSpec,
    seed: u64,
    config: &EmConfig,
    restarts: usize,
) -> Result<EmFit> {
    let mut best: Option<EmFit> = None;
    for r in 0..restarts.max(1) {
        let fit = em_fit(corpus, hyper, spec, restart_seed(seed, r), config)?;
        if best
            .as_ref()
            .is_none_or(|b| fit.trace.final_objective > b.trace.final_objective)
        {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// EM from a given starting point.
///
/// The corpus must be possible under `init`. Concentrations below one can
/// truncate every topic's probability of some word to zero; EM then stops
/// and returns the last parameters that explain the corpus.
pub fn run_from(
    corpus: &Corpus,
    hyper: &Hyperparams,
    init: ModelParams,
    init_seed: u64,
    config: &EmConfig,
) -> Result<EmFit> {
    let mut params = init;
    let mut objective = Vec::with_capacity(config.max_iters);
    let mut converged = false;
    let mut support_lost = false;
    let mut previous: Option<ModelParams> = None;
    for _ in 0..config.max_iters {
        let (counts, loglik) = match (e_step(&params, corpus), previous.take()) {
            (Ok(step), _) => step,
            (Err(MctmError::ImpossibleCorpus), Some(prev)) => {
                params = prev;
                support_lost = true;
                break;
            }
            (Err(e), _) => return Err(e),
        };
        let obj = loglik + log_prior(&params, hyper);
        if obj.is_nan() {
            return Err(MctmError::Numerical("EM objective is NaN".into()));
        }
        let prev = objective.last().copied();
        objective.push(obj);
        if let (Some(tol), Some(prev)) = (config.tol, prev) {
            if (obj - prev).abs() < tol {
                converged = true;
                break;
            }
        }
        previous = Some(std::mem::replace(&mut params, m_step(&counts, hyper)));
    }
    let mut final_objective = match objective.last() {
        Some(last) if converged || support_lost => *last,
        _ => log_map_objective(&params, corpus, hyper)?,
    };
    if final_objective == f64::NEG_INFINITY {
        if let (Some(prev), Some(last)) = (previous, objective.last()) {
            params = prev;
            final_objective = *last;
            support_lost = true;
        }
    }
    Ok(EmFit {
        params,
        trace: EmTrace {
            iterations: objective.len(),
            objective,
            converged,
            final_objective,
            init_seed,
            support_lost,
        },
    })
}

/// Plain column normalisation of the counts: the maximum-likelihood estimate.
pub fn ml_estimate(counts: &SufficientCounts) -> ModelParams {
    let mut phi = counts.n_xy.clone();
    let mut theta = counts.n_yz.clone();
    let mut xi = counts.n_zz.clone();
    let mut pi: Array1<f64> = counts.n_z1.clone();
    crate::model::normalise_columns(&mut phi);
    crate::model::normalise_columns(&mut theta);
    crate::model::normalise_columns(&mut xi);
    crate::model::normalise_vector(&mut pi);
    ModelParams { phi, theta, xi, pi }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_prior, CountMode, PriorKind};
    use ndarray::array;

    fn counts_with_phi(n_xy: Array2<f64>) -> SufficientCounts {
        let spec = ModelSpec::new(n_xy.nrows(), n_xy.ncols(), 1).unwrap();
        let mut c = SufficientCounts::zeros(&spec, CountMode::Expected);
        c.n_xy = n_xy;
        c.n_yz = Array2::ones((spec.num_topics, 1));
        c.n_z1 = array![1.0];
        c
    }

    fn hyper_beta(beta: f64, spec: &ModelSpec) -> Hyperparams {
        Hyperparams::symmetric(spec, 1.0, beta, 1.0, 1.0).unwrap()
    }

    #[test]
    fn direct_substitution() {
        let c = counts_with_phi(array![[3.0], [1.0]]);
        let spec = ModelSpec::new(2, 1, 1).unwrap();
        let p = m_step(&c, &hyper_beta(2.0, &spec));
        assert!((p.phi[[0, 0]] - 4.0 / 6.0).abs() < 1e-15);
        assert!((p.phi[[1, 0]] - 2.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn zero_denominator_falls_back_to_uniform() {
        let c = counts_with_phi(array![[0.0], [0.0]]);
        let spec = ModelSpec::new(2, 1, 1).unwrap();
        let p = m_step(&c, &hyper_beta(1.0, &spec));
        assert_eq!(p.phi.column(0).to_vec(), vec![0.5, 0.5]);
    }

    #[test]
    fn truncation_zeroes_small_counts() {
        let c = counts_with_phi(array![[0.2], [5.0]]);
        let spec = ModelSpec::new(2, 1, 1).unwrap();
        let p = m_step(&c, &hyper_beta(0.05, &spec));
        assert_eq!(p.phi.column(0).to_vec(), vec![0.0, 1.0]);
    }

    #[test]
    fn objective_with_flat_prior_is_likelihood() {
        let spec = ModelSpec::new(3, 2, 2).unwrap();
        let p = ModelParams::uniform(&spec);
        let corpus = Corpus::from_words(spec, vec![vec![0, 1], vec![2]]).unwrap();
        let h = make_prior(PriorKind::Type1, &spec);
        let obj = log_map_objective(&p, &corpus, &h).unwrap();
        assert!((obj - 3.0 * (1.0f64 / 3.0).ln()).abs() < 1e-12);
    }

    #[test]
    fn degenerate_model_closed_form() {
        let spec = ModelSpec::new(3, 1, 1).unwrap();
        let corpus = Corpus::from_words(spec, vec![vec![0, 0, 1], vec![2, 0]]).unwrap();
        let h = Hyperparams::symmetric(&spec, 1.0, 2.0, 1.0, 1.0).unwrap();
        let mut p = ModelParams::uniform(&spec);
        p.phi = array![[0.5], [0.2], [0.3]];
        let n = [3.0, 1.0, 1.0];
        let expected: f64 = (0..3).map(|x| (n[x] + 1.0) * p.phi[[x, 0]].ln()).sum();
        let obj = log_map_objective(&p, &corpus, &h).unwrap();
        assert!((obj - expected).abs() < 1e-12);
    }

    #[test]
    fn degenerate_fit_gives_smoothed_frequencies() {
        let spec = ModelSpec::new(3, 1, 1).unwrap();
        let corpus = Corpus::from_words(spec, vec![vec![0, 0, 1], vec![2, 0], vec![0]]).unwrap();
        let h = Hyperparams::symmetric(&spec, 1.0, 2.0, 1.0, 1.0).unwrap();
        let fit = em_fit(&corpus, &h, &spec, 3, &EmConfig::default()).unwrap();
        // counts (4, 1, 1) + (β - 1) = (5, 2, 2)
        let expected = [5.0 / 9.0, 2.0 / 9.0, 2.0 / 9.0];
        for (x, e) in expected.iter().enumerate() {
            assert!((fit.params.phi[[x, 0]] - e).abs() < 1e-12);
        }
        assert!(fit.trace.converged);
        assert_eq!(fit.trace.objective.len(), fit.trace.iterations);
    }

    #[test]
    fn flat_prior_m_step_is_ml() {
        let spec = ModelSpec::new(3, 2, 2).unwrap();
        let mut c = SufficientCounts::zeros(&spec, CountMode::Expected);
        c.n_xy = array![[0.3, 1.7], [2.2, 0.1], [0.5, 0.0]];
        c.n_yz = array![[1.0, 2.0], [0.8, 1.0]];
        c.n_zz = array![[0.4, 0.6], [0.6, 0.4]];
        c.n_z1 = array![0.25, 0.75];
        let h = make_prior(PriorKind::Type1, &spec);
        assert_eq!(m_step(&c, &h), ml_estimate(&c));
    }

    #[test]
    fn small_concentration_objective_is_finite() {
        let spec = ModelSpec::new(2, 1, 1).unwrap();
        let h = make_prior(PriorKind::TypeH, &spec);
        let mut p = ModelParams::uniform(&spec);
        p.phi = array![[1.0], [0.0]];
        let v = log_prior(&p, &h);
        assert!(v.is_finite() && v > 0.0);
    }

    #[test]
    fn truncation_that_drops_a_word_keeps_the_last_possible_params() {
        let spec = ModelSpec::new(2, 2, 1).unwrap();
        let corpus = Corpus::from_words(spec, vec![vec![0, 0, 0, 1], vec![0, 0]]).unwrap();
        let h = Hyperparams::symmetric(&spec, 1.0, 0.05, 1.0, 1.0).unwrap();
        let init = ModelParams::uniform(&spec);
        let fit = run_from(&corpus, &h, init.clone(), 0, &EmConfig::default()).unwrap();
        assert!(fit.trace.support_lost);
        assert_eq!(fit.params, init);
        assert_eq!(fit.trace.final_objective, fit.trace.objective[0]);
        assert!(fit.trace.final_objective.is_finite());
    }

    #[test]
    fn restarts_keep_the_best_objective() {
        let spec = ModelSpec::new(6, 2, 2).unwrap();
        let corpus = Corpus::from_words(spec, vec![vec![0, 1, 0], vec![4, 5, 5], vec![0, 2, 1], vec![3, 4, 5]]).unwrap();
        let h = make_prior(PriorKind::TypeHPlus1, &spec);
        let cfg = EmConfig { max_iters: 20, tol: None };
        let best = em_fit_restarts(&corpus, &h, &spec, 7, &cfg, 4).unwrap();
        for r in 0..4 {
            let single = em_fit(&corpus, &h, &spec, crate::rng::restart_seed(7, r), &cfg).unwrap();
            assert!(single.trace.final_objective <= best.trace.final_objective);
        }
        let first = em_fit(&corpus, &h, &spec, 7, &cfg).unwrap();
        let one = em_fit_restarts(&corpus, &h, &spec, 7, &cfg, 1).unwrap();
        assert_eq!(one.params, first.params);
    }
}
