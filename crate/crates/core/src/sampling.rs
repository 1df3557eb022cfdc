//! Categorical and Dirichlet draws.

use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{MctmError, Result};
use crate::special::logsumexp;

pub const SIMPLEX_TOLERANCE: f64 = 1e-9;

/// Draws an index with probability `probs[i]`. The input must be normalised.
pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> Result<usize> {
    if probs.is_empty() {
        return Err(MctmError::InvalidInput("empty probability vector".into()));
    }
    if probs.iter().any(|p| !(*p >= 0.0)) {
        return Err(MctmError::InvalidInput(
            "probability vector has negative or NaN entries".into(),
        ));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
        return Err(MctmError::NotNormalised { sum });
    }
    Ok(draw_weighted(probs, sum, rng))
}

/// Draws an index proportionally to non-negative `weights` summing to `total`.
///
/// Zero-weight entries are never returned, including on the rounding edge.
pub(crate) fn draw_weighted<R: Rng + ?Sized>(weights: &[f64], total: f64, rng: &mut R) -> usize {
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            acc += w;
            last_positive = i;
            if u < acc {
                return i;
            }
        }
    }
    last_positive
}

/// Draws from a categorical given unnormalised log weights (scratch is overwritten).
pub(crate) fn draw_log_weighted<R: Rng + ?Sized>(log_weights: &mut [f64], rng: &mut R) -> usize {
    let norm = logsumexp(log_weights);
    let mut total = 0.0;
    for w in log_weights.iter_mut() {
        *w = (*w - norm).exp();
        total += *w;
    }
    draw_weighted(log_weights, total, rng)
}

/// Dirichlet draw by normalised independent Gamma variates.
///
/// The Gamma variates are produced in log space; for shapes below one the
/// boosting identity `G(a) = G(a + 1) · U^(1/a)` keeps tiny concentrations
/// (0.05 and below) from collapsing to an all-zero vector.
pub fn sample_dirichlet<R: Rng + ?Sized>(alpha: &[f64], rng: &mut R) -> Vec<f64> {
    debug_assert!(alpha.iter().all(|a| *a > 0.0));
    let mut logs: Vec<f64> = alpha.iter().map(|&a| log_gamma_variate(a, rng)).collect();
    let norm = logsumexp(&logs);
    for l in logs.iter_mut() {
        *l = (*l - norm).exp();
    }
    logs
}

fn log_gamma_variate<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    if shape >= 1.0 {
        let g: f64 = Gamma::new(shape, 1.0).expect("positive shape").sample(rng);
        g.ln()
    } else {
        let g: f64 = Gamma::new(shape + 1.0, 1.0)
            .expect("positive shape")
            .sample(rng);
        // U in (0, 1]
        let u: f64 = 1.0 - rng.random::<f64>();
        g.ln() + u.ln() / shape
    }
}
