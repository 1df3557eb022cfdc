//! Log-domain arithmetic and the special functions used by the learners.

pub use statrs::function::gamma::ln_gamma;

/// `log(exp(a) + exp(b))` without overflow; `-inf` is the additive identity.
#[inline]
pub fn logaddexp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// `log Σ exp(v_i)`. Empty input and all `-inf` input both give `-inf`.
pub fn logsumexp(values: &[f64]) -> f64 {
    logsumexp_iter(values.iter().copied())
}

pub fn logsumexp_iter<I>(values: I) -> f64
where
    I: IntoIterator<Item = f64> + Clone,
{
    let max = values
        .clone()
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = values.into_iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Normalises log weights in place into probabilities, returning the log normaliser.
pub fn normalise_log_weights(weights: &mut [f64]) -> f64 {
    let max = weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        weights.iter_mut().for_each(|w| *w = 0.0);
        return max;
    }
    let mut sum = 0.0;
    for w in weights.iter_mut() {
        *w = (*w - max).exp();
        sum += *w;
    }
    for w in weights.iter_mut() {
        *w /= sum;
    }
    max + sum.ln()
}

/// Natural log that maps exact zero to `-inf` (plain `ln` already does, this
/// just names the intent at call sites working with probabilities).
#[inline]
pub fn ln_prob(p: f64) -> f64 {
    if p <= 0.0 {
        f64::NEG_INFINITY
    } else {
        p.ln()
    }
}

const DIGAMMA_ASYMPTOTIC_FROM: f64 = 10.0;

/// Digamma function for positive arguments.
///
/// Arguments below 10 are shifted up with `ψ(x) = ψ(x + 1) - 1/x`; the
/// asymptotic expansion in Bernoulli numbers is then accurate to a few ulps.
/// Non-positive and NaN inputs return NaN.
pub fn digamma(x: f64) -> f64 {
    if x.is_nan() || x <= 0.0 {
        return f64::NAN;
    }
    if x == f64::INFINITY {
        return f64::INFINITY;
    }
    let mut x = x;
    let mut shift = 0.0;
    while x < DIGAMMA_ASYMPTOTIC_FROM {
        shift -= 1.0 / x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // -Σ B_2k / (2k x^2k), k = 1..7
    let series = inv2
        * (-1.0 / 12.0
            + inv2
                * (1.0 / 120.0
                    + inv2
                        * (-1.0 / 252.0
                            + inv2
                                * (1.0 / 240.0
                                    + inv2
                                        * (-1.0 / 132.0
                                            + inv2 * (691.0 / 32760.0 + inv2 * (-1.0 / 12.0)))))));
    shift + x.ln() - 0.5 * inv + series
}

#[cfg(test)]
mod tests {
    use super::*;

    const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

    #[test]
    fn digamma_known_values() {
        assert!((digamma(1.0) + EULER_GAMMA).abs() < 1e-14);
        assert!((digamma(2.0) - (1.0 - EULER_GAMMA)).abs() < 1e-14);
        // ψ(1/2) = -γ - 2 ln 2
        let half = -EULER_GAMMA - 2.0 * std::f64::consts::LN_2;
        assert!((digamma(0.5) - half).abs() < 1e-13);
    }

    #[test]
    fn digamma_recurrence_holds() {
        for &x in &[1e-4, 0.013, 0.7, 3.3, 9.99, 10.0, 57.5, 1e6] {
            let lhs = digamma(x + 1.0);
            let rhs = digamma(x) + 1.0 / x;
            assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs().max(1.0), "x = {x}");
        }
    }

    #[test]
    fn digamma_matches_statrs() {
        for i in 1..400 {
            let x = 1e-4 * (1.07f64).powi(i);
            let ours = digamma(x);
            let reference = statrs::function::gamma::digamma(x);
            assert!(
                (ours - reference).abs() <= 1e-12 * reference.abs().max(1.0),
                "x = {x}: {ours} vs {reference}"
            );
        }
    }

    #[test]
    fn digamma_rejects_non_positive() {
        assert!(digamma(0.0).is_nan());
        assert!(digamma(-1.5).is_nan());
    }

    #[test]
    fn logsumexp_edge_cases() {
        assert_eq!(logsumexp(&[]), f64::NEG_INFINITY);
        assert_eq!(logsumexp(&[f64::NEG_INFINITY; 3]), f64::NEG_INFINITY);
        let v = [-1000.0, -1000.0];
        assert!((logsumexp(&v) - (-1000.0 + std::f64::consts::LN_2)).abs() < 1e-12);
        assert!((logaddexp(0.0, f64::NEG_INFINITY)).abs() < 1e-15);
        assert!((logaddexp(1.0, 2.0) - (1f64.exp() + 2f64.exp()).ln()).abs() < 1e-14);
    }

    #[test]
    fn normalise_log_weights_sums_to_one() {
        let mut w = vec![-800.0, -801.0, -799.5];
        normalise_log_weights(&mut w);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }
}
