//! Brute-force reference computations shared by the integration tests.
//!
//! Nothing here calls the library's inference code: posteriors come from
//! enumerating every behaviour path and every topic assignment, and the
//! collapsed Gibbs target comes from the Dirichlet-multinomial closed form.

#![allow(dead_code)]

use mctm::special::ln_gamma;
use mctm::{Corpus, CountMode, Hyperparams, ModelParams, ModelSpec, SufficientCounts};
use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Column-stochastic matrix with entries drawn uniformly, some set to zero.
pub fn random_columns(rng: &mut ChaCha8Rng, rows: usize, cols: usize, zero_prob: f64) -> Array2<f64> {
    let mut m = Array2::zeros((rows, cols));
    for c in 0..cols {
        loop {
            for r in 0..rows {
                m[[r, c]] = if rng.random::<f64>() < zero_prob {
                    0.0
                } else {
                    rng.random_range(0.05..1.0)
                };
            }
            let s: f64 = m.column(c).sum();
            if s > 0.0 {
                m.column_mut(c).mapv_inplace(|v| v / s);
                break;
            }
        }
    }
    m
}

pub fn random_params(rng: &mut ChaCha8Rng, spec: &ModelSpec, zero_prob: f64) -> ModelParams {
    let pi = random_columns(rng, spec.num_behaviours, 1, zero_prob).column(0).to_owned();
    ModelParams {
        phi: random_columns(rng, spec.num_words, spec.num_topics, zero_prob),
        theta: random_columns(rng, spec.num_topics, spec.num_behaviours, zero_prob),
        xi: random_columns(rng, spec.num_behaviours, spec.num_behaviours, zero_prob),
        pi,
    }
}

pub fn random_corpus(rng: &mut ChaCha8Rng, spec: ModelSpec, max_docs: usize, max_len: usize) -> Corpus {
    let t = rng.random_range(1..=max_docs);
    let docs = (0..t)
        .map(|_| {
            let n = rng.random_range(1..=max_len);
            (0..n).map(|_| rng.random_range(0..spec.num_words) as u32).collect()
        })
        .collect();
    Corpus::from_words(spec, docs).unwrap()
}

/// Calls `f` with every vector in `{0..base}^len`, first index fastest.
pub fn odometer(base: usize, len: usize, mut f: impl FnMut(&[usize])) {
    let mut digits = vec![0; len];
    loop {
        f(&digits);
        let mut i = 0;
        loop {
            if i == len {
                return;
            }
            digits[i] += 1;
            if digits[i] < base {
                break;
            }
            digits[i] = 0;
            i += 1;
        }
    }
}

pub struct Enumerated {
    pub log_k: f64,
    pub z1: Array1<f64>,
    /// `pair[t - 1][[z', z]] = p(z_t = z', z_{t-1} = z | x)`
    pub pair: Vec<Array2<f64>>,
    pub token_yz: Vec<Vec<Array2<f64>>>,
    pub counts: SufficientCounts,
}

/// `Σ_{y ∈ Y^N} Π_i φ[x_i, y_i] θ[y_i, z]` for one document, plus the
/// same sum restricted to `y_i = y` for every `(i, y)`.
fn document_sums(params: &ModelParams, words: &[u32], z: usize) -> (f64, Array2<f64>) {
    let y_count = params.theta.nrows();
    let mut total = 0.0;
    let mut restricted = Array2::zeros((words.len(), y_count));
    odometer(y_count, words.len(), |ys| {
        let mut p = 1.0;
        for (x, &y) in words.iter().zip(ys) {
            p *= params.phi[[*x as usize, y]] * params.theta[[y, z]];
        }
        total += p;
        for (i, &y) in ys.iter().enumerate() {
            restricted[[i, y]] += p;
        }
    });
    (total, restricted)
}

/// Exact posteriors by summing the full joint over all hidden assignments.
pub fn enumerate_posteriors(params: &ModelParams, corpus: &Corpus) -> Enumerated {
    let spec = params.spec();
    let (y_count, z_count) = (spec.num_topics, spec.num_behaviours);
    let docs = corpus.docs();
    let t_count = docs.len();
    // per-document sums for every behaviour
    let sums: Vec<Vec<(f64, Array2<f64>)>> = docs
        .iter()
        .map(|d| (0..z_count).map(|z| document_sums(params, &d.words, z)).collect())
        .collect();

    let mut total = 0.0;
    let mut z1 = Array1::zeros(z_count);
    let mut pair = vec![Array2::zeros((z_count, z_count)); t_count.saturating_sub(1)];
    let mut token_yz: Vec<Vec<Array2<f64>>> = docs
        .iter()
        .map(|d| vec![Array2::zeros((y_count, z_count)); d.len()])
        .collect();

    odometer(z_count, t_count, |path| {
        let mut chain = params.pi[path[0]];
        for t in 1..t_count {
            chain *= params.xi[[path[t], path[t - 1]]];
        }
        if chain == 0.0 {
            return;
        }
        let emissions: Vec<f64> = (0..t_count).map(|t| sums[t][path[t]].0).collect();
        let joint: f64 = chain * emissions.iter().product::<f64>();
        total += joint;
        z1[path[0]] += joint;
        for t in 1..t_count {
            pair[t - 1][[path[t], path[t - 1]]] += joint;
        }
        for t in 0..t_count {
            // The other documents' emissions times this one's restricted sums.
            let others: f64 = chain
                * (0..t_count)
                    .filter(|s| *s != t)
                    .map(|s| emissions[s])
                    .product::<f64>();
            let restricted = &sums[t][path[t]].1;
            for i in 0..docs[t].len() {
                for y in 0..y_count {
                    token_yz[t][i][[y, path[t]]] += others * restricted[[i, y]];
                }
            }
        }
    });

    z1 /= total;
    for p in pair.iter_mut() {
        *p /= total;
    }
    for doc in token_yz.iter_mut() {
        for tok in doc.iter_mut() {
            *tok /= total;
        }
    }

    let mut counts = SufficientCounts::zeros(&spec, CountMode::Expected);
    for (t, d) in docs.iter().enumerate() {
        for (i, &x) in d.words.iter().enumerate() {
            for y in 0..y_count {
                for z in 0..z_count {
                    let p = token_yz[t][i][[y, z]];
                    counts.n_xy[[x as usize, y]] += p;
                    counts.n_yz[[y, z]] += p;
                }
            }
        }
    }
    for p in &pair {
        counts.n_zz += p;
    }
    counts.n_z1 = z1.clone();

    Enumerated {
        log_k: total.ln(),
        z1,
        pair,
        token_yz,
        counts,
    }
}

/// `log p(y, z | priors)` up to a constant, Φ, Θ and Ξ integrated out; the
/// first behaviour carries no prior term.
pub fn collapsed_log_joint(corpus: &Corpus, hyper: &Hyperparams, y: &[Vec<usize>], z: &[usize]) -> f64 {
    let spec = *corpus.spec();
    let (xn, yn, zn) = (spec.num_words, spec.num_topics, spec.num_behaviours);
    let mut n_xy = Array2::<f64>::zeros((xn, yn));
    let mut n_yz = Array2::<f64>::zeros((yn, zn));
    let mut n_zz = Array2::<f64>::zeros((zn, zn));
    for (t, d) in corpus.docs().iter().enumerate() {
        for (&x, &yy) in d.words.iter().zip(&y[t]) {
            n_xy[[x as usize, yy]] += 1.0;
            n_yz[[yy, z[t]]] += 1.0;
        }
        if t > 0 {
            n_zz[[z[t], z[t - 1]]] += 1.0;
        }
    }
    let dirichlet_multinomial = |counts: &Array2<f64>, prior: &[f64]| -> f64 {
        let a_sum: f64 = prior.iter().sum();
        counts
            .columns()
            .into_iter()
            .map(|col| {
                let n: f64 = col.sum();
                let mut v = ln_gamma(a_sum) - ln_gamma(a_sum + n);
                for (c, a) in col.iter().zip(prior) {
                    v += ln_gamma(a + c) - ln_gamma(*a);
                }
                v
            })
            .sum()
    };
    dirichlet_multinomial(&n_xy, &hyper.beta)
        + dirichlet_multinomial(&n_yz, &hyper.alpha)
        + dirichlet_multinomial(&n_zz, &hyper.gamma)
}

/// Topic assignments per document and one behaviour per document.
pub type HiddenState = (Vec<Vec<usize>>, Vec<usize>);

/// Every hidden state with its normalised collapsed posterior probability.
pub fn collapsed_posterior(corpus: &Corpus, hyper: &Hyperparams) -> Vec<(HiddenState, f64)> {
    let spec = *corpus.spec();
    let lens: Vec<usize> = corpus.docs().iter().map(|d| d.len()).collect();
    let total_tokens: usize = lens.iter().sum();
    let mut states = Vec::new();
    odometer(spec.num_behaviours, lens.len(), |z| {
        odometer(spec.num_topics, total_tokens, |flat| {
            let mut y = Vec::with_capacity(lens.len());
            let mut at = 0;
            for &n in &lens {
                y.push(flat[at..at + n].to_vec());
                at += n;
            }
            let lp = collapsed_log_joint(corpus, hyper, &y, z);
            states.push(((y, z.to_vec()), lp));
        });
    });
    let max = states.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
    let norm: f64 = states.iter().map(|s| (s.1 - max).exp()).sum();
    states
        .into_iter()
        .map(|(k, lp)| (k, (lp - max).exp() / norm))
        .collect()
}

/// Largest relative difference between two equally shaped sequences.
pub fn max_rel_err<'a>(a: impl IntoIterator<Item = &'a f64>, b: impl IntoIterator<Item = &'a f64>) -> f64 {
    a.into_iter()
        .zip(b)
        .map(|(x, y)| rel_err(*x, *y))
        .fold(0.0, f64::max)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    (a - b).abs() / a.abs().max(b.abs())
}

/// Mean total-variation distance between matched columns.
pub fn mean_column_tv(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let cols = a.ncols();
    (0..cols)
        .map(|c| 0.5 * (&a.column(c) - &b.column(c)).mapv(f64::abs).sum())
        .sum::<f64>()
        / cols as f64
}

/// All permutations of `0..n` (n is small here).
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

/// Columns of `m` reordered so that column `k` of the result is column `perm[k]` of `m`.
pub fn permute_columns(m: &Array2<f64>, perm: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros(m.dim());
    for (k, &p) in perm.iter().enumerate() {
        out.column_mut(k).assign(&m.column(p));
    }
    out
}

pub fn permute_rows(m: &Array2<f64>, perm: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros(m.dim());
    for (k, &p) in perm.iter().enumerate() {
        out.row_mut(k).assign(&m.row(p));
    }
    out
}
