//! Collapsed Gibbs sampling over topic and behaviour assignments.
//!
//! Φ, Θ and Ξ are integrated out, so the state is just the assignments and
//! their count tallies. The initial behaviour has no prior term: every
//! choice of `z_1` is equally likely under the sampler.

use ndarray::Array1;
use rand::Rng;

use crate::error::{MctmError, Result};
use crate::model::{Corpus, CountMode, Hyperparams, ModelParams, ModelSpec, SufficientCounts};
use crate::rng::{self, labels, StreamRng};
use crate::sampling::{draw_log_weighted, draw_weighted};
use crate::special::ln_gamma;
use crate::vb::{point_estimates, vb_m_step};

#[derive(Debug, Clone)]
pub struct GibbsState {
    y_assign: Vec<Vec<usize>>,
    z_assign: Vec<usize>,
    counts: SufficientCounts,
    /// Tokens per topic, `Σ_x n_xy`.
    n_y: Vec<f64>,
    /// Tokens in documents with each behaviour, `Σ_y n_yz`.
    n_z: Vec<f64>,
    /// Transitions leaving each behaviour, `Σ_z' n_zz[z', z]`.
    m_z: Vec<f64>,
    rng: StreamRng,
    sweeps: usize,
}

impl GibbsState {
    /// Uniformly random assignments, drawn from the `init` stream of `seed`.
    pub fn init(corpus: &Corpus, spec: &ModelSpec, seed: u64) -> Result<GibbsState> {
        spec.validate()?;
        corpus.require_non_empty()?;
        if corpus.spec() != spec {
            return Err(MctmError::InvalidInput(
                "corpus spec differs from the requested model spec".into(),
            ));
        }
        let mut init_rng = rng::stream(seed, labels::INIT);
        let z_assign: Vec<usize> = (0..corpus.num_docs())
            .map(|_| init_rng.random_range(0..spec.num_behaviours))
            .collect();
        let y_assign: Vec<Vec<usize>> = corpus
            .docs()
            .iter()
            .map(|d| {
                (0..d.len())
                    .map(|_| init_rng.random_range(0..spec.num_topics))
                    .collect()
            })
            .collect();
        Self::from_assignments(corpus, y_assign, z_assign, seed)
    }

    /// A state with the given assignments; later sweeps use the `gibbs` stream of `seed`.
    pub fn from_assignments(
        corpus: &Corpus,
        y_assign: Vec<Vec<usize>>,
        z_assign: Vec<usize>,
        seed: u64,
    ) -> Result<GibbsState> {
        let spec = *corpus.spec();
        let shape_ok = z_assign.len() == corpus.num_docs()
            && y_assign.len() == corpus.num_docs()
            && y_assign.iter().zip(corpus.docs()).all(|(y, d)| y.len() == d.len())
            && z_assign.iter().all(|z| *z < spec.num_behaviours)
            && y_assign.iter().flatten().all(|y| *y < spec.num_topics);
        if !shape_ok {
            return Err(MctmError::InvalidInput(
                "assignments do not match the corpus".into(),
            ));
        }
        let counts = tally(corpus, &y_assign, &z_assign);
        let mut state = GibbsState {
            y_assign,
            z_assign,
            n_y: Vec::new(),
            n_z: Vec::new(),
            m_z: Vec::new(),
            counts,
            rng: rng::stream(seed, labels::GIBBS),
            sweeps: 0,
        };
        state.refresh_totals();
        Ok(state)
    }

    fn refresh_totals(&mut self) {
        self.n_y = self.counts.n_xy.sum_axis(ndarray::Axis(0)).to_vec();
        self.n_z = self.counts.n_yz.sum_axis(ndarray::Axis(0)).to_vec();
        self.m_z = self.counts.n_zz.sum_axis(ndarray::Axis(0)).to_vec();
    }

    pub fn topics(&self) -> &[Vec<usize>] {
        &self.y_assign
    }

    pub fn behaviours(&self) -> &[usize] {
        &self.z_assign
    }

    pub fn counts(&self) -> &SufficientCounts {
        &self.counts
    }

    pub fn sweeps(&self) -> usize {
        self.sweeps
    }

    /// Recounts from the assignments and compares with the incremental tallies.
    pub fn audit(&self, corpus: &Corpus) -> Result<()> {
        let fresh = tally(corpus, &self.y_assign, &self.z_assign);
        let totals_ok = self.n_y == fresh.n_xy.sum_axis(ndarray::Axis(0)).to_vec()
            && self.n_z == fresh.n_yz.sum_axis(ndarray::Axis(0)).to_vec()
            && self.m_z == fresh.n_zz.sum_axis(ndarray::Axis(0)).to_vec();
        if fresh != self.counts || !totals_ok {
            return Err(MctmError::Numerical(format!(
                "Gibbs count tallies diverged from the assignments after sweep {}",
                self.sweeps
            )));
        }
        Ok(())
    }

    /// One pass: every behaviour in time order, then every topic in corpus order.
    pub fn sweep(&mut self, corpus: &Corpus, hyper: &Hyperparams) {
        let spec = *corpus.spec();
        let mut scratch = vec![0.0; spec.num_behaviours.max(spec.num_topics)];
        let mut doc_topics = vec![0.0; spec.num_topics];
        for t in 0..corpus.num_docs() {
            self.resample_behaviour(t, hyper, &mut doc_topics, &mut scratch[..spec.num_behaviours]);
        }
        let beta_sum: f64 = hyper.beta.iter().sum();
        for (t, doc) in corpus.docs().iter().enumerate() {
            let z = self.z_assign[t];
            for (i, &w) in doc.words.iter().enumerate() {
                let x = w as usize;
                let old = self.y_assign[t][i];
                self.move_token(x, old, z, -1.0);
                let weights = &mut scratch[..spec.num_topics];
                let mut total = 0.0;
                for (y, wt) in weights.iter_mut().enumerate() {
                    *wt = (self.counts.n_xy[[x, y]] + hyper.beta[x]) / (self.n_y[y] + beta_sum)
                        * (self.counts.n_yz[[y, z]] + hyper.alpha[y]);
                    total += *wt;
                }
                let new = draw_weighted(weights, total, &mut self.rng);
                self.move_token(x, new, z, 1.0);
                self.y_assign[t][i] = new;
            }
        }
        self.sweeps += 1;
    }

    fn move_token(&mut self, x: usize, y: usize, z: usize, delta: f64) {
        self.counts.n_xy[[x, y]] += delta;
        self.n_y[y] += delta;
        self.counts.n_yz[[y, z]] += delta;
        self.n_z[z] += delta;
    }

    fn move_document(&mut self, t: usize, z: usize, doc_topics: &[f64], delta: f64) {
        let last = self.z_assign.len() - 1;
        for (y, c) in doc_topics.iter().enumerate() {
            self.counts.n_yz[[y, z]] += delta * c;
        }
        self.n_z[z] += delta * doc_topics.iter().sum::<f64>();
        if t == 0 {
            self.counts.n_z1[z] += delta;
        } else {
            let a = self.z_assign[t - 1];
            self.counts.n_zz[[z, a]] += delta;
            self.m_z[a] += delta;
        }
        if t < last {
            let b = self.z_assign[t + 1];
            self.counts.n_zz[[b, z]] += delta;
            self.m_z[z] += delta;
        }
    }

    fn resample_behaviour(
        &mut self,
        t: usize,
        hyper: &Hyperparams,
        doc_topics: &mut [f64],
        log_weights: &mut [f64],
    ) {
        doc_topics.iter_mut().for_each(|c| *c = 0.0);
        for &y in &self.y_assign[t] {
            doc_topics[y] += 1.0;
        }
        let len: f64 = doc_topics.iter().sum();
        let old = self.z_assign[t];
        self.move_document(t, old, doc_topics, -1.0);

        let alpha_sum: f64 = hyper.alpha.iter().sum();
        let gamma_sum: f64 = hyper.gamma.iter().sum();
        let prev = (t > 0).then(|| self.z_assign[t - 1]);
        let next = self.z_assign.get(t + 1).copied();
        for (k, lw) in log_weights.iter_mut().enumerate() {
            let mut v = ln_gamma(alpha_sum + self.n_z[k]) - ln_gamma(alpha_sum + self.n_z[k] + len);
            for (y, &c) in doc_topics.iter().enumerate() {
                if c > 0.0 {
                    let base = hyper.alpha[y] + self.counts.n_yz[[y, k]];
                    v += ln_gamma(base + c) - ln_gamma(base);
                }
            }
            if let Some(a) = prev {
                v += ((hyper.gamma[k] + self.counts.n_zz[[k, a]]) / (gamma_sum + self.m_z[a])).ln();
            }
            if let Some(b) = next {
                // The incoming transition a -> k is already counted when a == k.
                let self_loop = prev == Some(k);
                let extra_num = if self_loop && b == k { 1.0 } else { 0.0 };
                let extra_den = if self_loop { 1.0 } else { 0.0 };
                v += ((hyper.gamma[b] + self.counts.n_zz[[b, k]] + extra_num)
                    / (gamma_sum + self.m_z[k] + extra_den))
                    .ln();
            }
            *lw = v;
        }
        let new = draw_log_weighted(log_weights, &mut self.rng);
        self.z_assign[t] = new;
        self.move_document(t, new, doc_topics, 1.0);
    }
}

fn tally(corpus: &Corpus, y_assign: &[Vec<usize>], z_assign: &[usize]) -> SufficientCounts {
    let mut c = SufficientCounts::zeros(corpus.spec(), CountMode::Sampled);
    for (t, doc) in corpus.docs().iter().enumerate() {
        let z = z_assign[t];
        for (&w, &y) in doc.words.iter().zip(&y_assign[t]) {
            c.n_xy[[w as usize, y]] += 1.0;
            c.n_yz[[y, z]] += 1.0;
        }
        if t == 0 {
            c.n_z1[z] += 1.0;
        } else {
            c.n_zz[[z, z_assign[t - 1]]] += 1.0;
        }
    }
    c
}

pub fn gibbs_init(corpus: &Corpus, spec: &ModelSpec, seed: u64) -> Result<GibbsState> {
    GibbsState::init(corpus, spec, seed)
}

pub fn gibbs_sweep(state: &mut GibbsState, corpus: &Corpus, hyper: &Hyperparams) {
    state.sweep(corpus, hyper)
}

/// `(n + prior)` normalised per column, for Φ, Θ, Ξ and π alike.
pub fn sample_point_estimate(counts: &SufficientCounts, hyper: &Hyperparams) -> ModelParams {
    point_estimates(&vb_m_step(counts, hyper))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GibbsConfig {
    pub burn_in: usize,
    pub spacing: usize,
    pub num_samples: usize,
    /// Recount all tallies after every sweep.
    pub audit: bool,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        GibbsConfig {
            burn_in: 500,
            spacing: 100,
            num_samples: 5,
            audit: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GibbsFit {
    pub samples: Vec<SufficientCounts>,
    pub sample_params: Vec<ModelParams>,
    /// Average of the per-sample estimates.
    pub params: ModelParams,
    pub sweeps: usize,
}

fn average(params: &[ModelParams]) -> ModelParams {
    let n = params.len() as f64;
    let mut acc = params[0].clone();
    for p in &params[1..] {
        acc.phi += &p.phi;
        acc.theta += &p.theta;
        acc.xi += &p.xi;
        acc.pi += &p.pi;
    }
    acc.phi /= n;
    acc.theta /= n;
    acc.xi /= n;
    acc.pi /= n;
    acc
}

/// Runs `burn_in` sweeps, captures a sample, then captures another every
/// `spacing` sweeps until `num_samples` are held.
pub fn gs_fit(
    corpus: &Corpus,
    hyper: &Hyperparams,
    spec: &ModelSpec,
    seed: u64,
    config: &GibbsConfig,
) -> Result<GibbsFit> {
    hyper.check_spec(spec)?;
    if config.num_samples == 0 {
        return Err(MctmError::InvalidInput("at least one Gibbs sample is required".into()));
    }
    if config.num_samples > 1 && config.spacing == 0 {
        return Err(MctmError::InvalidInput("sample spacing must be positive".into()));
    }
    let mut state = GibbsState::init(corpus, spec, seed)?;
    let step = |state: &mut GibbsState| -> Result<()> {
        state.sweep(corpus, hyper);
        if config.audit {
            state.audit(corpus)?;
        }
        Ok(())
    };
    for _ in 0..config.burn_in {
        step(&mut state)?;
    }
    let mut samples = Vec::with_capacity(config.num_samples);
    for s in 0..config.num_samples {
        if s > 0 {
            for _ in 0..config.spacing {
                step(&mut state)?;
            }
        }
        samples.push(state.counts.clone());
    }
    let sample_params: Vec<ModelParams> = samples
        .iter()
        .map(|c| sample_point_estimate(c, hyper))
        .collect();
    Ok(GibbsFit {
        params: average(&sample_params),
        samples,
        sample_params,
        sweeps: state.sweeps,
    })
}

/// Normalised `η + 1[z_1 = z]`, the initial-state estimate attached to a sample.
pub fn initial_state_estimate(counts: &SufficientCounts, hyper: &Hyperparams) -> Array1<f64> {
    let v = &counts.n_z1 + &Array1::from(hyper.eta.clone());
    let s = v.sum();
    v / s
}
