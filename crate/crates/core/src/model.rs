//! Model dimensions, hyperparameters, parameters and corpora.
//!
//! Matrices are stored with the conditioning variable on the columns:
//! `phi[[x, y]] = p(x | y)`, `theta[[y, z]] = p(y | z)` and
//! `xi[[z_next, z_prev]] = p(z_next | z_prev)`.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{MctmError, Result};
use crate::rng::{self, labels};
use crate::sampling::sample_dirichlet;

pub type WordId = u32;

/// Column sums and the `π` sum must be within this distance of one.
pub const STOCHASTIC_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub num_words: usize,
    pub num_topics: usize,
    pub num_behaviours: usize,
}

impl ModelSpec {
    pub fn new(num_words: usize, num_topics: usize, num_behaviours: usize) -> Result<Self> {
        let spec = ModelSpec {
            num_words,
            num_topics,
            num_behaviours,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_words == 0 || self.num_topics == 0 || self.num_behaviours == 0 {
            return Err(MctmError::InvalidSpec(format!(
                "all dimensions must be at least 1, got |X|={} |Y|={} |Z|={}",
                self.num_words, self.num_topics, self.num_behaviours
            )));
        }
        Ok(())
    }
}

/// The three symmetric hyperparameter settings compared in the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PriorKind {
    #[serde(rename = "1")]
    Type1,
    #[serde(rename = "H")]
    TypeH,
    #[serde(rename = "H+1")]
    TypeHPlus1,
}

impl PriorKind {
    pub const ALL: [PriorKind; 3] = [PriorKind::Type1, PriorKind::TypeH, PriorKind::TypeHPlus1];

    /// `(alpha, beta, gamma, eta)`
    pub fn values(self) -> (f64, f64, f64, f64) {
        match self {
            PriorKind::Type1 => (1.0, 1.0, 1.0, 1.0),
            PriorKind::TypeH => (8.0, 0.05, 1.0, 1.0),
            PriorKind::TypeHPlus1 => (9.0, 1.05, 2.0, 2.0),
        }
    }
}

impl fmt::Display for PriorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PriorKind::Type1 => "1",
            PriorKind::TypeH => "H",
            PriorKind::TypeHPlus1 => "H+1",
        })
    }
}

impl FromStr for PriorKind {
    type Err = MctmError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "1" | "TYPE1" => Ok(PriorKind::Type1),
            "H" | "TYPEH" => Ok(PriorKind::TypeH),
            "H+1" | "HPLUS1" | "TYPEHPLUS1" => Ok(PriorKind::TypeHPlus1),
            other => Err(MctmError::InvalidInput(format!(
                "unknown prior type '{other}' (expected 1, H or H+1)"
            ))),
        }
    }
}

/// Dirichlet hyperparameters: `alpha` over topics, `beta` over words,
/// `gamma` over next behaviours and `eta` over the first behaviour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub eta: Vec<f64>,
}

impl Hyperparams {
    pub fn new(alpha: Vec<f64>, beta: Vec<f64>, gamma: Vec<f64>, eta: Vec<f64>) -> Result<Self> {
        let h = Hyperparams {
            alpha,
            beta,
            gamma,
            eta,
        };
        for (name, v) in h.named() {
            if let Some(bad) = v.iter().find(|a| !(**a > 0.0) || !a.is_finite()) {
                return Err(MctmError::InvalidHyperparams(format!(
                    "{name} has non-positive entry {bad}"
                )));
            }
        }
        Ok(h)
    }

    pub fn symmetric(spec: &ModelSpec, alpha: f64, beta: f64, gamma: f64, eta: f64) -> Result<Self> {
        Hyperparams::new(
            vec![alpha; spec.num_topics],
            vec![beta; spec.num_words],
            vec![gamma; spec.num_behaviours],
            vec![eta; spec.num_behaviours],
        )
    }

    fn named(&self) -> [(&'static str, &Vec<f64>); 4] {
        [
            ("alpha", &self.alpha),
            ("beta", &self.beta),
            ("gamma", &self.gamma),
            ("eta", &self.eta),
        ]
    }

    pub fn check_spec(&self, spec: &ModelSpec) -> Result<()> {
        let expected = [
            spec.num_topics,
            spec.num_words,
            spec.num_behaviours,
            spec.num_behaviours,
        ];
        for ((name, v), n) in self.named().into_iter().zip(expected) {
            if v.len() != n {
                return Err(MctmError::InvalidHyperparams(format!(
                    "{name} has length {} but the spec needs {n}",
                    v.len()
                )));
            }
        }
        Ok(())
    }

    /// Every entry shifted by `delta`.
    pub fn shifted(&self, delta: f64) -> Hyperparams {
        let shift = |v: &Vec<f64>| v.iter().map(|a| a + delta).collect();
        Hyperparams {
            alpha: shift(&self.alpha),
            beta: shift(&self.beta),
            gamma: shift(&self.gamma),
            eta: shift(&self.eta),
        }
    }

    /// Every entry raised to at least `floor`.
    pub fn at_least(&self, floor: f64) -> Hyperparams {
        let raise = |v: &Vec<f64>| v.iter().map(|a| a.max(floor)).collect();
        Hyperparams {
            alpha: raise(&self.alpha),
            beta: raise(&self.beta),
            gamma: raise(&self.gamma),
            eta: raise(&self.eta),
        }
    }

    pub fn min_value(&self) -> f64 {
        self.named()
            .iter()
            .flat_map(|(_, v)| v.iter().copied())
            .fold(f64::INFINITY, f64::min)
    }
}

pub fn make_prior(kind: PriorKind, spec: &ModelSpec) -> Hyperparams {
    let (alpha, beta, gamma, eta) = kind.values();
    Hyperparams::symmetric(spec, alpha, beta, gamma, eta).expect("prior tables are positive")
}

/// The parameter set `{Φ, Θ, π, Ξ}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub phi: Array2<f64>,
    pub theta: Array2<f64>,
    pub xi: Array2<f64>,
    pub pi: Array1<f64>,
}

impl ModelParams {
    pub fn spec(&self) -> ModelSpec {
        ModelSpec {
            num_words: self.phi.nrows(),
            num_topics: self.theta.nrows(),
            num_behaviours: self.pi.len(),
        }
    }

    pub fn uniform(spec: &ModelSpec) -> ModelParams {
        let (x, y, z) = (spec.num_words, spec.num_topics, spec.num_behaviours);
        ModelParams {
            phi: Array2::from_elem((x, y), 1.0 / x as f64),
            theta: Array2::from_elem((y, z), 1.0 / y as f64),
            xi: Array2::from_elem((z, z), 1.0 / z as f64),
            pi: Array1::from_elem(z, 1.0 / z as f64),
        }
    }

    pub fn validate(&self, spec: &ModelSpec) -> ValidationReport {
        validate_params(self, spec)
    }

    /// Errors with the first violation, if any.
    pub fn ensure_valid(&self, spec: &ModelSpec) -> Result<()> {
        let report = self.validate(spec);
        match report.violations.first() {
            None => Ok(()),
            Some(v) => Err(MctmError::InvalidParams(v.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Dimension {
        matrix: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },
    ColumnSum {
        matrix: &'static str,
        column: usize,
        sum: f64,
    },
    EntryRange {
        matrix: &'static str,
        row: usize,
        column: usize,
        value: f64,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Dimension {
                matrix,
                expected,
                found,
            } => write!(f, "{matrix}: expected shape {expected:?}, found {found:?}"),
            Violation::ColumnSum { matrix, column, sum } => {
                write!(f, "{matrix}: column {column} sums to {sum}")
            }
            Violation::EntryRange {
                matrix,
                row,
                column,
                value,
            } => write!(f, "{matrix}[{row}, {column}] = {value} is outside [0, 1]"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has_dimension_errors(&self) -> bool {
        self.violations
            .iter()
            .any(|v| matches!(v, Violation::Dimension { .. }))
    }
}

pub fn validate_params(params: &ModelParams, spec: &ModelSpec) -> ValidationReport {
    let (x, y, z) = (spec.num_words, spec.num_topics, spec.num_behaviours);
    let mut report = ValidationReport::default();
    let pi_col = params.pi.view().insert_axis(Axis(1));
    let matrices = [
        ("phi", params.phi.view(), (x, y)),
        ("theta", params.theta.view(), (y, z)),
        ("xi", params.xi.view(), (z, z)),
        ("pi", pi_col, (z, 1)),
    ];
    for (name, m, expected) in matrices {
        if m.dim() != expected {
            report.violations.push(Violation::Dimension {
                matrix: name,
                expected,
                found: m.dim(),
            });
            continue;
        }
        for ((row, column), &value) in m.indexed_iter() {
            if !(0.0..=1.0).contains(&value) {
                report.violations.push(Violation::EntryRange {
                    matrix: name,
                    row,
                    column,
                    value,
                });
            }
        }
        for (column, col) in m.axis_iter(Axis(1)).enumerate() {
            let sum = col.sum();
            if !((sum - 1.0).abs() <= STOCHASTIC_TOLERANCE) {
                report.violations.push(Violation::ColumnSum {
                    matrix: name,
                    column,
                    sum,
                });
            }
        }
    }
    report
}

/// Draws `{Φ, Θ, Ξ, π}` column by column from their Dirichlet priors.
///
/// The draw order is: every `φ_y`, then `θ_z` and `ξ_z` for each `z`, then `π`.
pub fn random_init(spec: &ModelSpec, hyper: &Hyperparams, seed: u64) -> Result<ModelParams> {
    spec.validate()?;
    hyper.check_spec(spec)?;
    let mut rng = rng::stream(seed, labels::PARAMS);
    let (x, y, z) = (spec.num_words, spec.num_topics, spec.num_behaviours);
    let mut phi = Array2::zeros((x, y));
    for mut col in phi.axis_iter_mut(Axis(1)) {
        col.assign(&Array1::from(sample_dirichlet(&hyper.beta, &mut rng)));
    }
    let mut theta = Array2::zeros((y, z));
    let mut xi = Array2::zeros((z, z));
    for k in 0..z {
        theta
            .column_mut(k)
            .assign(&Array1::from(sample_dirichlet(&hyper.alpha, &mut rng)));
        xi.column_mut(k)
            .assign(&Array1::from(sample_dirichlet(&hyper.gamma, &mut rng)));
    }
    let pi = Array1::from(sample_dirichlet(&hyper.eta, &mut rng));
    Ok(ModelParams { phi, theta, xi, pi })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub words: Vec<WordId>,
}

impl Document {
    pub fn new(words: Vec<WordId>) -> Self {
        Document { words }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// Time-ordered documents; document `t` (0-based) has timestamp `t + 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    spec: ModelSpec,
    docs: Vec<Document>,
}

impl Corpus {
    pub fn new(spec: ModelSpec, docs: Vec<Document>) -> Result<Self> {
        spec.validate()?;
        for (t, doc) in docs.iter().enumerate() {
            if doc.is_empty() {
                return Err(MctmError::InvalidCorpus(format!("document {t} is empty")));
            }
            if let Some(w) = doc.words.iter().find(|w| **w as usize >= spec.num_words) {
                return Err(MctmError::InvalidCorpus(format!(
                    "document {t} has word {w} outside the vocabulary of {}",
                    spec.num_words
                )));
            }
        }
        Ok(Corpus { spec, docs })
    }

    pub fn from_words(spec: ModelSpec, docs: Vec<Vec<WordId>>) -> Result<Self> {
        Corpus::new(spec, docs.into_iter().map(Document::new).collect())
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn docs(&self) -> &[Document] {
        &self.docs
    }

    pub fn num_docs(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn num_tokens(&self) -> usize {
        self.docs.iter().map(Document::len).sum()
    }

    /// Same documents under a different (compatible) spec.
    pub fn with_spec(self, spec: ModelSpec) -> Result<Self> {
        Corpus::new(spec, self.docs)
    }

    /// This corpus followed by `other`.
    pub fn concat(&self, other: &Corpus) -> Result<Corpus> {
        if self.spec.num_words != other.spec.num_words {
            return Err(MctmError::InvalidCorpus("vocabulary sizes differ".into()));
        }
        let mut docs = self.docs.clone();
        docs.extend(other.docs.iter().cloned());
        Corpus::new(self.spec, docs)
    }

    pub(crate) fn require_non_empty(&self) -> Result<()> {
        if self.docs.is_empty() {
            return Err(MctmError::InvalidCorpus("corpus has no documents".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CountMode {
    /// Posterior expectations (EM, VB).
    Expected,
    /// Integer tallies of one sampled assignment (Gibbs).
    Sampled,
}

/// The aggregates every learner turns into parameter estimates.
///
/// `n_zz[[z_next, z_prev]]` counts transitions `z_prev -> z_next`; `n_z1` is
/// the (expected) indicator of the first document's behaviour.
#[derive(Debug, Clone, PartialEq)]
pub struct SufficientCounts {
    pub mode: CountMode,
    pub n_xy: Array2<f64>,
    pub n_yz: Array2<f64>,
    pub n_zz: Array2<f64>,
    pub n_z1: Array1<f64>,
}

impl SufficientCounts {
    pub fn zeros(spec: &ModelSpec, mode: CountMode) -> Self {
        let (x, y, z) = (spec.num_words, spec.num_topics, spec.num_behaviours);
        SufficientCounts {
            mode,
            n_xy: Array2::zeros((x, y)),
            n_yz: Array2::zeros((y, z)),
            n_zz: Array2::zeros((z, z)),
            n_z1: Array1::zeros(z),
        }
    }

    pub fn total_tokens(&self) -> f64 {
        self.n_xy.sum()
    }

    pub fn total_transitions(&self) -> f64 {
        self.n_zz.sum()
    }

    pub fn is_integral(&self) -> bool {
        let integral = |v: &f64| *v >= 0.0 && v.fract() == 0.0;
        self.n_xy.iter().all(integral)
            && self.n_yz.iter().all(integral)
            && self.n_zz.iter().all(integral)
            && self.n_z1.iter().all(integral)
    }
}

/// Normalises each column of `m`; an all-zero column becomes uniform.
pub(crate) fn normalise_columns(m: &mut Array2<f64>) {
    let rows = m.nrows() as f64;
    for mut col in m.axis_iter_mut(Axis(1)) {
        let s = col.sum();
        if s > 0.0 {
            col.mapv_inplace(|v| v / s);
        } else {
            col.fill(1.0 / rows);
        }
    }
}

pub(crate) fn normalise_vector(v: &mut Array1<f64>) {
    let s = v.sum();
    if s > 0.0 {
        v.mapv_inplace(|a| a / s);
    } else {
        let n = v.len() as f64;
        v.fill(1.0 / n);
    }
}
