//! On-disk formats: model files, corpora, labels and score files.
//!
//! Model files are JSON. Matrices are stored row-major with explicit
//! dimensions; columns are the conditioning variable, so every column of
//! `phi`, `theta` and `xi` sums to one. Corpora are plain text with one
//! document per line. Score files are tab-separated with a `#` header.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::anomaly::Localisation;
use crate::error::{MctmError, Result};
use crate::gibbs::sample_point_estimate;
use crate::ingest::Direction;
use crate::model::{
    Corpus, CountMode, Hyperparams, ModelParams, ModelSpec, PriorKind, SufficientCounts, WordId,
};
use crate::vb::{sample_posterior, PosteriorHyperparams};

pub const FORMAT_VERSION: u32 = 1;
const ORIENTATION: &str = "column_conditional";

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| MctmError::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| MctmError::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    fn from_array(a: &Array2<f64>) -> Matrix {
        Matrix {
            rows: a.nrows(),
            cols: a.ncols(),
            data: a.iter().copied().collect(),
        }
    }

    fn to_array(&self, name: &str, shape: (usize, usize)) -> std::result::Result<Array2<f64>, String> {
        if (self.rows, self.cols) != shape {
            return Err(format!(
                "{name} is {}x{}, expected {}x{}",
                self.rows, self.cols, shape.0, shape.1
            ));
        }
        Array2::from_shape_vec(shape, self.data.clone())
            .map_err(|_| format!("{name} holds {} values for {}x{}", self.data.len(), shape.0, shape.1))
    }
}

fn vector(v: &[f64], name: &str, len: usize) -> std::result::Result<Array1<f64>, String> {
    if v.len() != len {
        return Err(format!("{name} has {} entries, expected {len}", v.len()));
    }
    Ok(Array1::from(v.to_vec()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Em,
    Vb,
    Gs,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Em => "em",
            Algorithm::Vb => "vb",
            Algorithm::Gs => "gs",
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = MctmError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "em" => Ok(Algorithm::Em),
            "vb" => Ok(Algorithm::Vb),
            "gs" => Ok(Algorithm::Gs),
            other => Err(MctmError::InvalidInput(format!(
                "unknown algorithm {other:?} (expected em, vb or gs)"
            ))),
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Parameters alone in the model-file layout, for ground-truth sidecars.
pub fn params_to_json(params: &ModelParams) -> serde_json::Value {
    serde_json::to_value(ParamsDto {
        phi: Matrix::from_array(&params.phi),
        theta: Matrix::from_array(&params.theta),
        xi: Matrix::from_array(&params.xi),
        pi: params.pi.to_vec(),
    })
    .expect("parameters serialise")
}

pub fn params_from_json(value: &serde_json::Value, origin: &Path) -> Result<ModelParams> {
    let bad = |msg: String| MctmError::format(origin, msg);
    let dto: ParamsDto = serde_json::from_value(value.clone()).map_err(|e| bad(e.to_string()))?;
    let (x, y, z) = (dto.phi.rows, dto.theta.rows, dto.xi.rows);
    let params = ModelParams {
        phi: dto.phi.to_array("phi", (x, y)).map_err(bad)?,
        theta: dto.theta.to_array("theta", (y, z)).map_err(bad)?,
        xi: dto.xi.to_array("xi", (z, z)).map_err(bad)?,
        pi: vector(&dto.pi, "pi", z).map_err(bad)?,
    };
    params.ensure_valid(&params.spec())?;
    Ok(params)
}

#[derive(Serialize, Deserialize)]
struct ParamsDto {
    phi: Matrix,
    theta: Matrix,
    xi: Matrix,
    pi: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct PosteriorDto {
    beta_t: Matrix,
    alpha_t: Matrix,
    gamma_t: Matrix,
    eta_t: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CountsDto {
    n_xy: Matrix,
    n_yz: Matrix,
    n_zz: Matrix,
    n_z1: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelDto {
    format_version: u32,
    orientation: String,
    spec: ModelSpec,
    prior: Option<PriorKind>,
    hyper: Hyperparams,
    algorithm: Algorithm,
    params: ParamsDto,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    posterior: Option<PosteriorDto>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    samples: Vec<CountsDto>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    train_belief: Option<Vec<f64>>,
}

/// A trained model with whatever its learner leaves behind for Monte Carlo scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub prior: Option<PriorKind>,
    pub hyper: Hyperparams,
    pub algorithm: Algorithm,
    /// Point estimates used for plug-in scoring.
    pub params: ModelParams,
    /// Variational posterior (VB only).
    pub posterior: Option<PosteriorHyperparams>,
    /// Retained Gibbs samples (GS only).
    pub samples: Vec<SufficientCounts>,
    /// Filtered behaviour belief after the training corpus under `params`.
    pub train_belief: Option<Array1<f64>>,
}

impl ModelFile {
    pub fn spec(&self) -> ModelSpec {
        self.params.spec()
    }

    pub fn supports_monte_carlo(&self) -> bool {
        self.posterior.is_some() || !self.samples.is_empty()
    }

    /// Parameter sets for Monte Carlo scoring: posterior draws for VB, the
    /// first `count` retained samples for GS.
    pub fn monte_carlo_params(&self, count: usize, seed: u64) -> Result<Vec<ModelParams>> {
        if count == 0 {
            return Err(MctmError::InvalidInput("Monte Carlo needs at least one sample".into()));
        }
        if let Some(post) = &self.posterior {
            return Ok(sample_posterior(post, count, seed));
        }
        if self.samples.is_empty() {
            return Err(MctmError::InvalidInput(format!(
                "{} model carries no posterior or samples for Monte Carlo scoring",
                self.algorithm.name()
            )));
        }
        if count > self.samples.len() {
            return Err(MctmError::InvalidInput(format!(
                "{count} samples requested but the model holds {}",
                self.samples.len()
            )));
        }
        Ok(self.samples[..count]
            .iter()
            .map(|c| sample_point_estimate(c, &self.hyper))
            .collect())
    }

    pub fn to_json(&self) -> String {
        let p = &self.params;
        let dto = ModelDto {
            format_version: FORMAT_VERSION,
            orientation: ORIENTATION.into(),
            spec: self.spec(),
            prior: self.prior,
            hyper: self.hyper.clone(),
            algorithm: self.algorithm,
            params: ParamsDto {
                phi: Matrix::from_array(&p.phi),
                theta: Matrix::from_array(&p.theta),
                xi: Matrix::from_array(&p.xi),
                pi: p.pi.to_vec(),
            },
            posterior: self.posterior.as_ref().map(|q| PosteriorDto {
                beta_t: Matrix::from_array(&q.beta_t),
                alpha_t: Matrix::from_array(&q.alpha_t),
                gamma_t: Matrix::from_array(&q.gamma_t),
                eta_t: q.eta_t.to_vec(),
            }),
            samples: self
                .samples
                .iter()
                .map(|c| CountsDto {
                    n_xy: Matrix::from_array(&c.n_xy),
                    n_yz: Matrix::from_array(&c.n_yz),
                    n_zz: Matrix::from_array(&c.n_zz),
                    n_z1: c.n_z1.to_vec(),
                })
                .collect(),
            train_belief: self.train_belief.as_ref().map(|b| b.to_vec()),
        };
        let mut s = serde_json::to_string_pretty(&dto).expect("model serialises");
        s.push('\n');
        s
    }

    /// Parses and validates a model file; `origin` names it in errors.
    pub fn from_json(text: &str, origin: &Path) -> Result<ModelFile> {
        let bad = |msg: String| MctmError::format(origin, msg);
        let dto: ModelDto = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
        if dto.format_version != FORMAT_VERSION {
            return Err(bad(format!("unsupported format version {}", dto.format_version)));
        }
        if dto.orientation != ORIENTATION {
            return Err(bad(format!("unsupported matrix orientation {:?}", dto.orientation)));
        }
        let s = dto.spec;
        s.validate()?;
        dto.hyper.check_spec(&s)?;
        let (x, y, z) = (s.num_words, s.num_topics, s.num_behaviours);
        let params = ModelParams {
            phi: dto.params.phi.to_array("phi", (x, y)).map_err(bad)?,
            theta: dto.params.theta.to_array("theta", (y, z)).map_err(bad)?,
            xi: dto.params.xi.to_array("xi", (z, z)).map_err(bad)?,
            pi: vector(&dto.params.pi, "pi", z).map_err(bad)?,
        };
        params.ensure_valid(&s)?;
        let posterior = match dto.posterior {
            None => None,
            Some(q) => {
                let post = PosteriorHyperparams {
                    beta_t: q.beta_t.to_array("beta_t", (x, y)).map_err(bad)?,
                    alpha_t: q.alpha_t.to_array("alpha_t", (y, z)).map_err(bad)?,
                    gamma_t: q.gamma_t.to_array("gamma_t", (z, z)).map_err(bad)?,
                    eta_t: vector(&q.eta_t, "eta_t", z).map_err(bad)?,
                };
                post.validate()?;
                Some(post)
            }
        };
        let mut samples = Vec::with_capacity(dto.samples.len());
        for c in &dto.samples {
            let counts = SufficientCounts {
                mode: CountMode::Sampled,
                n_xy: c.n_xy.to_array("n_xy", (x, y)).map_err(bad)?,
                n_yz: c.n_yz.to_array("n_yz", (y, z)).map_err(bad)?,
                n_zz: c.n_zz.to_array("n_zz", (z, z)).map_err(bad)?,
                n_z1: vector(&c.n_z1, "n_z1", z).map_err(bad)?,
            };
            if !counts.is_integral() {
                return Err(bad("sample counts must be non-negative integers".into()));
            }
            samples.push(counts);
        }
        let train_belief = match dto.train_belief {
            None => None,
            Some(b) => {
                let b = vector(&b, "train_belief", z).map_err(bad)?;
                let sum = b.sum();
                if b.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
                    return Err(MctmError::NotNormalised { sum });
                }
                Some(b)
            }
        };
        Ok(ModelFile {
            prior: dto.prior,
            hyper: dto.hyper,
            algorithm: dto.algorithm,
            params,
            posterior,
            samples,
            train_belief,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_text(path, &self.to_json())
    }

    pub fn load(path: &Path) -> Result<ModelFile> {
        ModelFile::from_json(&read_text(path)?, path)
    }
}

/// Whitespace-separated word ids, one document per line. Blank lines are errors.
pub fn parse_corpus_words(text: &str) -> std::result::Result<Vec<Vec<WordId>>, String> {
    let body = text.strip_suffix('\n').unwrap_or(text);
    if body.is_empty() {
        return Ok(Vec::new());
    }
    body.split('\n')
        .enumerate()
        .map(|(n, line)| {
            let line = line.strip_suffix('\r').unwrap_or(line);
            if line.trim().is_empty() {
                return Err(format!("line {} is blank", n + 1));
            }
            line.split_whitespace()
                .map(|w| {
                    w.parse::<WordId>()
                        .map_err(|_| format!("line {}: {w:?} is not a word id", n + 1))
                })
                .collect()
        })
        .collect()
}

pub fn format_corpus(corpus: &Corpus) -> String {
    let mut out = String::new();
    for doc in corpus.docs() {
        let line: Vec<String> = doc.words.iter().map(|w| w.to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

/// Reads a corpus over a vocabulary of `num_words`, or of the largest id
/// plus one when `num_words` is `None`.
pub fn read_corpus(path: &Path, num_words: Option<usize>) -> Result<Corpus> {
    let docs = parse_corpus_words(&read_text(path)?).map_err(|m| MctmError::format(path, m))?;
    let inferred = docs.iter().flatten().map(|w| *w as usize + 1).max().unwrap_or(1);
    let spec = ModelSpec::new(num_words.unwrap_or(inferred), 1, 1)?;
    Corpus::from_words(spec, docs)
}

pub fn write_corpus(path: &Path, corpus: &Corpus) -> Result<()> {
    write_text(path, &format_corpus(corpus))
}

/// One label per line: `1`/`true` abnormal, `0`/`false` normal.
pub fn parse_labels(text: &str) -> std::result::Result<Vec<bool>, String> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| match l.trim().to_ascii_lowercase().as_str() {
            "1" | "true" => Ok(true),
            "0" | "false" => Ok(false),
            other => Err(format!("line {}: {other:?} is not a label", n + 1)),
        })
        .collect()
}

pub fn format_labels(labels: &[bool]) -> String {
    labels.iter().map(|l| if *l { "1\n" } else { "0\n" }).collect()
}

pub fn read_labels(path: &Path) -> Result<Vec<bool>> {
    parse_labels(&read_text(path)?).map_err(|m| MctmError::format(path, m))
}

/// A least-likely token, with its grid position when a frame layout is known.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LocalisedToken {
    pub token: usize,
    pub place: Option<(usize, usize, Direction)>,
}

impl From<Localisation> for LocalisedToken {
    fn from(l: Localisation) -> Self {
        LocalisedToken {
            token: l.token,
            place: Some((l.cell_x, l.cell_y, l.direction)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord {
    pub index: usize,
    pub length: usize,
    pub log_lik: f64,
    pub score: f64,
    pub localisation: Vec<LocalisedToken>,
}

pub const SCORE_HEADER: &str = "# index\tlength\tlog_lik\tscore\tlocalisation";

fn format_localisation(tokens: &[LocalisedToken]) -> String {
    if tokens.is_empty() {
        return "-".into();
    }
    let parts: Vec<String> = tokens
        .iter()
        .map(|t| match t.place {
            Some((x, y, d)) => format!("{}:{x}:{y}:{d}", t.token),
            None => t.token.to_string(),
        })
        .collect();
    parts.join(";")
}

fn parse_localisation(field: &str) -> std::result::Result<Vec<LocalisedToken>, String> {
    if field == "-" {
        return Ok(Vec::new());
    }
    field
        .split(';')
        .map(|entry| {
            let parts: Vec<&str> = entry.split(':').collect();
            let token = parts[0]
                .parse()
                .map_err(|_| format!("bad localisation token {entry:?}"))?;
            let place = match parts.len() {
                1 => None,
                4 => Some((
                    parts[1].parse().map_err(|_| format!("bad cell in {entry:?}"))?,
                    parts[2].parse().map_err(|_| format!("bad cell in {entry:?}"))?,
                    parts[3].parse::<Direction>().map_err(|e| e.to_string())?,
                )),
                _ => return Err(format!("bad localisation entry {entry:?}")),
            };
            Ok(LocalisedToken { token, place })
        })
        .collect()
}

/// Floats use Rust's shortest round-trip form; infinities are `inf`/`-inf`.
pub fn format_scores(records: &[ScoreRecord]) -> String {
    let mut out = String::from(SCORE_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            r.index,
            r.length,
            r.log_lik,
            r.score,
            format_localisation(&r.localisation)
        ));
    }
    out
}

pub fn parse_scores(text: &str) -> std::result::Result<Vec<ScoreRecord>, String> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.starts_with('#') && !l.trim().is_empty())
        .map(|(n, line)| {
            let f: Vec<&str> = line.split('\t').collect();
            let bad = |what: &str| format!("line {}: bad {what}", n + 1);
            if f.len() != 5 {
                return Err(format!("line {}: expected 5 tab-separated fields", n + 1));
            }
            let score: f64 = f[3].parse().map_err(|_| bad("score"))?;
            if score.is_nan() {
                return Err(bad("score (NaN)"));
            }
            Ok(ScoreRecord {
                index: f[0].parse().map_err(|_| bad("index"))?,
                length: f[1].parse().map_err(|_| bad("length"))?,
                log_lik: f[2].parse().map_err(|_| bad("log_lik"))?,
                score,
                localisation: parse_localisation(f[4])?,
            })
        })
        .collect()
}

pub fn read_scores(path: &Path) -> Result<Vec<ScoreRecord>> {
    parse_scores(&read_text(path)?).map_err(|m| MctmError::format(path, m))
}
