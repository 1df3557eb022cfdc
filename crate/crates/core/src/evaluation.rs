//! Precision-recall analysis, accuracy and localisation recall.
//!
//! Lower scores are more anomalous everywhere: a document is flagged at
//! threshold `τ` when its score is `≤ τ`.

use std::collections::HashSet;

use crate::error::{MctmError, Result};

/// Reported results on the two public surveillance datasets. They need those
/// datasets to reproduce and are kept for reference only.
pub mod reference {
    pub const BEST_ACCURACY_QMUL: f64 = 0.9544;
    pub const BEST_ACCURACY_IDIAP: f64 = 0.8891;
    /// Mean PR-AUC for EM, VB and GS.
    pub const MEAN_AUC_QMUL: [f64; 3] = [0.3166, 0.3155, 0.2970];
    pub const MEAN_AUC_IDIAP: [f64; 3] = [0.3759, 0.3729, 0.3673];
    /// Share of abnormal words found when the least likely 45% are examined.
    pub const LOCALISATION_RECALL_AT_45: f64 = 0.90;
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelledScores {
    scores: Vec<f64>,
    labels: Vec<bool>,
}

impl LabelledScores {
    pub fn new(scores: Vec<f64>, labels: Vec<bool>) -> Result<LabelledScores> {
        if scores.len() != labels.len() {
            return Err(MctmError::InvalidInput(format!(
                "{} scores but {} labels",
                scores.len(),
                labels.len()
            )));
        }
        if let Some(i) = scores.iter().position(|s| s.is_nan()) {
            return Err(MctmError::InvalidInput(format!("score {i} is NaN")));
        }
        Ok(LabelledScores { scores, labels })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|l| **l).count()
    }

    /// Sorted by score, ties grouped: `(score, positives, negatives)`.
    fn grouped(&self) -> Vec<(f64, usize, usize)> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| self.scores[a].total_cmp(&self.scores[b]));
        let mut groups: Vec<(f64, usize, usize)> = Vec::new();
        for i in idx {
            let s = self.scores[i];
            let (p, n) = if self.labels[i] { (1, 0) } else { (0, 1) };
            match groups.last_mut() {
                Some(g) if g.0 == s => {
                    g.1 += p;
                    g.2 += n;
                }
                _ => groups.push((s, p, n)),
            }
        }
        groups
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint {
    pub threshold: f64,
    pub recall: f64,
    pub precision: f64,
}

/// One point per distinct score, thresholds ascending.
pub fn pr_curve(data: &LabelledScores) -> Result<Vec<PrPoint>> {
    let pos = data.positives();
    if pos == 0 || pos == data.len() {
        return Err(MctmError::InvalidInput(
            "precision-recall needs both abnormal and normal documents".into(),
        ));
    }
    let mut tp = 0;
    let mut fp = 0;
    Ok(data
        .grouped()
        .into_iter()
        .map(|(s, p, n)| {
            tp += p;
            fp += n;
            PrPoint {
                threshold: s,
                recall: tp as f64 / pos as f64,
                precision: tp as f64 / (tp + fp) as f64,
            }
        })
        .collect())
}

/// Trapezoidal area over recall, starting from `(0, precision of the first point)`.
pub fn auc_pr(curve: &[PrPoint]) -> Result<f64> {
    let first = curve
        .first()
        .ok_or_else(|| MctmError::InvalidInput("empty precision-recall curve".into()))?;
    let mut area = 0.0;
    let (mut r0, mut p0) = (0.0, first.precision);
    for pt in curve {
        area += (pt.recall - r0) * (pt.precision + p0) / 2.0;
        r0 = pt.recall;
        p0 = pt.precision;
    }
    Ok(area)
}

/// Fraction of documents classified correctly when scores `≤ threshold` are flagged.
pub fn accuracy(data: &LabelledScores, threshold: f64) -> f64 {
    if data.is_empty() {
        return f64::NAN;
    }
    let correct = data
        .scores
        .iter()
        .zip(&data.labels)
        .filter(|(s, l)| (**s <= threshold) == **l)
        .count();
    correct as f64 / data.len() as f64
}

/// Highest accuracy over every distinct threshold and the flag-nothing
/// threshold `-inf`; the smallest threshold wins ties.
pub fn best_accuracy(data: &LabelledScores) -> (f64, f64) {
    let pos = data.positives();
    let total = data.len() as f64;
    let mut tp = 0;
    let mut fp = 0;
    let below_all = data.scores.iter().all(|s| *s > f64::NEG_INFINITY);
    let mut best = if below_all {
        (f64::NEG_INFINITY, (data.len() - pos) as f64 / total)
    } else {
        (f64::NEG_INFINITY, f64::NEG_INFINITY)
    };
    for (s, p, n) in data.grouped() {
        tp += p;
        fp += n;
        let tn = data.len() - pos - fp;
        let acc = (tp + tn) as f64 / total;
        if acc > best.1 {
            best = (s, acc);
        }
    }
    best
}

/// `|detected ∩ truth| / min(top_n, |truth|)`.
pub fn localisation_recall(detected: &[usize], truth: &[usize], top_n: usize) -> Result<f64> {
    if top_n == 0 {
        return Err(MctmError::InvalidInput("top_n must be positive".into()));
    }
    let truth: HashSet<usize> = truth.iter().copied().collect();
    if truth.is_empty() {
        return Err(MctmError::InvalidInput("no abnormal words to localise".into()));
    }
    let detected: HashSet<usize> = detected.iter().copied().collect();
    let hits = detected.intersection(&truth).count();
    Ok(hits as f64 / top_n.min(truth.len()) as f64)
}

pub fn format_curve_csv(curve: &[PrPoint]) -> String {
    let mut out = String::from("recall,precision\n");
    for p in curve {
        out.push_str(&format!("{},{}\n", p.recall, p.precision));
    }
    out
}
