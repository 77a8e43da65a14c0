//! Support-set refinements: contextualized prior, frequency refinement,
//! relevance refinement and contextualized calibration.
//!
//! All functions are pure. Class names (the first word of each class) are
//! never removed.

use serde::{Deserialize, Serialize};

use crate::error::{KptError, Result};
use crate::exec::Execution;
use crate::kbstore::Verbalizer;
use crate::scorer::WordScoreMatrix;

/// Relevances below this are clamped before taking powers and logs.
pub const RELEVANCE_FLOOR: f64 = 1e-12;
/// Above this exponent the power mean is replaced by its limit, the maximum.
pub const MAX_POWER_EXPONENT: f64 = 100.0;

/// Expected masked-position probability of each word over the support set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextualizedPrior {
    values: Vec<f64>,
    support_size: usize,
}

impl ContextualizedPrior {
    /// Wraps precomputed prior values, e.g. a context-free row.
    pub fn from_values(values: Vec<f64>, support_size: usize) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !(*v > 0.0 && *v <= 1.0)) {
            return Err(KptError::DegeneratePrior(i));
        }
        Ok(Self { values, support_size })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn support_size(&self) -> usize {
        self.support_size
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn select(&self, cols: &[usize]) -> ContextualizedPrior {
        ContextualizedPrior {
            values: cols.iter().map(|&j| self.values[j]).collect(),
            support_size: self.support_size,
        }
    }
}

/// Column means of the support-set word scores.
pub fn contextualized_prior(support_scores: &WordScoreMatrix) -> Result<ContextualizedPrior> {
    let n = support_scores.n_rows();
    if n == 0 {
        return Err(KptError::EmptySupport);
    }
    let mut sums = vec![0.0; support_scores.n_cols()];
    for row in support_scores.rows() {
        for (s, v) in sums.iter_mut().zip(row) {
            *s += v;
        }
    }
    let values = sums.into_iter().map(|s| s / n as f64).collect();
    ContextualizedPrior::from_values(values, n)
}

fn check_aligned(verbalizer: &Verbalizer, len: usize, what: &str) -> Result<()> {
    if verbalizer.n_words() != len {
        return Err(KptError::LengthMismatch(format!(
            "{what} has {len} entries, verbalizer has {} words",
            verbalizer.n_words()
        )));
    }
    Ok(())
}

/// Keep mask for frequency refinement: per class, the class name plus the
/// `⌈n/2⌉ − 1` highest-prior other words. Equal priors keep list order.
pub fn frequency_keep_mask(verbalizer: &Verbalizer, prior: &ContextualizedPrior) -> Result<Vec<bool>> {
    check_aligned(verbalizer, prior.len(), "prior")?;
    let p = prior.values();
    let mut keep = vec![false; verbalizer.n_words()];
    for c in 0..verbalizer.n_classes() {
        let range = verbalizer.class_range(c);
        let n = range.len();
        let anchor = range.start;
        keep[anchor] = true;
        let mut others: Vec<usize> = range.skip(1).collect();
        others.sort_by(|&a, &b| p[b].total_cmp(&p[a]));
        for &j in others.iter().take(n.div_ceil(2) - 1) {
            keep[j] = true;
        }
    }
    Ok(keep)
}

/// Removes the lower half of each class by contextualized prior.
pub fn frequency_refine(verbalizer: &Verbalizer, prior: &ContextualizedPrior) -> Result<Verbalizer> {
    Ok(verbalizer.retain(&frequency_keep_mask(verbalizer, prior)?))
}

/// Support-set score vectors for each word and each class anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceProfile {
    /// One vector of length `|support|` per flattened word.
    pub words: Vec<Vec<f64>>,
    /// Class name profile per class.
    pub classes: Vec<Vec<f64>>,
}

/// Columns of the raw support scores. The class profile is its name's column.
pub fn relevance_profiles(support_scores: &WordScoreMatrix, verbalizer: &Verbalizer) -> Result<RelevanceProfile> {
    check_aligned(verbalizer, support_scores.n_cols(), "support scores")?;
    if support_scores.n_rows() == 0 {
        return Err(KptError::EmptySupport);
    }
    let words: Vec<Vec<f64>> = (0..support_scores.n_cols()).map(|j| support_scores.column(j)).collect();
    let classes = (0..verbalizer.n_classes())
        .map(|c| words[verbalizer.anchor_index(c)].clone())
        .collect();
    Ok(RelevanceProfile { words, classes })
}

/// Cosine similarity of two nonnegative profiles, clamped to [0, 1].
pub fn relevance_score(q_v: &[f64], q_y: &[f64]) -> Result<f64> {
    if q_v.len() != q_y.len() {
        return Err(KptError::LengthMismatch(format!(
            "profiles of length {} and {}",
            q_v.len(),
            q_y.len()
        )));
    }
    let dot: f64 = q_v.iter().zip(q_y).map(|(a, b)| a * b).sum();
    let nv = q_v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let ny = q_y.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nv == 0.0 || ny == 0.0 || !nv.is_finite() || !ny.is_finite() {
        return Err(KptError::DegenerateProfile);
    }
    Ok((dot / (nv * ny)).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelevanceParams {
    /// Scale of the power-mean exponent.
    pub c: f64,
    pub epsilon: f64,
}

impl Default for RelevanceParams {
    fn default() -> Self {
        Self { c: 10.0, epsilon: 1e-6 }
    }
}

impl RelevanceParams {
    /// `d = C / (|Y| − 2 + ε) + 1`: large for few classes (tends to the max
    /// over other classes), close to 1 for many (plain mean).
    pub fn exponent(&self, n_classes: usize) -> f64 {
        self.c / (n_classes as f64 - 2.0 + self.epsilon) + 1.0
    }
}

/// `own / M_d(others)` where `M_d` is the power mean of order `d`. For `d`
/// above [`MAX_POWER_EXPONENT`] the power mean is replaced by the maximum.
pub fn relevance_ratio(own: f64, others: &[f64], d: f64) -> f64 {
    assert!(!others.is_empty(), "relevance ratio needs at least one other class");
    let own = own.max(RELEVANCE_FLOOR);
    let others = others.iter().map(|r| r.max(RELEVANCE_FLOOR));
    if d > MAX_POWER_EXPONENT {
        return own / others.fold(0.0, f64::max);
    }
    // ln M_d = (logsumexp(d ln r) − ln n) / d
    let logs: Vec<f64> = others.map(|r| d * r.ln()).collect();
    let peak = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = peak + logs.iter().map(|l| (l - peak).exp()).sum::<f64>().ln();
    let ln_mean = (lse - (logs.len() as f64).ln()) / d;
    (own.ln() - ln_mean).exp()
}

/// Per-word relevance to every class and the resulting ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordRelevance {
    pub relevances: Vec<f64>,
    pub ratio: f64,
}

pub fn relevance_assessment(
    verbalizer: &Verbalizer,
    profiles: &RelevanceProfile,
    params: RelevanceParams,
) -> Result<Vec<WordRelevance>> {
    let k = verbalizer.n_classes();
    if k < 2 {
        return Err(KptError::TooFewClasses(k));
    }
    check_aligned(verbalizer, profiles.words.len(), "relevance profile")?;
    let d = params.exponent(k);
    verbalizer
        .word_classes()
        .into_iter()
        .zip(&profiles.words)
        .map(|(own, q_v)| {
            let relevances = profiles
                .classes
                .iter()
                .map(|q_y| relevance_score(q_v, q_y))
                .collect::<Result<Vec<f64>>>()?;
            let others: Vec<f64> = relevances
                .iter()
                .enumerate()
                .filter(|(y, _)| *y != own)
                .map(|(_, r)| *r)
                .collect();
            let ratio = relevance_ratio(relevances[own], &others, d);
            Ok(WordRelevance { relevances, ratio })
        })
        .collect()
}

/// Removes non-name words whose relevance ratio is below 1.
pub fn relevance_refine(
    verbalizer: &Verbalizer,
    profiles: &RelevanceProfile,
    params: RelevanceParams,
) -> Result<Verbalizer> {
    let assessed = relevance_assessment(verbalizer, profiles, params)?;
    let keep: Vec<bool> = assessed.iter().map(|w| w.ratio >= 1.0).collect();
    Ok(verbalizer.retain(&keep))
}

/// Divides each score by its word's prior and renormalizes every row to sum to 1.
pub fn calibrate(scores: &WordScoreMatrix, prior: &ContextualizedPrior) -> Result<WordScoreMatrix> {
    calibrate_with(scores, prior, Execution::default())
}

pub fn calibrate_with(
    scores: &WordScoreMatrix,
    prior: &ContextualizedPrior,
    exec: Execution,
) -> Result<WordScoreMatrix> {
    if scores.n_cols() != prior.len() {
        return Err(KptError::LengthMismatch(format!(
            "{} score columns, {} prior entries",
            scores.n_cols(),
            prior.len()
        )));
    }
    if let Some(i) = prior
        .values()
        .iter()
        .position(|p| p.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater))
    {
        return Err(KptError::DegeneratePrior(i));
    }
    let p = prior.values();
    let mut out = scores.values().to_vec();
    exec.for_each_row_mut(&mut out, scores.n_cols(), |_, row| {
        for (v, q) in row.iter_mut().zip(p) {
            *v /= q;
        }
        let total: f64 = row.iter().sum();
        for v in row.iter_mut() {
            *v /= total;
        }
    });
    Ok(WordScoreMatrix::from_raw(scores.n_rows(), scores.n_cols(), out))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RemovalStage {
    Frequency,
    Relevance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordDiagnostic {
    pub class: usize,
    pub surface: String,
    pub is_class_name: bool,
    pub prior: Option<f64>,
    pub relevance: Option<Vec<f64>>,
    pub ratio: Option<f64>,
    pub removed_by: Option<RemovalStage>,
}

/// Per-word record of a refinement run over the constructed verbalizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementDiagnostics {
    pub classes: Vec<String>,
    pub words: Vec<WordDiagnostic>,
}

impl RefinementDiagnostics {
    pub fn new(verbalizer: &Verbalizer) -> Self {
        Self {
            classes: verbalizer.classes().iter().map(|c| c.class_name.clone()).collect(),
            words: verbalizer
                .flat_words()
                .enumerate()
                .map(|(i, (c, w))| WordDiagnostic {
                    class: c,
                    surface: w.surface.clone(),
                    is_class_name: verbalizer.is_anchor(i),
                    prior: None,
                    relevance: None,
                    ratio: None,
                    removed_by: None,
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("diagnostics serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}
