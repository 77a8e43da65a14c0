//! Verbalizer utilization: word scores to labels.
//!
//! Zero-shot prediction averages (calibrated) word scores per class. Few-shot
//! prediction uses per-class weighted sums of log-scores, with weights
//! `α = softmax(w)` taken within each class, and is trained with cross-entropy.

use serde::{Deserialize, Serialize};

use crate::error::{KptError, Result};
use crate::exec::Execution;
use crate::kbstore::Verbalizer;
use crate::scorer::WordScoreMatrix;

/// Raw per-word weights `w`, one per flattened verbalizer word.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerbalizerWeights(pub Vec<f64>);

impl VerbalizerWeights {
    pub fn zeros(verbalizer: &Verbalizer) -> Self {
        Self(vec![0.0; verbalizer.n_words()])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    fn check(&self, verbalizer: &Verbalizer) -> Result<()> {
        if self.0.len() != verbalizer.n_words() {
            return Err(KptError::LengthMismatch(format!(
                "{} weights for {} words",
                self.0.len(),
                verbalizer.n_words()
            )));
        }
        Ok(())
    }
}

/// `α_v = exp(w_v) / Σ_{u ∈ V_y} exp(w_u)`, with max-subtraction.
pub fn normalized_weights(weights: &VerbalizerWeights, verbalizer: &Verbalizer) -> Result<Vec<f64>> {
    weights.check(verbalizer)?;
    let w = weights.as_slice();
    let mut alpha = vec![0.0; w.len()];
    for c in 0..verbalizer.n_classes() {
        let range = verbalizer.class_range(c);
        let peak = w[range.clone()].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for j in range.clone() {
            alpha[j] = (w[j] - peak).exp();
            total += alpha[j];
        }
        for a in &mut alpha[range] {
            *a /= total;
        }
    }
    Ok(alpha)
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

fn check_columns(scores: &WordScoreMatrix, verbalizer: &Verbalizer) -> Result<()> {
    if scores.n_cols() != verbalizer.n_words() {
        return Err(KptError::LengthMismatch(format!(
            "{} score columns for {} words",
            scores.n_cols(),
            verbalizer.n_words()
        )));
    }
    Ok(())
}

/// Mean score of each class's words, per instance.
pub fn class_means(scores: &WordScoreMatrix, verbalizer: &Verbalizer, exec: Execution) -> Result<Vec<Vec<f64>>> {
    check_columns(scores, verbalizer)?;
    Ok(exec.map_indices(scores.n_rows(), |i| {
        let row = scores.row(i);
        (0..verbalizer.n_classes())
            .map(|c| {
                let r = verbalizer.class_range(c);
                let n = r.len() as f64;
                row[r].iter().sum::<f64>() / n
            })
            .collect()
    }))
}

/// Argmax of per-class mean scores.
pub fn predict_average(scores: &WordScoreMatrix, verbalizer: &Verbalizer) -> Result<Vec<usize>> {
    predict_average_with(scores, verbalizer, Execution::default())
}

pub fn predict_average_with(scores: &WordScoreMatrix, verbalizer: &Verbalizer, exec: Execution) -> Result<Vec<usize>> {
    Ok(class_means(scores, verbalizer, exec)?
        .iter()
        .map(|m| argmax(m))
        .collect())
}

/// Per-instance probability vectors over labels, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelDistribution {
    n_classes: usize,
    probs: Vec<f64>,
}

impl LabelDistribution {
    pub fn n_rows(&self) -> usize {
        self.probs.len() / self.n_classes.max(1)
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.probs[i * self.n_classes..(i + 1) * self.n_classes]
    }

    pub fn predictions(&self) -> Vec<usize> {
        (0..self.n_rows()).map(|i| argmax(self.row(i))).collect()
    }
}

fn softmax_in_place(s: &mut [f64]) {
    let peak = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in s.iter_mut() {
        *v = (*v - peak).exp();
        total += *v;
    }
    for v in s.iter_mut() {
        *v /= total;
    }
}

fn log_row(scores: &WordScoreMatrix, i: usize) -> Result<Vec<f64>> {
    scores
        .row(i)
        .iter()
        .enumerate()
        .map(|(j, &p)| {
            if p > 0.0 {
                Ok(p.ln())
            } else {
                Err(KptError::NonpositiveScore(i, j))
            }
        })
        .collect()
}

/// `s(y) = Σ_{v ∈ V_y} α_v · ln P(v)` for one row of log-scores.
fn class_scores(log_p: &[f64], alpha: &[f64], verbalizer: &Verbalizer) -> Vec<f64> {
    (0..verbalizer.n_classes())
        .map(|c| verbalizer.class_range(c).map(|j| alpha[j] * log_p[j]).sum())
        .collect()
}

/// Softmax over the weighted log-score of each class.
pub fn predict_weighted(
    scores: &WordScoreMatrix,
    verbalizer: &Verbalizer,
    weights: &VerbalizerWeights,
) -> Result<LabelDistribution> {
    predict_weighted_with(scores, verbalizer, weights, Execution::default())
}

pub fn predict_weighted_with(
    scores: &WordScoreMatrix,
    verbalizer: &Verbalizer,
    weights: &VerbalizerWeights,
    exec: Execution,
) -> Result<LabelDistribution> {
    check_columns(scores, verbalizer)?;
    let alpha = normalized_weights(weights, verbalizer)?;
    let rows = exec.try_map_indices(scores.n_rows(), |i| {
        let mut s = class_scores(&log_row(scores, i)?, &alpha, verbalizer);
        softmax_in_place(&mut s);
        Ok::<_, KptError>(s)
    })?;
    Ok(LabelDistribution {
        n_classes: verbalizer.n_classes(),
        probs: rows.concat(),
    })
}

/// Mean cross-entropy of the weighted prediction and its gradient in `w`.
///
/// With `s_y = Σ α_v ℓ_v` and `p = softmax(s)`, the per-instance gradient is
/// `∂L/∂w_v = (p_y − [y = gold]) · α_v · (ℓ_v − s_y)` for `v ∈ V_y`.
pub fn loss_and_grad(
    scores: &WordScoreMatrix,
    gold: &[usize],
    verbalizer: &Verbalizer,
    weights: &VerbalizerWeights,
) -> Result<(f64, Vec<f64>)> {
    loss_and_grad_with(scores, gold, verbalizer, weights, Execution::default())
}

pub fn loss_and_grad_with(
    scores: &WordScoreMatrix,
    gold: &[usize],
    verbalizer: &Verbalizer,
    weights: &VerbalizerWeights,
    exec: Execution,
) -> Result<(f64, Vec<f64>)> {
    check_columns(scores, verbalizer)?;
    if scores.n_rows() == 0 {
        return Err(KptError::EmptyInput);
    }
    if gold.len() != scores.n_rows() {
        return Err(KptError::LengthMismatch(format!(
            "{} labels for {} instances",
            gold.len(),
            scores.n_rows()
        )));
    }
    let k = verbalizer.n_classes();
    if let Some(&label) = gold.iter().find(|&&g| g >= k) {
        return Err(KptError::InvalidLabel { label, n_classes: k });
    }
    let alpha = normalized_weights(weights, verbalizer)?;
    let classes = verbalizer.word_classes();
    let per_instance = exec.try_map_indices(scores.n_rows(), |i| {
        let log_p = log_row(scores, i)?;
        let s = class_scores(&log_p, &alpha, verbalizer);
        let mut p = s.clone();
        softmax_in_place(&mut p);
        let peak = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = peak + s.iter().map(|v| (v - peak).exp()).sum::<f64>().ln();
        let loss = lse - s[gold[i]];
        let grad: Vec<f64> = (0..log_p.len())
            .map(|j| {
                let y = classes[j];
                let dl_ds = p[y] - if y == gold[i] { 1.0 } else { 0.0 };
                dl_ds * alpha[j] * (log_p[j] - s[y])
            })
            .collect();
        Ok::<_, KptError>((loss, grad))
    })?;
    // sequential reduction keeps the result independent of the thread count
    let n = per_instance.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; verbalizer.n_words()];
    for (l, g) in per_instance {
        loss += l;
        for (acc, v) in grad.iter_mut().zip(g) {
            *acc += v;
        }
    }
    grad.iter_mut().for_each(|g| *g /= n);
    Ok((loss / n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn ws(rows: &[Vec<f64>]) -> WordScoreMatrix {
        WordScoreMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn zero_weights_are_uniform() {
        let v = Verbalizer::parse_file_string("a,b,c,d\ne\n").unwrap();
        let a = normalized_weights(&VerbalizerWeights::zeros(&v), &v).unwrap();
        assert_eq!(&a[..4], &[0.25; 4]);
        assert_eq!(a[4], 1.0);
    }

    #[test]
    fn weights_shift_invariance_and_direct_values() {
        let v = Verbalizer::parse_file_string("a,b\nc,d\n").unwrap();
        let w = VerbalizerWeights(vec![1.0f64.ln(), 3.0f64.ln(), 0.2, -0.4]);
        let a = normalized_weights(&w, &v).unwrap();
        assert_abs_diff_eq!(a[0], 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(a[1], 0.75, epsilon = 1e-15);
        let shifted = VerbalizerWeights(vec![w.0[0] + 40.0, w.0[1] + 40.0, 0.2, -0.4]);
        let b = normalized_weights(&shifted, &v).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn average_examples() {
        let v = Verbalizer::parse_file_string("a\nb\n").unwrap();
        assert_eq!(predict_average(&ws(&[vec![0.7, 0.3]]), &v).unwrap(), [0]);
        let v = Verbalizer::parse_file_string("a,x\nb\n").unwrap();
        assert_eq!(predict_average(&ws(&[vec![0.5, 0.1, 0.4]]), &v).unwrap(), [1]);
        assert_eq!(predict_average(&ws(&[vec![0.5, 0.3, 0.4]]), &v).unwrap(), [0]);
    }

    #[test]
    fn weighted_singleton_agrees_with_average() {
        let v = Verbalizer::parse_file_string("a\nb\n").unwrap();
        let m = ws(&[vec![0.7, 0.3]]);
        let d = predict_weighted(&m, &v, &VerbalizerWeights::zeros(&v)).unwrap();
        assert_abs_diff_eq!(d.row(0)[0], 0.7, epsilon = 1e-15);
        assert_eq!(d.predictions(), predict_average(&m, &v).unwrap());
    }

    #[test]
    fn loss_saturates_and_singletons_have_zero_grad() {
        let v = Verbalizer::parse_file_string("a\nb\n").unwrap();
        let m = ws(&[vec![0.999, 1e-9], vec![1e-9, 0.999]]);
        let (loss, grad) = loss_and_grad(&m, &[0, 1], &v, &VerbalizerWeights::zeros(&v)).unwrap();
        assert!(loss < 1e-6);
        assert_eq!(grad, [0.0, 0.0]);
    }

    #[test]
    fn loss_errors() {
        let v = Verbalizer::parse_file_string("a\nb\n").unwrap();
        let m = ws(&[vec![0.5, 0.5]]);
        let w = VerbalizerWeights::zeros(&v);
        assert!(matches!(
            loss_and_grad(&m, &[2], &v, &w),
            Err(KptError::InvalidLabel { .. })
        ));
        assert!(matches!(
            loss_and_grad(&m, &[0, 1], &v, &w),
            Err(KptError::LengthMismatch(_))
        ));
        let empty = WordScoreMatrix::new(0, 2, vec![]).unwrap();
        assert!(loss_and_grad(&empty, &[], &v, &w).is_err());
    }

    #[test]
    fn ties_go_to_lower_label() {
        assert_eq!(argmax(&[0.5, 0.5, 0.1]), 0);
        assert_eq!(argmax(&[0.1, 0.5, 0.5]), 1);
    }
}
