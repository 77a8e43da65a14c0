//! Few-shot protocol: k-shot sampling and best-validation training of
//! verbalizer weights over frozen scores.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{KptError, Result};
use crate::eval::micro_f1;
use crate::kbstore::Verbalizer;
use crate::predict::{loss_and_grad, predict_weighted, VerbalizerWeights};
use crate::scorer::WordScoreMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub k_shot: usize,
    pub epochs: usize,
    pub seed: u64,
    pub learning_rate: f64,
    /// `None` trains full-batch.
    pub batch_size: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            k_shot: 1,
            epochs: 5,
            seed: 0,
            learning_rate: 0.05,
            batch_size: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_shot == 0 {
            return Err(KptError::InvalidConfig("k_shot must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(KptError::InvalidConfig("epochs must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(KptError::InvalidConfig(
                "learning_rate must be finite and positive".into(),
            ));
        }
        if self.batch_size == Some(0) {
            return Err(KptError::InvalidConfig("batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// Row indices of a k-shot split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotSplit {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

/// Draws `k` training and `k` validation instances per class, disjoint.
pub fn sample_few_shot(labels: &[usize], n_classes: usize, k: usize, seed: u64) -> Result<FewShotSplit> {
    if k == 0 {
        return Err(KptError::InvalidConfig("k must be positive".into()));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &y) in labels.iter().enumerate() {
        if y >= n_classes {
            return Err(KptError::InvalidLabel { label: y, n_classes });
        }
        by_class[y].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = FewShotSplit {
        train: Vec::with_capacity(k * n_classes),
        validation: Vec::with_capacity(k * n_classes),
    };
    for (class, mut pool) in by_class.into_iter().enumerate() {
        if pool.len() < 2 * k {
            return Err(KptError::InsufficientInstances {
                class,
                available: pool.len(),
                needed: 2 * k,
            });
        }
        pool.shuffle(&mut rng);
        split.train.extend_from_slice(&pool[..k]);
        split.validation.extend_from_slice(&pool[k..2 * k]);
    }
    Ok(split)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean batch loss over the epoch.
    pub train_loss: f64,
    pub val_micro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub weights: VerbalizerWeights,
    pub history: Vec<EpochRecord>,
    /// 1-based epoch whose snapshot was returned.
    pub best_epoch: usize,
}

/// Plain gradient descent from zero weights, validating once per epoch and
/// returning the snapshot with the best validation Micro-F1 (earliest on ties).
pub fn train_weights(
    train_scores: &WordScoreMatrix,
    train_gold: &[usize],
    val_scores: &WordScoreMatrix,
    val_gold: &[usize],
    verbalizer: &Verbalizer,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_scores.n_rows() != train_gold.len() || val_scores.n_rows() != val_gold.len() {
        return Err(KptError::LengthMismatch("scores and labels differ in length".into()));
    }
    let n = train_scores.n_rows();
    if n == 0 || val_scores.n_rows() == 0 {
        return Err(KptError::EmptyInput);
    }
    let batch = config.batch_size.unwrap_or(n).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut weights = VerbalizerWeights::zeros(verbalizer);
    let mut best: Option<(f64, usize, VerbalizerWeights)> = None;
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        if batch < n {
            order.shuffle(&mut rng);
        }
        let mut loss_sum = 0.0;
        let mut n_batches = 0;
        for chunk in order.chunks(batch) {
            let (scores, gold) = if batch < n {
                let g: Vec<usize> = chunk.iter().map(|&i| train_gold[i]).collect();
                (train_scores.select_rows(chunk), g)
            } else {
                (train_scores.clone(), train_gold.to_vec())
            };
            let (loss, grad) = loss_and_grad(&scores, &gold, verbalizer, &weights)?;
            for (w, g) in weights.0.iter_mut().zip(&grad) {
                *w -= config.learning_rate * g;
            }
            loss_sum += loss;
            n_batches += 1;
        }
        let val_pred = predict_weighted(val_scores, verbalizer, &weights)?.predictions();
        let val_f1 = micro_f1(&val_pred, val_gold)?;
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / n_batches as f64,
            val_micro_f1: val_f1,
        });
        if best.as_ref().is_none_or(|(f, _, _)| val_f1 > *f) {
            best = Some((val_f1, epoch, weights.clone()));
        }
    }
    let (_, best_epoch, weights) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        weights,
        history,
        best_epoch,
    })
}
