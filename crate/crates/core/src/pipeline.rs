//! End-to-end zero-shot and few-shot runs over word-score matrices aligned
//! with the constructed verbalizer.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{KptError, Result};
use crate::exec::Execution;
use crate::kbstore::Verbalizer;
use crate::predict::{predict_average_with, predict_weighted_with, LabelDistribution, VerbalizerWeights};
use crate::refine::{
    calibrate_with, contextualized_prior, frequency_keep_mask, relevance_assessment, relevance_profiles,
    ContextualizedPrior, RefinementDiagnostics, RelevanceParams, RemovalStage,
};
use crate::scorer::WordScoreMatrix;
use crate::train::{train_weights, TrainConfig, TrainOutcome};

/// A permutation of `0..pool_size`; support sets of any size are its prefixes,
/// so larger sets always contain smaller ones.
pub fn support_order(pool_size: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..pool_size).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order
}

pub fn sample_support(pool_size: usize, size: usize, seed: u64) -> Result<Vec<usize>> {
    if size > pool_size {
        return Err(KptError::SupportTooLarge {
            requested: size,
            available: pool_size,
        });
    }
    let mut order = support_order(pool_size, seed);
    order.truncate(size);
    Ok(order)
}

/// Where the contextualized prior comes from.
#[derive(Debug, Clone, Copy)]
pub enum Support<'a> {
    /// Raw word scores of the unlabeled support set.
    Rows(&'a WordScoreMatrix),
    /// A single empty-input row; relevance refinement is unavailable.
    ContextFree(&'a WordScoreMatrix),
    None,
}

impl Support<'_> {
    fn prior(&self) -> Result<Option<ContextualizedPrior>> {
        match self {
            Support::Rows(m) => contextualized_prior(m).map(Some),
            Support::ContextFree(row) => {
                if row.n_rows() != 1 {
                    return Err(KptError::DimensionMismatch(format!(
                        "context-free prior must be one row, got {}",
                        row.n_rows()
                    )));
                }
                ContextualizedPrior::from_values(row.row(0).to_vec(), 0).map(Some)
            }
            Support::None => Ok(None),
        }
    }
}

/// Output of the frequency and relevance stages.
#[derive(Debug, Clone)]
pub struct Refinement {
    pub verbalizer: Verbalizer,
    /// Flat indices of surviving words in the input verbalizer.
    pub kept: Vec<usize>,
    /// Prior restricted to surviving words, when one was available.
    pub prior: Option<ContextualizedPrior>,
    pub diagnostics: RefinementDiagnostics,
}

/// Frequency then relevance refinement, recording every decision.
pub fn refine_verbalizer(
    verbalizer: &Verbalizer,
    support: Support<'_>,
    frequency: bool,
    relevance: bool,
    params: RelevanceParams,
) -> Result<Refinement> {
    let mut diagnostics = RefinementDiagnostics::new(verbalizer);
    let prior = support.prior()?;
    if let Some(p) = &prior {
        if p.len() != verbalizer.n_words() {
            return Err(KptError::LengthMismatch(format!(
                "support has {} columns, verbalizer has {} words",
                p.len(),
                verbalizer.n_words()
            )));
        }
        for (d, v) in diagnostics.words.iter_mut().zip(p.values()) {
            d.prior = Some(*v);
        }
    }
    let mut current = verbalizer.clone();
    let mut kept: Vec<usize> = (0..verbalizer.n_words()).collect();

    if frequency {
        let p = prior.as_ref().ok_or(KptError::EmptySupport)?;
        let mask = frequency_keep_mask(&current, p)?;
        for (&orig, keep) in kept.iter().zip(&mask) {
            if !keep {
                diagnostics.words[orig].removed_by = Some(RemovalStage::Frequency);
            }
        }
        current = current.retain(&mask);
        kept = kept
            .into_iter()
            .zip(&mask)
            .filter(|(_, k)| **k)
            .map(|(i, _)| i)
            .collect();
    }

    if relevance {
        match support {
            Support::Rows(m) if verbalizer.n_classes() >= 2 => {
                let profiles = relevance_profiles(&m.select_columns(&kept), &current)?;
                let assessed = relevance_assessment(&current, &profiles, params)?;
                let mask: Vec<bool> = assessed
                    .iter()
                    .enumerate()
                    .map(|(j, w)| w.ratio >= 1.0 || current.is_anchor(j))
                    .collect();
                for ((&orig, a), keep) in kept.iter().zip(&assessed).zip(&mask) {
                    let d = &mut diagnostics.words[orig];
                    d.relevance = Some(a.relevances.clone());
                    d.ratio = Some(a.ratio);
                    if !keep {
                        d.removed_by = Some(RemovalStage::Relevance);
                    }
                }
                current = current.retain(&mask);
                kept = kept
                    .into_iter()
                    .zip(&mask)
                    .filter(|(_, k)| **k)
                    .map(|(i, _)| i)
                    .collect();
            }
            Support::Rows(_) => return Err(KptError::TooFewClasses(verbalizer.n_classes())),
            _ => log::info!("relevance refinement skipped: no support rows"),
        }
    }

    debug_assert_eq!(verbalizer.indices_of(&current).as_deref(), Some(kept.as_slice()));
    let prior = prior.map(|p| p.select(&kept));
    Ok(Refinement {
        verbalizer: current,
        kept,
        prior,
        diagnostics,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZeroShotFlags {
    pub frequency: bool,
    pub relevance: bool,
    pub calibration: bool,
}

impl Default for ZeroShotFlags {
    fn default() -> Self {
        Self {
            frequency: true,
            relevance: true,
            calibration: true,
        }
    }
}

impl ZeroShotFlags {
    pub const NONE: ZeroShotFlags = ZeroShotFlags {
        frequency: false,
        relevance: false,
        calibration: false,
    };

    /// Row label in ablation tables, e.g. `KPT-FR-RR` or `PT+CC`.
    pub fn variant(&self, verbalizer: &Verbalizer) -> String {
        if verbalizer.is_singleton() {
            return if self.calibration { "PT+CC".into() } else { "PT".into() };
        }
        let mut s = String::from("KPT");
        if !self.frequency {
            s.push_str("-FR");
        }
        if !self.relevance {
            s.push_str("-RR");
        }
        if !self.calibration {
            s.push_str("-CC");
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct ZeroShotOutcome {
    pub predictions: Vec<usize>,
    pub refinement: Refinement,
}

/// Refine (FR → RR), optionally calibrate, then average-predict the eval rows.
/// `eval_scores` columns follow the unrefined verbalizer.
pub fn zero_shot(
    verbalizer: &Verbalizer,
    support: Support<'_>,
    eval_scores: &WordScoreMatrix,
    flags: ZeroShotFlags,
    params: RelevanceParams,
    exec: Execution,
) -> Result<ZeroShotOutcome> {
    if eval_scores.n_cols() != verbalizer.n_words() {
        return Err(KptError::LengthMismatch(format!(
            "eval scores have {} columns, verbalizer has {} words",
            eval_scores.n_cols(),
            verbalizer.n_words()
        )));
    }
    let refinement = refine_verbalizer(verbalizer, support, flags.frequency, flags.relevance, params)?;
    let mut scores = eval_scores.select_columns(&refinement.kept);
    if flags.calibration {
        let prior = refinement.prior.as_ref().ok_or(KptError::EmptySupport)?;
        scores = calibrate_with(&scores, prior, exec)?;
    }
    let predictions = predict_average_with(&scores, &refinement.verbalizer, exec)?;
    Ok(ZeroShotOutcome {
        predictions,
        refinement,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotFlags {
    pub learnable: bool,
    pub relevance: bool,
    pub calibration: bool,
    pub frequency: bool,
}

impl Default for FewShotFlags {
    fn default() -> Self {
        Self {
            learnable: true,
            relevance: true,
            calibration: false,
            frequency: false,
        }
    }
}

impl FewShotFlags {
    pub fn variant(&self) -> String {
        let mut s = String::from("KPT");
        if !self.learnable {
            s.push_str("-LR");
        }
        if !self.relevance {
            s.push_str("-RR");
        }
        if self.calibration {
            s.push_str("+CC");
        }
        if self.frequency {
            s.push_str("+FR");
        }
        s
    }
}

/// Score matrices for one few-shot run, all aligned with the unrefined verbalizer.
#[derive(Debug, Clone, Copy)]
pub struct FewShotData<'a> {
    /// Unlabeled support rows for RR, FR and CC.
    pub support: Option<&'a WordScoreMatrix>,
    pub train: &'a WordScoreMatrix,
    pub train_gold: &'a [usize],
    pub validation: &'a WordScoreMatrix,
    pub validation_gold: &'a [usize],
    pub test: &'a WordScoreMatrix,
}

#[derive(Debug, Clone)]
pub struct FewShotOutcome {
    pub predictions: Vec<usize>,
    pub distribution: LabelDistribution,
    pub refinement: Refinement,
    pub weights: VerbalizerWeights,
    /// Absent when learnable refinement is off.
    pub training: Option<TrainOutcome>,
}

pub fn few_shot(
    verbalizer: &Verbalizer,
    data: FewShotData<'_>,
    flags: FewShotFlags,
    params: RelevanceParams,
    config: &TrainConfig,
    exec: Execution,
) -> Result<FewShotOutcome> {
    let support = match data.support {
        Some(m) => Support::Rows(m),
        None => Support::None,
    };
    let refinement = refine_verbalizer(verbalizer, support, flags.frequency, flags.relevance, params)?;
    let v = &refinement.verbalizer;
    let prepare = |m: &WordScoreMatrix| -> Result<WordScoreMatrix> {
        let m = m.select_columns(&refinement.kept);
        if flags.calibration {
            let prior = refinement.prior.as_ref().ok_or(KptError::EmptySupport)?;
            calibrate_with(&m, prior, exec)
        } else {
            Ok(m)
        }
    };
    let test = prepare(data.test)?;
    let (weights, training) = if flags.learnable {
        let out = train_weights(
            &prepare(data.train)?,
            data.train_gold,
            &prepare(data.validation)?,
            data.validation_gold,
            v,
            config,
        )?;
        (out.weights.clone(), Some(out))
    } else {
        (VerbalizerWeights::zeros(v), None)
    };
    let distribution = predict_weighted_with(&test, v, &weights, exec)?;
    Ok(FewShotOutcome {
        predictions: distribution.predictions(),
        distribution,
        refinement,
        weights,
        training,
    })
}
