//! Metrics, run aggregation, and refinement reporting.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{KptError, Result};
use crate::exec::Execution;
use crate::kbstore::Verbalizer;
use crate::pipeline::{support_order, zero_shot, Support, ZeroShotFlags};
use crate::refine::{RefinementDiagnostics, RelevanceParams, RemovalStage};
use crate::scorer::WordScoreMatrix;

/// Micro-averaged F1 from pooled confusion counts. For single-label data this
/// equals accuracy.
pub fn micro_f1(predictions: &[usize], gold: &[usize]) -> Result<f64> {
    if predictions.len() != gold.len() {
        return Err(KptError::LengthMismatch(format!(
            "{} predictions for {} gold labels",
            predictions.len(),
            gold.len()
        )));
    }
    if gold.is_empty() {
        return Err(KptError::EmptyInput);
    }
    let n_classes = predictions.iter().chain(gold).max().unwrap() + 1;
    let (mut tp, mut fp, mut fn_) = (
        vec![0usize; n_classes],
        vec![0usize; n_classes],
        vec![0usize; n_classes],
    );
    for (&p, &g) in predictions.iter().zip(gold) {
        if p == g {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fn_[g] += 1;
        }
    }
    let tp: usize = tp.iter().sum();
    let fp: usize = fp.iter().sum();
    let fn_: usize = fn_.iter().sum();
    if tp == 0 {
        return Ok(0.0);
    }
    let precision = tp as f64 / (tp + fp) as f64;
    let recall = tp as f64 / (tp + fn_) as f64;
    Ok(2.0 * precision * recall / (precision + recall))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub variant: String,
    /// 0 for zero-shot.
    pub shot: usize,
    pub template_id: String,
    pub seed: u64,
    pub micro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub variant: String,
    pub shot: usize,
    pub n_runs: usize,
    pub mean: f64,
    /// Sample standard deviation (n − 1); 0 for a single run.
    pub std: f64,
    pub best_template: String,
    /// Highest per-template mean across seeds.
    pub best_template_score: f64,
}

/// Mean, sample standard deviation, and best template over runs of one
/// variant and shot.
pub fn aggregate(results: &[RunResult]) -> Result<EvalReport> {
    let first = results.first().ok_or(KptError::EmptyInput)?;
    if let Some(r) = results
        .iter()
        .find(|r| r.variant != first.variant || r.shot != first.shot)
    {
        return Err(KptError::InvalidConfig(format!(
            "cannot aggregate {} ({}-shot) with {} ({}-shot)",
            first.variant, first.shot, r.variant, r.shot
        )));
    }
    let scores: Vec<f64> = results.iter().map(|r| r.micro_f1).collect();
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let std = if scores.len() > 1 {
        (scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let mut per_template: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for r in results {
        let e = per_template.entry(r.template_id.as_str()).or_default();
        e.0 += r.micro_f1;
        e.1 += 1;
    }
    let (best_template, best_template_score) =
        per_template
            .iter()
            .map(|(t, (s, c))| (*t, s / *c as f64))
            .fold(
                ("", f64::NEG_INFINITY),
                |best, cur| if cur.1 > best.1 { cur } else { best },
            );
    Ok(EvalReport {
        variant: first.variant.clone(),
        shot: first.shot,
        n_runs: results.len(),
        mean,
        std,
        best_template: best_template.to_string(),
        best_template_score,
    })
}

/// One report per `(variant, shot)`, ordered by shot then variant.
pub fn aggregate_all(results: &[RunResult]) -> Result<Vec<EvalReport>> {
    let mut groups: BTreeMap<(usize, &str), Vec<RunResult>> = BTreeMap::new();
    for r in results {
        groups.entry((r.shot, r.variant.as_str())).or_default().push(r.clone());
    }
    groups.values().map(|g| aggregate(g)).collect()
}

pub fn results_to_csv(results: &[RunResult]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["variant", "shot", "template", "seed", "micro_f1"])
        .expect("in-memory csv");
    for r in results {
        w.write_record([
            r.variant.clone(),
            r.shot.to_string(),
            r.template_id.clone(),
            r.seed.to_string(),
            format!("{:?}", r.micro_f1),
        ])
        .expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8 csv")
}

pub fn parse_results_csv(text: &str) -> Result<Vec<RunResult>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let bad = || KptError::MalformedLine(i + 2);
        let rec = rec.map_err(|_| bad())?;
        if rec.len() != 5 {
            return Err(bad());
        }
        let micro_f1: f64 = rec[4].parse().map_err(|_| bad())?;
        if !(0.0..=1.0).contains(&micro_f1) {
            return Err(bad());
        }
        out.push(RunResult {
            variant: rec[0].to_string(),
            shot: rec[1].parse().map_err(|_| bad())?,
            template_id: rec[2].to_string(),
            seed: rec[3].parse().map_err(|_| bad())?,
            micro_f1,
        });
    }
    Ok(out)
}

/// `mean ± std (best)` cells in percent, one line per report.
pub fn render_table(reports: &[EvalReport]) -> String {
    let mut out = String::new();
    let width = reports.iter().map(|r| r.variant.len()).max().unwrap_or(7).max(7);
    writeln!(
        out,
        "{:<width$}  {:>4}  {:>4}  micro-F1 mean ± std (best)",
        "variant", "shot", "runs"
    )
    .unwrap();
    for r in reports {
        writeln!(
            out,
            "{:<width$}  {:>4}  {:>4}  {:.1} ± {:.1} ({:.1})",
            r.variant,
            r.shot,
            r.n_runs,
            100.0 * r.mean,
            100.0 * r.std,
            100.0 * r.best_template_score
        )
        .unwrap();
    }
    out
}

/// Remaining words per class after each refinement stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCounts {
    pub classes: Vec<String>,
    pub construction: Vec<usize>,
    pub after_frequency: Vec<usize>,
    pub after_relevance: Vec<usize>,
}

pub fn refinement_report(diagnostics: &RefinementDiagnostics) -> StageCounts {
    let k = diagnostics.classes.len();
    let mut counts = StageCounts {
        classes: diagnostics.classes.clone(),
        construction: vec![0; k],
        after_frequency: vec![0; k],
        after_relevance: vec![0; k],
    };
    for w in &diagnostics.words {
        counts.construction[w.class] += 1;
        if w.removed_by != Some(RemovalStage::Frequency) {
            counts.after_frequency[w.class] += 1;
            if w.removed_by != Some(RemovalStage::Relevance) {
                counts.after_relevance[w.class] += 1;
            }
        }
    }
    counts
}

impl StageCounts {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,construction,after_fr,after_rr\n");
        for (i, c) in self.classes.iter().enumerate() {
            writeln!(
                out,
                "{},{},{},{}",
                c, self.construction[i], self.after_frequency[i], self.after_relevance[i]
            )
            .unwrap();
        }
        out
    }
}

/// Score matrices for a support-size sweep, aligned with the constructed verbalizer.
#[derive(Debug, Clone, Copy)]
pub struct SweepData<'a> {
    pub verbalizer: &'a Verbalizer,
    /// Unlabeled rows support sets are drawn from.
    pub pool: &'a WordScoreMatrix,
    pub eval: &'a WordScoreMatrix,
    pub gold: &'a [usize],
    /// Empty-input row used at size 0.
    pub context_free: Option<&'a WordScoreMatrix>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub size: usize,
    pub micro_f1: f64,
}

/// Zero-shot Micro-F1 at each support size, on the same eval rows. Support
/// sets are prefixes of one seeded permutation of the pool, so they are
/// nested. Size 0 uses the context-free row as the prior.
pub fn support_sweep(
    sizes: &[usize],
    data: SweepData<'_>,
    flags: ZeroShotFlags,
    params: RelevanceParams,
    seed: u64,
    exec: Execution,
) -> Result<Vec<SweepPoint>> {
    if sizes.windows(2).any(|w| w[0] > w[1]) {
        return Err(KptError::InvalidConfig("sweep sizes must be sorted ascending".into()));
    }
    if let Some(&max) = sizes.last() {
        if max > data.pool.n_rows() {
            return Err(KptError::SupportTooLarge {
                requested: max,
                available: data.pool.n_rows(),
            });
        }
    }
    let order = support_order(data.pool.n_rows(), seed);
    sizes
        .iter()
        .map(|&size| {
            let support_rows;
            let support = if size == 0 {
                let row = data
                    .context_free
                    .ok_or_else(|| KptError::InvalidConfig("support size 0 needs a context-free prior row".into()))?;
                Support::ContextFree(row)
            } else {
                support_rows = data.pool.select_rows(&order[..size]);
                Support::Rows(&support_rows)
            };
            let out = zero_shot(data.verbalizer, support, data.eval, flags, params, exec)?;
            Ok(SweepPoint {
                size,
                micro_f1: micro_f1(&out.predictions, data.gold)?,
            })
        })
        .collect()
}
