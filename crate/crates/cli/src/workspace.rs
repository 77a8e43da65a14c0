//! Inputs shared by the pipeline commands and the files they write.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use kpt_core::pipeline::{sample_support, Support};
use kpt_core::predict::LabelDistribution;
use kpt_core::scorer::{
    bind, gold_labels, load_dataset, load_score_matrix, load_template_registry, restrict_single_token, word_scores,
    Instance, ScoreMatrix, Template, WordScoreMatrix,
};
use kpt_core::Verbalizer;

use crate::config::RunConfig;

/// Command misuse; exits with status 2 like argument errors.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub fn required<'a>(value: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| usage(format!("`{key}` is not set in the config or on the command line")))
}

pub enum Split {
    Test,
    Train,
    ContextFree,
}

impl Split {
    fn stem(&self) -> &'static str {
        match self {
            Split::Test => "test",
            Split::Train => "train",
            Split::ContextFree => "context_free",
        }
    }
}

/// Everything a (template, seed) run reads.
pub struct Workspace {
    pub config: RunConfig,
    pub verbalizer: Verbalizer,
    pub templates: Vec<Template>,
    pub eval: Vec<Instance>,
    pub eval_gold: Vec<usize>,
    /// Present when `train_dataset` is configured.
    pub train: Option<(Vec<Instance>, Vec<usize>)>,
    scores_dir: PathBuf,
}

impl Workspace {
    pub fn open(config: RunConfig) -> Result<Self> {
        let verbalizer = Verbalizer::read_file(required(&config.verbalizer, "verbalizer")?)?;
        let templates = load_template_registry(required(&config.templates, "templates")?)?;
        let k = Some(verbalizer.n_classes());
        let eval = load_dataset(required(&config.dataset, "dataset")?, k)?;
        let eval_gold = gold_labels(&eval).context("evaluation instances must be labeled")?;
        let train = match &config.train_dataset {
            Some(p) => {
                let instances = load_dataset(p, k)?;
                // an unlabeled pool still serves as a support set
                let labels = gold_labels(&instances).unwrap_or_default();
                Some((instances, labels))
            }
            None => None,
        };
        let scores_dir = required(&config.scores_dir, "scores_dir")?.to_path_buf();
        Ok(Self {
            config,
            verbalizer,
            templates,
            eval,
            eval_gold,
            train,
            scores_dir,
        })
    }

    pub fn scores(&self, template: &Template, split: Split) -> Result<ScoreMatrix> {
        let dir = self.scores_dir.join(&template.template_id);
        let (manifest, matrix) = (
            dir.join(format!("{}.json", split.stem())),
            dir.join(format!("{}.kpts", split.stem())),
        );
        if !matrix.exists() {
            bail!(
                "missing {} score matrix for template {}",
                split.stem(),
                template.template_id
            );
        }
        let m = load_score_matrix(&manifest, &matrix)?;
        let expected = match split {
            Split::Test => Some(self.eval.len()),
            Split::Train => self.train.as_ref().map(|(t, _)| t.len()),
            Split::ContextFree => Some(1),
        };
        if let Some(n) = expected {
            if m.n_rows() != n {
                bail!(
                    "{} has {} rows but the matching dataset has {n} instances",
                    matrix.display(),
                    m.n_rows()
                );
            }
        }
        Ok(m)
    }

    /// The verbalizer bound to one template's manifest, with multi-piece words
    /// dropped when `single_token` is set.
    pub fn verbalizer_for(&self, matrix: &ScoreMatrix) -> Result<Verbalizer> {
        if self.config.single_token.unwrap_or(false) {
            let r = restrict_single_token(&self.verbalizer, matrix.manifest())?;
            Ok(r.verbalizer)
        } else {
            Ok(bind(&self.verbalizer, matrix.manifest())?)
        }
    }

    pub fn train_gold(&self) -> Result<&[usize]> {
        match &self.train {
            Some((instances, labels)) if labels.len() == instances.len() => Ok(labels),
            Some(_) => bail!("train_dataset must be labeled for few-shot training"),
            None => Err(usage("`train_dataset` is not set in the config or on the command line")),
        }
    }
}

/// Word scores backing a prior: `size` rows of the train pool, or the
/// context-free row when `size` is 0.
pub enum SupportRows {
    Rows(WordScoreMatrix),
    ContextFree(WordScoreMatrix),
}

impl SupportRows {
    pub fn load(ws: &Workspace, template: &Template, v: &Verbalizer, size: usize, seed: u64) -> Result<Self> {
        if size == 0 {
            let row = ws.scores(template, Split::ContextFree)?;
            return Ok(SupportRows::ContextFree(word_scores(&row, v)?));
        }
        if ws.train.is_none() {
            return Err(usage("`train_dataset` is needed to draw a support set"));
        }
        let pool = word_scores(&ws.scores(template, Split::Train)?, v)?;
        let rows = sample_support(pool.n_rows(), size, seed)?;
        Ok(SupportRows::Rows(pool.select_rows(&rows)))
    }

    pub fn support(&self) -> Support<'_> {
        match self {
            SupportRows::Rows(m) => Support::Rows(m),
            SupportRows::ContextFree(m) => Support::ContextFree(m),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub guid: String,
    pub predicted_label: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_distribution: Option<Vec<f64>>,
}

pub fn predictions_jsonl(instances: &[Instance], predictions: &[usize], dist: Option<&LabelDistribution>) -> String {
    let mut out = String::new();
    for (i, (inst, &p)) in instances.iter().zip(predictions).enumerate() {
        let rec = PredictionRecord {
            guid: inst.guid.clone(),
            predicted_label: p,
            label_distribution: dist.map(|d| d.row(i).to_vec()),
        };
        out.push_str(&serde_json::to_string(&rec).expect("prediction record serializes"));
        out.push('\n');
    }
    out
}

pub fn parse_predictions(text: &str) -> Result<Vec<PredictionRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("prediction line {}", i + 1)))
        .collect()
}

pub fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

/// One unit of fan-out work.
#[derive(Debug, Clone)]
pub struct Job<'a> {
    pub template: &'a Template,
    pub seed: u64,
}

impl Job<'_> {
    pub fn dir(&self, root: &Path) -> PathBuf {
        root.join(&self.template.template_id)
            .join(format!("seed-{}", self.seed))
    }
}

pub fn jobs<'a>(templates: &'a [Template], seeds: &[u64]) -> Vec<Job<'a>> {
    templates
        .iter()
        .flat_map(|template| seeds.iter().map(move |&seed| Job { template, seed }))
        .collect()
}

/// Runs every job on the worker pool. Results keep job order, so the
/// aggregation that follows is independent of scheduling.
pub fn fan_out<T: Send>(jobs: &[Job<'_>], f: impl Fn(&Job<'_>) -> Result<T> + Sync) -> Vec<Result<T>> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        jobs.par_iter().map(&f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        jobs.iter().map(f).collect()
    }
}

/// Splits fan-out results; failures are reported as `(template, seed): error`.
pub fn partition<T>(jobs: &[Job<'_>], results: Vec<Result<T>>) -> (Vec<T>, Vec<String>) {
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for (job, r) in jobs.iter().zip(results) {
        match r {
            Ok(v) => ok.push(v),
            Err(e) => failed.push(format!("({}, seed {}): {e:#}", job.template.template_id, job.seed)),
        }
    }
    (ok, failed)
}

pub fn fail_if_any(failed: &[String]) -> Result<()> {
    if failed.is_empty() {
        return Ok(());
    }
    bail!("{} run(s) failed:\n  {}", failed.len(), failed.join("\n  "))
}
