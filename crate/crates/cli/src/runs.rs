//! Commands that fan out over (template, seed) pairs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::Result;
use clap::Args;
use serde::Serialize;

use kpt_core::eval::{
    aggregate_all, micro_f1, refinement_report, render_table, results_to_csv, support_sweep, RunResult, SweepData,
    SweepPoint,
};
use kpt_core::kbstore::weights_to_string;
use kpt_core::pipeline::{few_shot, refine_verbalizer, zero_shot, FewShotData, FewShotFlags, ZeroShotFlags};
use kpt_core::refine::contextualized_prior;
use kpt_core::scorer::{word_scores, WordScoreMatrix};
use kpt_core::train::{sample_few_shot, EpochRecord, TrainConfig};
use kpt_core::Execution;

use crate::config::{ConfigArgs, RunConfig};
use crate::workspace::{
    fail_if_any, fan_out, jobs, partition, predictions_jsonl, usage, write, Job, Split, SupportRows, Workspace,
};

/// Each run is already one worker; rows within it stay sequential.
const INNER: Execution = Execution::Sequential;

#[derive(Debug, Args)]
pub struct PriorArgs {
    #[command(flatten)]
    pub common: ConfigArgs,
}

/// Writes `word<TAB>prior` per (template, seed).
pub fn prior(args: &PriorArgs) -> Result<()> {
    let ws = Workspace::open(args.common.resolve()?)?;
    let out = ws.config.output_dir().join("prior");
    let seeds = ws.config.seeds();
    let jobs = jobs(&ws.templates, &seeds);
    let results = fan_out(&jobs, |job| {
        let test = ws.scores(job.template, Split::Test)?;
        let v = ws.verbalizer_for(&test)?;
        let support = SupportRows::load(&ws, job.template, &v, ws.config.support_size(), job.seed)?;
        let values = match &support {
            SupportRows::Rows(m) => contextualized_prior(m)?.values().to_vec(),
            SupportRows::ContextFree(m) => m.row(0).to_vec(),
        };
        let mut text = String::from("word\tprior\n");
        for ((_, w), p) in v.flat_words().zip(values) {
            writeln!(text, "{}\t{p:?}", w.surface)?;
        }
        write(&job.dir(&out).join("prior.tsv"), text)
    });
    let (_, failed) = partition(&jobs, results);
    fail_if_any(&failed)
}

#[derive(Debug, Args)]
pub struct RefineArgs {
    #[command(flatten)]
    pub common: ConfigArgs,
    #[arg(long)]
    pub no_fr: bool,
    #[arg(long)]
    pub no_rr: bool,
}

/// Writes the refined verbalizer, its diagnostics, and per-stage word counts.
pub fn refine(args: &RefineArgs) -> Result<()> {
    let mut cfg = args.common.resolve()?;
    override_flag(&mut cfg.enable_fr, args.no_fr, false);
    override_flag(&mut cfg.enable_rr, args.no_rr, false);
    let ws = Workspace::open(cfg)?;
    let (fr, rr) = (ws.config.enable_fr.unwrap_or(true), ws.config.enable_rr.unwrap_or(true));
    let out = ws.config.output_dir().join("refine");
    let seeds = ws.config.seeds();
    let jobs = jobs(&ws.templates, &seeds);
    let results = fan_out(&jobs, |job| {
        let test = ws.scores(job.template, Split::Test)?;
        let v = ws.verbalizer_for(&test)?;
        let support = SupportRows::load(&ws, job.template, &v, ws.config.support_size(), job.seed)?;
        let r = refine_verbalizer(&v, support.support(), fr, rr, ws.config.relevance())?;
        let dir = job.dir(&out);
        write(&dir.join("verbalizer.txt"), r.verbalizer.to_file_string()?)?;
        write(&dir.join("diagnostics.json"), r.diagnostics.to_json() + "\n")?;
        write(
            &dir.join("stage_counts.csv"),
            refinement_report(&r.diagnostics).to_csv(),
        )
    });
    let (_, failed) = partition(&jobs, results);
    fail_if_any(&failed)
}

fn override_flag(slot: &mut Option<bool>, set: bool, value: bool) {
    if set {
        *slot = Some(value);
    }
}

#[derive(Debug, Args)]
pub struct ZeroShotArgs {
    #[command(flatten)]
    pub common: ConfigArgs,
    #[arg(long)]
    pub no_fr: bool,
    #[arg(long)]
    pub no_rr: bool,
    #[arg(long)]
    pub no_cc: bool,
}

pub fn zero_shot_cmd(args: &ZeroShotArgs) -> Result<()> {
    let mut cfg = args.common.resolve()?;
    override_flag(&mut cfg.enable_fr, args.no_fr, false);
    override_flag(&mut cfg.enable_rr, args.no_rr, false);
    override_flag(&mut cfg.enable_cc, args.no_cc, false);
    let ws = Workspace::open(cfg)?;
    let flags = ZeroShotFlags {
        frequency: ws.config.enable_fr.unwrap_or(true),
        relevance: ws.config.enable_rr.unwrap_or(true),
        calibration: ws.config.enable_cc.unwrap_or(true),
    };
    let variant = flags.variant(&ws.verbalizer);
    let out = ws.config.output_dir().join("zero-shot").join(&variant);
    let needs_prior = flags.frequency || flags.relevance || flags.calibration;
    let seeds = ws.config.seeds();
    let jobs = jobs(&ws.templates, &seeds);
    let results = fan_out(&jobs, |job| {
        let test = ws.scores(job.template, Split::Test)?;
        let v = ws.verbalizer_for(&test)?;
        let eval = word_scores(&test, &v)?;
        let support = if needs_prior {
            Some(SupportRows::load(
                &ws,
                job.template,
                &v,
                ws.config.support_size(),
                job.seed,
            )?)
        } else {
            None
        };
        let support = support
            .as_ref()
            .map_or(kpt_core::pipeline::Support::None, SupportRows::support);
        let outcome = zero_shot(&v, support, &eval, flags, ws.config.relevance(), INNER)?;
        let dir = job.dir(&out);
        write(
            &dir.join("predictions.jsonl"),
            predictions_jsonl(&ws.eval, &outcome.predictions, None),
        )?;
        write(
            &dir.join("verbalizer.txt"),
            outcome.refinement.verbalizer.to_file_string()?,
        )?;
        write(
            &dir.join("diagnostics.json"),
            outcome.refinement.diagnostics.to_json() + "\n",
        )?;
        Ok(run_result(
            &variant,
            0,
            job,
            micro_f1(&outcome.predictions, &ws.eval_gold)?,
        ))
    });
    finish(&out, &jobs, results)
}

fn run_result(variant: &str, shot: usize, job: &Job<'_>, micro_f1: f64) -> RunResult {
    RunResult {
        variant: variant.to_string(),
        shot,
        template_id: job.template.template_id.clone(),
        seed: job.seed,
        micro_f1,
    }
}

/// Writes the results CSV and report for the runs that completed, then fails
/// if any did not.
fn finish(out: &Path, jobs: &[Job<'_>], results: Vec<Result<RunResult>>) -> Result<()> {
    let (ok, failed) = partition(jobs, results);
    if !ok.is_empty() {
        write(&out.join("results.csv"), results_to_csv(&ok))?;
        let table = render_table(&aggregate_all(&ok)?);
        write(&out.join("report.txt"), &table)?;
        print!("{table}");
    }
    fail_if_any(&failed)
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: ConfigArgs,
    /// Labeled instances per class for training (and again for validation).
    #[arg(long)]
    pub shot: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Uniform weights within each class instead of learned ones.
    #[arg(long)]
    pub no_lr: bool,
    #[arg(long)]
    pub no_rr: bool,
    #[arg(long)]
    pub cc: bool,
    #[arg(long)]
    pub fr: bool,
}

#[derive(Serialize)]
struct RunManifest<'a> {
    template_id: &'a str,
    seed: u64,
    variant: &'a str,
    flags: FewShotFlags,
    config: &'a RunConfig,
    train: &'a TrainConfig,
    support_size: usize,
    history: &'a [EpochRecord],
    best_epoch: Option<usize>,
    test_micro_f1: f64,
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let mut cfg = args.common.resolve()?;
    override_flag(&mut cfg.enable_lr, args.no_lr, false);
    override_flag(&mut cfg.enable_rr, args.no_rr, false);
    override_flag(&mut cfg.enable_cc, args.cc, true);
    override_flag(&mut cfg.enable_fr, args.fr, true);
    cfg = cfg.merge(RunConfig {
        shot: args.shot,
        learning_rate: args.learning_rate,
        epochs: args.epochs,
        batch_size: args.batch_size,
        ..Default::default()
    });
    let shot = match cfg.shot {
        None => return Err(usage("train needs --shot (or `shot` in the config)")),
        Some(0) => return Err(usage("train needs shot >= 1; use zero-shot for shot 0")),
        Some(k) => k,
    };
    let defaults = TrainConfig::default();
    let base = TrainConfig {
        k_shot: shot,
        epochs: cfg.epochs.unwrap_or(defaults.epochs),
        seed: 0,
        learning_rate: cfg.learning_rate.unwrap_or(defaults.learning_rate),
        batch_size: cfg.batch_size,
    };
    base.validate().map_err(|e| usage(e.to_string()))?;
    let ws = Workspace::open(cfg)?;
    let train_gold = ws.train_gold()?.to_vec();
    let flags = FewShotFlags {
        learnable: ws.config.enable_lr.unwrap_or(true),
        relevance: ws.config.enable_rr.unwrap_or(true),
        calibration: ws.config.enable_cc.unwrap_or(false),
        frequency: ws.config.enable_fr.unwrap_or(false),
    };
    let variant = flags.variant();
    let out = ws
        .config
        .output_dir()
        .join("train")
        .join(&variant)
        .join(format!("shot-{shot}"));
    let needs_support = flags.relevance || flags.calibration || flags.frequency;
    let seeds = ws.config.seeds();
    let jobs = jobs(&ws.templates, &seeds);
    let results = fan_out(&jobs, |job| {
        let config = TrainConfig {
            seed: job.seed,
            ..base.clone()
        };
        let test = ws.scores(job.template, Split::Test)?;
        let v = ws.verbalizer_for(&test)?;
        let pool = word_scores(&ws.scores(job.template, Split::Train)?, &v)?;
        let split = sample_few_shot(&train_gold, v.n_classes(), shot, job.seed)?;
        let support = if needs_support {
            Some(SupportRows::load(
                &ws,
                job.template,
                &v,
                ws.config.support_size(),
                job.seed,
            )?)
        } else {
            None
        };
        let support_rows: Option<&WordScoreMatrix> = match &support {
            Some(SupportRows::Rows(m)) => Some(m),
            Some(SupportRows::ContextFree(_)) => {
                return Err(usage("few-shot refinement needs support_size >= 1"));
            }
            None => None,
        };
        let labels = |idx: &[usize]| idx.iter().map(|&i| train_gold[i]).collect::<Vec<_>>();
        let (tg, vg) = (labels(&split.train), labels(&split.validation));
        let test_scores = word_scores(&test, &v)?;
        let data = FewShotData {
            support: support_rows,
            train: &pool.select_rows(&split.train),
            train_gold: &tg,
            validation: &pool.select_rows(&split.validation),
            validation_gold: &vg,
            test: &test_scores,
        };
        let outcome = few_shot(&v, data, flags, ws.config.relevance(), &config, INNER)?;
        let f1 = micro_f1(&outcome.predictions, &ws.eval_gold)?;
        let dir = job.dir(&out);
        write(
            &dir.join("predictions.jsonl"),
            predictions_jsonl(&ws.eval, &outcome.predictions, Some(&outcome.distribution)),
        )?;
        write(
            &dir.join("verbalizer.txt"),
            outcome.refinement.verbalizer.to_file_string()?,
        )?;
        write(&dir.join("weights.txt"), weights_to_string(outcome.weights.as_slice()))?;
        write(
            &dir.join("diagnostics.json"),
            outcome.refinement.diagnostics.to_json() + "\n",
        )?;
        let manifest = RunManifest {
            template_id: &job.template.template_id,
            seed: job.seed,
            variant: &variant,
            flags,
            config: &ws.config,
            train: &config,
            support_size: ws.config.support_size(),
            history: outcome.training.as_ref().map_or(&[], |t| &t.history),
            best_epoch: outcome.training.as_ref().map(|t| t.best_epoch),
            test_micro_f1: f1,
        };
        write(&dir.join("run.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(run_result(&variant, shot, job, f1))
    });
    finish(&out, &jobs, results)
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: ConfigArgs,
    /// Ascending support sizes; 0 uses the context-free prior row.
    #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true, value_parser = parse_size)]
    pub sizes: Vec<usize>,
    #[arg(long)]
    pub no_fr: bool,
    #[arg(long)]
    pub no_rr: bool,
    #[arg(long)]
    pub no_cc: bool,
}

fn parse_size(s: &str) -> std::result::Result<usize, String> {
    s.trim()
        .parse::<i64>()
        .map_err(|e| format!("`{s}` is not an integer: {e}"))
        .and_then(|v| usize::try_from(v).map_err(|_| format!("support size must be non-negative, got {v}")))
}

/// Writes per-run points and the mean curve over templates and seeds.
pub fn sweep(args: &SweepArgs) -> Result<()> {
    if args.sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(usage("sweep sizes must be strictly ascending"));
    }
    let mut cfg = args.common.resolve()?;
    override_flag(&mut cfg.enable_fr, args.no_fr, false);
    override_flag(&mut cfg.enable_rr, args.no_rr, false);
    override_flag(&mut cfg.enable_cc, args.no_cc, false);
    let ws = Workspace::open(cfg)?;
    if ws.train.is_none() && args.sizes.iter().any(|&s| s > 0) {
        return Err(usage("`train_dataset` is needed to draw support sets"));
    }
    let flags = ZeroShotFlags {
        frequency: ws.config.enable_fr.unwrap_or(true),
        relevance: ws.config.enable_rr.unwrap_or(true),
        calibration: ws.config.enable_cc.unwrap_or(true),
    };
    let out = ws.config.output_dir().join("sweep").join(flags.variant(&ws.verbalizer));
    let seeds = ws.config.seeds();
    let jobs = jobs(&ws.templates, &seeds);
    let results = fan_out(&jobs, |job| -> Result<Vec<SweepPoint>> {
        let test = ws.scores(job.template, Split::Test)?;
        let v = ws.verbalizer_for(&test)?;
        let eval = word_scores(&test, &v)?;
        let pool = if args.sizes.iter().any(|&s| s > 0) {
            word_scores(&ws.scores(job.template, Split::Train)?, &v)?
        } else {
            // an empty pool; only the context-free point is requested
            eval.select_rows(&[])
        };
        let context_free = if args.sizes.first() == Some(&0) {
            Some(word_scores(&ws.scores(job.template, Split::ContextFree)?, &v)?)
        } else {
            None
        };
        let data = SweepData {
            verbalizer: &v,
            pool: &pool,
            eval: &eval,
            gold: &ws.eval_gold,
            context_free: context_free.as_ref(),
        };
        Ok(support_sweep(
            &args.sizes,
            data,
            flags,
            ws.config.relevance(),
            job.seed,
            INNER,
        )?)
    });
    let mut runs = String::from("template,seed,size,micro_f1\n");
    let mut curve: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    let mut failed = Vec::new();
    for (job, r) in jobs.iter().zip(results) {
        match r {
            Ok(points) => {
                for p in points {
                    writeln!(
                        runs,
                        "{},{},{},{:?}",
                        job.template.template_id, job.seed, p.size, p.micro_f1
                    )?;
                    let e = curve.entry(p.size).or_default();
                    e.0 += p.micro_f1;
                    e.1 += 1;
                }
            }
            Err(e) => failed.push(format!("({}, seed {}): {e:#}", job.template.template_id, job.seed)),
        }
    }
    if !curve.is_empty() {
        let mut mean = String::from("size,micro_f1\n");
        for (size, (sum, n)) in &curve {
            writeln!(mean, "{size},{:?}", sum / *n as f64)?;
        }
        write(&out.join("sweep_runs.csv"), runs)?;
        write(&out.join("sweep.csv"), &mean)?;
        print!("{mean}");
    }
    fail_if_any(&failed)
}
