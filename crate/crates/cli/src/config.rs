//! Run configuration: a TOML file whose keys are mirrored one-to-one by
//! command-line flags. Relative paths resolve against the config file's
//! directory; paths given on the command line resolve against the working
//! directory.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use kpt_core::refine::RelevanceParams;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Evaluation instances (JSON Lines).
    pub dataset: Option<PathBuf>,
    /// Unlabeled support pool and few-shot training pool.
    pub train_dataset: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    pub verbalizer: Option<PathBuf>,
    /// Holds `<template_id>/{test,train,context_free}.{json,kpts}`.
    pub scores_dir: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub classes: Option<PathBuf>,
    pub kb: Option<PathBuf>,
    pub lexicon_positive: Option<PathBuf>,
    pub lexicon_negative: Option<PathBuf>,
    pub enable_fr: Option<bool>,
    pub enable_rr: Option<bool>,
    pub enable_cc: Option<bool>,
    pub enable_lr: Option<bool>,
    pub single_token: Option<bool>,
    pub eta: Option<f64>,
    pub support_size: Option<usize>,
    pub shot: Option<usize>,
    pub seeds: Option<Vec<u64>>,
    pub c: Option<f64>,
    pub epsilon: Option<f64>,
    pub learning_rate: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
}

pub const DEFAULT_SUPPORT_SIZE: usize = 200;

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: RunConfig = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in cfg.paths_mut().into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    fn paths_mut(&mut self) -> [&mut Option<PathBuf>; 10] {
        [
            &mut self.dataset,
            &mut self.train_dataset,
            &mut self.templates,
            &mut self.verbalizer,
            &mut self.scores_dir,
            &mut self.output_dir,
            &mut self.classes,
            &mut self.kb,
            &mut self.lexicon_positive,
            &mut self.lexicon_negative,
        ]
    }

    /// Values set in `other` win.
    pub fn merge(mut self, other: RunConfig) -> Self {
        macro_rules! take {
            ($($f:ident),*) => { $( if other.$f.is_some() { self.$f = other.$f; } )* };
        }
        take!(
            dataset,
            train_dataset,
            templates,
            verbalizer,
            scores_dir,
            output_dir,
            classes,
            kb,
            lexicon_positive,
            lexicon_negative,
            enable_fr,
            enable_rr,
            enable_cc,
            enable_lr,
            single_token,
            eta,
            support_size,
            shot,
            seeds,
            c,
            epsilon,
            learning_rate,
            epochs,
            batch_size
        );
        self
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output_dir.clone().unwrap_or_else(|| PathBuf::from("kpt-out"))
    }

    pub fn support_size(&self) -> usize {
        self.support_size.unwrap_or(DEFAULT_SUPPORT_SIZE)
    }

    pub fn seeds(&self) -> Vec<u64> {
        self.seeds.clone().unwrap_or_else(|| vec![1])
    }

    pub fn relevance(&self) -> RelevanceParams {
        let d = RelevanceParams::default();
        RelevanceParams {
            c: self.c.unwrap_or(d.c),
            epsilon: self.epsilon.unwrap_or(d.epsilon),
        }
    }
}

/// Flags shared by every pipeline command, one per config key.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub train_dataset: Option<PathBuf>,
    #[arg(long)]
    pub templates: Option<PathBuf>,
    #[arg(long)]
    pub verbalizer: Option<PathBuf>,
    #[arg(long)]
    pub scores_dir: Option<PathBuf>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub support_size: Option<usize>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Scale of the relevance power-mean exponent.
    #[arg(long)]
    pub c: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Drop label words that span several tokenizer pieces.
    #[arg(long)]
    pub single_token: bool,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let file = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        Ok(file.merge(RunConfig {
            dataset: self.dataset.clone(),
            train_dataset: self.train_dataset.clone(),
            templates: self.templates.clone(),
            verbalizer: self.verbalizer.clone(),
            scores_dir: self.scores_dir.clone(),
            output_dir: self.output_dir.clone(),
            support_size: self.support_size,
            seeds: self.seeds.clone(),
            c: self.c,
            epsilon: self.epsilon,
            single_token: self.single_token.then_some(true),
            ..Default::default()
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_paths_follow_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(
            &path,
            "dataset = \"data/test.jsonl\"\nkb = \"/abs/graph.tsv\"\nseeds = [3, 4]\n",
        )
        .unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        assert_eq!(cfg.dataset.unwrap(), dir.path().join("data/test.jsonl"));
        assert_eq!(cfg.kb.unwrap(), PathBuf::from("/abs/graph.tsv"));
        assert_eq!(cfg.seeds.unwrap(), [3, 4]);
    }

    #[test]
    fn flags_override_file_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "support_size = 50\nc = 4.0\n").unwrap();
        let args = ConfigArgs {
            config: Some(path),
            support_size: Some(10),
            ..Default::default()
        };
        let cfg = args.resolve().unwrap();
        assert_eq!(cfg.support_size(), 10);
        assert_eq!(cfg.relevance().c, 4.0);
        assert_eq!(RunConfig::default().support_size(), 200);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "support = 50\n").unwrap();
        assert!(RunConfig::load(&path).is_err());
    }
}
