//! Commands that read finished runs: scoring prediction files and rendering reports.

use std::collections::HashMap;
use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;

use kpt_core::eval::{aggregate_all, micro_f1, parse_results_csv, refinement_report, render_table};
use kpt_core::refine::RefinementDiagnostics;
use kpt_core::scorer::load_dataset;

use crate::workspace::{parse_predictions, write};

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Labeled instances the predictions refer to.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Prediction files (JSON Lines of `{guid, predicted_label}`).
    #[arg(long, required = true, num_args = 1..)]
    pub predictions: Vec<PathBuf>,
}

/// Prints `path<TAB>micro_f1` for each predictions file.
pub fn eval(args: &EvalArgs) -> Result<()> {
    let instances = load_dataset(&args.dataset, None)?;
    let gold: HashMap<&str, usize> = instances
        .iter()
        .map(|i| {
            let label = i.label.with_context(|| format!("instance {} has no label", i.guid))?;
            Ok((i.guid.as_str(), label))
        })
        .collect::<Result<_>>()?;
    for path in &args.predictions {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let records = parse_predictions(&text).with_context(|| format!("parsing {}", path.display()))?;
        if records.len() != gold.len() {
            bail!(
                "{} has {} predictions for {} instances",
                path.display(),
                records.len(),
                gold.len()
            );
        }
        let mut pred = Vec::with_capacity(records.len());
        let mut truth = Vec::with_capacity(records.len());
        for r in &records {
            let g = gold
                .get(r.guid.as_str())
                .with_context(|| format!("{}: unknown guid {}", path.display(), r.guid))?;
            pred.push(r.predicted_label);
            truth.push(*g);
        }
        println!("{}\t{:.4}", path.display(), micro_f1(&pred, &truth)?);
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Results CSVs written by zero-shot or train.
    #[arg(long, num_args = 1..)]
    pub results: Vec<PathBuf>,
    /// Refinement diagnostics sidecars to summarize as per-stage word counts.
    #[arg(long, num_args = 1..)]
    pub diagnostics: Vec<PathBuf>,
    /// Also write the rendered table here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the aggregated reports as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

pub fn report(args: &ReportArgs) -> Result<()> {
    if args.results.is_empty() && args.diagnostics.is_empty() {
        bail!(crate::workspace::UsageError(
            "report needs --results or --diagnostics".into()
        ));
    }
    if !args.results.is_empty() {
        let mut runs = Vec::new();
        for path in &args.results {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            runs.extend(parse_results_csv(&text).with_context(|| format!("parsing {}", path.display()))?);
        }
        let reports = aggregate_all(&runs)?;
        let table = render_table(&reports);
        print!("{table}");
        if let Some(out) = &args.out {
            write(out, &table)?;
        }
        if let Some(json) = &args.json {
            write(json, serde_json::to_string_pretty(&reports)? + "\n")?;
        }
    }
    for path in &args.diagnostics {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let counts = refinement_report(&RefinementDiagnostics::from_json(&text)?);
        println!("# {}", path.display());
        print!("{}", counts.to_csv());
    }
    Ok(())
}
