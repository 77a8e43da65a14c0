use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod config;
mod construct;
mod report;
mod runs;
mod workspace;

/// Knowledgeable verbalizer experiments over precomputed masked-LM scores.
#[derive(Debug, Parser)]
#[command(name = "kpt", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a verbalizer from class names and a knowledge source.
    Construct(construct::ConstructArgs),
    /// Estimate contextualized priors on the support set.
    Prior(runs::PriorArgs),
    /// Apply frequency and relevance refinement and record every decision.
    Refine(runs::RefineArgs),
    /// Zero-shot classification for every template and seed.
    ZeroShot(runs::ZeroShotArgs),
    /// Few-shot training of verbalizer weights for every template and seed.
    Train(runs::TrainArgs),
    /// Score prediction files against a labeled dataset.
    Eval(report::EvalArgs),
    /// Zero-shot accuracy as a function of support-set size.
    Sweep(runs::SweepArgs),
    /// Aggregate results CSVs and refinement diagnostics.
    Report(report::ReportArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Construct(a) => construct::run(a),
        Command::Prior(a) => runs::prior(a),
        Command::Refine(a) => runs::refine(a),
        Command::ZeroShot(a) => runs::zero_shot_cmd(a),
        Command::Train(a) => runs::train(a),
        Command::Eval(a) => report::eval(a),
        Command::Sweep(a) => runs::sweep(a),
        Command::Report(a) => report::report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<workspace::UsageError>() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
