use std::fs;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use serde::Serialize;

use kpt_core::kbstore::{
    construct_verbalizer, load_relatedness_graph, load_sentiment_lexicon, ClassSpec, KnowledgeSources, LexiconLabels,
    SourceKind,
};

use crate::config::RunConfig;
use crate::workspace::{required, usage, write};

#[derive(Debug, Args)]
pub struct ConstructArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// JSON array of `{label_id, class_name, source}`.
    #[arg(long)]
    pub classes: Option<PathBuf>,
    /// Relatedness graph, `source<TAB>target<TAB>score` per line.
    #[arg(long)]
    pub kb: Option<PathBuf>,
    /// Positive sentiment words, one per line.
    #[arg(long)]
    pub lexicon_positive: Option<PathBuf>,
    #[arg(long)]
    pub lexicon_negative: Option<PathBuf>,
    /// Keep graph neighbors scoring strictly above this value.
    #[arg(long, allow_negative_numbers = true)]
    pub eta: Option<f64>,
    /// Verbalizer file to write; a `.construction.json` sidecar goes next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct ConstructionWord {
    surface: String,
    /// Graph relatedness to the class name; absent for the name and lexicon words.
    score: Option<f64>,
}

#[derive(Serialize)]
struct ConstructionClass {
    label_id: usize,
    class_name: String,
    source: SourceKind,
    words: Vec<ConstructionWord>,
}

#[derive(Serialize)]
struct Construction {
    eta: f64,
    classes: Vec<ConstructionClass>,
}

pub fn run(args: &ConstructArgs) -> Result<()> {
    let file = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let cfg = file.merge(RunConfig {
        classes: args.classes.clone(),
        kb: args.kb.clone(),
        lexicon_positive: args.lexicon_positive.clone(),
        lexicon_negative: args.lexicon_negative.clone(),
        eta: args.eta,
        ..Default::default()
    });
    let eta = cfg.eta.unwrap_or(0.0);
    if !eta.is_finite() {
        return Err(usage("eta must be finite"));
    }
    let classes_path = required(&cfg.classes, "classes")?;
    let text = fs::read_to_string(classes_path).with_context(|| format!("reading {}", classes_path.display()))?;
    let specs: Vec<ClassSpec> =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", classes_path.display()))?;

    let uses = |kind: SourceKind| specs.iter().any(|s| s.source == kind);
    let mut sources = KnowledgeSources::default();
    if let Some(kb) = &cfg.kb {
        sources.graph = Some(load_relatedness_graph(kb)?);
    }
    match (&cfg.lexicon_positive, &cfg.lexicon_negative) {
        (Some(p), Some(n)) => sources.lexicon = Some(load_sentiment_lexicon(p, n, LexiconLabels::default())?),
        (None, None) => {}
        _ => return Err(usage("lexicon_positive and lexicon_negative must be given together")),
    }
    if uses(SourceKind::Graph) && sources.graph.is_none() {
        return Err(usage("classes use the graph source but no --kb was given"));
    }
    let verbalizer = construct_verbalizer(&specs, &sources, eta)?;
    verbalizer.write_file(&args.out)?;

    let report = Construction {
        eta,
        classes: verbalizer
            .classes()
            .iter()
            .map(|spec| ConstructionClass {
                label_id: spec.label_id,
                class_name: spec.class_name.clone(),
                source: spec.source,
                words: verbalizer
                    .class_words(spec.label_id)
                    .iter()
                    .map(|w| ConstructionWord {
                        surface: w.surface.clone(),
                        score: match (&sources.graph, spec.source) {
                            (Some(g), SourceKind::Graph) => g.score(&spec.class_name, &w.surface),
                            _ => None,
                        },
                    })
                    .collect(),
            })
            .collect(),
    };
    let sidecar = args.out.with_extension("construction.json");
    write(&sidecar, serde_json::to_string_pretty(&report)? + "\n")?;
    for c in &report.classes {
        println!("{}\t{} words", c.class_name, c.words.len());
    }
    Ok(())
}
