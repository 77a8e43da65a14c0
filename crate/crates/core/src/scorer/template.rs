//! Prompt templates.
//!
//! A pattern holds one `[MASK]` and input slots: `{a}`, `{b}`, and `{a~}`
//! (text_a with its trailing punctuation removed, used by title-based
//! templates).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dataset::Instance;
use crate::error::{KptError, Result};

pub const MASK: &str = "[MASK]";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Template {
    pub template_id: String,
    pub pattern: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    A,
    ATrimmed,
    B,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment<'a> {
    Text(&'a str),
    Slot(Slot),
}

fn segments(pattern: &str) -> Vec<Segment<'_>> {
    const SLOTS: [(&str, Slot); 3] = [("{a}", Slot::A), ("{a~}", Slot::ATrimmed), ("{b}", Slot::B)];
    let mut out = Vec::new();
    let mut rest = pattern;
    'outer: while !rest.is_empty() {
        let mut next: Option<(usize, &str, Slot)> = None;
        for (tok, slot) in SLOTS {
            if let Some(pos) = rest.find(tok) {
                if next.is_none_or(|(p, _, _)| pos < p) {
                    next = Some((pos, tok, slot));
                }
            }
        }
        match next {
            Some((pos, tok, slot)) => {
                if pos > 0 {
                    out.push(Segment::Text(&rest[..pos]));
                }
                out.push(Segment::Slot(slot));
                rest = &rest[pos + tok.len()..];
            }
            None => {
                out.push(Segment::Text(rest));
                break 'outer;
            }
        }
    }
    out
}

fn strip_trailing_punctuation(text: &str) -> &str {
    let trimmed = text.trim_end();
    match trimmed.chars().last() {
        Some(c) if c.is_ascii_punctuation() => trimmed[..trimmed.len() - c.len_utf8()].trim_end(),
        _ => trimmed,
    }
}

impl Template {
    pub fn new(template_id: &str, pattern: &str) -> Result<Self> {
        let t = Self {
            template_id: template_id.to_string(),
            pattern: pattern.to_string(),
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |reason: &str| KptError::InvalidTemplate {
            id: self.template_id.clone(),
            reason: reason.to_string(),
        };
        if self.pattern.matches(MASK).count() != 1 {
            return Err(invalid("pattern must contain exactly one [MASK]"));
        }
        if !segments(&self.pattern).iter().any(|s| matches!(s, Segment::Slot(_))) {
            return Err(invalid("pattern must contain at least one input slot"));
        }
        Ok(())
    }

    pub fn needs_text_b(&self) -> bool {
        segments(&self.pattern).contains(&Segment::Slot(Slot::B))
    }

    /// Substitutes the instance into the pattern. `[MASK]` is kept verbatim and
    /// slot markers inside the inserted text are not expanded.
    pub fn wrap(&self, instance: &Instance) -> Result<String> {
        self.wrap_texts(&instance.text_a, instance.text_b.as_deref())
    }

    pub fn wrap_texts(&self, text_a: &str, text_b: Option<&str>) -> Result<String> {
        let mut out = String::with_capacity(self.pattern.len() + text_a.len());
        for seg in segments(&self.pattern) {
            match seg {
                Segment::Text(t) => out.push_str(t),
                Segment::Slot(Slot::A) => out.push_str(text_a),
                Segment::Slot(Slot::ATrimmed) => out.push_str(strip_trailing_punctuation(text_a)),
                Segment::Slot(Slot::B) => {
                    out.push_str(text_b.ok_or_else(|| KptError::MissingTextB(self.template_id.clone()))?)
                }
            }
        }
        Ok(out)
    }
}

pub fn parse_template_registry(json: &str) -> Result<Vec<Template>> {
    let templates: Vec<Template> = serde_json::from_str(json)?;
    let mut ids = std::collections::HashSet::new();
    for t in &templates {
        t.validate()?;
        if !ids.insert(t.template_id.as_str()) {
            return Err(KptError::InvalidTemplate {
                id: t.template_id.clone(),
                reason: "duplicate template id".into(),
            });
        }
    }
    Ok(templates)
}

pub fn load_template_registry(path: impl AsRef<Path>) -> Result<Vec<Template>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| KptError::io(path, e))?;
    parse_template_registry(&text)
}

const DEFAULTS: &[(&str, &str)] = &[
    ("agnews-1", "A [MASK] news : {a}"),
    ("agnews-2", "{a} This topic is about [MASK]."),
    ("agnews-3", "[ Category : [MASK] ] {a}"),
    ("agnews-4", "[ Topic : [MASK] ] {a}"),
    ("dbpedia-1", "{a} {b} {a~} is a [MASK] ."),
    ("dbpedia-2", "{a} {b} In this sentence, {a~} is a [MASK] ."),
    ("dbpedia-3", "{a} {b} The type of {a~} is [MASK] ."),
    ("dbpedia-4", "{a} {b} The category of {a~} is [MASK] ."),
    ("yahoo-1", "A [MASK] question : {a}"),
    ("yahoo-2", "{a} This topic is about [MASK]."),
    ("yahoo-3", "[ Category : [MASK] ] {a}"),
    ("yahoo-4", "[ Topic : [MASK] ] {a}"),
    ("imdb-1", "It was [MASK] . {a}"),
    ("imdb-2", "Just [MASK] ! {a}"),
    ("imdb-3", "{a} All in all, it was [MASK] ."),
    ("imdb-4", "{a} In summary, the film was [MASK] ."),
    ("amazon-1", "It was [MASK] . {a}"),
    ("amazon-2", "Just [MASK] ! {a}"),
    ("amazon-3", "{a} All in all, it was [MASK] ."),
    ("amazon-4", "{a} In summary, it was [MASK] ."),
];

/// The four manual templates for each of the five benchmark datasets.
pub fn default_templates() -> Vec<Template> {
    DEFAULTS
        .iter()
        .map(|(id, p)| Template::new(id, p).expect("built-in template is valid"))
        .collect()
}

/// Built-in templates whose id starts with `dataset` (e.g. `"agnews"`).
pub fn default_templates_for(dataset: &str) -> Vec<Template> {
    let prefix = format!("{dataset}-");
    default_templates()
        .into_iter()
        .filter(|t| t.template_id.starts_with(&prefix))
        .collect()
}
