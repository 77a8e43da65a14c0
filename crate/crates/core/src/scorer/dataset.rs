use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{KptError, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instance {
    pub guid: String,
    pub text_a: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_b: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
}

/// Parses JSON Lines. `n_classes`, when given, bounds the labels.
pub fn parse_dataset(text: &str, n_classes: Option<usize>) -> Result<Vec<Instance>> {
    let mut out = Vec::new();
    let mut guids = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: String| KptError::InvalidInstance { line: i + 1, reason };
        let inst: Instance = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        if inst.text_a.is_empty() {
            return Err(bad("text_a is empty".into()));
        }
        if let (Some(label), Some(n)) = (inst.label, n_classes) {
            if label >= n {
                return Err(bad(format!("label {label} out of range for {n} classes")));
            }
        }
        if !guids.insert(inst.guid.clone()) {
            return Err(bad(format!("duplicate guid {:?}", inst.guid)));
        }
        out.push(inst);
    }
    Ok(out)
}

pub fn load_dataset(path: impl AsRef<Path>, n_classes: Option<usize>) -> Result<Vec<Instance>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| KptError::io(path, e))?;
    parse_dataset(&text, n_classes)
}

pub fn dataset_to_string(instances: &[Instance]) -> String {
    let mut out = String::new();
    for inst in instances {
        out.push_str(&serde_json::to_string(inst).expect("instance serializes"));
        out.push('\n');
    }
    out
}

/// Gold labels, failing if any instance is unlabeled.
pub fn gold_labels(instances: &[Instance]) -> Result<Vec<usize>> {
    instances
        .iter()
        .enumerate()
        .map(|(i, inst)| {
            inst.label.ok_or_else(|| KptError::InvalidInstance {
                line: i + 1,
                reason: format!("instance {:?} has no label", inst.guid),
            })
        })
        .collect()
}
