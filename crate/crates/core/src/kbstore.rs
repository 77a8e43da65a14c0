//! Knowledge sources and verbalizer construction.
//!
//! Topic classes expand their class name through a weighted relatedness graph;
//! sentiment classes take their words from a polarity lexicon. In both cases
//! the class name is the first label word of its class and is never removed by
//! later refinement.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{KptError, Result};

/// Lowercases and trims a knowledge-base entry. No stemming.
pub fn normalize_word(word: &str) -> String {
    word.trim().to_lowercase()
}

/// Directed, weighted word-relatedness graph.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KnowledgeGraph {
    nodes: BTreeSet<String>,
    adjacency: BTreeMap<String, BTreeMap<String, f64>>,
    edge_count: usize,
}

impl KnowledgeGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a directed edge. Returns `false` if the pair already exists.
    pub fn insert_edge(&mut self, source: &str, target: &str, score: f64) -> bool {
        let (source, target) = (normalize_word(source), normalize_word(target));
        let row = self.adjacency.entry(source.clone()).or_default();
        if row.contains_key(&target) {
            return false;
        }
        row.insert(target.clone(), score);
        self.nodes.insert(source);
        self.nodes.insert(target);
        self.edge_count += 1;
        true
    }

    pub fn nodes(&self) -> &BTreeSet<String> {
        &self.nodes
    }

    pub fn contains(&self, word: &str) -> bool {
        self.nodes.contains(&normalize_word(word))
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn score(&self, source: &str, target: &str) -> Option<f64> {
        self.adjacency
            .get(&normalize_word(source))?
            .get(&normalize_word(target))
            .copied()
    }

    /// Outgoing edges of `source` in target order.
    pub fn edges_from<'a>(&'a self, source: &str) -> impl Iterator<Item = (&'a str, f64)> + 'a {
        self.adjacency
            .get(&normalize_word(source))
            .into_iter()
            .flat_map(|row| row.iter().map(|(t, s)| (t.as_str(), *s)))
    }
}

/// Parses `source<TAB>target<TAB>score` lines.
pub fn parse_relatedness_graph(text: &str, origin: &Path) -> Result<KnowledgeGraph> {
    let mut graph = KnowledgeGraph::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let mut fields = line.split('\t');
        let (Some(source), Some(target), Some(score), None) =
            (fields.next(), fields.next(), fields.next(), fields.next())
        else {
            return Err(KptError::MalformedLine(line_no));
        };
        let score: f64 = score.trim().parse().map_err(|_| KptError::MalformedLine(line_no))?;
        if !score.is_finite() || normalize_word(source).is_empty() || normalize_word(target).is_empty() {
            return Err(KptError::MalformedLine(line_no));
        }
        if !graph.insert_edge(source, target, score) {
            return Err(KptError::DuplicateEdge {
                source_word: normalize_word(source),
                target: normalize_word(target),
                line: line_no,
            });
        }
    }
    if graph.edge_count() == 0 {
        return Err(KptError::EmptySource(origin.to_path_buf()));
    }
    Ok(graph)
}

pub fn load_relatedness_graph(path: impl AsRef<Path>) -> Result<KnowledgeGraph> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| KptError::io(path, e))?;
    parse_relatedness_graph(&text, path)
}

/// Words whose edge score from `anchor` is strictly above `eta`, by descending
/// score with lexicographic tie-breaking. The anchor itself is never returned.
pub fn neighborhood(graph: &KnowledgeGraph, anchor: &str, eta: f64) -> Vec<(String, f64)> {
    let anchor = normalize_word(anchor);
    let mut out: Vec<(String, f64)> = graph
        .edges_from(&anchor)
        .filter(|(t, s)| *s > eta && *t != anchor)
        .map(|(t, s)| (t.to_string(), s))
        .collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    out
}

/// Label id to word list, as produced by [`load_sentiment_lexicon`].
pub type Lexicon = BTreeMap<usize, Vec<String>>;

/// Which label ids the negative and positive word lists map to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexiconLabels {
    pub negative: usize,
    pub positive: usize,
}

impl Default for LexiconLabels {
    fn default() -> Self {
        Self {
            negative: 0,
            positive: 1,
        }
    }
}

fn read_word_list(text: &str) -> Vec<String> {
    let mut seen = HashSet::new();
    text.lines()
        .map(normalize_word)
        .filter(|w| !w.is_empty())
        .filter(|w| seen.insert(w.clone()))
        .collect()
}

pub fn parse_sentiment_lexicon(positive: &str, negative: &str, labels: LexiconLabels) -> Result<Lexicon> {
    let pos = read_word_list(positive);
    let neg = read_word_list(negative);
    let neg_set: HashSet<&String> = neg.iter().collect();
    if let Some(w) = pos.iter().find(|w| neg_set.contains(w)) {
        return Err(KptError::ConflictingPolarity(w.clone()));
    }
    if labels.negative == labels.positive {
        return Err(KptError::InvalidConfig(
            "negative and positive lexicon labels must differ".into(),
        ));
    }
    let mut lexicon = Lexicon::new();
    lexicon.insert(labels.negative, neg);
    lexicon.insert(labels.positive, pos);
    Ok(lexicon)
}

pub fn load_sentiment_lexicon(
    positive_path: impl AsRef<Path>,
    negative_path: impl AsRef<Path>,
    labels: LexiconLabels,
) -> Result<Lexicon> {
    let (p, n) = (positive_path.as_ref(), negative_path.as_ref());
    let positive = fs::read_to_string(p).map_err(|e| KptError::io(p, e))?;
    let negative = fs::read_to_string(n).map_err(|e| KptError::io(n, e))?;
    parse_sentiment_lexicon(&positive, &negative, labels)
}

/// Where a class's expansion words come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    Graph,
    Lexicon,
    /// Read back from a verbalizer file; no expansion source attached.
    Manual,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub label_id: usize,
    pub class_name: String,
    pub source: SourceKind,
}

impl ClassSpec {
    pub fn new(label_id: usize, class_name: &str, source: SourceKind) -> Self {
        Self {
            label_id,
            class_name: normalize_word(class_name),
            source,
        }
    }
}

/// Sorts specs by label id and checks ids are exactly `0..n` with non-empty,
/// unique names.
pub fn validate_class_specs(specs: &[ClassSpec]) -> Result<Vec<ClassSpec>> {
    let mut specs: Vec<ClassSpec> = specs
        .iter()
        .map(|s| ClassSpec::new(s.label_id, &s.class_name, s.source))
        .collect();
    specs.sort_by_key(|s| s.label_id);
    if specs.is_empty() {
        return Err(KptError::InvalidClassSpec("no classes".into()));
    }
    let mut names = HashSet::new();
    for (i, spec) in specs.iter().enumerate() {
        if spec.label_id != i {
            return Err(KptError::InvalidClassSpec(format!(
                "label ids must be contiguous from 0; expected {i}, found {}",
                spec.label_id
            )));
        }
        if spec.class_name.is_empty() {
            return Err(KptError::InvalidClassSpec(format!("class {i} has an empty name")));
        }
        if !names.insert(spec.class_name.clone()) {
            return Err(KptError::AmbiguousClassName(spec.class_name.clone()));
        }
    }
    Ok(specs)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabelWord {
    pub surface: String,
    /// Tokenizer pieces; 1 until bound to a score manifest.
    pub piece_count: usize,
}

impl LabelWord {
    pub fn new(surface: &str) -> Self {
        Self {
            surface: normalize_word(surface),
            piece_count: 1,
        }
    }
}

/// Class labels mapped to ordered label-word lists. The first word of each
/// class is its class name.
#[derive(Debug, Clone, PartialEq)]
pub struct Verbalizer {
    classes: Vec<ClassSpec>,
    words: Vec<Vec<LabelWord>>,
    offsets: Vec<usize>,
    weights: Option<Vec<f64>>,
}

impl Verbalizer {
    /// Builds a verbalizer, checking that every class starts with its class
    /// name, contains it once, and has no duplicate words.
    pub fn new(classes: Vec<ClassSpec>, words: Vec<Vec<LabelWord>>) -> Result<Self> {
        if classes.len() != words.len() {
            return Err(KptError::InvalidVerbalizer(format!(
                "{} classes but {} word lists",
                classes.len(),
                words.len()
            )));
        }
        if let Some((i, _)) = classes.iter().enumerate().find(|(i, c)| c.label_id != *i) {
            return Err(KptError::InvalidVerbalizer(format!(
                "class at position {i} must have label id {i}"
            )));
        }
        let classes = validate_class_specs(&classes)?;
        for (spec, list) in classes.iter().zip(&words) {
            match list.first() {
                Some(w) if w.surface == spec.class_name => {}
                _ => {
                    return Err(KptError::InvalidVerbalizer(format!(
                        "class {:?} must list its name first",
                        spec.class_name
                    )))
                }
            }
            let mut seen = HashSet::new();
            for w in list {
                if w.surface.is_empty() {
                    return Err(KptError::InvalidVerbalizer("empty label word".into()));
                }
                if w.piece_count == 0 {
                    return Err(KptError::InvalidVerbalizer(format!(
                        "word {:?} has zero pieces",
                        w.surface
                    )));
                }
                if !seen.insert(w.surface.as_str()) {
                    return Err(KptError::InvalidVerbalizer(format!(
                        "duplicate word {:?} in class {:?}",
                        w.surface, spec.class_name
                    )));
                }
            }
        }
        let mut offsets = Vec::with_capacity(words.len() + 1);
        offsets.push(0);
        for list in &words {
            offsets.push(offsets.last().unwrap() + list.len());
        }
        Ok(Self {
            classes,
            words,
            offsets,
            weights: None,
        })
    }

    pub fn classes(&self) -> &[ClassSpec] {
        &self.classes
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn n_words(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn class_words(&self, class: usize) -> &[LabelWord] {
        &self.words[class]
    }

    /// Flat index range of a class's words.
    pub fn class_range(&self, class: usize) -> std::ops::Range<usize> {
        self.offsets[class]..self.offsets[class + 1]
    }

    /// Flat index of a class's name (its first word).
    pub fn anchor_index(&self, class: usize) -> usize {
        self.offsets[class]
    }

    pub fn is_anchor(&self, flat: usize) -> bool {
        self.offsets[..self.classes.len()].binary_search(&flat).is_ok()
    }

    /// Class owning the flat word index.
    pub fn class_of(&self, flat: usize) -> usize {
        match self.offsets.binary_search(&flat) {
            // every class is non-empty, so offsets are strictly increasing
            Ok(i) => i,
            Err(i) => i - 1,
        }
    }

    /// `(class, word)` pairs in flattened order.
    pub fn flat_words(&self) -> impl Iterator<Item = (usize, &LabelWord)> + '_ {
        self.words
            .iter()
            .enumerate()
            .flat_map(|(c, list)| list.iter().map(move |w| (c, w)))
    }

    /// Flat-index class assignment, one entry per word.
    pub fn word_classes(&self) -> Vec<usize> {
        self.flat_words().map(|(c, _)| c).collect()
    }

    pub fn is_singleton(&self) -> bool {
        self.words.iter().all(|l| l.len() == 1)
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.n_words() {
            return Err(KptError::LengthMismatch(format!(
                "{} weights for {} words",
                weights.len(),
                self.n_words()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(KptError::InvalidVerbalizer("non-finite weight".into()));
        }
        self.weights = Some(weights);
        Ok(self)
    }

    pub fn without_weights(mut self) -> Self {
        self.weights = None;
        self
    }

    /// Keeps the flat indices for which `keep` is true. Class names are always kept.
    /// Weights, if present, are carried over for surviving words.
    pub fn retain(&self, keep: &[bool]) -> Verbalizer {
        assert_eq!(keep.len(), self.n_words());
        let mut words = Vec::with_capacity(self.n_classes());
        for c in 0..self.n_classes() {
            let range = self.class_range(c);
            let list = self.words[c]
                .iter()
                .zip(&keep[range.clone()])
                .enumerate()
                .filter(|(i, (_, k))| *i == 0 || **k)
                .map(|(_, (w, _))| w.clone())
                .collect();
            words.push(list);
        }
        let weights = self.weights.as_ref().map(|w| {
            w.iter()
                .enumerate()
                .filter(|(i, _)| keep[*i] || self.is_anchor(*i))
                .map(|(_, v)| *v)
                .collect()
        });
        let mut out =
            Verbalizer::new(self.classes.clone(), words).expect("retaining words preserves verbalizer invariants");
        out.weights = weights;
        out
    }

    /// Flat indices in `self` of every word of `refined`, matched by class and
    /// surface. `None` if `refined` has a word `self` lacks.
    pub fn indices_of(&self, refined: &Verbalizer) -> Option<Vec<usize>> {
        if refined.n_classes() != self.n_classes() {
            return None;
        }
        let mut out = Vec::with_capacity(refined.n_words());
        for c in 0..refined.n_classes() {
            let base = self.offsets[c];
            for w in refined.class_words(c) {
                let pos = self.words[c].iter().position(|x| x.surface == w.surface)?;
                out.push(base + pos);
            }
        }
        Some(out)
    }

    pub(crate) fn set_piece_counts(&mut self, counts: &[usize]) {
        let mut it = counts.iter();
        for list in &mut self.words {
            for w in list {
                w.piece_count = *it.next().unwrap();
            }
        }
    }

    /// One line per class: `class_name,word2,word3,...`.
    pub fn to_file_string(&self) -> Result<String> {
        let mut out = String::new();
        for list in &self.words {
            for w in list {
                if w.surface.contains(',') || w.surface.contains('\n') {
                    return Err(KptError::InvalidVerbalizer(format!(
                        "word {:?} cannot be written to a verbalizer file",
                        w.surface
                    )));
                }
            }
            let line: Vec<&str> = list.iter().map(|w| w.surface.as_str()).collect();
            writeln!(out, "{}", line.join(",")).unwrap();
        }
        Ok(out)
    }

    pub fn parse_file_string(text: &str) -> Result<Verbalizer> {
        let mut classes = Vec::new();
        let mut words = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                return Err(KptError::MalformedLine(i + 1));
            }
            let list: Vec<LabelWord> = line.split(',').map(LabelWord::new).collect();
            if list.iter().any(|w| w.surface.is_empty()) {
                return Err(KptError::MalformedLine(i + 1));
            }
            classes.push(ClassSpec::new(i, &list[0].surface, SourceKind::Manual));
            words.push(list);
        }
        if classes.is_empty() {
            return Err(KptError::InvalidVerbalizer("verbalizer file has no classes".into()));
        }
        Verbalizer::new(classes, words)
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_file_string()?).map_err(|e| KptError::io(path, e))
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Verbalizer> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| KptError::io(path, e))?;
        Verbalizer::parse_file_string(&text)
    }
}

/// One decimal per line, flattened word order.
pub fn weights_to_string(weights: &[f64]) -> String {
    let mut out = String::new();
    for w in weights {
        writeln!(out, "{w:?}").unwrap();
    }
    out
}

pub fn parse_weights(text: &str) -> Result<Vec<f64>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| l.trim().parse::<f64>().map_err(|_| KptError::MalformedLine(i + 1)))
        .collect()
}

pub fn write_weights(path: impl AsRef<Path>, weights: &[f64]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, weights_to_string(weights)).map_err(|e| KptError::io(path, e))
}

pub fn read_weights(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| KptError::io(path, e))?;
    parse_weights(&text)
}

/// Loaded expansion sources. A class may only use a source that is present.
#[derive(Debug, Clone, Default)]
pub struct KnowledgeSources {
    pub graph: Option<KnowledgeGraph>,
    pub lexicon: Option<Lexicon>,
}

/// Builds `V_y = {v0} ∪ expansion(v0)` for every class, class name first.
pub fn construct_verbalizer(class_specs: &[ClassSpec], sources: &KnowledgeSources, eta: f64) -> Result<Verbalizer> {
    let specs = validate_class_specs(class_specs)?;
    let mut words = Vec::with_capacity(specs.len());
    for spec in &specs {
        let expansion: Vec<String> = match spec.source {
            SourceKind::Graph => {
                let graph = sources.graph.as_ref().ok_or(KptError::MissingSource("graph"))?;
                neighborhood(graph, &spec.class_name, eta)
                    .into_iter()
                    .map(|(w, _)| w)
                    .collect()
            }
            SourceKind::Lexicon => {
                let lexicon = sources.lexicon.as_ref().ok_or(KptError::MissingSource("lexicon"))?;
                lexicon.get(&spec.label_id).cloned().unwrap_or_default()
            }
            SourceKind::Manual => Vec::new(),
        };
        let mut list = vec![LabelWord::new(&spec.class_name)];
        let mut seen: HashSet<String> = HashSet::from([spec.class_name.clone()]);
        for w in expansion {
            let w = normalize_word(&w);
            if !w.is_empty() && seen.insert(w.clone()) {
                list.push(LabelWord::new(&w));
            }
        }
        words.push(list);
    }
    Verbalizer::new(specs, words)
}
