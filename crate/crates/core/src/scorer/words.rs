use std::fmt;

use crate::error::{KptError, Result};
use crate::exec::Execution;
use crate::kbstore::Verbalizer;

use super::matrix::{ScoreManifest, ScoreMatrix};

/// Dense row-major `instances × words` matrix of scores in (0, 1].
#[derive(Clone, PartialEq)]
pub struct WordScoreMatrix {
    n_rows: usize,
    n_cols: usize,
    values: Vec<f64>,
}

impl fmt::Debug for WordScoreMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("WordScoreMatrix")
            .field("n_rows", &self.n_rows)
            .field("n_cols", &self.n_cols)
            .finish_non_exhaustive()
    }
}

impl WordScoreMatrix {
    pub fn new(n_rows: usize, n_cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_rows * n_cols {
            return Err(KptError::DimensionMismatch(format!(
                "{n_rows}x{n_cols} matrix needs {} values, got {}",
                n_rows * n_cols,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !(*v > 0.0 && *v <= 1.0)) {
            return Err(KptError::OutOfRange(i / n_cols.max(1), i % n_cols.max(1)));
        }
        Ok(Self { n_rows, n_cols, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_cols) {
            return Err(KptError::DimensionMismatch("ragged rows".into()));
        }
        Self::new(rows.len(), n_cols, rows.concat())
    }

    pub(crate) fn from_raw(n_rows: usize, n_cols: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), n_rows * n_cols);
        Self { n_rows, n_cols, values }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.n_cols.max(1)).take(self.n_rows)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n_rows).map(|i| self.values[i * self.n_cols + j]).collect()
    }

    pub fn select_columns(&self, cols: &[usize]) -> WordScoreMatrix {
        let mut values = Vec::with_capacity(self.n_rows * cols.len());
        for row in self.rows() {
            values.extend(cols.iter().map(|&j| row[j]));
        }
        Self::from_raw(self.n_rows, cols.len(), values)
    }

    pub fn select_rows(&self, rows: &[usize]) -> WordScoreMatrix {
        let mut values = Vec::with_capacity(rows.len() * self.n_cols);
        for &i in rows {
            values.extend_from_slice(self.row(i));
        }
        Self::from_raw(rows.len(), self.n_cols, values)
    }
}

/// Copies tokenizer piece counts from the manifest into the verbalizer.
pub fn bind(verbalizer: &Verbalizer, manifest: &ScoreManifest) -> Result<Verbalizer> {
    let index = manifest.column_index();
    let counts = verbalizer
        .flat_words()
        .map(|(_, w)| {
            index
                .get(w.surface.as_str())
                .map(|(_, p)| *p)
                .ok_or_else(|| KptError::MissingWord(w.surface.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = verbalizer.clone();
    out.set_piece_counts(&counts);
    Ok(out)
}

/// Collapses piece columns into one score per verbalizer word: the arithmetic
/// mean of the word's piece probabilities.
pub fn word_scores(matrix: &ScoreMatrix, verbalizer: &Verbalizer) -> Result<WordScoreMatrix> {
    word_scores_with(matrix, verbalizer, Execution::default())
}

pub fn word_scores_with(matrix: &ScoreMatrix, verbalizer: &Verbalizer, exec: Execution) -> Result<WordScoreMatrix> {
    let index = matrix.manifest().column_index();
    let spans: Vec<(usize, usize)> = verbalizer
        .flat_words()
        .map(|(_, w)| {
            index
                .get(w.surface.as_str())
                .copied()
                .ok_or_else(|| KptError::MissingWord(w.surface.clone()))
        })
        .collect::<Result<_>>()?;
    let (n, width) = (matrix.n_rows(), spans.len());
    let mut values = vec![0.0; n * width];
    exec.for_each_row_mut(&mut values, width, |i, out| {
        let row = matrix.row(i);
        for (o, &(start, len)) in out.iter_mut().zip(&spans) {
            let sum: f64 = row[start..start + len].iter().map(|&v| v as f64).sum();
            *o = sum / len as f64;
        }
    });
    Ok(WordScoreMatrix::from_raw(n, width, values))
}

/// Result of dropping multi-piece words.
#[derive(Debug, Clone, PartialEq)]
pub struct SingleTokenRestriction {
    pub verbalizer: Verbalizer,
    /// Class names kept despite spanning several pieces.
    pub multi_piece_names: Vec<String>,
}

/// Keeps only words that are a single tokenizer piece. Class names are kept
/// regardless, but a class with no single-piece word at all is an error.
pub fn restrict_single_token(verbalizer: &Verbalizer, manifest: &ScoreManifest) -> Result<SingleTokenRestriction> {
    let bound = bind(verbalizer, manifest)?;
    let keep: Vec<bool> = bound.flat_words().map(|(_, w)| w.piece_count == 1).collect();
    let mut multi_piece_names = Vec::new();
    for c in 0..bound.n_classes() {
        let range = bound.class_range(c);
        let name = &bound.class_words(c)[0];
        if !keep[range].iter().any(|&k| k) {
            return Err(KptError::EmptyClassAfterFilter(name.surface.clone()));
        }
        if name.piece_count > 1 {
            log::warn!("class name {:?} spans {} pieces; kept", name.surface, name.piece_count);
            multi_piece_names.push(name.surface.clone());
        }
    }
    Ok(SingleTokenRestriction {
        verbalizer: bound.retain(&keep),
        multi_piece_names,
    })
}
