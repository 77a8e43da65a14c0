//! Deterministic synthetic scorer.
//!
//! Stands in for a masked language model at desk scale. Each word has a prior
//! skew (how much the "model" likes the word regardless of input) and an
//! optional planted class. For an instance of gold class `y`, a word's raw
//! score is
//!
//! ```text
//! skew_j · exp(noise · z) · (1 + signal_y · [planted_j == y])
//! ```
//!
//! with `z ~ N(0, 1)` drawn per piece. Each row is then rescaled so that its
//! total mass equals `row_mass`, which keeps every value in (0, 1].

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::kbstore::{ClassSpec, LabelWord, SourceKind, Verbalizer};

use super::matrix::{ManifestWord, ScoreManifest, ScoreMatrix};

const FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    /// Multiplicative boost for planted words, per class. A single entry is
    /// broadcast to all classes.
    pub signal: Vec<f64>,
    /// Per-word prior multiplier in flattened verbalizer order. Empty means uniform.
    pub skew: Vec<f64>,
    /// Standard deviation of the log-normal noise on every piece.
    pub noise: f64,
    /// True class of each flattened word; `None` entries are unrelated to
    /// every class. When absent, each word is planted in its verbalizer class.
    pub planted: Option<Vec<Option<usize>>>,
    /// Total mass of each row after rescaling, in (0, 1].
    pub row_mass: f64,
    /// Log-normal distortion applied to the skew when producing a
    /// context-free (empty-input) prior row.
    pub context_free_noise: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            signal: vec![3.0],
            skew: Vec::new(),
            noise: 0.3,
            planted: None,
            row_mass: 0.5,
            context_free_noise: 0.5,
        }
    }
}

struct Layout {
    manifest_words: Vec<ManifestWord>,
    /// per unique surface: flat index of first occurrence
    first_flat: Vec<usize>,
}

fn layout(verbalizer: &Verbalizer) -> Layout {
    let mut seen = std::collections::HashMap::new();
    let mut manifest_words = Vec::new();
    let mut first_flat = Vec::new();
    for (flat, (_, w)) in verbalizer.flat_words().enumerate() {
        if seen.insert(w.surface.clone(), flat).is_none() {
            manifest_words.push(ManifestWord {
                surface: w.surface.clone(),
                piece_count: w.piece_count,
            });
            first_flat.push(flat);
        }
    }
    Layout {
        manifest_words,
        first_flat,
    }
}

impl SyntheticConfig {
    fn skew_of(&self, flat: usize) -> f64 {
        self.skew.get(flat).copied().unwrap_or(1.0)
    }

    fn signal_of(&self, class: usize) -> f64 {
        match self.signal.len() {
            0 => 0.0,
            1 => self.signal[0],
            _ => self.signal[class],
        }
    }

    fn planted_of(&self, verbalizer: &Verbalizer, flat: usize) -> Option<usize> {
        match &self.planted {
            Some(p) => p[flat],
            None => Some(verbalizer.class_of(flat)),
        }
    }

    fn check(&self, verbalizer: &Verbalizer) {
        assert!(
            self.skew.is_empty() || self.skew.len() == verbalizer.n_words(),
            "skew length must match the verbalizer"
        );
        assert!(self.skew.iter().all(|s| *s > 0.0), "skew entries must be positive");
        if let Some(p) = &self.planted {
            assert_eq!(
                p.len(),
                verbalizer.n_words(),
                "planted length must match the verbalizer"
            );
        }
        assert!(
            self.signal.len() <= 1 || self.signal.len() == verbalizer.n_classes(),
            "signal must be scalar or per class"
        );
        assert!(
            self.row_mass > 0.0 && self.row_mass <= 1.0,
            "row_mass must be in (0, 1]"
        );
    }
}

fn rescale_row(raw: &mut [f64], mass: f64) {
    let total: f64 = raw.iter().sum();
    for v in raw.iter_mut() {
        *v = (*v / total * mass).clamp(FLOOR, 1.0);
    }
}

/// Draws gold labels uniformly, then one score row per instance. Identical
/// seeds give identical matrices.
pub fn synthetic_scores(
    config: &SyntheticConfig,
    n_instances: usize,
    verbalizer: &Verbalizer,
    seed: u64,
) -> (ScoreMatrix, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<usize> = (0..n_instances)
        .map(|_| rng.random_range(0..verbalizer.n_classes()))
        .collect();
    let matrix = synthetic_scores_for_labels(config, &labels, verbalizer, rng.random());
    (matrix, labels)
}

/// Like [`synthetic_scores`] with caller-chosen gold labels.
pub fn synthetic_scores_for_labels(
    config: &SyntheticConfig,
    labels: &[usize],
    verbalizer: &Verbalizer,
    seed: u64,
) -> ScoreMatrix {
    config.check(verbalizer);
    let layout = layout(verbalizer);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total_pieces: usize = layout.manifest_words.iter().map(|w| w.piece_count).sum();
    let mut values = Vec::with_capacity(labels.len() * total_pieces);
    let mut raw = Vec::with_capacity(total_pieces);
    for &gold in labels {
        raw.clear();
        for (mw, &flat) in layout.manifest_words.iter().zip(&layout.first_flat) {
            let mut base = config.skew_of(flat);
            if config.planted_of(verbalizer, flat) == Some(gold) {
                base *= 1.0 + config.signal_of(gold);
            }
            for _ in 0..mw.piece_count {
                let z: f64 = rng.sample(StandardNormal);
                raw.push(base * (config.noise * z).exp());
            }
        }
        rescale_row(&mut raw, config.row_mass);
        values.extend(raw.iter().map(|&v| (v as f32).max(f32::MIN_POSITIVE)));
    }
    let manifest = ScoreManifest::new("synthetic", "synthetic", labels.len(), layout.manifest_words)
        .expect("synthetic manifest has unique words");
    ScoreMatrix::new(manifest, values).expect("synthetic scores are in (0, 1]")
}

/// One empty-input row: the skew, distorted by `context_free_noise`, with no
/// class signal. Same column layout as [`synthetic_scores`].
pub fn synthetic_context_free(config: &SyntheticConfig, verbalizer: &Verbalizer, seed: u64) -> ScoreMatrix {
    config.check(verbalizer);
    let layout = layout(verbalizer);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut raw = Vec::new();
    for (mw, &flat) in layout.manifest_words.iter().zip(&layout.first_flat) {
        let distortion: f64 = rng.sample(StandardNormal);
        let base = config.skew_of(flat) * (config.context_free_noise * distortion).exp();
        raw.extend(std::iter::repeat_n(base, mw.piece_count));
    }
    rescale_row(&mut raw, config.row_mass);
    let values = raw.iter().map(|&v| (v as f32).max(f32::MIN_POSITIVE)).collect();
    let manifest = ScoreManifest::new("synthetic", "context-free", 1, layout.manifest_words)
        .expect("synthetic manifest has unique words");
    ScoreMatrix::new(manifest, values).expect("synthetic scores are in (0, 1]")
}

/// A planted classification task: a verbalizer whose first
/// `planted_per_class` words per class carry class signal, optionally padded
/// with noise words that do not.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTask {
    pub n_classes: usize,
    /// Planted words per class, class name included.
    pub planted_per_class: usize,
    /// Unrelated or misassigned words appended to each class.
    pub noise_words_per_class: usize,
    /// Ratio between the largest and smallest word skew; skews are drawn
    /// log-uniformly in `[1, skew_factor]`.
    pub skew_factor: f64,
    /// Multiplier applied to the skew of noise words (below 1 makes them rare).
    pub noise_word_prior: f64,
    /// Fraction of noise words planted in some other class instead of none.
    pub confusing_fraction: f64,
    pub signal: f64,
    pub noise: f64,
}

impl Default for SyntheticTask {
    fn default() -> Self {
        Self {
            n_classes: 4,
            planted_per_class: 6,
            noise_words_per_class: 0,
            skew_factor: 4.0,
            noise_word_prior: 1.0,
            confusing_fraction: 0.5,
            signal: 3.0,
            noise: 0.3,
        }
    }
}

/// Verbalizer plus generator configuration for a [`SyntheticTask`].
#[derive(Debug, Clone)]
pub struct PlantedTask {
    pub verbalizer: Verbalizer,
    pub config: SyntheticConfig,
    /// Flat indices of injected noise words.
    pub noise_words: Vec<usize>,
}

impl PlantedTask {
    /// The same task restricted to its planted words.
    pub fn noiseless(&self) -> PlantedTask {
        let keep: Vec<bool> = (0..self.verbalizer.n_words())
            .map(|i| !self.noise_words.contains(&i))
            .collect();
        let pick = |v: &[f64]| -> Vec<f64> { v.iter().zip(&keep).filter(|(_, k)| **k).map(|(x, _)| *x).collect() };
        let planted = self
            .config
            .planted
            .as_ref()
            .map(|p| p.iter().zip(&keep).filter(|(_, k)| **k).map(|(x, _)| *x).collect());
        PlantedTask {
            verbalizer: self.verbalizer.retain(&keep),
            config: SyntheticConfig {
                skew: pick(&self.config.skew),
                planted,
                ..self.config.clone()
            },
            noise_words: Vec::new(),
        }
    }
}

impl SyntheticTask {
    pub fn build(&self, seed: u64) -> PlantedTask {
        assert!(self.n_classes >= 1 && self.planted_per_class >= 1 && self.skew_factor >= 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut classes = Vec::new();
        let mut words = Vec::new();
        let mut skew = Vec::new();
        let mut planted = Vec::new();
        let mut noise_words = Vec::new();
        let draw_skew = |rng: &mut ChaCha8Rng| self.skew_factor.powf(rng.random::<f64>());
        for c in 0..self.n_classes {
            let name = format!("class{c}");
            classes.push(ClassSpec::new(c, &name, SourceKind::Manual));
            let mut list = vec![LabelWord::new(&name)];
            skew.push(draw_skew(&mut rng));
            planted.push(Some(c));
            for k in 1..self.planted_per_class {
                list.push(LabelWord::new(&format!("class{c}-word{k}")));
                skew.push(draw_skew(&mut rng));
                planted.push(Some(c));
            }
            let mut noise: Vec<(LabelWord, f64, Option<usize>)> = (0..self.noise_words_per_class)
                .map(|k| {
                    let s = draw_skew(&mut rng) * self.noise_word_prior;
                    let target = if self.n_classes > 1 && rng.random::<f64>() < self.confusing_fraction {
                        let other = rng.random_range(0..self.n_classes - 1);
                        Some(if other >= c { other + 1 } else { other })
                    } else {
                        None
                    };
                    (LabelWord::new(&format!("class{c}-noise{k}")), s, target)
                })
                .collect();
            // noise words follow the planted ones in random order
            noise.shuffle(&mut rng);
            for (w, s, t) in noise {
                noise_words.push(skew.len());
                list.push(w);
                skew.push(s);
                planted.push(t);
            }
            words.push(list);
        }
        let verbalizer = Verbalizer::new(classes, words).expect("synthetic verbalizer is valid");
        PlantedTask {
            verbalizer,
            config: SyntheticConfig {
                signal: vec![self.signal],
                skew,
                noise: self.noise,
                planted: Some(planted),
                ..SyntheticConfig::default()
            },
            noise_words,
        }
    }
}
