//! Regenerates the toy fixtures under `tests/fixtures/toy`.
//!
//! ```text
//! cargo run -p kpt-core --example make_fixtures
//! ```

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use kpt_core::kbstore::{construct_verbalizer, parse_relatedness_graph, ClassSpec, KnowledgeSources, LabelWord};
use kpt_core::scorer::dataset::dataset_to_string;
use kpt_core::scorer::{synthetic_context_free, synthetic_scores_for_labels, Instance, SyntheticConfig};
use kpt_core::{ScoreManifest, ScoreMatrix, Verbalizer};

const GRAPH: &str = "\
sports\tfootball\t0.92
sports\ttennis\t0.81
sports\tleague\t0.64
sports\tcoach\t0.47
sports\tweather\t0.12
sports\tchess\t-0.20
business\tmarket\t0.88
business\tstocks\t0.79
business\tcompany\t0.71
business\ttrade\t0.52
business\ttennis\t0.05
science\tphysics\t0.90
science\tchemistry\t0.84
science\texperiment\t0.61
science\tbiology\t0.55
science\tholiday\t0.09
";

const CLASSES: &str = r#"[
  {"label_id": 0, "class_name": "sports", "source": "graph"},
  {"label_id": 1, "class_name": "business", "source": "graph"},
  {"label_id": 2, "class_name": "science", "source": "graph"}
]
"#;

const TEMPLATES: &str = r#"[
  {"template_id": "toy-1", "pattern": "{a} This topic is about [MASK]."},
  {"template_id": "toy-2", "pattern": "[ Category : [MASK] ] {a}"}
]
"#;

const NAMES: [&str; 3] = ["sports", "business", "science"];

fn dataset(n: usize, seed: u64, prefix: &str) -> Vec<Instance> {
    let mut labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
    labels.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    labels
        .into_iter()
        .enumerate()
        .map(|(i, y)| Instance {
            guid: format!("{prefix}-{i}"),
            text_a: format!("A short {} story, number {i}.", NAMES[y]),
            text_b: None,
            label: Some(y),
        })
        .collect()
}

fn main() {
    let out = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/toy");
    fs::create_dir_all(&out).unwrap();
    fs::write(out.join("graph.tsv"), GRAPH).unwrap();
    fs::write(out.join("classes.json"), CLASSES).unwrap();
    fs::write(out.join("templates.json"), TEMPLATES).unwrap();

    let specs: Vec<ClassSpec> = serde_json::from_str(CLASSES).unwrap();
    let graph = parse_relatedness_graph(GRAPH, Path::new("graph.tsv")).unwrap();
    let sources = KnowledgeSources {
        graph: Some(graph),
        lexicon: None,
    };
    let verbalizer = construct_verbalizer(&specs, &sources, 0.0).unwrap();
    verbalizer.write_file(out.join("verbalizer.txt")).unwrap();

    // two words span several tokenizer pieces
    let words: Vec<Vec<LabelWord>> = (0..verbalizer.n_classes())
        .map(|c| {
            verbalizer
                .class_words(c)
                .iter()
                .map(|w| LabelWord {
                    surface: w.surface.clone(),
                    piece_count: match w.surface.as_str() {
                        "chemistry" => 2,
                        "experiment" => 3,
                        _ => 1,
                    },
                })
                .collect()
        })
        .collect();
    let pieces = Verbalizer::new(verbalizer.classes().to_vec(), words).unwrap();

    // weather and holiday carry no class signal; tennis is a sports word also listed under business
    let planted: Vec<Option<usize>> = pieces
        .flat_words()
        .map(|(c, w)| match w.surface.as_str() {
            "weather" | "holiday" => None,
            "tennis" => Some(0),
            _ => Some(c),
        })
        .collect();

    let test = dataset(60, 1, "test");
    let train = dataset(90, 2, "train");
    fs::write(out.join("test.jsonl"), dataset_to_string(&test)).unwrap();
    fs::write(out.join("train.jsonl"), dataset_to_string(&train)).unwrap();

    for (t, template_id) in ["toy-1", "toy-2"].iter().enumerate() {
        let seed = 100 * (t as u64 + 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let skew: Vec<f64> = (0..pieces.n_words()).map(|_| 4f64.powf(rng.random::<f64>())).collect();
        let config = SyntheticConfig {
            skew,
            planted: Some(planted.clone()),
            signal: vec![2.0],
            noise: 0.4,
            ..Default::default()
        };
        let dir = out.join("scores").join(template_id);
        fs::create_dir_all(&dir).unwrap();
        for (split, data, s) in [("test", &test, 1), ("train", &train, 2)] {
            let labels: Vec<usize> = data.iter().map(|i| i.label.unwrap()).collect();
            let m = synthetic_scores_for_labels(&config, &labels, &pieces, seed + s);
            let m = retag(&m, template_id, "toy");
            m.write(dir.join(format!("{split}.json")), dir.join(format!("{split}.kpts")))
                .unwrap();
        }
        let cf = retag(&synthetic_context_free(&config, &pieces, seed + 3), template_id, "toy");
        cf.write(dir.join("context_free.json"), dir.join("context_free.kpts"))
            .unwrap();
    }
    println!("wrote fixtures to {}", out.display());
}

fn retag(m: &ScoreMatrix, template_id: &str, dataset_id: &str) -> ScoreMatrix {
    let manifest = ScoreManifest::new(dataset_id, template_id, m.n_rows(), m.manifest().words().to_vec()).unwrap();
    ScoreMatrix::new(manifest, m.values().to_vec()).unwrap()
}
