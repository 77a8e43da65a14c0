//! The checked-in toy task loads through every public reader and runs end to end.

use std::fs;
use std::path::{Path, PathBuf};

use kpt_core::eval::micro_f1;
use kpt_core::kbstore::{construct_verbalizer, load_relatedness_graph, ClassSpec, KnowledgeSources};
use kpt_core::pipeline::{few_shot, zero_shot, FewShotData, FewShotFlags, Support, ZeroShotFlags};
use kpt_core::refine::RelevanceParams;
use kpt_core::scorer::{
    bind, gold_labels, load_dataset, load_score_matrix, load_template_registry, restrict_single_token, word_scores,
    ScoreMatrix,
};
use kpt_core::train::{sample_few_shot, TrainConfig};
use kpt_core::{Execution, Verbalizer};

fn toy() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/toy")
}

fn scores(template: &str, split: &str) -> ScoreMatrix {
    let dir = toy().join("scores").join(template);
    load_score_matrix(dir.join(format!("{split}.json")), dir.join(format!("{split}.kpts"))).unwrap()
}

#[test]
fn construction_reproduces_checked_in_verbalizer() {
    let specs: Vec<ClassSpec> = serde_json::from_str(&fs::read_to_string(toy().join("classes.json")).unwrap()).unwrap();
    let sources = KnowledgeSources {
        graph: Some(load_relatedness_graph(toy().join("graph.tsv")).unwrap()),
        lexicon: None,
    };
    let built = construct_verbalizer(&specs, &sources, 0.0).unwrap();
    let stored = Verbalizer::read_file(toy().join("verbalizer.txt")).unwrap();
    assert_eq!(built.to_file_string().unwrap(), stored.to_file_string().unwrap());
    // the negative chess edge is below the threshold
    assert!(!built.flat_words().any(|(_, w)| w.surface == "chess"));
    let strict = construct_verbalizer(&specs, &sources, 0.5).unwrap();
    assert_eq!(strict.class_words(0).len(), 4);
}

#[test]
fn matrices_reencode_byte_identically() {
    for template in ["toy-1", "toy-2"] {
        for split in ["test", "train", "context_free"] {
            let dir = toy().join("scores").join(template);
            let m = scores(template, split);
            assert_eq!(m.encode(), fs::read(dir.join(format!("{split}.kpts"))).unwrap());
            assert_eq!(m.manifest().template_id, template);
            assert_eq!(
                m.manifest().to_json(),
                fs::read_to_string(dir.join(format!("{split}.json"))).unwrap()
            );
        }
    }
}

#[test]
fn multi_piece_words_span_adjacent_columns() {
    let m = scores("toy-1", "test");
    let index = m.manifest().column_index();
    let (chem, chem_len) = index["chemistry"];
    let (exp, exp_len) = index["experiment"];
    assert_eq!((chem_len, exp_len), (2, 3));
    assert_eq!(exp, chem + 2);
    assert_eq!(m.n_cols(), 17 + 1 + 2);

    let v = bind(
        &Verbalizer::read_file(toy().join("verbalizer.txt")).unwrap(),
        m.manifest(),
    )
    .unwrap();
    let ws = word_scores(&m, &v).unwrap();
    let flat = v.flat_words().position(|(_, w)| w.surface == "experiment").unwrap();
    // oracle: mean of the three piece columns, accumulated in f64
    let row = m.row(7);
    let expected = (row[exp] as f64 + row[exp + 1] as f64 + row[exp + 2] as f64) / 3.0;
    assert_eq!(ws.row(7)[flat], expected);

    let restricted = restrict_single_token(&v, m.manifest()).unwrap();
    assert_eq!(restricted.verbalizer.class_words(2).len(), 4);
    assert!(restricted.multi_piece_names.is_empty());
}

#[test]
fn datasets_and_templates_load() {
    let test = load_dataset(toy().join("test.jsonl"), Some(3)).unwrap();
    let train = load_dataset(toy().join("train.jsonl"), Some(3)).unwrap();
    assert_eq!((test.len(), train.len()), (60, 90));
    assert!(load_dataset(toy().join("test.jsonl"), Some(2)).is_err());
    let templates = load_template_registry(toy().join("templates.json")).unwrap();
    assert_eq!(templates.len(), 2);
    assert_eq!(
        templates[1].wrap(&test[0]).unwrap(),
        format!("[ Category : [MASK] ] {}", test[0].text_a)
    );
}

#[test]
fn zero_shot_runs_on_fixtures() {
    let v = Verbalizer::read_file(toy().join("verbalizer.txt")).unwrap();
    let gold = gold_labels(&load_dataset(toy().join("test.jsonl"), Some(3)).unwrap()).unwrap();
    for template in ["toy-1", "toy-2"] {
        let support = word_scores(&scores(template, "train"), &v).unwrap();
        let test = word_scores(&scores(template, "test"), &v).unwrap();
        let context_free = word_scores(&scores(template, "context_free"), &v).unwrap();
        let params = RelevanceParams::default();
        let kpt = zero_shot(
            &v,
            Support::Rows(&support),
            &test,
            ZeroShotFlags::default(),
            params,
            Execution::Parallel,
        )
        .unwrap();
        let seq = zero_shot(
            &v,
            Support::Rows(&support),
            &test,
            ZeroShotFlags::default(),
            params,
            Execution::Sequential,
        )
        .unwrap();
        assert_eq!(kpt.predictions, seq.predictions);
        assert!(micro_f1(&kpt.predictions, &gold).unwrap() > 0.9, "{template}");
        let refined = &kpt.refinement.verbalizer;
        for c in 0..3 {
            assert_eq!(refined.class_words(c)[0].surface, v.class_words(c)[0].surface);
            assert!(refined.class_words(c).len() <= 3);
        }
        let pmi = zero_shot(
            &v,
            Support::ContextFree(&context_free),
            &test,
            ZeroShotFlags::default(),
            params,
            Execution::Parallel,
        )
        .unwrap();
        assert_eq!(pmi.predictions.len(), 60);
    }
}

#[test]
fn few_shot_runs_on_fixtures() {
    let v = Verbalizer::read_file(toy().join("verbalizer.txt")).unwrap();
    let train_gold = gold_labels(&load_dataset(toy().join("train.jsonl"), Some(3)).unwrap()).unwrap();
    let test_gold = gold_labels(&load_dataset(toy().join("test.jsonl"), Some(3)).unwrap()).unwrap();
    let pool = word_scores(&scores("toy-1", "train"), &v).unwrap();
    let test = word_scores(&scores("toy-1", "test"), &v).unwrap();
    let split = sample_few_shot(&train_gold, 3, 5, 1).unwrap();
    let pick = |idx: &[usize]| idx.iter().map(|&i| train_gold[i]).collect::<Vec<_>>();
    let (tg, vg) = (pick(&split.train), pick(&split.validation));
    let data = FewShotData {
        support: Some(&pool),
        train: &pool.select_rows(&split.train),
        train_gold: &tg,
        validation: &pool.select_rows(&split.validation),
        validation_gold: &vg,
        test: &test,
    };
    let config = TrainConfig {
        k_shot: 5,
        seed: 1,
        ..Default::default()
    };
    let out = few_shot(
        &v,
        data,
        FewShotFlags::default(),
        RelevanceParams::default(),
        &config,
        Execution::Parallel,
    )
    .unwrap();
    assert_eq!(out.weights.0.len(), out.refinement.verbalizer.n_words());
    assert_eq!(out.training.as_ref().unwrap().history.len(), 5);
    assert!(micro_f1(&out.predictions, &test_gold).unwrap() > 0.9);
}
