use std::path::Path;

use kaconvtext::embeddings::{build_vocab, EmbedMode};
use kaconvtext::models::{Model, ModelSpec, Variant};
use kaconvtext::pipeline::{
    evaluate, load_checkpoint, load_dataset, predict, save_checkpoint, stratified_split, synthetic, train, Dataset,
    RunConfig, SPLINE_CSV_HEADER,
};

fn fixture(name: &str) -> Dataset {
    load_dataset(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)).unwrap()
}

fn small_config(variant: Variant) -> RunConfig {
    RunConfig {
        model: variant,
        dim: 16,
        channels: vec![8, 8, 8],
        epochs: 3,
        seed: Some(5),
        ..RunConfig::default()
    }
}

fn split() -> (Dataset, Dataset) {
    stratified_split(&fixture("separable.tsv"), 0.8, 42).unwrap()
}

#[test]
fn shipped_fixtures_match_their_generators() {
    assert_eq!(fixture("separable.tsv"), synthetic::separable_dataset(150, 30, 4..=12, 42));
    assert_eq!(fixture("vocab_2343.tsv"), synthetic::vocabulary_fixture(2_341, 13));
}

#[test]
fn vocabulary_fixture_reproduces_the_smallest_table_row() {
    let ds = fixture("vocab_2343.tsv");
    let vocab = build_vocab(ds.texts()).unwrap();
    assert_eq!(vocab.len(), 2_343);
    let model = Model::build(ModelSpec::new(Variant::Cnn, 300, ds.labels().len()), vocab.len(), 1).unwrap();
    assert_eq!(model.count_params().total, 958_070);
}

#[test]
fn split_keeps_class_counts() {
    let ds = fixture("separable.tsv");
    let (train_set, test_set) = split();
    for label in ds.labels() {
        let n = ds.records.iter().filter(|r| r.label == label).count();
        let a = train_set.records.iter().filter(|r| r.label == label).count();
        let b = test_set.records.iter().filter(|r| r.label == label).count();
        assert_eq!(a + b, n);
        assert_eq!(a, (0.8 * n as f64).floor() as usize);
    }
    assert_eq!(split(), split());
}

#[test]
fn zero_epochs_gives_an_untrained_model_and_empty_history() {
    let (tr, te) = split();
    let config = RunConfig {
        epochs: 0,
        ..small_config(Variant::KaConvTextMlp)
    };
    let out = train(&config, &tr, &te, None).unwrap();
    assert!(out.manifest.epochs.is_empty());
    assert_eq!(out.manifest.metrics.total, te.len());
    let fresh = Model::with_embedding(
        config.model_spec(2),
        kaconvtext::embeddings::init_random(&out.classifier.vocab, 16, 5).unwrap(),
        5,
    )
    .unwrap();
    assert_eq!(fresh.params.to_manifest(), out.classifier.model.params.to_manifest());
}

#[test]
fn identical_runs_produce_identical_manifests_and_exports() {
    let (tr, te) = split();
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let config = small_config(Variant::KaConvTextKan);
    let a = train(&config, &tr, &te, Some(dirs[0].path())).unwrap();
    let b = train(&config, &tr, &te, Some(dirs[1].path())).unwrap();
    assert_eq!(a.manifest.without_timings().to_json().unwrap(), b.manifest.without_timings().to_json().unwrap());
    for epoch in 1..=3 {
        let name = format!("splines_epoch_{epoch:02}.csv");
        let x = std::fs::read(dirs[0].path().join(&name)).unwrap();
        let y = std::fs::read(dirs[1].path().join(&name)).unwrap();
        assert_eq!(x, y, "{name}");
        let text = String::from_utf8(x).unwrap();
        assert_eq!(text.lines().next(), Some(SPLINE_CSV_HEADER));
        assert_eq!(text.lines().count() - 1, 8 * (16 * 8 * 3 + 8 * 8 * 4 + 8 * 8 * 5));
    }
    assert_eq!(a.manifest.params, a.classifier.model.count_params());
}

#[test]
fn different_seeds_diverge() {
    let (tr, te) = split();
    let a = train(&small_config(Variant::Cnn), &tr, &te, None).unwrap();
    let b = train(&RunConfig { seed: Some(6), ..small_config(Variant::Cnn) }, &tr, &te, None).unwrap();
    assert_ne!(a.manifest.epochs, b.manifest.epochs);
}

#[test]
fn checkpoint_round_trip_preserves_predictions() {
    let (tr, te) = split();
    let out = train(&small_config(Variant::CnnKan), &tr, &te, None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(&out.classifier, dir.path()).unwrap();
    let loaded = load_checkpoint(dir.path()).unwrap();
    let texts: Vec<&str> = te.texts().collect();
    assert_eq!(predict(&out.classifier, &texts).unwrap(), predict(&loaded, &texts).unwrap());
    assert_eq!(evaluate(&loaded, &te).unwrap(), out.manifest.metrics);
    assert_eq!(loaded.labels, out.classifier.labels);
    assert_eq!(loaded.model.params.to_manifest(), out.classifier.model.params.to_manifest());
}

#[test]
fn unseen_evaluation_label_is_rejected() {
    let (tr, te) = split();
    let out = train(&RunConfig { epochs: 0, ..small_config(Variant::Cnn) }, &tr, &te, None).unwrap();
    let bad = Dataset::parse_tsv("neutral\tp01 n02\n").unwrap();
    let err = evaluate(&out.classifier, &bad).unwrap_err();
    assert_eq!(err.kind(), "invalid-argument");
    assert!(err.to_string().contains("neutral"), "{err}");
    assert!(train(&small_config(Variant::Cnn), &tr, &bad, None).is_err());
}

#[test]
fn divergence_reports_the_batch() {
    let (tr, te) = split();
    let config = RunConfig {
        lr: 1e300,
        ..small_config(Variant::Cnn)
    };
    let err = train(&config, &tr, &te, None).unwrap_err();
    assert_eq!(err.kind(), "numeric-failure", "{err}");
    assert!(err.to_string().contains("batch"), "{err}");
}

#[test]
fn export_needs_a_spline_trunk() {
    let (tr, te) = split();
    let dir = tempfile::tempdir().unwrap();
    let err = train(&small_config(Variant::Cnn), &tr, &te, Some(dir.path())).unwrap_err();
    assert_eq!(err.kind(), "unsupported-model");
}

#[test]
fn pretrained_vectors_drive_static_and_finetuned_modes() {
    let (tr, te) = split();
    let vocab = build_vocab(tr.texts()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("vectors.txt");
    let mut text = format!("{} 16\n", vocab.corpus_tokens().len() - 1);
    for (i, tok) in vocab.corpus_tokens().iter().skip(1).enumerate() {
        let values: Vec<String> = (0..16).map(|j| format!("{}", ((i * 16 + j) % 7) as f64 / 10.0 - 0.3)).collect();
        text.push_str(&format!("{tok} {}\n", values.join(" ")));
    }
    std::fs::write(&path, text).unwrap();
    for mode in [EmbedMode::Static, EmbedMode::FineTuned] {
        let config = RunConfig {
            embed: mode,
            vectors: Some(path.clone()),
            epochs: 1,
            ..small_config(Variant::Cnn)
        };
        let out = train(&config, &tr, &te, None).unwrap();
        let report = out.manifest.embedding_load.clone().unwrap();
        assert_eq!(report.missing, 2);
        let counted = out.manifest.params.component("embedding").is_some();
        assert_eq!(counted, mode == EmbedMode::FineTuned);
        let table = out.classifier.model.params.value(out.classifier.model.embedding);
        let first = out.classifier.vocab.lookup(&vocab.corpus_tokens()[1]).unwrap();
        let row = &table.data()[first * 16..first * 16 + 16];
        let frozen = row.iter().enumerate().all(|(j, v)| *v == (j % 7) as f64 / 10.0 - 0.3);
        assert_eq!(frozen, mode == EmbedMode::Static);
    }
}

#[test]
fn training_loss_falls_for_every_variant() {
    let (tr, te) = split();
    for variant in Variant::ALL {
        let out = train(&small_config(variant), &tr, &te, None).unwrap();
        let e = &out.manifest.epochs;
        assert!(e[2].train_loss < e[0].train_loss, "{variant}: {e:?}");
    }
}
