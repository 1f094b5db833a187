use std::path::PathBuf;

use trajgeos::evaluation::{evaluate, metrics_of, read_predictions, write_predictions};
use trajgeos::ingest::{
    load_dataset, parse_checkins, preprocess, write_dataset, DatasetManifest, DatasetSplit,
    ParseOptions, Schema,
};
use trajgeos::model::{
    train, Ablation, ModelConfig, ModelData, OrientationMode, TrainOptions, TrajGeos, BEST_STEM,
};
use trajgeos::trajgraph::{build_from_split, read_graph, write_graph};

fn toy_split() -> DatasetSplit {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/toy/checkins.tsv");
    let raw = parse_checkins(&path, Schema::FoursquareTsv, ParseOptions::default()).unwrap();
    preprocess(&raw.checkins).unwrap().0
}

fn small(ablation: Ablation, orientation: OrientationMode) -> ModelConfig {
    ModelConfig {
        ablation,
        orientation,
        location_dim: 12,
        category_dim: 8,
        user_dim: 6,
        time_dim: 4,
        graph_dim: 16,
        gru_hidden: 16,
        orientation_hidden: 12,
        head_hidden: 24,
        epochs: 5,
        batch_size: 4,
        lr: 3e-3,
        ..Default::default()
    }
}

#[test]
fn training_loss_falls_for_every_variant() {
    let split = toy_split();
    let graph = build_from_split(&split);
    let mut variants: Vec<_> = Ablation::ALL
        .iter()
        .map(|&a| (a, OrientationMode::Attention))
        .collect();
    variants.push((Ablation::Full, OrientationMode::Gru));
    for (ablation, orientation) in variants {
        let cfg = small(ablation, orientation);
        let data = ModelData::<f64>::new(split.clone(), &graph, &cfg).unwrap();
        let out = train(&data, &cfg, &TrainOptions::default()).unwrap();
        let losses: Vec<f64> = out.log.iter().map(|e| e.loss).collect();
        assert_eq!(losses.len(), 5);
        assert!(losses.iter().all(|l| l.is_finite()));
        assert!(
            losses[4] < losses[0],
            "{ablation}/{orientation}: {losses:?}"
        );
    }
}

#[test]
fn artifacts_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let split = toy_split();
    let hash = write_dataset(&dir.path().join("data"), &split, DatasetManifest::default()).unwrap();
    let (loaded, _, hash2) = load_dataset(&dir.path().join("data")).unwrap();
    assert_eq!(hash, hash2);
    assert_eq!(loaded.num_records(), split.num_records());
    assert_eq!(loaded.num_trajectories(), split.num_trajectories());

    let graph = build_from_split(&loaded);
    write_graph(&dir.path().join("graph"), &graph, &loaded.catalog, &hash).unwrap();
    let (graph2, manifest) = read_graph(&dir.path().join("graph")).unwrap();
    assert_eq!(graph2, graph);
    assert_eq!(manifest.dataset_hash, hash);

    let cfg = ModelConfig {
        epochs: 3,
        ..small(Ablation::Full, OrientationMode::Attention)
    };
    let data = ModelData::<f32>::new(loaded, &graph2, &cfg).unwrap();
    let run = dir.path().join("run");
    let opts = TrainOptions {
        out_dir: Some(run.clone()),
        dataset_hash: hash.clone(),
        ..Default::default()
    };
    let out = train(&data, &cfg, &opts).unwrap();

    let (best, meta) = TrajGeos::<f32>::load(&run.join(BEST_STEM), data.sizes()).unwrap();
    assert_eq!(meta.dataset_hash, hash);
    let eval = evaluate(&best, &data, &data.test, 8).unwrap();
    assert_eq!(eval.metrics, out.best_metrics);
    assert_eq!(eval.predictions.len(), data.num_test_samples());

    let mut buf = Vec::new();
    write_predictions(&mut buf, &eval.predictions).unwrap();
    let back = read_predictions(&buf[..]).unwrap();
    assert_eq!(back, eval.predictions);
    assert_eq!(metrics_of(&back).unwrap(), eval.metrics);
}
