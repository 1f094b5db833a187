use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trajgeos::evaluation::{
    cdf_points, distance_error_cdf, group_analysis, rank_of, ranks_from_logits, recall_mrr,
    BinEdges, Grouping, SamplePrediction,
};
use trajgeos::ingest::{
    build_samples, parse_checkins, preprocess, Catalog, DatasetSplit, LocationInfo, ParseOptions,
    Schema,
};
use trajgeos::tensor::Tensor;

fn toy_split() -> DatasetSplit {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/toy/checkins.tsv");
    let raw = parse_checkins(&path, Schema::FoursquareTsv, ParseOptions::default()).unwrap();
    preprocess(&raw.checkins).unwrap().0
}

fn prediction(user: usize, target: usize, rank: usize, top: usize) -> SamplePrediction {
    SamplePrediction {
        user_index: user,
        trajectory: 0,
        prefix_len: 1,
        target_location: target,
        location_rank: rank,
        top_locations: vec![top],
        target_category: None,
        category_rank: None,
        top_category: None,
    }
}

#[test]
fn random_scores_hit_at_chance() {
    let (n, m) = (4000, 200);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let data: Vec<f64> = (0..n * m).map(|_| rng.random::<f64>()).collect();
    let targets: Vec<usize> = (0..n).map(|_| rng.random_range(0..m)).collect();
    let logits = Tensor::from_rows(n, m, data).unwrap();
    let t = recall_mrr(&ranks_from_logits(&logits, &targets)).unwrap();
    for (k, observed) in [(1.0, t.recall1), (5.0, t.recall5), (10.0, t.recall10)] {
        let p: f64 = k / m as f64;
        let sd = (p * (1.0 - p) / n as f64).sqrt();
        assert!((observed - p).abs() < 4.0 * sd, "R@{k}: {observed} vs {p}");
    }
    let harmonic: f64 = (1..=10).map(|r| 1.0 / r as f64).sum();
    let mrr = harmonic / m as f64;
    assert!((t.mrr10 - mrr).abs() < 0.25 * mrr, "{} vs {mrr}", t.mrr10);
}

#[test]
fn rank_matches_sorted_position() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let scores: Vec<f32> = (0..30).map(|_| rng.random_range(0..8) as f32).collect();
        let target = rng.random_range(0..30);
        let mut order: Vec<usize> = (0..30).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        let pos = order.iter().position(|&i| i == target).unwrap() + 1;
        assert_eq!(rank_of(&scores, target), pos);
    }
}

fn toy_predictions(split: &DatasetSplit) -> Vec<SamplePrediction> {
    let (_, test) = build_samples(split, 2);
    test.iter()
        .enumerate()
        .map(|(i, s)| {
            prediction(
                s.user_index,
                s.target_location,
                if i % 3 == 0 { 1 } else { 4 },
                0,
            )
        })
        .collect()
}

#[test]
fn record_count_buckets_follow_hand_binning() {
    let split = toy_split();
    let preds = toy_predictions(&split);
    let width = 8.0;
    let mut expected: BTreeMap<usize, (Vec<usize>, usize, usize)> = BTreeMap::new();
    for p in &preds {
        let u = &split.users[p.user_index];
        let n: usize = u.trajectories[..u.n_train]
            .iter()
            .map(|t| t.records.len())
            .sum();
        let e = expected.entry(n / width as usize).or_default();
        if !e.0.contains(&p.user_index) {
            e.0.push(p.user_index);
        }
        e.1 += 1;
        e.2 += (p.location_rank == 1) as usize;
    }
    let edges = BinEdges {
        record_bin: width,
        ..Default::default()
    };
    let rows = group_analysis(&preds, &split, Grouping::RecordCount, edges, None).unwrap();
    assert!(rows.len() > 1);
    assert_eq!(rows.len(), expected.len());
    for (row, (bin, (users, samples, hits))) in rows.iter().zip(&expected) {
        assert_eq!(row.lower, Some(*bin as f64 * width));
        assert_eq!(row.upper, Some((*bin + 1) as f64 * width));
        assert_eq!(row.users, users.len());
        assert_eq!(row.samples, *samples);
        assert!((row.recall1 - *hits as f64 / *samples as f64).abs() < 1e-12);
    }
    let share: f64 = rows.iter().map(|r| r.share).sum();
    assert!((share - 1.0).abs() < 1e-12);
}

#[test]
fn one_wide_bucket_reproduces_the_global_recall() {
    let split = toy_split();
    let preds = toy_predictions(&split);
    let global = preds.iter().filter(|p| p.location_rank == 1).count() as f64 / preds.len() as f64;
    let edges = BinEdges {
        record_bin: 1e9,
        entropy_bin: 1e9,
    };
    for g in [
        Grouping::RecordCount,
        Grouping::LocationEntropy,
        Grouping::CategoryEntropy,
    ] {
        let rows = group_analysis(&preds, &split, g, edges, None).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].samples, preds.len());
        assert_eq!(rows[0].users, split.users.len());
        assert!((rows[0].recall1 - global).abs() < 1e-12);
        assert_eq!(rows[0].share, 1.0);
    }
    let mut map = HashMap::new();
    for c in &split.catalog.categories {
        map.insert(c.id.clone(), "all".to_string());
    }
    let rows = group_analysis(&preds, &split, Grouping::SuperCategory, edges, Some(&map)).unwrap();
    assert_eq!(rows.len(), 1);
    assert!((rows[0].recall1 - global).abs() < 1e-12);
}

#[test]
fn distance_cdf_for_placed_predictions() {
    let place = |id: &str, lat: f64, lon: f64| LocationInfo {
        id: id.into(),
        latitude: lat,
        longitude: lon,
        category: None,
    };
    let catalog = Catalog::new(
        vec!["u".into()],
        vec![
            place("a", 0.0, 0.0),
            place("b", 0.0, 1.0),
            place("c", 0.0, 2.0),
            place("d", 0.0, 90.0),
        ],
        vec![],
    );
    let preds = vec![
        prediction(0, 0, 1, 0),
        prediction(0, 1, 2, 0),
        prediction(0, 0, 2, 1),
        prediction(0, 2, 3, 0),
        prediction(0, 0, 9, 3),
    ];
    let deg = 2.0 * std::f64::consts::PI * 6371.0 / 360.0;
    let cdf = distance_error_cdf(&preds, &catalog);
    let expected = [(0.0, 0.2), (deg, 0.6), (2.0 * deg, 0.8), (90.0 * deg, 1.0)];
    assert_eq!(cdf.len(), expected.len());
    for ((d, f), (ed, ef)) in cdf.iter().zip(expected) {
        assert!((d - ed).abs() < 1e-6, "{d} vs {ed}");
        assert!((f - ef).abs() < 1e-12);
    }
    assert_eq!(
        cdf_points(vec![3.0, 1.0, 3.0, 2.0]),
        vec![(1.0, 0.25), (2.0, 0.5), (3.0, 1.0)]
    );
}
