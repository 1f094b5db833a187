use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = "location_dim = 8
category_dim = 6
user_dim = 4
time_dim = 4
graph_dim = 10
gru_hidden = 12
orientation_hidden = 8
head_hidden = 12
epochs = 2
batch_size = 8
lr = 0.003
";

fn toy_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/data/toy")
}

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trajgeos"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fail(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    String::from_utf8(out.stderr).unwrap()
}

/// Working directory with the toy corpus preprocessed into `data/` and the
/// small model config in `small.toml`.
fn workspace(graph: bool) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let input = toy_dir().join("checkins.tsv");
    ok(
        dir.path(),
        &[
            "preprocess",
            "--schema",
            "foursquare_tsv",
            "--in",
            input.to_str().unwrap(),
            "--out",
            "data",
        ],
    );
    fs::write(dir.path().join("small.toml"), SMALL).unwrap();
    if graph {
        ok(
            dir.path(),
            &["build-graph", "--data", "data", "--out", "graph"],
        );
    }
    dir
}

#[test]
fn preprocess_counts_match_golden() {
    let dir = workspace(false);
    let manifest: toml::Table = fs::read_to_string(dir.path().join("data/manifest.toml"))
        .unwrap()
        .parse()
        .unwrap();
    let golden: toml::Table = fs::read_to_string(toy_dir().join("golden_counts.toml"))
        .unwrap()
        .parse()
        .unwrap();
    let counts = manifest["counts"].as_table().unwrap();
    let g = &golden["dataset"];
    for (ours, theirs) in [
        ("users", "users"),
        ("locations", "locations"),
        ("categories", "categories"),
        ("records", "records"),
        ("sub_trajectories", "trajectories"),
        ("train_sub_trajectories", "train_trajectories"),
        ("test_sub_trajectories", "test_trajectories"),
        ("train_samples", "train_samples"),
        ("test_samples", "test_samples"),
    ] {
        assert_eq!(counts[ours].as_integer(), g[theirs].as_integer(), "{ours}");
    }
    assert_eq!(
        counts["filtered_records"].as_integer(),
        golden["filtered"]["records"].as_integer()
    );
    assert_eq!(
        manifest["raw_checkins"].as_integer(),
        golden["raw"]["checkins"].as_integer()
    );
}

#[test]
fn missing_artifacts_name_their_producer() {
    let dir = workspace(false);
    let err = fail(
        dir.path(),
        &[
            "train", "--data", "data", "--graph", "graph", "--out", "run",
        ],
    );
    assert!(err.contains("build-graph"), "{err}");
    let err = fail(
        dir.path(),
        &["build-graph", "--data", "nowhere", "--out", "graph"],
    );
    assert!(err.contains("preprocess"), "{err}");
    ok(
        dir.path(),
        &["build-graph", "--data", "data", "--out", "graph"],
    );
    let err = fail(
        dir.path(),
        &[
            "evaluate", "--data", "data", "--graph", "graph", "--model", "run", "--out", "eval",
        ],
    );
    assert!(err.contains("`trajgeos train`"), "{err}");
    let err = fail(
        dir.path(),
        &[
            "analyze",
            "--data",
            "data",
            "--predictions",
            "eval",
            "--out",
            "analysis",
        ],
    );
    assert!(err.contains("`trajgeos evaluate`"), "{err}");
}

#[test]
fn config_errors_are_listed_together() {
    let dir = workspace(true);
    fs::write(
        dir.path().join("bad.toml"),
        "alpha = 1.5\nn_user = 7\nlr = -1.0\n",
    )
    .unwrap();
    let err = fail(
        dir.path(),
        &[
            "train",
            "--data",
            "data",
            "--graph",
            "graph",
            "--out",
            "run",
            "--config",
            "bad.toml",
            "--dallas-mode",
            "--category-head",
        ],
    );
    for field in ["alpha", "n_user", "lr", "category_head"] {
        assert!(err.contains(field), "{field} missing from: {err}");
    }
    let err = fail(
        dir.path(),
        &[
            "train",
            "--data",
            "data",
            "--graph",
            "graph",
            "--out",
            "run",
            "--config",
            "small.toml",
            "--dallas-mode",
            "--category-head",
        ],
    );
    assert!(err.contains("dallas_mode"), "{err}");
    fs::write(dir.path().join("typo.toml"), "alhpa = 0.5\n").unwrap();
    let err = fail(
        dir.path(),
        &[
            "train",
            "--data",
            "data",
            "--graph",
            "graph",
            "--out",
            "run",
            "--config",
            "typo.toml",
        ],
    );
    assert!(err.contains("alhpa"), "{err}");
}

#[test]
fn ablate_reports_five_variants() {
    let dir = workspace(true);
    let out = ok(
        dir.path(),
        &[
            "ablate",
            "--data",
            "data",
            "--graph",
            "graph",
            "--out",
            "ablation",
            "--config",
            "small.toml",
            "--epochs",
            "1",
        ],
    );
    let rows: Vec<&str> = out.lines().skip(1).collect();
    assert_eq!(rows.len(), 5);
    let names: Vec<&str> = rows.iter().map(|r| r.split('\t').next().unwrap()).collect();
    assert_eq!(names, ["full", "woGraph", "onlyGraph", "woShort", "woMid"]);
    assert_eq!(
        out,
        fs::read_to_string(dir.path().join("ablation/ablation.tsv")).unwrap()
    );
    assert!(dir.path().join("ablation/run.toml").exists());
}

#[test]
fn sweep_writes_one_row_per_point() {
    let dir = workspace(true);
    fs::write(
        dir.path().join("grid.toml"),
        "recent_weeks = [1, 2]\nn_global = [2, 3]\n",
    )
    .unwrap();
    let out = ok(
        dir.path(),
        &[
            "sweep",
            "--data",
            "data",
            "--graph",
            "graph",
            "--out",
            "sweep",
            "--config",
            "small.toml",
            "--epochs",
            "1",
            "--grid",
            "grid.toml",
        ],
    );
    assert_eq!(out.lines().count(), 5);
    assert!(out.starts_with("alpha\trecent_weeks\tn_global"));
    assert!(!dir.path().join("sweep/table_recent_weeks.tsv").exists());

    fs::write(dir.path().join("one.toml"), "orientation = [\"attention\", \"gru\"]\n").unwrap();
    ok(
        dir.path(),
        &[
            "sweep", "--data", "data", "--graph", "graph", "--out", "one", "--config", "small.toml", "--epochs", "1",
            "--grid", "one.toml",
        ],
    );
    let table = fs::read_to_string(dir.path().join("one/table_orientation.tsv")).unwrap();
    let rows: Vec<&str> = table.lines().collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[0].starts_with("orientation\tcat_R@1"));
    assert!(rows[1].starts_with("attention\t") && rows[2].starts_with("gru\t"));
}

fn full_pipeline(dir: &Path) {
    let common = ["--data", "data", "--graph", "graph"];
    let mut train = vec!["train"];
    train.extend(common);
    train.extend([
        "--out",
        "run",
        "--config",
        "small.toml",
        "--precision",
        "f64",
        "--seed",
        "5",
    ]);
    ok(dir, &train);
    let mut eval = vec!["evaluate"];
    eval.extend(common);
    eval.extend(["--model", "run", "--out", "eval"]);
    ok(dir, &eval);
    ok(
        dir,
        &[
            "analyze",
            "--data",
            "data",
            "--predictions",
            "eval",
            "--out",
            "analysis",
            "--record-bin",
            "10",
        ],
    );
}

#[test]
fn pipeline_is_deterministic() {
    let (a, b) = (workspace(true), workspace(true));
    full_pipeline(a.path());
    full_pipeline(b.path());
    for file in [
        "data/manifest.toml",
        "graph/edges.tsv",
        "run/metrics.tsv",
        "run/train_log.tsv",
        "run/best.bin",
        "run/run.toml",
        "eval/metrics.tsv",
        "eval/predictions.tsv",
        "eval/run.toml",
        "analysis/groups_record_count.tsv",
        "analysis/groups_location_entropy.tsv",
        "analysis/distance_cdf.tsv",
    ] {
        let (x, y) = (
            fs::read(a.path().join(file)).unwrap(),
            fs::read(b.path().join(file)).unwrap(),
        );
        assert!(x == y, "{file} differs between runs");
    }
    assert_eq!(
        fs::read(a.path().join("run/metrics.tsv")).unwrap(),
        fs::read(a.path().join("eval/metrics.tsv")).unwrap()
    );
    let cdf = fs::read_to_string(a.path().join("analysis/distance_cdf.tsv")).unwrap();
    assert!(cdf.trim_end().ends_with("\t1"));
}
