use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::info;
use trajgeos::evaluation::{
    self, distance_error_cdf, format_groups, group_analysis, read_predictions,
    read_super_categories, write_predictions, BinEdges, Grouping, Metrics, MetricsTable,
};
use trajgeos::ingest::{
    self, build_samples, load_dataset, parse_checkins, DatasetCounts, DatasetManifest,
    DatasetSplit, ParseOptions, MANIFEST_FILE,
};
use trajgeos::model::{
    ablation_grid, axis_table, results_header, results_row, run_sweep, ConfigError, ModelConfig,
    ModelData, SweepGrid, SweepResult, TrainOptions, TrajGeos, BEST_STEM, LAST_STEM, LOG_FILE,
};
use trajgeos::tensor::Real;
use trajgeos::trajgraph::{
    self, build_from_split, read_graph, GlobalTrajectoryGraph, GRAPH_MANIFEST_FILE,
};

use crate::manifest::{file_hash, RunManifest};
use crate::{
    AblateArgs, AnalyzeArgs, BuildGraphArgs, EvaluateArgs, ModelArgs, Precision, PreprocessArgs,
    SweepArgs, TrainArgs, Which,
};

pub const METRICS_FILE: &str = "metrics.tsv";
pub const PREDICTIONS_FILE: &str = "predictions.tsv";
pub const ABLATION_FILE: &str = "ablation.tsv";
pub const SWEEP_FILE: &str = "sweep.tsv";
pub const CDF_FILE: &str = "distance_cdf.tsv";

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Fails unless `path` exists, naming the subcommand that produces it.
fn require(path: &Path, what: &str, producer: &str) -> Result<()> {
    if !path.exists() {
        bail!(
            "missing {what} {}: run `trajgeos {producer}` first",
            path.display()
        );
    }
    Ok(())
}

struct Dataset {
    split: DatasetSplit,
    manifest: DatasetManifest,
    hash: String,
    manifest_path: PathBuf,
}

fn load_data(dir: &Path) -> Result<Dataset> {
    let manifest_path = dir.join(MANIFEST_FILE);
    require(&manifest_path, "dataset manifest", "preprocess")?;
    let (split, manifest, hash) =
        load_dataset(dir).with_context(|| format!("loading dataset {}", dir.display()))?;
    Ok(Dataset {
        split,
        manifest,
        hash,
        manifest_path,
    })
}

fn load_graph(dir: &Path, data: &Dataset) -> Result<(GlobalTrajectoryGraph, PathBuf)> {
    let path = dir.join(GRAPH_MANIFEST_FILE);
    require(&path, "graph manifest", "build-graph")?;
    let (graph, manifest) =
        read_graph(dir).with_context(|| format!("loading graph {}", dir.display()))?;
    if manifest.dataset_hash != data.hash {
        bail!(
            "graph {} was built from a different dataset; rerun `trajgeos build-graph --data ...`",
            dir.display()
        );
    }
    Ok((graph, path))
}

/// Config file, then flag overrides, then one validation pass reporting
/// every problem.
fn model_config(args: &ModelArgs) -> Result<ModelConfig> {
    let mut cfg = match &args.config {
        Some(p) => {
            let text =
                fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            toml::from_str::<ModelConfig>(&text)
                .map_err(|e| ConfigError::Parse(e.to_string()))
                .with_context(|| format!("config {}", p.display()))?
        }
        None => ModelConfig::default(),
    };
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.ablation {
        cfg.ablation = v;
    }
    if let Some(v) = args.alpha {
        cfg.alpha = v;
    }
    if let Some(v) = args.recent_weeks {
        cfg.recent_weeks = v;
    }
    if let Some(v) = args.orientation {
        cfg.orientation = v;
    }
    if let Some(v) = args.epochs {
        cfg.epochs = v;
    }
    if args.dallas_mode {
        cfg.dallas_mode = true;
    }
    if args.category_head {
        cfg.category_head = Some(true);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn check_categories(cfg: &ModelConfig, data: &Dataset) -> Result<()> {
    if !data.manifest.has_categories && !cfg.dallas_mode {
        bail!("dataset has no categories; set dallas_mode = true (or pass --dallas-mode)");
    }
    Ok(())
}

fn metrics_text(m: &Metrics) -> String {
    let mut s = String::from("task\tsamples\tR@1\tR@5\tR@10\tM@10\n");
    let mut row = |task: &str, t: &MetricsTable| {
        writeln!(
            s,
            "{task}\t{}\t{}\t{}\t{}\t{}",
            t.count, t.recall1, t.recall5, t.recall10, t.mrr10
        )
        .unwrap();
    };
    row("location", &m.location);
    if let Some(c) = &m.category {
        row("category", c);
    }
    s
}

pub fn preprocess(a: &PreprocessArgs) -> Result<()> {
    let opts = ParseOptions {
        skip_malformed: a.skip_malformed,
        default_tz_offset_minutes: a.tz_offset,
    };
    let report = parse_checkins(&a.input, a.schema, opts)
        .with_context(|| format!("parsing {}", a.input.display()))?;
    info!(
        "parsed {} check-ins ({} lines skipped)",
        report.checkins.len(),
        report.skipped
    );
    let (split, filtered) = ingest::preprocess(&report.checkins)?;
    let (train, test) = build_samples(&split, ModelConfig::default().recent_weeks);
    let n_train: usize = split.users.iter().map(|u| u.n_train).sum();
    let counts = DatasetCounts {
        users: split.catalog.num_users(),
        locations: split.catalog.num_locations(),
        categories: split.catalog.num_categories(),
        records: split.num_records(),
        sub_trajectories: split.num_trajectories(),
        train_sub_trajectories: n_train,
        test_sub_trajectories: split.num_trajectories() - n_train,
        train_samples: train.len(),
        test_samples: test.len(),
        filtered_users: filtered.catalog.num_users(),
        filtered_locations: filtered.catalog.num_locations(),
        filtered_records: filtered.num_records(),
    };
    info!(
        "kept {} users, {} locations, {} records in {} sub-trajectories",
        counts.users, counts.locations, counts.records, counts.sub_trajectories
    );
    let manifest = DatasetManifest {
        schema: a.schema.to_string(),
        source_sha256: file_hash(&a.input)?,
        raw_checkins: report.checkins.len(),
        skipped_lines: report.skipped,
        counts,
        ..Default::default()
    };
    let hash = ingest::write_dataset(&a.out, &split, manifest)?;
    info!("wrote dataset {} ({hash})", a.out.display());
    Ok(())
}

pub fn build_graph(a: &BuildGraphArgs) -> Result<()> {
    let data = load_data(&a.data)?;
    let graph = build_from_split(&data.split);
    let m = trajgraph::write_graph(&a.out, &graph, &data.split.catalog, &data.hash)?;
    info!(
        "wrote graph {}: {} nodes, {} edges, {} transitions",
        a.out.display(),
        m.num_nodes,
        m.num_edges,
        m.total_transitions
    );
    Ok(())
}

fn inputs(run: &mut RunManifest, data: &Dataset, graph_manifest: &Path) -> Result<()> {
    run.input(&data.manifest_path, &data.hash);
    run.input(graph_manifest, &file_hash(graph_manifest)?);
    Ok(())
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let cfg = model_config(&a.model)?;
    let data = load_data(&a.data)?;
    check_categories(&cfg, &data)?;
    let (graph, graph_manifest) = load_graph(&a.graph, &data)?;
    create_dir(&a.out)?;
    let mut run = RunManifest::new("train");
    run.seed = Some(cfg.seed);
    run.precision = Some(a.model.precision.name().into());
    run.config = cfg.to_table();
    inputs(&mut run, &data, &graph_manifest)?;

    let opts = TrainOptions {
        out_dir: Some(a.out.clone()),
        resume: a.resume,
        stop_after: a.stop_after,
        dataset_hash: data.hash.clone(),
    };
    let metrics = match a.model.precision {
        Precision::F32 => train_as::<f32>(data.split, &graph, &cfg, &opts)?,
        Precision::F64 => train_as::<f64>(data.split, &graph, &cfg, &opts)?,
    };
    if let Some(m) = &metrics {
        write_file(&a.out.join(METRICS_FILE), &metrics_text(m))?;
        run.artifacts.push(METRICS_FILE.into());
    }
    for stem in [BEST_STEM, LAST_STEM] {
        run.artifacts.push(format!("{stem}.bin"));
        run.artifacts.push(format!("{stem}.toml"));
    }
    run.artifacts.push(LOG_FILE.into());
    run.write(&a.out)?;
    Ok(())
}

/// Returns the best-epoch metrics when training ran to the configured end.
fn train_as<T: Real>(
    split: DatasetSplit,
    graph: &GlobalTrajectoryGraph,
    cfg: &ModelConfig,
    opts: &TrainOptions,
) -> Result<Option<Metrics>> {
    let data = ModelData::<T>::new(split, graph, cfg)?;
    info!(
        "training {} on {} train / {} test samples",
        cfg.ablation,
        data.num_train_samples(),
        data.num_test_samples()
    );
    let out = trajgeos::model::train(&data, cfg, opts)?;
    let finished = opts.stop_after.map_or(true, |s| s >= cfg.epochs);
    info!(
        "best epoch {}: location R@1 {:.4}",
        out.best_epoch, out.best_metrics.location.recall1
    );
    Ok(finished.then_some(out.best_metrics))
}

fn checkpoint_dtype(stem: &Path) -> Result<String> {
    let path = stem.with_extension("toml");
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let table: toml::Table = text
        .parse()
        .with_context(|| format!("parsing {}", path.display()))?;
    match table.get("dtype").and_then(|v| v.as_str()) {
        Some(d) => Ok(d.to_string()),
        None => bail!("checkpoint {} has no dtype", path.display()),
    }
}

pub fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let stem = a.model.join(match a.checkpoint {
        Which::Best => BEST_STEM,
        Which::Last => LAST_STEM,
    });
    require(&stem.with_extension("toml"), "checkpoint", "train")?;
    let data = load_data(&a.data)?;
    let (graph, graph_manifest) = load_graph(&a.graph, &data)?;
    create_dir(&a.out)?;
    let mut run = RunManifest::new("evaluate");
    inputs(&mut run, &data, &graph_manifest)?;
    for ext in ["toml", "bin"] {
        let p = stem.with_extension(ext);
        run.input(&p, &file_hash(&p)?);
    }
    let dtype = checkpoint_dtype(&stem)?;
    let hash = data.hash.clone();
    let (eval, cfg) = match dtype.as_str() {
        "f32" => evaluate_as::<f32>(&stem, data.split, &graph, &hash)?,
        "f64" => evaluate_as::<f64>(&stem, data.split, &graph, &hash)?,
        other => bail!("unsupported checkpoint dtype {other}"),
    };
    run.seed = Some(cfg.seed);
    run.precision = Some(dtype);
    run.config = cfg.to_table();
    write_file(&a.out.join(METRICS_FILE), &metrics_text(&eval.metrics))?;
    let p = a.out.join(PREDICTIONS_FILE);
    let mut buf = Vec::new();
    write_predictions(&mut buf, &eval.predictions)?;
    fs::write(&p, buf).with_context(|| format!("writing {}", p.display()))?;
    run.artifacts = vec![METRICS_FILE.into(), PREDICTIONS_FILE.into()];
    run.write(&a.out)?;
    print!("{}", metrics_text(&eval.metrics));
    Ok(())
}

fn evaluate_as<T: Real>(
    stem: &Path,
    split: DatasetSplit,
    graph: &GlobalTrajectoryGraph,
    dataset_hash: &str,
) -> Result<(evaluation::Evaluation, ModelConfig)> {
    let sizes = trajgeos::model::Sizes {
        users: split.catalog.num_users(),
        locations: split.catalog.num_locations(),
        categories: split.catalog.num_categories(),
    };
    let (model, meta) = TrajGeos::<T>::load(stem, sizes)?;
    if meta.dataset_hash != dataset_hash {
        bail!(
            "checkpoint {} was trained on a different dataset",
            stem.display()
        );
    }
    let cfg = model.config.clone();
    let data = ModelData::<T>::new(split, graph, &cfg)?;
    let eval = evaluation::evaluate(&model, &data, &data.test, cfg.batch_size)?;
    Ok((eval, cfg))
}

fn sweep_as<T: Real>(
    data: &Dataset,
    graph: &GlobalTrajectoryGraph,
    cfg: &ModelConfig,
    grid: &SweepGrid,
    runs: usize,
) -> Result<Vec<SweepResult>> {
    Ok(run_sweep::<T>(
        &data.split,
        graph,
        cfg,
        grid,
        runs,
        &data.hash,
    )?)
}

fn run_grid(
    model: &ModelArgs,
    data_dir: &Path,
    graph_dir: &Path,
    grid: &SweepGrid,
    runs: usize,
    command: &str,
) -> Result<(Vec<SweepResult>, RunManifest)> {
    let cfg = model_config(model)?;
    let data = load_data(data_dir)?;
    check_categories(&cfg, &data)?;
    let (graph, graph_manifest) = load_graph(graph_dir, &data)?;
    let points = grid.points(&cfg);
    let errors: Vec<String> = points
        .iter()
        .filter_map(|p| {
            p.validate()
                .err()
                .map(|e| format!("{} / {}: {e}", p.alpha, p.ablation))
        })
        .collect();
    if !errors.is_empty() {
        bail!("invalid grid points:\n{}", errors.join("\n"));
    }
    info!("{command}: {} configurations x {runs} runs", points.len());
    let mut run = RunManifest::new(command);
    run.seed = Some(cfg.seed);
    run.precision = Some(model.precision.name().into());
    run.config = cfg.to_table();
    inputs(&mut run, &data, &graph_manifest)?;
    let results = match model.precision {
        Precision::F32 => sweep_as::<f32>(&data, &graph, &cfg, grid, runs)?,
        Precision::F64 => sweep_as::<f64>(&data, &graph, &cfg, grid, runs)?,
    };
    Ok((results, run))
}

/// One row per variant with location (and category) metrics.
pub fn ablation_table(results: &[SweepResult]) -> String {
    let mut s = String::from(
        "variant\tloc_R@1\tloc_R@5\tloc_R@10\tloc_M@10\tcat_R@1\tcat_R@5\tcat_R@10\tcat_M@10\n",
    );
    for r in results {
        let cell = |t: Option<&MetricsTable>| match t {
            Some(t) => format!(
                "{:.4}\t{:.4}\t{:.4}\t{:.4}",
                t.recall1, t.recall5, t.recall10, t.mrr10
            ),
            None => "NA\tNA\tNA\tNA".into(),
        };
        writeln!(
            s,
            "{}\t{}\t{}",
            r.config.ablation,
            cell(Some(&r.metrics.location)),
            cell(r.metrics.category.as_ref())
        )
        .unwrap();
    }
    s
}

pub fn ablate(a: &AblateArgs) -> Result<()> {
    let (results, mut run) = run_grid(
        &a.model,
        &a.data,
        &a.graph,
        &ablation_grid(),
        a.runs,
        "ablate",
    )?;
    create_dir(&a.out)?;
    let table = ablation_table(&results);
    write_file(&a.out.join(ABLATION_FILE), &table)?;
    run.artifacts.push(ABLATION_FILE.into());
    run.write(&a.out)?;
    print!("{table}");
    Ok(())
}

pub fn sweep(a: &SweepArgs) -> Result<()> {
    let text = fs::read_to_string(&a.grid)
        .with_context(|| format!("reading grid {}", a.grid.display()))?;
    let grid: SweepGrid =
        toml::from_str(&text).with_context(|| format!("parsing grid {}", a.grid.display()))?;
    let (results, mut run) = run_grid(&a.model, &a.data, &a.graph, &grid, a.runs, "sweep")?;
    run.input(&a.grid, &file_hash(&a.grid)?);
    create_dir(&a.out)?;
    let mut table = results_header() + "\n";
    for r in &results {
        table.push_str(&results_row(r));
        table.push('\n');
    }
    write_file(&a.out.join(SWEEP_FILE), &table)?;
    run.artifacts.push(SWEEP_FILE.into());
    if let [axis] = grid.varied_axes()[..] {
        let name = format!("table_{}.tsv", axis.name());
        write_file(&a.out.join(&name), &axis_table(&results, axis))?;
        run.artifacts.push(name);
    }
    run.write(&a.out)?;
    print!("{table}");
    Ok(())
}

fn grouping_name(g: Grouping) -> &'static str {
    match g {
        Grouping::RecordCount => "record_count",
        Grouping::LocationEntropy => "location_entropy",
        Grouping::CategoryEntropy => "category_entropy",
        Grouping::SuperCategory => "super_category",
    }
}

pub fn analyze(a: &AnalyzeArgs) -> Result<()> {
    let pred_path = a.predictions.join(PREDICTIONS_FILE);
    require(&pred_path, "prediction dump", "evaluate")?;
    let data = load_data(&a.data)?;
    let file =
        fs::File::open(&pred_path).with_context(|| format!("opening {}", pred_path.display()))?;
    let preds = read_predictions(BufReader::new(file))
        .with_context(|| format!("reading {}", pred_path.display()))?;
    let catalog = &data.split.catalog;
    if let Some(bad) = preds.iter().find(|p| {
        p.user_index >= catalog.num_users() || p.target_location >= catalog.num_locations()
    }) {
        bail!(
            "prediction for user {} / location {} does not fit dataset {}",
            bad.user_index,
            bad.target_location,
            a.data.display()
        );
    }
    let supers: Option<HashMap<String, String>> = match &a.super_categories {
        Some(p) => {
            let f = fs::File::open(p).with_context(|| format!("opening {}", p.display()))?;
            Some(
                read_super_categories(BufReader::new(f))
                    .with_context(|| format!("reading {}", p.display()))?,
            )
        }
        None => None,
    };
    let groupings: Vec<Grouping> = if a.grouping.is_empty() {
        let mut g = vec![Grouping::RecordCount, Grouping::LocationEntropy];
        if catalog.has_categories() {
            g.push(Grouping::CategoryEntropy);
        }
        if supers.is_some() {
            g.push(Grouping::SuperCategory);
        }
        g
    } else {
        a.grouping.clone()
    };
    let edges = BinEdges {
        record_bin: a.record_bin,
        entropy_bin: a.entropy_bin,
    };
    if !(edges.record_bin > 0.0 && edges.entropy_bin > 0.0) {
        bail!("bin widths must be positive");
    }
    create_dir(&a.out)?;
    let mut run = RunManifest::new("analyze");
    run.input(&data.manifest_path, &data.hash);
    run.input(&pred_path, &file_hash(&pred_path)?);
    if let Some(p) = &a.super_categories {
        run.input(p, &file_hash(p)?);
    }
    for g in groupings {
        let rows = group_analysis(&preds, &data.split, g, edges, supers.as_ref())?;
        let name = format!("groups_{}.tsv", grouping_name(g));
        write_file(&a.out.join(&name), &format_groups(&rows, g, edges))?;
        info!("{name}: {} buckets", rows.len());
        run.artifacts.push(name);
    }
    let mut cdf = String::from(
        "# great-circle distance from the top-1 prediction to the target\ndistance_km\tcdf\n",
    );
    for (d, f) in distance_error_cdf(&preds, catalog) {
        writeln!(cdf, "{d}\t{f}").unwrap();
    }
    write_file(&a.out.join(CDF_FILE), &cdf)?;
    run.artifacts.push(CDF_FILE.into());
    run.write(&a.out)?;
    Ok(())
}
