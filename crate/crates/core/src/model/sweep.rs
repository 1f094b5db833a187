use serde::{Deserialize, Serialize};

use super::{train, Ablation, ModelConfig, ModelData, ModelError, OrientationMode, TrainOptions};
use crate::evaluation::{Metrics, MetricsTable};
use crate::ingest::DatasetSplit;
use crate::tensor::Real;
use crate::trajgraph::GlobalTrajectoryGraph;

/// Values to try per axis. An empty axis keeps the base config's value.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepGrid {
    pub alpha: Vec<f64>,
    pub recent_weeks: Vec<usize>,
    pub n_global: Vec<usize>,
    pub n_user: Vec<usize>,
    pub orientation: Vec<OrientationMode>,
    pub ablation: Vec<Ablation>,
}

impl SweepGrid {
    /// Cartesian product in axis order, the last axis varying fastest.
    pub fn points(&self, base: &ModelConfig) -> Vec<ModelConfig> {
        fn axis<V: Clone>(values: &[V], base: V) -> Vec<V> {
            if values.is_empty() {
                vec![base]
            } else {
                values.to_vec()
            }
        }
        let mut out = Vec::new();
        for alpha in axis(&self.alpha, base.alpha) {
            for recent_weeks in axis(&self.recent_weeks, base.recent_weeks) {
                for n_global in axis(&self.n_global, base.n_global) {
                    for n_user in axis(&self.n_user, base.n_user) {
                        for orientation in axis(&self.orientation, base.orientation) {
                            for ablation in axis(&self.ablation, base.ablation) {
                                out.push(ModelConfig {
                                    alpha,
                                    recent_weeks,
                                    n_global,
                                    n_user,
                                    orientation,
                                    ablation,
                                    ..base.clone()
                                });
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

/// One axis of a [`SweepGrid`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepAxis {
    Alpha,
    RecentWeeks,
    NGlobal,
    NUser,
    Orientation,
    Ablation,
}

impl SweepAxis {
    pub const ALL: [SweepAxis; 6] = [
        SweepAxis::Alpha,
        SweepAxis::RecentWeeks,
        SweepAxis::NGlobal,
        SweepAxis::NUser,
        SweepAxis::Orientation,
        SweepAxis::Ablation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Alpha => "alpha",
            SweepAxis::RecentWeeks => "recent_weeks",
            SweepAxis::NGlobal => "n_global",
            SweepAxis::NUser => "n_user",
            SweepAxis::Orientation => "orientation",
            SweepAxis::Ablation => "ablation",
        }
    }

    pub fn value(self, c: &ModelConfig) -> String {
        match self {
            SweepAxis::Alpha => c.alpha.to_string(),
            SweepAxis::RecentWeeks => c.recent_weeks.to_string(),
            SweepAxis::NGlobal => c.n_global.to_string(),
            SweepAxis::NUser => c.n_user.to_string(),
            SweepAxis::Orientation => c.orientation.to_string(),
            SweepAxis::Ablation => c.ablation.to_string(),
        }
    }
}

impl SweepGrid {
    /// Axes with at least one listed value.
    pub fn varied_axes(&self) -> Vec<SweepAxis> {
        let lens = [
            self.alpha.len(),
            self.recent_weeks.len(),
            self.n_global.len(),
            self.n_user.len(),
            self.orientation.len(),
            self.ablation.len(),
        ];
        SweepAxis::ALL
            .iter()
            .zip(lens)
            .filter(|(_, n)| *n > 0)
            .map(|(&a, _)| a)
            .collect()
    }
}

/// The full model followed by the four ablated variants.
pub fn ablation_grid() -> SweepGrid {
    SweepGrid {
        ablation: Ablation::ALL.to_vec(),
        ..Default::default()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    pub config: ModelConfig,
    /// Best-epoch test metrics, averaged over runs.
    pub metrics: Metrics,
    pub runs: usize,
}

fn mean_table(tables: &[&MetricsTable]) -> MetricsTable {
    let n = tables.len() as f64;
    let avg = |f: fn(&MetricsTable) -> f64| tables.iter().map(|t| f(t)).sum::<f64>() / n;
    MetricsTable {
        count: tables[0].count,
        recall1: avg(|t| t.recall1),
        recall5: avg(|t| t.recall5),
        recall10: avg(|t| t.recall10),
        mrr10: avg(|t| t.mrr10),
    }
}

fn mean_metrics(all: &[Metrics]) -> Metrics {
    if all.len() == 1 {
        return all[0].clone();
    }
    let loc: Vec<&MetricsTable> = all.iter().map(|m| &m.location).collect();
    let cat: Option<Vec<&MetricsTable>> = all.iter().map(|m| m.category.as_ref()).collect();
    Metrics {
        location: mean_table(&loc),
        category: cat.map(|c| mean_table(&c)),
    }
}

/// One train + evaluate per grid point; `runs > 1` repeats each point with
/// seeds `seed, seed + 1, ...` and averages.
pub fn run_sweep<T: Real>(
    split: &DatasetSplit,
    graph: &GlobalTrajectoryGraph,
    base: &ModelConfig,
    grid: &SweepGrid,
    runs: usize,
    dataset_hash: &str,
) -> Result<Vec<SweepResult>, ModelError> {
    let runs = runs.max(1);
    let mut results = Vec::new();
    for config in grid.points(base) {
        config.validate()?;
        let data = ModelData::<T>::new(split.clone(), graph, &config)?;
        let mut all = Vec::with_capacity(runs);
        for r in 0..runs {
            let cfg = ModelConfig {
                seed: config.seed.wrapping_add(r as u64),
                ..config.clone()
            };
            let opts = TrainOptions {
                dataset_hash: dataset_hash.to_string(),
                ..Default::default()
            };
            all.push(train(&data, &cfg, &opts)?.best_metrics);
        }
        results.push(SweepResult {
            metrics: mean_metrics(&all),
            config,
            runs,
        });
    }
    Ok(results)
}

pub fn results_header() -> String {
    let mut h: Vec<String> = [
        "alpha",
        "recent_weeks",
        "n_global",
        "n_user",
        "orientation",
        "ablation",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for task in ["loc", "cat"] {
        for m in ["R@1", "R@5", "R@10", "M@10"] {
            h.push(format!("{task}_{m}"));
        }
    }
    h.join("\t")
}

pub fn results_row(r: &SweepResult) -> String {
    let c = &r.config;
    let table = |t: Option<&MetricsTable>| match t {
        Some(t) => format!(
            "{:.4}\t{:.4}\t{:.4}\t{:.4}",
            t.recall1, t.recall5, t.recall10, t.mrr10
        ),
        None => "NA\tNA\tNA\tNA".into(),
    };
    format!(
        "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
        c.alpha,
        c.recent_weeks,
        c.n_global,
        c.n_user,
        c.orientation,
        c.ablation,
        table(Some(&r.metrics.location)),
        table(r.metrics.category.as_ref())
    )
}

/// One row per result keyed by `axis`, category metrics before location
/// metrics.
pub fn axis_table(results: &[SweepResult], axis: SweepAxis) -> String {
    let mut out = String::from(axis.name());
    for task in ["cat", "loc"] {
        for m in ["R@1", "R@5", "R@10", "M@10"] {
            out.push_str(&format!("\t{task}_{m}"));
        }
    }
    out.push('\n');
    let cells = |t: Option<&MetricsTable>| match t {
        Some(t) => format!(
            "{:.4}\t{:.4}\t{:.4}\t{:.4}",
            t.recall1, t.recall5, t.recall10, t.mrr10
        ),
        None => "NA\tNA\tNA\tNA".into(),
    };
    for r in results {
        out.push_str(&format!(
            "{}\t{}\t{}\n",
            axis.value(&r.config),
            cells(r.metrics.category.as_ref()),
            cells(Some(&r.metrics.location))
        ));
    }
    out
}
