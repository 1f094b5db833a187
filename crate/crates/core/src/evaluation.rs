//! Ranking metrics, model evaluation with per-sample dumps, visit entropies,
//! grouped accuracy analyses and the distance-error CDF.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use thiserror::Error;

use crate::geo::haversine;
use crate::ingest::{Catalog, DatasetSplit, Record};
use crate::model::{Group, ModelData, ModelError, TrajGeos};
use crate::tensor::{Real, Tensor};

pub const TOP_K: usize = 10;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no samples to score")]
    Empty,
    #[error("prediction dump line {line}: {msg}")]
    Dump { line: usize, msg: String },
    #[error("super-category mapping line {line}: {msg}")]
    Mapping { line: usize, msg: String },
    #[error("category {0:?} is missing from the super-category mapping")]
    Unmapped(String),
    #[error("user {0} of the dump is not in the dataset")]
    UnknownUser(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsTable {
    pub count: usize,
    pub recall1: f64,
    pub recall5: f64,
    pub recall10: f64,
    pub mrr10: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Metrics {
    pub location: MetricsTable,
    pub category: Option<MetricsTable>,
}

/// `R@K = mean 1[rank ≤ K]`, `M@10 = mean 1[rank ≤ 10] / rank`, with 1-based
/// ranks.
pub fn recall_mrr(ranks: &[usize]) -> Result<MetricsTable, EvalError> {
    if ranks.is_empty() {
        return Err(EvalError::Empty);
    }
    let (mut r1, mut r5, mut r10, mut mrr) = (0usize, 0usize, 0usize, 0.0);
    for &r in ranks {
        debug_assert!(r >= 1);
        r1 += (r <= 1) as usize;
        r5 += (r <= 5) as usize;
        if r <= 10 {
            r10 += 1;
            mrr += 1.0 / r as f64;
        }
    }
    let n = ranks.len() as f64;
    Ok(MetricsTable {
        count: ranks.len(),
        recall1: r1 as f64 / n,
        recall5: r5 as f64 / n,
        recall10: r10 as f64 / n,
        mrr10: mrr / n,
    })
}

/// 1-based position of `target` when scores are sorted descending, ties
/// going to the lower index.
pub fn rank_of<T: Real>(scores: &[T], target: usize) -> usize {
    let t = scores[target];
    1 + scores
        .iter()
        .enumerate()
        .filter(|&(j, &s)| s > t || (s == t && j < target))
        .count()
}

/// Indices of the `k` largest scores, descending, ties to the lower index.
pub fn top_k<T: Real>(scores: &[T], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx.truncate(k);
    idx
}

/// One scored test sample.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplePrediction {
    pub user_index: usize,
    pub trajectory: usize,
    pub prefix_len: usize,
    pub target_location: usize,
    pub location_rank: usize,
    pub top_locations: Vec<usize>,
    pub target_category: Option<usize>,
    pub category_rank: Option<usize>,
    pub top_category: Option<usize>,
}

pub struct Evaluation {
    pub metrics: Metrics,
    pub predictions: Vec<SamplePrediction>,
}

/// Scores every sample of `groups` in eval mode, `batch_size` groups at a
/// time.
pub fn evaluate<T: Real>(
    model: &TrajGeos<T>,
    data: &ModelData<T>,
    groups: &[Group],
    batch_size: usize,
) -> Result<Evaluation, ModelError> {
    let mut predictions = Vec::new();
    for chunk in groups.chunks(batch_size.max(1)) {
        let refs: Vec<&Group> = chunk.iter().collect();
        let (loc, cat) = model.predict(data, &refs)?;
        for (row, s) in chunk.iter().flat_map(|g| &g.samples).enumerate() {
            let scores = loc.row_slice(row);
            let (category_rank, top_category) = match (&cat, s.target_category) {
                (Some(c), Some(t)) => {
                    let cs = c.row_slice(row);
                    (Some(rank_of(cs, t)), Some(top_k(cs, 1)[0]))
                }
                _ => (None, None),
            };
            predictions.push(SamplePrediction {
                user_index: s.user_index,
                trajectory: s.trajectory,
                prefix_len: s.prefix_len,
                target_location: s.target_location,
                location_rank: rank_of(scores, s.target_location),
                top_locations: top_k(scores, TOP_K),
                target_category: s.target_category,
                category_rank,
                top_category,
            });
        }
    }
    let metrics = metrics_of(&predictions).map_err(|e| ModelError::Data(e.to_string()))?;
    Ok(Evaluation {
        metrics,
        predictions,
    })
}

pub fn metrics_of(predictions: &[SamplePrediction]) -> Result<Metrics, EvalError> {
    let loc: Vec<usize> = predictions.iter().map(|p| p.location_rank).collect();
    let cat: Option<Vec<usize>> = predictions.iter().map(|p| p.category_rank).collect();
    Ok(Metrics {
        location: recall_mrr(&loc)?,
        category: match cat {
            Some(c) if !c.is_empty() => Some(recall_mrr(&c)?),
            _ => None,
        },
    })
}

/// Ranks from raw logits, for tests and external scorers.
pub fn ranks_from_logits<T: Real>(logits: &Tensor<T>, targets: &[usize]) -> Vec<usize> {
    targets
        .iter()
        .enumerate()
        .map(|(r, &t)| rank_of(logits.row_slice(r), t))
        .collect()
}

pub const DUMP_HEADER: &str =
    "user_index\ttrajectory\tprefix_len\ttarget_location\tlocation_rank\ttarget_category\tcategory_rank\ttop_category\ttop10_locations";

fn opt(v: Option<usize>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

/// Tab-separated per-sample dump; top-10 locations are comma separated.
pub fn write_predictions(
    mut w: impl Write,
    predictions: &[SamplePrediction],
) -> std::io::Result<()> {
    writeln!(w, "{DUMP_HEADER}")?;
    for p in predictions {
        let top: Vec<String> = p.top_locations.iter().map(|x| x.to_string()).collect();
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            p.user_index,
            p.trajectory,
            p.prefix_len,
            p.target_location,
            p.location_rank,
            opt(p.target_category),
            opt(p.category_rank),
            opt(p.top_category),
            top.join(",")
        )?;
    }
    Ok(())
}

pub fn read_predictions(r: impl BufRead) -> Result<Vec<SamplePrediction>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let n = i + 1;
        if n == 1 {
            if line != DUMP_HEADER {
                return Err(EvalError::Dump {
                    line: n,
                    msg: "unexpected header".into(),
                });
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let bad = |msg: &str| EvalError::Dump {
            line: n,
            msg: msg.to_string(),
        };
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 9 {
            return Err(bad("expected 9 columns"));
        }
        let num = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| bad(&format!("bad integer {s:?}")))
        };
        let optnum = |s: &str| {
            if s == "NA" {
                Ok(None)
            } else {
                num(s).map(Some)
            }
        };
        let top = if f[8].is_empty() {
            Vec::new()
        } else {
            f[8].split(',').map(num).collect::<Result<_, _>>()?
        };
        out.push(SamplePrediction {
            user_index: num(f[0])?,
            trajectory: num(f[1])?,
            prefix_len: num(f[2])?,
            target_location: num(f[3])?,
            location_rank: num(f[4])?,
            target_category: optnum(f[5])?,
            category_rank: optnum(f[6])?,
            top_category: optnum(f[7])?,
            top_locations: top,
        });
    }
    Ok(out)
}

/// Shannon entropy in nats of a count vector; zero counts are skipped.
pub fn entropy(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let t = total as f64;
    let h: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let q = c as f64 / t;
            -q * q.ln()
        })
        .sum();
    h.max(0.0)
}

fn counts_of<'a>(keys: impl Iterator<Item = usize>) -> Vec<u64> {
    let mut m: HashMap<usize, u64> = HashMap::new();
    for k in keys {
        *m.entry(k).or_default() += 1;
    }
    let mut v: Vec<(usize, u64)> = m.into_iter().collect();
    v.sort_unstable();
    v.into_iter().map(|(_, c)| c).collect()
}

pub fn location_entropy<'a>(history: impl IntoIterator<Item = &'a Record>) -> f64 {
    entropy(&counts_of(history.into_iter().map(|r| r.location_index)))
}

/// Records without a category are ignored.
pub fn category_entropy<'a>(history: impl IntoIterator<Item = &'a Record>) -> f64 {
    entropy(&counts_of(
        history.into_iter().filter_map(|r| r.category_index),
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Grouping {
    /// Training record count, bins of `record_bin` records.
    RecordCount,
    /// Training-history location entropy, bins of `entropy_bin` nats.
    LocationEntropy,
    CategoryEntropy,
    /// Super-category of the target location's category.
    SuperCategory,
}

impl std::str::FromStr for Grouping {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "record_count" => Ok(Grouping::RecordCount),
            "location_entropy" => Ok(Grouping::LocationEntropy),
            "category_entropy" => Ok(Grouping::CategoryEntropy),
            "super_category" => Ok(Grouping::SuperCategory),
            _ => Err(format!(
                "unknown grouping {s:?} (expected record_count, location_entropy, category_entropy or super_category)"
            )),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BinEdges {
    pub record_bin: f64,
    pub entropy_bin: f64,
}

impl Default for BinEdges {
    fn default() -> Self {
        BinEdges {
            record_bin: 50.0,
            entropy_bin: 0.5,
        }
    }
}

/// Fixed-width bin `[k w, (k + 1) w)` containing `x`.
pub fn bin_index(x: f64, width: f64) -> usize {
    (x / width).floor().max(0.0) as usize
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupRow {
    pub label: String,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub users: usize,
    pub samples: usize,
    /// Fraction of all samples.
    pub share: f64,
    pub recall1: f64,
}

/// Buckets samples by a property of their user (or target), reporting the
/// mean location Recall@1 and population per bucket.
pub fn group_analysis(
    predictions: &[SamplePrediction],
    split: &DatasetSplit,
    grouping: Grouping,
    edges: BinEdges,
    super_categories: Option<&HashMap<String, String>>,
) -> Result<Vec<GroupRow>, EvalError> {
    if predictions.is_empty() {
        return Err(EvalError::Empty);
    }
    let catalog = &split.catalog;
    let user_value = |u: usize| -> Result<f64, EvalError> {
        let user = split.users.get(u).ok_or(EvalError::UnknownUser(u))?;
        Ok(match grouping {
            Grouping::RecordCount => user.train_records().count() as f64,
            Grouping::LocationEntropy => location_entropy(user.train_records()),
            Grouping::CategoryEntropy => category_entropy(user.train_records()),
            Grouping::SuperCategory => unreachable!(),
        })
    };

    // key -> (label, lower, upper, users, samples, hits)
    type Acc = (String, Option<f64>, Option<f64>, Vec<usize>, usize, usize);
    let mut buckets: Vec<(u64, Acc)> = Vec::new();
    let mut cache: HashMap<usize, f64> = HashMap::new();
    let mut names: Vec<String> = Vec::new();
    for p in predictions {
        let (key, label, lower, upper) = match grouping {
            Grouping::SuperCategory => {
                let map = super_categories.ok_or_else(|| EvalError::Mapping {
                    line: 0,
                    msg: "super_category grouping requires a mapping file".into(),
                })?;
                let cat = catalog.locations[p.target_location]
                    .category
                    .map(|c| &catalog.categories[c])
                    .ok_or_else(|| EvalError::Unmapped("<none>".into()))?;
                let name = map
                    .get(&cat.id)
                    .or_else(|| cat.name.as_ref().and_then(|n| map.get(n)))
                    .ok_or_else(|| EvalError::Unmapped(cat.id.clone()))?;
                let k = match names.iter().position(|n| n == name) {
                    Some(k) => k,
                    None => {
                        names.push(name.clone());
                        names.len() - 1
                    }
                };
                (k as u64, name.clone(), None, None)
            }
            _ => {
                let v = match cache.get(&p.user_index) {
                    Some(&v) => v,
                    None => {
                        let v = user_value(p.user_index)?;
                        cache.insert(p.user_index, v);
                        v
                    }
                };
                let width = if grouping == Grouping::RecordCount {
                    edges.record_bin
                } else {
                    edges.entropy_bin
                };
                let b = bin_index(v, width);
                let (lo, hi) = (b as f64 * width, (b + 1) as f64 * width);
                (b as u64, format!("[{lo}, {hi})"), Some(lo), Some(hi))
            }
        };
        let slot = match buckets.iter().position(|(k, _)| *k == key) {
            Some(i) => i,
            None => {
                buckets.push((key, (label, lower, upper, Vec::new(), 0, 0)));
                buckets.len() - 1
            }
        };
        let acc = &mut buckets[slot].1;
        if !acc.3.contains(&p.user_index) {
            acc.3.push(p.user_index);
        }
        acc.4 += 1;
        acc.5 += (p.location_rank == 1) as usize;
    }
    match grouping {
        Grouping::SuperCategory => buckets.sort_by(|a, b| a.1 .0.cmp(&b.1 .0)),
        _ => buckets.sort_by_key(|(k, _)| *k),
    }
    let total = predictions.len() as f64;
    Ok(buckets
        .into_iter()
        .map(
            |(_, (label, lower, upper, users, samples, hits))| GroupRow {
                label,
                lower,
                upper,
                users: users.len(),
                samples,
                share: samples as f64 / total,
                recall1: hits as f64 / samples as f64,
            },
        )
        .collect())
}

/// Tab-separated table with the binning settings in a comment line.
pub fn format_groups(rows: &[GroupRow], grouping: Grouping, edges: BinEdges) -> String {
    let mut s = String::new();
    let desc = match grouping {
        Grouping::RecordCount => format!("record_count bins of width {}", edges.record_bin),
        Grouping::LocationEntropy => format!(
            "location_entropy (nats) bins of width {}",
            edges.entropy_bin
        ),
        Grouping::CategoryEntropy => format!(
            "category_entropy (nats) bins of width {}",
            edges.entropy_bin
        ),
        Grouping::SuperCategory => "super_category of the target location".to_string(),
    };
    writeln!(s, "# {desc}").unwrap();
    writeln!(s, "bucket\tlower\tupper\tusers\tsamples\tshare\tR@1").unwrap();
    let f = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| x.to_string());
    for r in rows {
        writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}\t{:.6}\t{:.6}",
            r.label,
            f(r.lower),
            f(r.upper),
            r.users,
            r.samples,
            r.share,
            r.recall1
        )
        .unwrap();
    }
    s
}

/// Reads `category<TAB>super_category` lines; `#` starts a comment.
pub fn read_super_categories(r: impl BufRead) -> Result<HashMap<String, String>, EvalError> {
    let mut map = HashMap::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let (k, v) = t.split_once('\t').ok_or_else(|| EvalError::Mapping {
            line: i + 1,
            msg: "expected two tab-separated columns".into(),
        })?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

/// Great-circle distance from each sample's top-1 location to its target.
pub fn distance_errors(predictions: &[SamplePrediction], catalog: &Catalog) -> Vec<f64> {
    predictions
        .iter()
        .filter_map(|p| {
            p.top_locations.first().map(|&top| {
                haversine(
                    catalog.coordinates(top),
                    catalog.coordinates(p.target_location),
                )
            })
        })
        .collect()
}

/// Empirical CDF `(d, F(d))` over the distinct sorted errors.
pub fn distance_error_cdf(predictions: &[SamplePrediction], catalog: &Catalog) -> Vec<(f64, f64)> {
    cdf_points(distance_errors(predictions, catalog))
}

pub fn cdf_points(mut errors: Vec<f64>) -> Vec<(f64, f64)> {
    errors.sort_by(|a, b| a.total_cmp(b));
    let n = errors.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, &d) in errors.iter().enumerate() {
        let f = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == d => last.1 = f,
            _ => out.push((d, f)),
        }
    }
    out
}
