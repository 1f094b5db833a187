use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::info;
use rand::seq::SliceRandom;

use super::{Group, ModelConfig, ModelData, ModelError, TrajGeos};
use crate::evaluation::{evaluate, Metrics, MetricsTable};
use crate::nn::StepRngs;
use crate::rng;
use crate::tensor::{load_checkpoint, save_checkpoint, Adam, Real, Tape, Tensor};

pub const LAST_STEM: &str = "last";
pub const BEST_STEM: &str = "best";
pub const LOG_FILE: &str = "train_log.tsv";
pub(crate) const ADAM_PREFIX: &str = "adam.";

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Checkpoints and the log go here when set.
    pub out_dir: Option<PathBuf>,
    /// Continue from `out_dir/last`.
    pub resume: bool,
    /// Stop after this many completed epochs (for staged runs).
    pub stop_after: Option<usize>,
    pub dataset_hash: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    /// Sample-weighted mean training loss.
    pub loss: f64,
    pub test: Metrics,
}

pub struct TrainOutcome<T> {
    /// Parameters of the epoch with the highest test location Recall@1.
    pub best: TrajGeos<T>,
    pub best_epoch: usize,
    pub best_metrics: Metrics,
    pub last: TrajGeos<T>,
    /// Epochs run by this call.
    pub log: Vec<EpochLog>,
}

pub fn log_header() -> String {
    let cols = ["R@1", "R@5", "R@10", "M@10"];
    let mut h = vec!["epoch".to_string(), "loss".to_string()];
    for task in ["loc", "cat"] {
        h.extend(cols.iter().map(|c| format!("{task}_{c}")));
    }
    h.join("\t")
}

fn log_line(e: &EpochLog) -> String {
    let table = |t: Option<&MetricsTable>| match t {
        Some(t) => format!("{}\t{}\t{}\t{}", t.recall1, t.recall5, t.recall10, t.mrr10),
        None => "NA\tNA\tNA\tNA".to_string(),
    };
    format!(
        "{}\t{}\t{}\t{}",
        e.epoch,
        e.loss,
        table(Some(&e.test.location)),
        table(e.test.category.as_ref())
    )
}

/// Users in shuffled order, each followed by its own shuffled groups.
fn epoch_order(groups: &[Group], seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = rng::stream(seed, rng::SHUFFLE, epoch as u64);
    let mut by_user: Vec<(usize, Vec<usize>)> = Vec::new();
    for (i, g) in groups.iter().enumerate() {
        match by_user.iter_mut().find(|(u, _)| *u == g.user) {
            Some((_, v)) => v.push(i),
            None => by_user.push((g.user, vec![i])),
        }
    }
    by_user.shuffle(&mut rng);
    let mut order = Vec::with_capacity(groups.len());
    for (_, mut v) in by_user {
        v.shuffle(&mut rng);
        order.extend(v);
    }
    order
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ModelError + '_ {
    move |source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    }
}

struct Resumed<T> {
    epoch: usize,
    best: Option<(TrajGeos<T>, usize, f64)>,
}

fn comparable(cfg: &ModelConfig) -> toml::Table {
    let mut t = cfg.to_table();
    t.remove("epochs");
    t
}

fn resume<T: Real>(
    dir: &Path,
    config: &ModelConfig,
    model: &mut TrajGeos<T>,
    adam: &mut Adam<T>,
) -> Result<Resumed<T>, ModelError> {
    let ck = load_checkpoint::<T>(&dir.join(LAST_STEM))?;
    let stored: ModelConfig = toml::Value::Table(ck.meta.config.clone())
        .try_into()
        .map_err(|e: toml::de::Error| super::ConfigError::Parse(e.to_string()))?;
    if comparable(&stored) != comparable(config) {
        return Err(ModelError::Data(
            "checkpoint was trained with a different configuration".into(),
        ));
    }
    ck.apply_to(&mut model.store, ADAM_PREFIX)?;
    let moment = |kind: &str| -> Result<Vec<Tensor<T>>, ModelError> {
        model
            .store
            .iter()
            .map(|(_, p)| {
                let name = format!("{ADAM_PREFIX}{kind}.{}", p.name);
                ck.tensor(&name)
                    .filter(|t| t.shape() == p.value.shape())
                    .cloned()
                    .ok_or_else(|| {
                        ModelError::Data(format!("checkpoint lacks optimizer tensor {name}"))
                    })
            })
            .collect()
    };
    let (m, v) = (moment("m")?, moment("v")?);
    adam.restore(ck.meta.optimizer_step, m, v);
    let best = match ck.meta.state.get("best_epoch").and_then(|v| v.as_integer()) {
        Some(epoch) => {
            let r1 = ck
                .meta
                .state
                .get("best_recall1")
                .and_then(|v| v.as_float())
                .unwrap_or(f64::NEG_INFINITY);
            let (best, _) = TrajGeos::load(&dir.join(BEST_STEM), model.sizes)?;
            Some((best, epoch as usize, r1))
        }
        None => None,
    };
    // Drop log lines beyond the checkpoint so the log matches the state.
    let log_path = dir.join(LOG_FILE);
    if let Ok(text) = fs::read_to_string(&log_path) {
        let keep: Vec<&str> = text
            .lines()
            .enumerate()
            .filter(|(i, l)| {
                *i == 0
                    || l.split('\t')
                        .next()
                        .and_then(|e| e.parse::<u64>().ok())
                        .is_some_and(|e| e <= ck.meta.epoch)
            })
            .map(|(_, l)| l)
            .collect();
        fs::write(&log_path, keep.join("\n") + "\n").map_err(io_err(&log_path))?;
    }
    Ok(Resumed {
        epoch: ck.meta.epoch as usize,
        best,
    })
}

fn save_last<T: Real>(
    dir: &Path,
    model: &TrajGeos<T>,
    adam: &Adam<T>,
    hash: &str,
    epoch: usize,
    best: Option<(usize, f64)>,
) -> Result<(), ModelError> {
    let mut meta = model.meta(hash, epoch as u64);
    meta.optimizer_step = adam.step_count();
    if let Some((e, r1)) = best {
        meta.state
            .insert("best_epoch".into(), toml::Value::Integer(e as i64));
        meta.state
            .insert("best_recall1".into(), toml::Value::Float(r1));
    }
    let mut tensors = model.named_tensors();
    let (m, v) = adam.moments();
    let names: Vec<String> = model.store.iter().map(|(_, p)| p.name.clone()).collect();
    for (name, t) in names.iter().zip(m) {
        tensors.push((format!("{ADAM_PREFIX}m.{name}"), t));
    }
    for (name, t) in names.iter().zip(v) {
        tensors.push((format!("{ADAM_PREFIX}v.{name}"), t));
    }
    save_checkpoint(&dir.join(LAST_STEM), &meta, &tensors)?;
    Ok(())
}

/// Mini-batch training with per-epoch evaluation on the test groups.
pub fn train<T: Real>(
    data: &ModelData<T>,
    config: &ModelConfig,
    opts: &TrainOptions,
) -> Result<TrainOutcome<T>, ModelError> {
    config.validate()?;
    if data.train.is_empty() || data.test.is_empty() {
        return Err(ModelError::Data(
            "both train and test samples are required".into(),
        ));
    }
    let mut model = TrajGeos::<T>::new(config, data.sizes())?;
    let mut adam = Adam::new(config.adam(), &model.store);
    let mut start = 0;
    let mut best: Option<(TrajGeos<T>, usize, f64)> = None;
    let mut best_metrics: Option<Metrics> = None;

    if let Some(dir) = &opts.out_dir {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        if opts.resume {
            let r = resume(dir, config, &mut model, &mut adam)?;
            start = r.epoch;
            best = r.best;
            info!("resumed at epoch {start}");
        } else {
            let p = dir.join(LOG_FILE);
            fs::write(&p, log_header() + "\n").map_err(io_err(&p))?;
        }
    } else if opts.resume {
        return Err(ModelError::Data(
            "resume requires an output directory".into(),
        ));
    }
    if let Some((b, _, _)) = &best {
        best_metrics = Some(evaluate(b, data, &data.test, config.batch_size)?.metrics);
    }

    let end = opts
        .stop_after
        .map_or(config.epochs, |s| s.min(config.epochs));
    let mut log = Vec::new();
    for epoch in start..end {
        let order = epoch_order(&data.train, config.seed, epoch);
        let mut rngs = StepRngs::for_epoch(config.seed, epoch as u64);
        let (mut total, mut count) = (0.0, 0usize);
        for (step, chunk) in order.chunks(config.batch_size).enumerate() {
            let groups: Vec<&Group> = chunk.iter().map(|&i| &data.train[i]).collect();
            let mut tape = Tape::new(true);
            let out = model.forward(&mut tape, data, &groups, &mut rngs)?;
            let loss = model.loss(&mut tape, &out, &groups)?;
            let value = tape.value(loss).item().f64();
            if !value.is_finite() {
                return Err(ModelError::Diverged {
                    epoch: epoch + 1,
                    step,
                });
            }
            let n: usize = groups.iter().map(|g| g.samples.len()).sum();
            total += value * n as f64;
            count += n;
            let grads = tape.backward(loss)?;
            let grads = grads.params(&model.store);
            adam.step(&mut model.store, &grads);
        }
        let metrics = evaluate(&model, data, &data.test, config.batch_size)?.metrics;
        let entry = EpochLog {
            epoch: epoch + 1,
            loss: total / count as f64,
            test: metrics,
        };
        info!(
            "epoch {} loss {:.5} test R@1 {:.4}",
            entry.epoch, entry.loss, entry.test.location.recall1
        );
        let r1 = entry.test.location.recall1;
        let improved = best.as_ref().is_none_or(|(_, _, b)| r1 > *b);
        if improved {
            best = Some((model.clone(), epoch + 1, r1));
            best_metrics = Some(entry.test.clone());
        }
        if let Some(dir) = &opts.out_dir {
            if improved {
                model.save(&dir.join(BEST_STEM), &opts.dataset_hash, (epoch + 1) as u64)?;
            }
            let b = best.as_ref().map(|(_, e, r)| (*e, *r));
            save_last(dir, &model, &adam, &opts.dataset_hash, epoch + 1, b)?;
            let p = dir.join(LOG_FILE);
            let mut f = fs::OpenOptions::new()
                .append(true)
                .create(true)
                .open(&p)
                .map_err(io_err(&p))?;
            writeln!(f, "{}", log_line(&entry)).map_err(io_err(&p))?;
        }
        log.push(entry);
    }

    let (best, best_epoch, _) = match best {
        Some(b) => b,
        None => {
            let m = evaluate(&model, data, &data.test, config.batch_size)?.metrics;
            best_metrics = Some(m);
            (model.clone(), start, f64::NAN)
        }
    };
    Ok(TrainOutcome {
        best,
        best_epoch,
        best_metrics: best_metrics.expect("set with best"),
        last: model,
        log,
    })
}
