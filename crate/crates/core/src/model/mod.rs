//! The full predictor: preference assembly, the two prediction heads, the
//! multi-task loss, training with checkpoint/resume, and configuration
//! sweeps.

mod config;
mod data;
mod sweep;
mod train;

pub use config::{Ablation, ConfigError, ModelConfig, OrientationMode};
pub use data::{group_samples, Group, ModelData};
pub use sweep::{
    ablation_grid, axis_table, results_header, results_row, run_sweep, SweepAxis, SweepGrid,
    SweepResult,
};
pub use train::{
    log_header, train, EpochLog, TrainOptions, TrainOutcome, BEST_STEM, LAST_STEM, LOG_FILE,
};

use std::collections::HashMap;
use std::ops::Range;
use std::path::Path;

use rand::Rng;
use thiserror::Error;

use crate::graph_encoder::{GlobalEncoder, GraphSettings, SubgraphBatch, UserEncoder};
use crate::nn::{embedding, Linear, StepRngs};
use crate::rng;
use crate::sequence_encoder::{positional_encoding, Gru, Orientation, TimeEncoder};
use crate::tensor::{
    load_checkpoint, save_checkpoint, CheckpointError, CheckpointMeta, ParamId, ParamStore, Real,
    Tape, Tensor, TensorError, Var,
};
use crate::trajgraph::{GraphError, UserSubgraph};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("dataset does not fit the model: {0}")]
    Data(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("training diverged: non-finite loss at epoch {epoch}, step {step}")]
    Diverged { epoch: usize, step: usize },
    #[error("cannot write {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
}

/// Hidden ReLU layer followed by a linear projection to class logits.
#[derive(Clone, Copy, Debug)]
pub struct Head {
    pub hidden: Linear,
    pub out: Linear,
}

impl Head {
    fn register<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        input: usize,
        hidden: usize,
        classes: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Head {
            hidden: Linear::register(store, &format!("{name}.hidden"), input, hidden, true, rng),
            out: Linear::register(store, &format!("{name}.out"), hidden, classes, true, rng),
        }
    }

    fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
    ) -> Result<Var, TensorError> {
        let h = self.hidden.forward(tape, store, x)?;
        let h = tape.relu(h);
        self.out.forward(tape, store, h)
    }

    pub fn scalar_count(input: usize, hidden: usize, classes: usize) -> usize {
        Linear::scalar_count(input, hidden, true) + Linear::scalar_count(hidden, classes, true)
    }
}

#[derive(Clone, Debug)]
struct Layout {
    /// Node embedding `emb.location`, or the plain table `emb.location_plain`
    /// when the graph is disabled.
    location: ParamId,
    category: Option<ParamId>,
    user: Option<ParamId>,
    global: Option<GlobalEncoder>,
    user_graph: Option<UserEncoder>,
    time: TimeEncoder,
    gru: Gru,
    recent_gru: Option<Gru>,
    orientation: Option<Orientation>,
    location_head: Head,
    category_head: Option<Head>,
}

/// Catalog sizes the parameter shapes depend on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Sizes {
    pub users: usize,
    pub locations: usize,
    pub categories: usize,
}

/// Parameters plus the configuration that shaped them.
#[derive(Clone, Debug)]
pub struct TrajGeos<T> {
    pub config: ModelConfig,
    pub sizes: Sizes,
    pub store: ParamStore<T>,
    layout: Layout,
}

/// Logits for every sample of a batch, in group then prefix order.
pub struct Output {
    pub location: Var,
    pub category: Option<Var>,
    pub preference: Var,
    /// Orientation weights, `[pairs, 1]`.
    pub attention: Option<Var>,
}

impl<T: Real> TrajGeos<T> {
    /// Registers every parameter from the `init` stream of `config.seed`.
    pub fn new(config: &ModelConfig, sizes: Sizes) -> Result<Self, ModelError> {
        config.validate()?;
        let c = config;
        if sizes.users == 0 || sizes.locations == 0 {
            return Err(ModelError::Data("empty user or location catalog".into()));
        }
        if (c.uses_category_embedding() || c.has_category_head()) && sizes.categories == 0 {
            return Err(ModelError::Data(
                "the dataset has no categories; set dallas_mode = true".into(),
            ));
        }
        let mut rng = rng::stream(c.seed, rng::INIT, 0);
        let rng = &mut rng;
        let mut store = ParamStore::new();
        let s = &mut store;
        let location = if c.uses_graph() {
            embedding(s, "emb.location", sizes.locations, c.location_dim, rng)
        } else {
            embedding(s, "emb.location_plain", sizes.locations, c.graph_dim, rng)
        };
        let category = c
            .uses_category_embedding()
            .then(|| embedding(s, "emb.category", sizes.categories, c.category_dim, rng));
        let user = c
            .uses_user_embedding()
            .then(|| embedding(s, "emb.user", sizes.users, c.user_dim, rng));
        let global = c
            .uses_graph()
            .then(|| GlobalEncoder::register(s, c.node_dim(), c.graph_dim, c.n_global, rng));
        let user_graph = c
            .uses_graph()
            .then(|| UserEncoder::register(s, c.graph_dim, c.n_user, rng));
        let time = TimeEncoder::register(s, c.time_dim, rng);
        let gru = Gru::register(s, "gru", c.record_dim(), c.gru_hidden, rng);
        let recent_gru = (c.orientation == OrientationMode::Gru)
            .then(|| Gru::register(s, "gru_recent", c.record_dim(), c.gru_hidden, rng));
        let orientation = c.uses_mid().then(|| {
            Orientation::register(s, c.record_dim(), c.gru_hidden, c.orientation_hidden, rng)
        });
        let pref = c.preference_dim();
        let location_head = Head::register(
            s,
            "head.location",
            pref,
            c.head_hidden,
            sizes.locations,
            rng,
        );
        let category_head = c.has_category_head().then(|| {
            Head::register(
                s,
                "head.category",
                pref,
                c.head_hidden,
                sizes.categories,
                rng,
            )
        });
        Ok(TrajGeos {
            config: c.clone(),
            sizes,
            store,
            layout: Layout {
                location,
                category,
                user,
                global,
                user_graph,
                time,
                gru,
                recent_gru,
                orientation,
                location_head,
                category_head,
            },
        })
    }

    pub fn has_category_head(&self) -> bool {
        self.layout.category_head.is_some()
    }

    pub fn num_scalars(&self) -> usize {
        self.store.scalar_count()
    }

    /// Every parameter name belonging to one of the heads.
    pub fn head_params(&self, category: bool) -> Vec<ParamId> {
        let head = if category {
            match self.layout.category_head {
                Some(h) => h,
                None => return Vec::new(),
            }
        } else {
            self.layout.location_head
        };
        [head.hidden, head.out]
            .iter()
            .flat_map(|l| std::iter::once(l.w).chain(l.b))
            .collect()
    }

    /// Runs the model over every sample of `groups`.
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        data: &ModelData<T>,
        groups: &[&Group],
        rngs: &mut StepRngs,
    ) -> Result<Output, ModelError> {
        let c = &self.config;
        let l = &self.layout;
        let st = &self.store;
        if groups.is_empty() {
            return Err(ModelError::Data("empty batch".into()));
        }
        let settings = GraphSettings {
            edge_drop: c.edge_drop,
            dropout: c.graph_dropout,
        };

        let loc_table = tape.param(st, l.location);
        let cat_table = l.category.map(|id| tape.param(st, id));
        let z = match &l.global {
            Some(enc) => {
                let mut parts = vec![loc_table];
                if let Some(ct) = cat_table {
                    parts.push(tape.gather_rows(ct, data.location_categories()?)?);
                }
                parts.push(tape.constant(data.graph.coords.clone()));
                let h0 = tape.concat_cols(&parts)?;
                enc.forward(tape, st, &data.graph, h0, settings, rngs)?
            }
            None => loc_table,
        };

        let mut users: Vec<usize> = Vec::new();
        let mut user_pos: HashMap<usize, usize> = HashMap::new();
        for g in groups {
            user_pos.entry(g.user).or_insert_with(|| {
                users.push(g.user);
                users.len() - 1
            });
        }
        let u_long = match &l.user_graph {
            Some(enc) => {
                let sgs: Vec<&UserSubgraph> = users.iter().map(|&u| &data.subgraphs[u]).collect();
                let batch = SubgraphBatch::new(&sgs);
                Some(enc.forward(tape, st, z, &batch, settings, rngs)?.readout)
            }
            None => None,
        };

        // Record table: every group's current inputs, then its recent records.
        let mut rec = RecordRows::default();
        let mut current: Vec<Vec<usize>> = Vec::with_capacity(groups.len());
        for g in groups {
            let traj = data.split.trajectory(g.user, g.trajectory);
            let n = traj.records.len() - 1;
            current.push(traj.records[..n].iter().map(|r| rec.push(r)).collect());
        }
        let mut recent_spans: Vec<Range<usize>> = Vec::with_capacity(groups.len());
        let (mut recent_rows, mut recent_pos) = (Vec::new(), Vec::new());
        for g in groups {
            let start = recent_rows.len();
            let user = &data.split.users[g.user];
            for (k, r) in user.trajectories[g.recent.clone()]
                .iter()
                .flat_map(|t| &t.records)
                .enumerate()
            {
                recent_rows.push(rec.push(r));
                recent_pos.push(k);
            }
            recent_spans.push(start..recent_rows.len());
        }
        let mut parts = vec![tape.gather_rows(z, &rec.locations)?];
        if let Some(ct) = cat_table {
            let cats = rec
                .categories
                .iter()
                .map(|c| c.ok_or_else(|| ModelError::Data("record without category".into())))
                .collect::<Result<Vec<_>, _>>()?;
            parts.push(tape.gather_rows(ct, &cats)?);
        }
        parts.push(l.time.forward(tape, st, &rec.weekdays, &rec.hours)?);
        let q = tape.concat_cols(&parts)?;

        let h0 = match &l.recent_gru {
            Some(aux) => {
                let seqs: Vec<Vec<usize>> = recent_spans
                    .iter()
                    .map(|s| recent_rows[s.clone()].to_vec())
                    .collect();
                let run = aux.run(tape, st, q, &seqs, None)?;
                Some(tape.gather_rows(run.states, &run.final_rows())?)
            }
            None => None,
        };
        // Current inputs occupy the first rows of the record table.
        let q_current = tape.slice_rows(q, 0, current.iter().map(Vec::len).sum())?;
        let run = l.gru.run(tape, st, q_current, &current, h0)?;

        let (mut state_rows, mut sample_group) = (Vec::new(), Vec::new());
        for (gi, g) in groups.iter().enumerate() {
            for s in &g.samples {
                state_rows.push(run.row(gi, s.prefix_len - 1));
                sample_group.push(gi);
            }
        }
        let u_short = tape.gather_rows(run.states, &state_rows)?;

        let mut phi = Vec::with_capacity(4);
        if c.uses_short() {
            phi.push(u_short);
        }
        let mut attention = None;
        if let Some(orient) = &l.orientation {
            let width = c.record_dim();
            let max_pos = recent_pos.iter().copied().max().unwrap_or(0);
            let table = positional_encoding(max_pos + 1, width);
            let mut pe = Vec::with_capacity(recent_pos.len() * width);
            for &p in &recent_pos {
                pe.extend(table[p * width..(p + 1) * width].iter().map(|&x| T::of(x)));
            }
            let pe = tape.constant(Tensor::from_rows(recent_pos.len(), width, pe)?);
            let recent = tape.gather_rows(q, &recent_rows)?;
            let recent = tape.add(recent, pe)?;
            let ranges: Vec<Range<usize>> = sample_group
                .iter()
                .map(|&g| recent_spans[g].clone())
                .collect();
            let out = orient.forward(tape, st, recent, u_short, &ranges)?;
            phi.push(out.mid);
            attention = Some(out.weights);
        }
        if let Some(ul) = u_long {
            let idx: Vec<usize> = sample_group
                .iter()
                .map(|&g| user_pos[&groups[g].user])
                .collect();
            phi.push(tape.gather_rows(ul, &idx)?);
        }
        if let Some(ue) = l.user {
            let table = tape.param(st, ue);
            let idx: Vec<usize> = sample_group.iter().map(|&g| groups[g].user).collect();
            phi.push(tape.gather_rows(table, &idx)?);
        }
        let preference = tape.concat_cols(&phi)?;

        let location = l.location_head.forward(tape, st, preference)?;
        let category = match &l.category_head {
            Some(h) => Some(h.forward(tape, st, preference)?),
            None => None,
        };
        Ok(Output {
            location,
            category,
            preference,
            attention,
        })
    }

    /// Training objective for `groups`, which must be the batch `out` was
    /// computed from.
    pub fn loss(
        &self,
        tape: &mut Tape<T>,
        out: &Output,
        groups: &[&Group],
    ) -> Result<Var, ModelError> {
        let loc: Vec<usize> = groups
            .iter()
            .flat_map(|g| &g.samples)
            .map(|s| s.target_location)
            .collect();
        let cat = match out.category {
            Some(_) => Some(
                groups
                    .iter()
                    .flat_map(|g| &g.samples)
                    .map(|s| {
                        s.target_category
                            .ok_or_else(|| ModelError::Data("target without category".into()))
                    })
                    .collect::<Result<Vec<_>, _>>()?,
            ),
            None => None,
        };
        let alpha = if self.config.dallas_mode {
            1.0
        } else {
            self.config.alpha
        };
        Ok(multitask_loss(
            tape,
            out.location,
            out.category.zip(cat.as_deref()),
            &loc,
            alpha,
        )?)
    }

    /// Eval-mode logits for every sample of `groups`.
    pub fn predict(
        &self,
        data: &ModelData<T>,
        groups: &[&Group],
    ) -> Result<(Tensor<T>, Option<Tensor<T>>), ModelError> {
        let mut tape = Tape::new(false);
        let mut rngs = StepRngs::for_epoch(self.config.seed, u64::MAX);
        let out = self.forward(&mut tape, data, groups, &mut rngs)?;
        let loc = tape.value(out.location).clone();
        let cat = out.category.map(|v| tape.value(v).clone());
        Ok((loc, cat))
    }

    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        self.store
            .iter()
            .map(|(_, p)| (p.name.clone(), &p.value))
            .collect()
    }

    /// Writes parameters only.
    pub fn save(&self, stem: &Path, dataset_hash: &str, epoch: u64) -> Result<(), ModelError> {
        let meta = self.meta(dataset_hash, epoch);
        save_checkpoint(stem, &meta, &self.named_tensors())?;
        Ok(())
    }

    pub(crate) fn meta(&self, dataset_hash: &str, epoch: u64) -> CheckpointMeta {
        CheckpointMeta {
            seed: self.config.seed,
            dataset_hash: dataset_hash.to_string(),
            epoch,
            config: self.config.to_table(),
            ..Default::default()
        }
    }

    /// Rebuilds a model from a checkpoint written by [`TrajGeos::save`] or
    /// training. Optimizer tensors are ignored.
    pub fn load(stem: &Path, sizes: Sizes) -> Result<(Self, CheckpointMeta), ModelError> {
        let ck = load_checkpoint::<T>(stem)?;
        let config: ModelConfig = toml::Value::Table(ck.meta.config.clone())
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        let mut model = TrajGeos::new(&config, sizes)?;
        ck.apply_to(&mut model.store, train::ADAM_PREFIX)?;
        Ok((model, ck.meta))
    }
}

/// `α·CE(loc) + (1−α)·CE(cat)`, or `CE(loc)` without a category head.
pub fn multitask_loss<T: Real>(
    tape: &mut Tape<T>,
    location_logits: Var,
    category: Option<(Var, &[usize])>,
    location_targets: &[usize],
    alpha: f64,
) -> Result<Var, TensorError> {
    let loc = tape.cross_entropy(location_logits, location_targets)?;
    match category {
        Some((logits, targets)) => {
            let cat = tape.cross_entropy(logits, targets)?;
            let a = tape.scale(loc, T::of(alpha));
            let b = tape.scale(cat, T::of(1.0 - alpha));
            tape.add(a, b)
        }
        None => Ok(loc),
    }
}

/// Scalar parameter count of a model, derived from the configuration alone.
pub fn parameter_count(config: &ModelConfig, sizes: Sizes) -> usize {
    let c = config;
    let mut n = 0;
    if c.uses_graph() {
        n += sizes.locations * c.location_dim;
        n += GlobalEncoder::scalar_count(c.node_dim(), c.graph_dim, c.n_global);
        n += UserEncoder::scalar_count(c.graph_dim, c.n_user);
    } else {
        n += sizes.locations * c.graph_dim;
    }
    if c.uses_category_embedding() {
        n += sizes.categories * c.category_dim;
    }
    if c.uses_user_embedding() {
        n += sizes.users * c.user_dim;
    }
    n += 4 * c.time_dim;
    n += Gru::scalar_count(c.record_dim(), c.gru_hidden);
    if c.orientation == OrientationMode::Gru {
        n += Gru::scalar_count(c.record_dim(), c.gru_hidden);
    }
    if c.uses_mid() {
        n += Orientation::scalar_count(c.record_dim(), c.gru_hidden, c.orientation_hidden);
    }
    n += Head::scalar_count(c.preference_dim(), c.head_hidden, sizes.locations);
    if c.has_category_head() {
        n += Head::scalar_count(c.preference_dim(), c.head_hidden, sizes.categories);
    }
    n
}

#[derive(Default)]
struct RecordRows {
    locations: Vec<usize>,
    categories: Vec<Option<usize>>,
    weekdays: Vec<u8>,
    hours: Vec<u8>,
}

impl RecordRows {
    fn push(&mut self, r: &crate::ingest::Record) -> usize {
        self.locations.push(r.location_index);
        self.categories.push(r.category_index);
        self.weekdays.push(r.local_time.weekday);
        self.hours.push(r.local_time.hour);
        self.locations.len() - 1
    }
}
