//! Hierarchical graph convolution: EGraphSAGE layers over the global
//! trajectory graph produce location embeddings `Z`; GraphSAGE layers over
//! user subgraphs with a visit-weighted readout produce long-term
//! preferences.

use rand::Rng;

use crate::ingest::Catalog;
use crate::nn::{edge_keep_mask, Activation, Linear, StepRngs};
use crate::tensor::{ParamStore, Real, Tape, Tensor, TensorError, Var};
use crate::trajgraph::{visit_weights, GlobalTrajectoryGraph, UserSubgraph, EDGE_FEATURE_DIM};

/// Edge states keep the width of the raw edge feature in every layer, so an
/// edge skipped by edge dropout can carry its previous state forward.
pub const EDGE_DIM: usize = EDGE_FEATURE_DIM;
const NORM_EPS: f64 = 1e-12;

/// Constant inputs derived from the global graph.
#[derive(Clone, Debug)]
pub struct GraphTensors<T> {
    pub num_nodes: usize,
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    /// `[num_edges, EDGE_DIM]`
    pub edge_features: Tensor<T>,
    /// `[num_nodes, 2]`: raw latitude and longitude.
    pub coords: Tensor<T>,
}

impl<T: Real> GraphTensors<T> {
    pub fn new(graph: &GlobalTrajectoryGraph, catalog: &Catalog, log_scale: bool) -> Self {
        let feats = graph
            .edge_feature_matrix(log_scale)
            .into_iter()
            .map(T::of)
            .collect();
        let coords = catalog
            .locations
            .iter()
            .flat_map(|l| [T::of(l.latitude), T::of(l.longitude)])
            .collect();
        GraphTensors {
            num_nodes: graph.num_nodes,
            src: graph.sources(),
            dst: graph.targets(),
            edge_features: Tensor::from_rows(graph.num_edges(), EDGE_DIM, feats)
                .expect("edge rows"),
            coords: Tensor::from_rows(catalog.num_locations(), 2, coords).expect("coordinate rows"),
        }
    }

    pub fn num_edges(&self) -> usize {
        self.src.len()
    }
}

/// One EGraphSAGE layer: message `W1 [h_t ‖ e_ts]`, node update
/// `W2 [h_s ‖ mean message]`, edge update `W3 [e_ts ‖ h'_t ‖ h'_s]`.
#[derive(Clone, Copy, Debug)]
pub struct EGraphSageLayer {
    pub w1: Linear,
    pub w2: Linear,
    pub w3: Linear,
    pub node_out: usize,
}

impl EGraphSageLayer {
    pub fn register<T: Real>(
        store: &mut ParamStore<T>,
        prefix: &str,
        node_in: usize,
        node_out: usize,
        rng: &mut impl Rng,
    ) -> Self {
        EGraphSageLayer {
            w1: Linear::register(
                store,
                &format!("{prefix}.w1"),
                node_in + EDGE_DIM,
                node_out,
                false,
                rng,
            ),
            w2: Linear::register(
                store,
                &format!("{prefix}.w2"),
                node_in + node_out,
                node_out,
                false,
                rng,
            ),
            w3: Linear::register(
                store,
                &format!("{prefix}.w3"),
                EDGE_DIM + 2 * node_out,
                EDGE_DIM,
                false,
                rng,
            ),
            node_out,
        }
    }

    pub fn scalar_count(node_in: usize, node_out: usize) -> usize {
        (node_in + EDGE_DIM) * node_out
            + (node_in + node_out) * node_out
            + (EDGE_DIM + 2 * node_out) * EDGE_DIM
    }

    /// `keep[e]` marks edges participating in this pass. Dropped edges keep
    /// their previous state. With `update_edges` false the returned edge
    /// state is the input unchanged.
    #[allow(clippy::too_many_arguments)]
    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        g: &GraphTensors<T>,
        h: Var,
        e: Var,
        keep: &[bool],
        act: Activation,
        update_edges: bool,
    ) -> Result<(Var, Var), TensorError> {
        let kept: Vec<usize> = (0..keep.len()).filter(|&i| keep[i]).collect();
        let src: Vec<usize> = kept.iter().map(|&i| g.src[i]).collect();
        let dst: Vec<usize> = kept.iter().map(|&i| g.dst[i]).collect();
        let n = g.num_nodes;

        let agg = if kept.is_empty() {
            tape.constant(Tensor::zeros(&[n, self.node_out]))
        } else {
            let hs = tape.gather_rows(h, &src)?;
            let es = tape.gather_rows(e, &kept)?;
            let x = tape.concat_cols(&[hs, es])?;
            let m = self.w1.forward(tape, store, x)?;
            let m = act.apply(tape, m);
            tape.scatter_mean(m, &dst, n)?
        };
        let x = tape.concat_cols(&[h, agg])?;
        let h2 = self.w2.forward(tape, store, x)?;
        let h2 = act.apply(tape, h2);

        if !update_edges || kept.is_empty() {
            return Ok((h2, e));
        }
        let es = tape.gather_rows(e, &kept)?;
        let ht = tape.gather_rows(h2, &src)?;
        let hd = tape.gather_rows(h2, &dst)?;
        let x = tape.concat_cols(&[es, ht, hd])?;
        let en = self.w3.forward(tape, store, x)?;
        let en = act.apply(tape, en);
        let delta = tape.sub(en, es)?;
        let delta = tape.scatter_add(delta, &kept, keep.len())?;
        let e2 = tape.add(e, delta)?;
        Ok((h2, e2))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GraphSettings {
    pub edge_drop: f64,
    pub dropout: f64,
}

/// Global-graph encoder: `n` EGraphSAGE layers followed by the fusion layer
/// `z = relu(W4 [h^n ‖ h^0] + b)`.
#[derive(Clone, Debug)]
pub struct GlobalEncoder {
    pub layers: Vec<EGraphSageLayer>,
    pub fuse: Linear,
    pub node_in: usize,
    pub dim: usize,
}

impl GlobalEncoder {
    pub fn register<T: Real>(
        store: &mut ParamStore<T>,
        node_in: usize,
        dim: usize,
        n_layers: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let layers = (0..n_layers)
            .map(|k| {
                let input = if k == 0 { node_in } else { dim };
                EGraphSageLayer::register(store, &format!("global.{k}"), input, dim, rng)
            })
            .collect();
        let fuse = Linear::register(store, "global.fuse", dim + node_in, dim, true, rng);
        GlobalEncoder {
            layers,
            fuse,
            node_in,
            dim,
        }
    }

    pub fn scalar_count(node_in: usize, dim: usize, n_layers: usize) -> usize {
        let conv: usize = (0..n_layers)
            .map(|k| EGraphSageLayer::scalar_count(if k == 0 { node_in } else { dim }, dim))
            .sum();
        conv + Linear::scalar_count(dim + node_in, dim, true)
    }

    /// `h0` is the `[num_nodes, node_in]` initial node matrix; returns `Z`.
    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        g: &GraphTensors<T>,
        h0: Var,
        settings: GraphSettings,
        rngs: &mut StepRngs,
    ) -> Result<Var, TensorError> {
        let training = tape.training();
        let mut h = h0;
        let mut e = tape.constant(g.edge_features.clone());
        for (k, layer) in self.layers.iter().enumerate() {
            let last = k + 1 == self.layers.len();
            if k > 0 {
                h = tape.dropout(h, settings.dropout, &mut rngs.dropout)?;
            }
            let keep = edge_keep_mask(
                g.num_edges(),
                settings.edge_drop,
                training,
                &mut rngs.edge_drop,
            );
            (h, e) = layer.forward(tape, store, g, h, e, &keep, Activation::Relu, !last)?;
        }
        let x = tape.concat_cols(&[h, h0])?;
        let z = self.fuse.forward(tape, store, x)?;
        Ok(tape.relu(z))
    }
}

/// Disjoint union of several user subgraphs, ready for batched convolution.
#[derive(Clone, Debug, Default)]
pub struct SubgraphBatch {
    /// Global location index of every union node.
    pub nodes: Vec<usize>,
    /// Batch position of the user owning each union node.
    pub owner: Vec<usize>,
    pub weights: Vec<f64>,
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    pub num_users: usize,
}

impl SubgraphBatch {
    pub fn new(subgraphs: &[&UserSubgraph]) -> Self {
        let mut b = SubgraphBatch {
            num_users: subgraphs.len(),
            ..Default::default()
        };
        for (u, sg) in subgraphs.iter().enumerate() {
            let offset = b.nodes.len();
            b.nodes.extend_from_slice(&sg.nodes);
            b.owner.extend(std::iter::repeat_n(u, sg.nodes.len()));
            b.weights.extend(visit_weights(sg));
            for e in &sg.edges {
                b.src.push(offset + e.src);
                b.dst.push(offset + e.dst);
            }
        }
        b
    }
}

/// GraphSAGE layers `relu(W5 [h_s ‖ mean h_t])`, each followed by row L2
/// normalization, then the visit-weighted readout.
#[derive(Clone, Debug)]
pub struct UserEncoder {
    pub layers: Vec<Linear>,
    pub dim: usize,
}

/// Node states after every layer plus the readout, for inspection.
pub struct UserEncoding {
    pub layer_states: Vec<Var>,
    pub readout: Var,
}

impl UserEncoder {
    pub fn register<T: Real>(
        store: &mut ParamStore<T>,
        dim: usize,
        n_layers: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let layers = (0..n_layers)
            .map(|k| {
                Linear::register(
                    store,
                    &format!("user_graph.{k}.w5"),
                    2 * dim,
                    dim,
                    false,
                    rng,
                )
            })
            .collect();
        UserEncoder { layers, dim }
    }

    pub fn scalar_count(dim: usize, n_layers: usize) -> usize {
        n_layers * 2 * dim * dim
    }

    /// Returns `[num_users, dim]` long-term preferences, one row per
    /// subgraph in `batch`. `z` is read, never modified.
    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        z: Var,
        batch: &SubgraphBatch,
        settings: GraphSettings,
        rngs: &mut StepRngs,
    ) -> Result<UserEncoding, TensorError> {
        let training = tape.training();
        let n = batch.nodes.len();
        let mut h = tape.gather_rows(z, &batch.nodes)?;
        let mut states = Vec::with_capacity(self.layers.len());
        for (k, w5) in self.layers.iter().enumerate() {
            if k > 0 {
                h = tape.dropout(h, settings.dropout, &mut rngs.dropout)?;
            }
            let keep = edge_keep_mask(
                batch.src.len(),
                settings.edge_drop,
                training,
                &mut rngs.edge_drop,
            );
            let (src, dst): (Vec<usize>, Vec<usize>) = (0..keep.len())
                .filter(|&i| keep[i])
                .map(|i| (batch.src[i], batch.dst[i]))
                .unzip();
            let agg = if src.is_empty() {
                tape.constant(Tensor::zeros(&[n, self.dim]))
            } else {
                let hs = tape.gather_rows(h, &src)?;
                tape.scatter_mean(hs, &dst, n)?
            };
            let x = tape.concat_cols(&[h, agg])?;
            let y = w5.forward(tape, store, x)?;
            let y = tape.relu(y);
            h = tape.l2_normalize_rows(y, T::of(NORM_EPS))?;
            states.push(h);
        }
        let w = tape.constant(Tensor::column(
            batch.weights.iter().map(|&x| T::of(x)).collect(),
        ));
        let weighted = tape.mul_col(h, w)?;
        let readout = tape.scatter_add(weighted, &batch.owner, batch.num_users)?;
        Ok(UserEncoding {
            layer_states: states,
            readout,
        })
    }
}
