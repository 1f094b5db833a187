//! Global trajectory graph over all catalog locations and per-user subgraphs.

mod io;

pub use io::{
    read_graph, write_graph, GraphManifest, EDGES_HEADER, GRAPH_MANIFEST_FILE, NODES_HEADER,
};

use std::collections::BTreeMap;

use thiserror::Error;

use crate::geo::haversine;
use crate::ingest::{Catalog, DatasetSplit, SubTrajectory};

pub const FLOW_BINS: usize = 24;
/// `[trans, distance_km, flow_0..flow_23]`
pub const EDGE_FEATURE_DIM: usize = 2 + FLOW_BINS;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("user {0} has no training records")]
    EmptyUser(usize),
    #[error("graph artifact {path}: {msg}")]
    Artifact {
        path: std::path::PathBuf,
        msg: String,
    },
    #[error("cannot access {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct EdgeFeature {
    pub trans: u32,
    pub distance_km: f64,
    /// Transitions by local hour of the destination record.
    pub flow: [u32; FLOW_BINS],
}

impl EdgeFeature {
    /// Network input row. With `log_scale`, trans and distance are log1p-scaled.
    pub fn vector(&self, log_scale: bool) -> [f64; EDGE_FEATURE_DIM] {
        let mut v = [0.0; EDGE_FEATURE_DIM];
        let (t, d) = (self.trans as f64, self.distance_km);
        if log_scale {
            v[0] = t.ln_1p();
            v[1] = d.ln_1p();
        } else {
            v[0] = t;
            v[1] = d;
        }
        for (k, f) in self.flow.iter().enumerate() {
            v[2 + k] = *f as f64;
        }
        v
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub feature: EdgeFeature,
}

/// Directed graph with one node per catalog location. Edges are sorted by
/// `(src, dst)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GlobalTrajectoryGraph {
    pub num_nodes: usize,
    pub edges: Vec<Edge>,
    in_edges: Vec<Vec<usize>>,
    lookup: BTreeMap<(usize, usize), usize>,
}

impl GlobalTrajectoryGraph {
    pub fn from_edges(num_nodes: usize, mut edges: Vec<Edge>) -> Self {
        edges.sort_by_key(|e| (e.src, e.dst));
        let mut in_edges = vec![Vec::new(); num_nodes];
        let mut lookup = BTreeMap::new();
        for (i, e) in edges.iter().enumerate() {
            in_edges[e.dst].push(i);
            lookup.insert((e.src, e.dst), i);
        }
        GlobalTrajectoryGraph {
            num_nodes,
            edges,
            in_edges,
            lookup,
        }
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edge(&self, src: usize, dst: usize) -> Option<&Edge> {
        self.lookup.get(&(src, dst)).map(|&i| &self.edges[i])
    }

    pub fn edge_id(&self, src: usize, dst: usize) -> Option<usize> {
        self.lookup.get(&(src, dst)).copied()
    }

    /// Indices into `edges` of the edges ending at `node`.
    pub fn in_edges(&self, node: usize) -> &[usize] {
        &self.in_edges[node]
    }

    pub fn degree(&self, node: usize) -> usize {
        let out = self.edges.iter().filter(|e| e.src == node).count();
        out + self.in_edges[node].len()
    }

    pub fn total_transitions(&self) -> u64 {
        self.edges.iter().map(|e| e.feature.trans as u64).sum()
    }

    pub fn sources(&self) -> Vec<usize> {
        self.edges.iter().map(|e| e.src).collect()
    }

    pub fn targets(&self) -> Vec<usize> {
        self.edges.iter().map(|e| e.dst).collect()
    }

    /// Row-major `[num_edges, EDGE_FEATURE_DIM]` feature matrix.
    pub fn edge_feature_matrix(&self, log_scale: bool) -> Vec<f64> {
        self.edges
            .iter()
            .flat_map(|e| e.feature.vector(log_scale))
            .collect()
    }
}

/// Counts every consecutive record pair inside each training sub-trajectory.
pub fn build_global_graph<'a>(
    train: impl IntoIterator<Item = &'a SubTrajectory>,
    catalog: &Catalog,
) -> GlobalTrajectoryGraph {
    let mut acc: BTreeMap<(usize, usize), EdgeFeature> = BTreeMap::new();
    for traj in train {
        for w in traj.records.windows(2) {
            let (a, b) = (w[0].location_index, w[1].location_index);
            let e = acc.entry((a, b)).or_insert_with(|| EdgeFeature {
                trans: 0,
                distance_km: haversine(catalog.coordinates(a), catalog.coordinates(b)),
                flow: [0; FLOW_BINS],
            });
            e.trans += 1;
            e.flow[w[1].local_time.hour as usize] += 1;
        }
    }
    let edges = acc
        .into_iter()
        .map(|((src, dst), feature)| Edge { src, dst, feature })
        .collect();
    GlobalTrajectoryGraph::from_edges(catalog.num_locations(), edges)
}

pub fn build_from_split(split: &DatasetSplit) -> GlobalTrajectoryGraph {
    build_global_graph(split.train_trajectories(), &split.catalog)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubgraphEdge {
    /// Positions in `UserSubgraph::nodes`.
    pub src: usize,
    pub dst: usize,
    /// Index into the global graph's edge list.
    pub global: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UserSubgraph {
    pub user_index: usize,
    /// Visited global location indices, ascending.
    pub nodes: Vec<usize>,
    /// Visit count per entry of `nodes`.
    pub visits: Vec<u32>,
    pub edges: Vec<SubgraphEdge>,
}

impl UserSubgraph {
    pub fn record_count(&self) -> u64 {
        self.visits.iter().map(|&v| v as u64).sum()
    }

    pub fn local_index(&self, location: usize) -> Option<usize> {
        self.nodes.binary_search(&location).ok()
    }
}

/// Nodes are the user's visited training locations; edges are the global
/// edges realised by the user's own training transitions.
pub fn extract_user_subgraph<'a>(
    graph: &GlobalTrajectoryGraph,
    user_index: usize,
    train: impl IntoIterator<Item = &'a SubTrajectory>,
) -> Result<UserSubgraph, GraphError> {
    let mut counts: BTreeMap<usize, u32> = BTreeMap::new();
    let mut pairs: BTreeMap<(usize, usize), ()> = BTreeMap::new();
    for traj in train {
        for r in &traj.records {
            *counts.entry(r.location_index).or_default() += 1;
        }
        for w in traj.records.windows(2) {
            pairs.insert((w[0].location_index, w[1].location_index), ());
        }
    }
    if counts.is_empty() {
        return Err(GraphError::EmptyUser(user_index));
    }
    let nodes: Vec<usize> = counts.keys().copied().collect();
    let visits = counts.values().copied().collect();
    let local = |l: usize| nodes.binary_search(&l).expect("visited node");
    let edges = pairs
        .keys()
        .filter_map(|&(a, b)| {
            graph.edge_id(a, b).map(|global| SubgraphEdge {
                src: local(a),
                dst: local(b),
                global,
            })
        })
        .collect();
    Ok(UserSubgraph {
        user_index,
        nodes,
        visits,
        edges,
    })
}

pub fn user_subgraphs(
    graph: &GlobalTrajectoryGraph,
    split: &DatasetSplit,
) -> Result<Vec<UserSubgraph>, GraphError> {
    split
        .users
        .iter()
        .map(|u| extract_user_subgraph(graph, u.user_index, u.train()))
        .collect()
}

/// `w_j = η_j / Σ η`.
pub fn visit_weights(subgraph: &UserSubgraph) -> Vec<f64> {
    let total = subgraph.record_count() as f64;
    assert!(total > 0.0, "subgraph without visits");
    subgraph.visits.iter().map(|&v| v as f64 / total).collect()
}
