//! Graph export as two tab-separated tables plus `graph.toml`:
//!
//! - `nodes.tsv`: `node_index, latitude, longitude, category_index`
//! - `edges.tsv`: `src, dst, trans, distance_km, flow_0 .. flow_23`
//!
//! `graph.toml` records the dataset hash the graph was built from and the
//! SHA-256 of both tables.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Edge, EdgeFeature, GlobalTrajectoryGraph, GraphError, FLOW_BINS};
use crate::ingest::Catalog;
use crate::util::sha256_hex;

pub const NODES_HEADER: &str = "node_index\tlatitude\tlongitude\tcategory_index";
pub const EDGES_HEADER: &str = "src\tdst\ttrans\tdistance_km\tflow_0\tflow_1\tflow_2\tflow_3\tflow_4\tflow_5\tflow_6\tflow_7\tflow_8\tflow_9\tflow_10\tflow_11\tflow_12\tflow_13\tflow_14\tflow_15\tflow_16\tflow_17\tflow_18\tflow_19\tflow_20\tflow_21\tflow_22\tflow_23";
pub const GRAPH_MANIFEST_FILE: &str = "graph.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphManifest {
    pub dataset_hash: String,
    pub num_nodes: usize,
    pub num_edges: usize,
    pub total_transitions: u64,
    pub nodes_sha256: String,
    pub edges_sha256: String,
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> GraphError + '_ {
    move |source| GraphError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_graph(
    dir: &Path,
    graph: &GlobalTrajectoryGraph,
    catalog: &Catalog,
    dataset_hash: &str,
) -> Result<GraphManifest, GraphError> {
    fs::create_dir_all(dir).map_err(io(dir))?;
    let mut nodes = format!("{NODES_HEADER}\n");
    for (i, l) in catalog.locations.iter().enumerate() {
        let c = l.category.map(|c| c.to_string()).unwrap_or_default();
        writeln!(nodes, "{i}\t{}\t{}\t{c}", l.latitude, l.longitude).unwrap();
    }
    let mut edges = format!("{EDGES_HEADER}\n");
    for e in &graph.edges {
        write!(
            edges,
            "{}\t{}\t{}\t{}",
            e.src, e.dst, e.feature.trans, e.feature.distance_km
        )
        .unwrap();
        for f in e.feature.flow {
            write!(edges, "\t{f}").unwrap();
        }
        edges.push('\n');
    }
    let manifest = GraphManifest {
        dataset_hash: dataset_hash.to_string(),
        num_nodes: graph.num_nodes,
        num_edges: graph.num_edges(),
        total_transitions: graph.total_transitions(),
        nodes_sha256: sha256_hex(nodes.as_bytes()),
        edges_sha256: sha256_hex(edges.as_bytes()),
    };
    for (name, body) in [
        ("nodes.tsv", nodes),
        ("edges.tsv", edges),
        (
            GRAPH_MANIFEST_FILE,
            toml::to_string(&manifest).expect("manifest serializes"),
        ),
    ] {
        let p = dir.join(name);
        fs::write(&p, body).map_err(io(&p))?;
    }
    Ok(manifest)
}

/// Loads a graph written by [`write_graph`], checking table hashes.
pub fn read_graph(dir: &Path) -> Result<(GlobalTrajectoryGraph, GraphManifest), GraphError> {
    let read = |name: &str| {
        let p = dir.join(name);
        fs::read_to_string(&p).map_err(io(&p))
    };
    let bad = |name: &str, msg: String| GraphError::Artifact {
        path: dir.join(name),
        msg,
    };
    let manifest: GraphManifest = toml::from_str(&read(GRAPH_MANIFEST_FILE)?)
        .map_err(|e| bad(GRAPH_MANIFEST_FILE, e.to_string()))?;
    let nodes = read("nodes.tsv")?;
    let edges = read("edges.tsv")?;
    if sha256_hex(nodes.as_bytes()) != manifest.nodes_sha256 {
        return Err(bad(
            "nodes.tsv",
            "contents do not match manifest hash".into(),
        ));
    }
    if sha256_hex(edges.as_bytes()) != manifest.edges_sha256 {
        return Err(bad(
            "edges.tsv",
            "contents do not match manifest hash".into(),
        ));
    }
    if nodes.lines().next() != Some(NODES_HEADER) || nodes.lines().count() - 1 != manifest.num_nodes
    {
        return Err(bad("nodes.tsv", "unexpected header or row count".into()));
    }
    let mut lines = edges.lines();
    if lines.next() != Some(EDGES_HEADER) {
        return Err(bad("edges.tsv", "unexpected header".into()));
    }
    let mut list = Vec::new();
    for (row, line) in lines.enumerate() {
        let f: Vec<&str> = line.split('\t').collect();
        let err = || bad("edges.tsv", format!("row {}: malformed", row + 2));
        if f.len() != 4 + FLOW_BINS {
            return Err(err());
        }
        let int = |i: usize| f[i].parse::<u32>().map_err(|_| err());
        let mut flow = [0; FLOW_BINS];
        for (k, slot) in flow.iter_mut().enumerate() {
            *slot = int(4 + k)?;
        }
        let (src, dst) = (int(0)? as usize, int(1)? as usize);
        if src >= manifest.num_nodes || dst >= manifest.num_nodes {
            return Err(err());
        }
        list.push(Edge {
            src,
            dst,
            feature: EdgeFeature {
                trans: int(2)?,
                distance_km: f[3].parse().map_err(|_| err())?,
                flow,
            },
        });
    }
    Ok((
        GlobalTrajectoryGraph::from_edges(manifest.num_nodes, list),
        manifest,
    ))
}

#[cfg(test)]
mod tests {
    use super::super::build_global_graph;
    use super::super::tests::{catalog, traj};
    use super::*;

    #[test]
    fn round_trip_and_determinism() {
        let cat = catalog(5);
        let t = [
            traj(0, &[(0, 1), (3, 2), (0, 5), (0, 7)]),
            traj(1, &[(4, 1), (3, 9)]),
        ];
        let g = build_global_graph(&t, &cat);
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        write_graph(d1.path(), &g, &cat, "abc").unwrap();
        write_graph(d2.path(), &build_global_graph(&t, &cat), &cat, "abc").unwrap();
        for f in ["nodes.tsv", "edges.tsv", "graph.toml"] {
            assert_eq!(
                fs::read(d1.path().join(f)).unwrap(),
                fs::read(d2.path().join(f)).unwrap()
            );
        }
        let (back, m) = read_graph(d1.path()).unwrap();
        assert_eq!(back, g);
        assert_eq!(m.dataset_hash, "abc");
    }
}
