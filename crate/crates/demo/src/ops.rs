use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use trajgeos::ingest::{parse_reader, preprocess, ParseOptions, Schema};
use trajgeos::sequence_encoder::{self, Time2Vec};
use trajgeos::tensor::{ParamStore, Tape, Tensor};
use trajgeos::trajgraph::build_from_split;

pub const SAMPLE_CHECKINS: &str = include_str!("../../core/tests/data/toy/checkins.tsv");

const MAX_CELLS: usize = 1 << 20;

pub fn positional_encoding(len: usize, width: usize) -> Result<Vec<f64>, String> {
    if width == 0 || width % 2 != 0 {
        return Err(format!("width {width} must be a positive even number"));
    }
    if len.saturating_mul(width) > MAX_CELLS {
        return Err("table too large".into());
    }
    Ok(sequence_encoder::positional_encoding(len, width))
}

pub fn time2vec_init(width: usize, seed: u64) -> Result<Vec<f64>, String> {
    if width == 0 || width > 64 {
        return Err(format!("width {width} must be between 1 and 64"));
    }
    let mut store = ParamStore::<f64>::new();
    let t2v = Time2Vec::register(&mut store, "t2v", width, &mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = store.value(t2v.omega).data().to_vec();
    out.extend_from_slice(store.value(t2v.phase).data());
    Ok(out)
}

pub fn time2vec_curves(omega: &[f64], phase: &[f64], period: f64, samples: usize) -> Result<Vec<f64>, String> {
    let width = omega.len();
    if width == 0 || phase.len() != width {
        return Err(format!("{} frequencies but {} phases", width, phase.len()));
    }
    if !(period > 0.0 && period.is_finite()) || samples == 0 || samples.saturating_mul(width) > MAX_CELLS {
        return Err("period must be positive and the sample grid reasonable".into());
    }
    let mut store = ParamStore::<f64>::new();
    let t2v = Time2Vec::register(&mut store, "t2v", width, &mut ChaCha8Rng::seed_from_u64(0));
    *store.value_mut(t2v.omega) = Tensor::row(omega.to_vec());
    *store.value_mut(t2v.phase) = Tensor::row(phase.to_vec());
    let tau: Vec<f64> = (0..samples).map(|i| period * i as f64 / samples as f64).collect();
    let mut tape = Tape::new(false);
    let v = t2v.forward(&mut tape, &store, &tau).map_err(|e| e.to_string())?;
    Ok(tape.value(v).data().to_vec())
}

#[derive(Debug, Serialize)]
pub struct NodeView {
    pub id: String,
    pub lat: f64,
    pub lon: f64,
    pub category: Option<String>,
    pub degree: usize,
}

#[derive(Debug, Serialize)]
pub struct EdgeView {
    pub src: usize,
    pub dst: usize,
    pub trans: u32,
    pub distance_km: f64,
    pub flow: Vec<u32>,
}

#[derive(Debug, Serialize)]
pub struct GraphSummary {
    pub checkins: usize,
    pub skipped: usize,
    pub users: usize,
    pub records: usize,
    pub sub_trajectories: usize,
    pub train_sub_trajectories: usize,
    pub transitions: u64,
    pub nodes: Vec<NodeView>,
    pub edges: Vec<EdgeView>,
}

pub fn build_graph(tsv: &str) -> Result<GraphSummary, String> {
    let opts = ParseOptions {
        skip_malformed: true,
        ..Default::default()
    };
    let report = parse_reader(tsv.as_bytes(), Schema::FoursquareTsv, opts).map_err(|e| e.to_string())?;
    let (split, _) = preprocess(&report.checkins).map_err(|e| e.to_string())?;
    let graph = build_from_split(&split);
    let cat = &split.catalog;
    let nodes = cat
        .locations
        .iter()
        .enumerate()
        .map(|(i, l)| NodeView {
            id: l.id.clone(),
            lat: l.latitude,
            lon: l.longitude,
            category: l.category.map(|c| cat.categories[c].name.clone().unwrap_or_else(|| cat.categories[c].id.clone())),
            degree: graph.degree(i),
        })
        .collect();
    let edges = graph
        .edges
        .iter()
        .map(|e| EdgeView {
            src: e.src,
            dst: e.dst,
            trans: e.feature.trans,
            distance_km: e.feature.distance_km,
            flow: e.feature.flow.to_vec(),
        })
        .collect();
    Ok(GraphSummary {
        checkins: report.checkins.len(),
        skipped: report.skipped,
        users: cat.num_users(),
        records: split.num_records(),
        sub_trajectories: split.num_trajectories(),
        train_sub_trajectories: split.users.iter().map(|u| u.n_train).sum(),
        transitions: graph.total_transitions(),
        nodes,
        edges,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encoding_rejects_odd_width() {
        assert!(positional_encoding(4, 3).is_err());
        let pe = positional_encoding(3, 4).unwrap();
        assert_eq!(pe.len(), 12);
        assert_eq!(&pe[..4], &[0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn time2vec_first_component_is_linear() {
        let c = time2vec_curves(&[2.0, 1.0], &[0.5, 0.0], 4.0, 4).unwrap();
        assert_eq!(c.len(), 8);
        for i in 0..4 {
            let tau = i as f64;
            assert!((c[2 * i] - (2.0 * tau + 0.5)).abs() < 1e-12);
            assert!((c[2 * i + 1] - tau.sin()).abs() < 1e-12);
        }
        assert_eq!(time2vec_init(3, 1).unwrap().len(), 6);
    }

    #[test]
    fn sample_graph_has_transitions() {
        let g = build_graph(SAMPLE_CHECKINS).unwrap();
        assert_eq!(g.nodes.len(), 11);
        let total: u64 = g.edges.iter().map(|e| e.trans as u64).sum();
        assert_eq!(total, g.transitions);
        assert!(g.edges.iter().all(|e| e.flow.iter().sum::<u32>() == e.trans));
    }

    #[test]
    fn garbage_input_is_an_error() {
        assert!(build_graph("not a check-in file").is_err());
    }
}
