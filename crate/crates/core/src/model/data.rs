use std::ops::Range;

use super::{ModelConfig, ModelError, Sizes};
use crate::graph_encoder::GraphTensors;
use crate::ingest::{build_samples, DatasetSplit, Sample};
use crate::tensor::Real;
use crate::trajgraph::{user_subgraphs, GlobalTrajectoryGraph, UserSubgraph};

/// All samples of one sub-trajectory. They share the GRU run and the recent
/// context, so a group is the unit of batching.
#[derive(Clone, Debug, PartialEq)]
pub struct Group {
    pub user: usize,
    pub trajectory: usize,
    pub recent: Range<usize>,
    /// Ordered by prefix length.
    pub samples: Vec<Sample>,
}

/// Collects consecutive samples of the same sub-trajectory.
pub fn group_samples(samples: Vec<Sample>) -> Vec<Group> {
    let mut out: Vec<Group> = Vec::new();
    for s in samples {
        match out.last_mut() {
            Some(g) if g.user == s.user_index && g.trajectory == s.trajectory => g.samples.push(s),
            _ => out.push(Group {
                user: s.user_index,
                trajectory: s.trajectory,
                recent: s.recent.clone(),
                samples: vec![s],
            }),
        }
    }
    out
}

/// Dataset, graph tensors and subgraphs prepared once for training and
/// evaluation.
pub struct ModelData<T> {
    pub split: DatasetSplit,
    pub graph: GraphTensors<T>,
    pub subgraphs: Vec<UserSubgraph>,
    pub train: Vec<Group>,
    pub test: Vec<Group>,
    location_categories: Option<Vec<usize>>,
}

impl<T: Real> ModelData<T> {
    pub fn new(
        split: DatasetSplit,
        graph: &GlobalTrajectoryGraph,
        config: &ModelConfig,
    ) -> Result<Self, ModelError> {
        let catalog = &split.catalog;
        if graph.num_nodes != catalog.num_locations() {
            return Err(ModelError::Data(format!(
                "graph has {} nodes but the catalog has {} locations",
                graph.num_nodes,
                catalog.num_locations()
            )));
        }
        let location_categories: Option<Vec<usize>> =
            catalog.locations.iter().map(|l| l.category).collect();
        if (config.uses_category_embedding() || config.has_category_head())
            && location_categories.is_none()
        {
            return Err(ModelError::Data(
                "some locations have no category; set dallas_mode = true".into(),
            ));
        }
        let subgraphs = user_subgraphs(graph, &split)?;
        let tensors = GraphTensors::new(graph, catalog, config.log_edge_features);
        let (train, test) = build_samples(&split, config.recent_weeks);
        Ok(ModelData {
            graph: tensors,
            subgraphs,
            train: group_samples(train),
            test: group_samples(test),
            location_categories,
            split,
        })
    }

    pub fn sizes(&self) -> Sizes {
        let c = &self.split.catalog;
        Sizes {
            users: c.num_users(),
            locations: c.num_locations(),
            categories: c.num_categories(),
        }
    }

    pub fn location_categories(&self) -> Result<&[usize], ModelError> {
        self.location_categories
            .as_deref()
            .ok_or_else(|| ModelError::Data("locations lack categories".into()))
    }

    pub fn num_test_samples(&self) -> usize {
        self.test.iter().map(|g| g.samples.len()).sum()
    }

    pub fn num_train_samples(&self) -> usize {
        self.train.iter().map(|g| g.samples.len()).sum()
    }
}
