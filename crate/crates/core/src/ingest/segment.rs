use std::collections::BTreeMap;

use super::{
    filter_and_merge, Catalog, CategoryInfo, DatasetSplit, FilterOutput, IngestError, LocationInfo,
    RawCheckin, Record, Sample, SubTrajectory, UserTrajectories,
};

pub const MIN_TRAJECTORY_LEN: usize = 2;
pub const MIN_TRAJECTORIES_PER_USER: usize = 5;

/// Monday-aligned local week ordinal (week 0 starts Monday 1969-12-29), so
/// week boundaries coincide with ISO-8601 weeks.
pub fn week_index(local_epoch_seconds: i64) -> i64 {
    (local_epoch_seconds.div_euclid(86_400) + 3).div_euclid(7)
}

/// Splits each user's time-sorted records into local ISO weeks, keeping weeks
/// with at least two records and users with at least five such weeks.
/// Dropped users come back as empty lists; week indices are calendar weeks,
/// not renumbered.
pub fn segment_weeks(records: &[Vec<Record>]) -> Vec<Vec<SubTrajectory>> {
    records
        .iter()
        .map(|recs| {
            let mut weeks: BTreeMap<i64, Vec<Record>> = BTreeMap::new();
            for r in recs {
                weeks
                    .entry(week_index(r.local_time.epoch_seconds))
                    .or_default()
                    .push(*r);
            }
            let trajs: Vec<SubTrajectory> = weeks
                .into_iter()
                .filter(|(_, rs)| rs.len() >= MIN_TRAJECTORY_LEN)
                .map(|(week, rs)| SubTrajectory {
                    user_index: rs[0].user_index,
                    week_index: week,
                    records: rs,
                })
                .collect();
            if trajs.len() < MIN_TRAJECTORIES_PER_USER {
                Vec::new()
            } else {
                trajs
            }
        })
        .collect()
}

/// Number of leading sub-trajectories assigned to training: `floor(0.8 n)`,
/// leaving at least one for test.
pub fn train_count(n: usize) -> usize {
    let k = n * 4 / 5;
    if k >= n {
        n.saturating_sub(1)
    } else {
        k
    }
}

/// Assigns the first 80% of each user's sub-trajectories to training.
pub fn split_train_test(catalog: Catalog, per_user: Vec<Vec<SubTrajectory>>) -> DatasetSplit {
    let users = per_user
        .into_iter()
        .enumerate()
        .map(|(u, trajectories)| UserTrajectories {
            user_index: u,
            n_train: train_count(trajectories.len()),
            trajectories,
        })
        .collect();
    DatasetSplit { catalog, users }
}

/// Emits one sample per next-step target in every sub-trajectory with at
/// least two predecessors. `recent_weeks` predecessors (fewer if not enough
/// exist) form the recent context.
pub fn build_samples(split: &DatasetSplit, recent_weeks: usize) -> (Vec<Sample>, Vec<Sample>) {
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for user in &split.users {
        for (p, traj) in user.trajectories.iter().enumerate().skip(2) {
            let recent = p.saturating_sub(recent_weeks.max(1))..p;
            let out = if p < user.n_train {
                &mut train
            } else {
                &mut test
            };
            for m in 1..traj.records.len() {
                let target = &traj.records[m];
                out.push(Sample {
                    user_index: user.user_index,
                    trajectory: p,
                    prefix_len: m,
                    recent: recent.clone(),
                    target_location: target.location_index,
                    target_category: target.category_index,
                });
            }
        }
    }
    (train, test)
}

/// Drops users without sub-trajectories and locations/categories no longer
/// referenced, re-indexing densely while preserving the sorted-id order.
fn compact(
    catalog: &Catalog,
    per_user: Vec<Vec<SubTrajectory>>,
) -> (Catalog, Vec<Vec<SubTrajectory>>) {
    let mut loc_used = vec![false; catalog.num_locations()];
    for r in per_user.iter().flatten().flat_map(|t| &t.records) {
        loc_used[r.location_index] = true;
    }
    let mut cat_used = vec![false; catalog.num_categories()];
    for (l, used) in loc_used.iter().enumerate() {
        if *used {
            if let Some(c) = catalog.locations[l].category {
                cat_used[c] = true;
            }
        }
    }
    let remap = |used: &[bool]| {
        let mut next = 0;
        used.iter()
            .map(|&u| {
                if u {
                    next += 1;
                    next - 1
                } else {
                    usize::MAX
                }
            })
            .collect::<Vec<_>>()
    };
    let cat_map = remap(&cat_used);
    let loc_map = remap(&loc_used);

    let categories: Vec<CategoryInfo> = catalog
        .categories
        .iter()
        .zip(&cat_used)
        .filter(|(_, &u)| u)
        .map(|(c, _)| c.clone())
        .collect();
    let locations: Vec<LocationInfo> = catalog
        .locations
        .iter()
        .zip(&loc_used)
        .filter(|(_, &u)| u)
        .map(|(l, _)| LocationInfo {
            category: l.category.map(|c| cat_map[c]),
            ..l.clone()
        })
        .collect();

    let mut users = Vec::new();
    let mut kept = Vec::new();
    for (old, trajs) in per_user.into_iter().enumerate() {
        if trajs.is_empty() {
            continue;
        }
        let new = users.len();
        users.push(catalog.users[old].clone());
        kept.push(
            trajs
                .into_iter()
                .map(|t| SubTrajectory {
                    user_index: new,
                    week_index: t.week_index,
                    records: t
                        .records
                        .into_iter()
                        .map(|r| Record {
                            user_index: new,
                            location_index: loc_map[r.location_index],
                            category_index: r.category_index.map(|c| cat_map[c]),
                            ..r
                        })
                        .collect(),
                })
                .collect(),
        );
    }
    (Catalog::new(users, locations, categories), kept)
}

/// Full preprocessing: filter and merge, weekly segmentation, catalog
/// compaction and the train/test split.
pub fn preprocess(raw: &[RawCheckin]) -> Result<(DatasetSplit, FilterOutput), IngestError> {
    let filtered = filter_and_merge(raw)?;
    let per_user = segment_weeks(&filtered.records);
    let (catalog, per_user) = compact(&filtered.catalog, per_user);
    if per_user.is_empty() {
        return Err(IngestError::EmptySurvivors);
    }
    Ok((split_train_test(catalog, per_user), filtered))
}
