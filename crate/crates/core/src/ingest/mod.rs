//! Check-in ingestion: parsing raw LBSN dumps, popularity filtering with
//! same-hour merging, weekly segmentation, the per-user train/test split and
//! per-step sample construction.

mod filter;
mod io;
mod parse;
mod segment;

pub use filter::{filter_and_merge, FilterOutput, MIN_LOCATION_RECORDS, MIN_USER_RECORDS};
pub use io::{
    load_dataset, read_manifest, write_dataset, DatasetCounts, DatasetManifest, MANIFEST_FILE,
};
pub use parse::{parse_checkins, parse_reader, ParseOptions, ParseReport, RawCheckin, Schema};
pub use segment::{
    build_samples, preprocess, segment_weeks, split_train_test, train_count, week_index,
    MIN_TRAJECTORIES_PER_USER, MIN_TRAJECTORY_LEN,
};

use std::collections::HashMap;
use std::ops::Range;
use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("line {line}, column {column} ({field}): cannot parse {value:?}")]
    Malformed {
        line: usize,
        column: usize,
        field: &'static str,
        value: String,
    },
    #[error("no check-ins survive filtering")]
    EmptySurvivors,
    #[error("no input check-ins")]
    EmptyInput,
    #[error("dataset artifact {path}: {msg}")]
    Artifact { path: PathBuf, msg: String },
}

/// Local wall-clock time of a check-in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LocalTime {
    /// Monday = 0.
    pub weekday: u8,
    pub hour: u8,
    pub minute: u8,
    /// UTC timestamp shifted by the record's timezone offset.
    pub epoch_seconds: i64,
}

impl LocalTime {
    pub fn from_utc(timestamp_utc: i64, tz_offset_minutes: i32) -> Self {
        let local = timestamp_utc + tz_offset_minutes as i64 * 60;
        let days = local.div_euclid(86_400);
        let secs = local.rem_euclid(86_400);
        // 1970-01-01 was a Thursday (weekday 3 with Monday = 0).
        let weekday = (days + 3).rem_euclid(7) as u8;
        LocalTime {
            weekday,
            hour: (secs / 3600) as u8,
            minute: ((secs % 3600) / 60) as u8,
            epoch_seconds: local,
        }
    }

    /// Ordinal of the local calendar hour.
    pub fn hour_bucket(&self) -> i64 {
        self.epoch_seconds.div_euclid(3600)
    }
}

/// One check-in against the dense catalogs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Record {
    pub user_index: usize,
    pub location_index: usize,
    pub category_index: Option<usize>,
    pub timestamp_utc: i64,
    pub local_time: LocalTime,
}

/// A user's records within one local ISO week.
#[derive(Clone, Debug, PartialEq)]
pub struct SubTrajectory {
    pub user_index: usize,
    /// Monday-aligned weeks since 1969-12-29, in local time.
    pub week_index: i64,
    pub records: Vec<Record>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocationInfo {
    pub id: String,
    pub latitude: f64,
    pub longitude: f64,
    pub category: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CategoryInfo {
    pub id: String,
    pub name: Option<String>,
}

/// Dense index <-> opaque id tables for users, locations and categories.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Catalog {
    pub users: Vec<String>,
    pub locations: Vec<LocationInfo>,
    pub categories: Vec<CategoryInfo>,
    user_lookup: HashMap<String, usize>,
    location_lookup: HashMap<String, usize>,
    category_lookup: HashMap<String, usize>,
}

impl Catalog {
    pub fn new(
        users: Vec<String>,
        locations: Vec<LocationInfo>,
        categories: Vec<CategoryInfo>,
    ) -> Self {
        let user_lookup = users
            .iter()
            .enumerate()
            .map(|(i, u)| (u.clone(), i))
            .collect();
        let location_lookup = locations
            .iter()
            .enumerate()
            .map(|(i, l)| (l.id.clone(), i))
            .collect();
        let category_lookup = categories
            .iter()
            .enumerate()
            .map(|(i, c)| (c.id.clone(), i))
            .collect();
        Catalog {
            users,
            locations,
            categories,
            user_lookup,
            location_lookup,
            category_lookup,
        }
    }

    pub fn user_index(&self, id: &str) -> Option<usize> {
        self.user_lookup.get(id).copied()
    }

    pub fn location_index(&self, id: &str) -> Option<usize> {
        self.location_lookup.get(id).copied()
    }

    pub fn category_index(&self, id: &str) -> Option<usize> {
        self.category_lookup.get(id).copied()
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn num_locations(&self) -> usize {
        self.locations.len()
    }

    pub fn num_categories(&self) -> usize {
        self.categories.len()
    }

    pub fn has_categories(&self) -> bool {
        !self.categories.is_empty()
    }

    pub fn coordinates(&self, location: usize) -> crate::geo::LatLon {
        let l = &self.locations[location];
        crate::geo::LatLon::new(l.latitude, l.longitude)
    }
}

/// One user's sub-trajectories in time order, the first `n_train` of which
/// are training data.
#[derive(Clone, Debug, PartialEq)]
pub struct UserTrajectories {
    pub user_index: usize,
    pub trajectories: Vec<SubTrajectory>,
    pub n_train: usize,
}

impl UserTrajectories {
    pub fn train(&self) -> &[SubTrajectory] {
        &self.trajectories[..self.n_train]
    }

    pub fn test(&self) -> &[SubTrajectory] {
        &self.trajectories[self.n_train..]
    }

    pub fn train_records(&self) -> impl Iterator<Item = &Record> {
        self.train().iter().flat_map(|t| t.records.iter())
    }
}

/// Catalogs plus every retained user's split sub-trajectories.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub catalog: Catalog,
    pub users: Vec<UserTrajectories>,
}

impl DatasetSplit {
    pub fn num_records(&self) -> usize {
        self.users
            .iter()
            .flat_map(|u| &u.trajectories)
            .map(|t| t.records.len())
            .sum()
    }

    pub fn num_trajectories(&self) -> usize {
        self.users.iter().map(|u| u.trajectories.len()).sum()
    }

    pub fn train_trajectories(&self) -> impl Iterator<Item = &SubTrajectory> {
        self.users.iter().flat_map(|u| u.train().iter())
    }

    pub fn trajectory(&self, user: usize, ordinal: usize) -> &SubTrajectory {
        &self.users[user].trajectories[ordinal]
    }
}

/// One prediction target: the record after `prefix_len` records of the
/// user's sub-trajectory `trajectory`, with `recent` naming the preceding
/// sub-trajectories (0-based ordinals) used as the recent context.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Sample {
    pub user_index: usize,
    pub trajectory: usize,
    pub prefix_len: usize,
    pub recent: Range<usize>,
    pub target_location: usize,
    pub target_category: Option<usize>,
}

impl Sample {
    pub fn current_prefix<'a>(&self, split: &'a DatasetSplit) -> &'a [Record] {
        &split.trajectory(self.user_index, self.trajectory).records[..self.prefix_len]
    }

    pub fn recent_records<'a>(&self, split: &'a DatasetSplit) -> impl Iterator<Item = &'a Record> {
        let user = &split.users[self.user_index];
        user.trajectories[self.recent.clone()]
            .iter()
            .flat_map(|t| t.records.iter())
    }

    pub fn target<'a>(&self, split: &'a DatasetSplit) -> &'a Record {
        &split.trajectory(self.user_index, self.trajectory).records[self.prefix_len]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn local_time_applies_offset() {
        // Tue Apr 03 18:00:09 UTC 2012, offset -240 minutes.
        let t = LocalTime::from_utc(1_333_476_009, -240);
        assert_eq!((t.weekday, t.hour, t.minute), (1, 14, 0));
    }

    #[test]
    fn epoch_is_thursday() {
        assert_eq!(LocalTime::from_utc(0, 0).weekday, 3);
        assert_eq!(LocalTime::from_utc(-1, 0).weekday, 2);
    }
}
