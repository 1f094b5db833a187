//! On-disk form of a preprocessed dataset.
//!
//! A dataset directory holds four tab-separated tables with header rows and
//! a `manifest.toml`:
//!
//! - `users.tsv`: `user_index, user_id`
//! - `locations.tsv`: `location_index, location_id, latitude, longitude, category_index`
//! - `categories.tsv`: `category_index, category_id, category_name`
//! - `records.tsv`: `user_index, trajectory, split, week_index, location_index,
//!   category_index, timestamp_utc, local_epoch_seconds, weekday, hour, minute`
//!
//! Missing optional values are written as empty fields. `trajectory` is the
//! 0-based ordinal of the record's sub-trajectory within its user and `split`
//! is `train` or `test`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    Catalog, CategoryInfo, DatasetSplit, IngestError, LocalTime, LocationInfo, Record,
    SubTrajectory, UserTrajectories,
};
use crate::util::sha256_hex;

pub const MANIFEST_FILE: &str = "manifest.toml";
const FORMAT_VERSION: u32 = 1;

pub const USERS_HEADER: &str = "user_index\tuser_id";
pub const LOCATIONS_HEADER: &str =
    "location_index\tlocation_id\tlatitude\tlongitude\tcategory_index";
pub const CATEGORIES_HEADER: &str = "category_index\tcategory_id\tcategory_name";
pub const RECORDS_HEADER: &str = "user_index\ttrajectory\tsplit\tweek_index\tlocation_index\tcategory_index\ttimestamp_utc\tlocal_epoch_seconds\tweekday\thour\tminute";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetCounts {
    pub users: usize,
    pub locations: usize,
    pub categories: usize,
    pub records: usize,
    pub sub_trajectories: usize,
    pub train_sub_trajectories: usize,
    pub test_sub_trajectories: usize,
    pub train_samples: usize,
    pub test_samples: usize,
    /// Survivors of filtering and merging, before weekly segmentation.
    pub filtered_users: usize,
    pub filtered_locations: usize,
    pub filtered_records: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub schema: String,
    pub source_sha256: String,
    pub raw_checkins: usize,
    pub skipped_lines: usize,
    pub has_categories: bool,
    pub counts: DatasetCounts,
    /// File name -> SHA-256 of its contents.
    pub files: BTreeMap<String, String>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IngestError + '_ {
    move |source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes the dataset tables, filling `manifest.files` and `has_categories`.
/// Returns the SHA-256 of the written manifest, which identifies the
/// dataset in downstream artifacts.
pub fn write_dataset(
    dir: &Path,
    split: &DatasetSplit,
    mut manifest: DatasetManifest,
) -> Result<String, IngestError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let cat = &split.catalog;
    let mut tables: Vec<(&str, String)> = Vec::new();

    let mut s = format!("{USERS_HEADER}\n");
    for (i, u) in cat.users.iter().enumerate() {
        writeln!(s, "{i}\t{u}").unwrap();
    }
    tables.push(("users.tsv", s));

    let mut s = format!("{LOCATIONS_HEADER}\n");
    for (i, l) in cat.locations.iter().enumerate() {
        writeln!(
            s,
            "{i}\t{}\t{}\t{}\t{}",
            l.id,
            l.latitude,
            l.longitude,
            opt(l.category)
        )
        .unwrap();
    }
    tables.push(("locations.tsv", s));

    let mut s = format!("{CATEGORIES_HEADER}\n");
    for (i, c) in cat.categories.iter().enumerate() {
        writeln!(s, "{i}\t{}\t{}", c.id, c.name.as_deref().unwrap_or("")).unwrap();
    }
    tables.push(("categories.tsv", s));

    let mut s = format!("{RECORDS_HEADER}\n");
    for user in &split.users {
        for (p, traj) in user.trajectories.iter().enumerate() {
            let side = if p < user.n_train { "train" } else { "test" };
            for r in &traj.records {
                let t = r.local_time;
                writeln!(
                    s,
                    "{}\t{p}\t{side}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                    r.user_index,
                    traj.week_index,
                    r.location_index,
                    opt(r.category_index),
                    r.timestamp_utc,
                    t.epoch_seconds,
                    t.weekday,
                    t.hour,
                    t.minute
                )
                .unwrap();
            }
        }
    }
    tables.push(("records.tsv", s));

    manifest.format_version = FORMAT_VERSION;
    manifest.has_categories = cat.has_categories();
    manifest.files.clear();
    for (name, body) in &tables {
        let path = dir.join(name);
        fs::write(&path, body).map_err(io_err(&path))?;
        manifest
            .files
            .insert(name.to_string(), sha256_hex(body.as_bytes()));
    }
    let text = toml::to_string(&manifest).expect("manifest serializes");
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, &text).map_err(io_err(&path))?;
    Ok(sha256_hex(text.as_bytes()))
}

struct Table {
    path: PathBuf,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn read(
        dir: &Path,
        name: &str,
        header: &str,
        manifest: &DatasetManifest,
    ) -> Result<Self, IngestError> {
        let path = dir.join(name);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let artifact = |msg: String| IngestError::Artifact {
            path: path.clone(),
            msg,
        };
        match manifest.files.get(name) {
            Some(h) if *h == sha256_hex(text.as_bytes()) => {}
            Some(_) => return Err(artifact("contents do not match manifest hash".into())),
            None => return Err(artifact("not listed in manifest".into())),
        }
        let mut lines = text.lines();
        if lines.next() != Some(header) {
            return Err(artifact(format!("expected header {header:?}")));
        }
        let rows = lines
            .map(|l| l.split('\t').map(str::to_string).collect())
            .collect();
        Ok(Table { path, rows })
    }

    fn field<T: std::str::FromStr>(&self, row: usize, col: usize) -> Result<T, IngestError> {
        self.rows[row]
            .get(col)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| IngestError::Artifact {
                path: self.path.clone(),
                msg: format!("row {}: bad field {}", row + 2, col + 1),
            })
    }

    fn optional<T: std::str::FromStr>(
        &self,
        row: usize,
        col: usize,
    ) -> Result<Option<T>, IngestError> {
        match self.rows[row].get(col).map(String::as_str) {
            Some("") | None => Ok(None),
            Some(_) => self.field(row, col).map(Some),
        }
    }
}

pub fn read_manifest(dir: &Path) -> Result<(DatasetManifest, String), IngestError> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let manifest = toml::from_str(&text).map_err(|e| IngestError::Artifact {
        path: path.clone(),
        msg: e.to_string(),
    })?;
    Ok((manifest, sha256_hex(text.as_bytes())))
}

/// Reads a dataset directory written by [`write_dataset`]. Returns the split,
/// the manifest, and the manifest's SHA-256.
pub fn load_dataset(dir: &Path) -> Result<(DatasetSplit, DatasetManifest, String), IngestError> {
    let (manifest, hash) = read_manifest(dir)?;
    let users_t = Table::read(dir, "users.tsv", USERS_HEADER, &manifest)?;
    let locs_t = Table::read(dir, "locations.tsv", LOCATIONS_HEADER, &manifest)?;
    let cats_t = Table::read(dir, "categories.tsv", CATEGORIES_HEADER, &manifest)?;
    let recs_t = Table::read(dir, "records.tsv", RECORDS_HEADER, &manifest)?;

    let users: Vec<String> = (0..users_t.rows.len())
        .map(|r| users_t.field(r, 1))
        .collect::<Result<_, _>>()?;
    let mut locations = Vec::with_capacity(locs_t.rows.len());
    for r in 0..locs_t.rows.len() {
        locations.push(LocationInfo {
            id: locs_t.field(r, 1)?,
            latitude: locs_t.field(r, 2)?,
            longitude: locs_t.field(r, 3)?,
            category: locs_t.optional(r, 4)?,
        });
    }
    let mut categories = Vec::with_capacity(cats_t.rows.len());
    for r in 0..cats_t.rows.len() {
        let name: Option<String> = cats_t.optional(r, 2)?;
        categories.push(CategoryInfo {
            id: cats_t.field(r, 1)?,
            name,
        });
    }

    let mut per_user: Vec<UserTrajectories> = (0..users.len())
        .map(|u| UserTrajectories {
            user_index: u,
            trajectories: Vec::new(),
            n_train: 0,
        })
        .collect();
    let bad = |msg: String| IngestError::Artifact {
        path: recs_t.path.clone(),
        msg,
    };
    for r in 0..recs_t.rows.len() {
        let u: usize = recs_t.field(r, 0)?;
        let p: usize = recs_t.field(r, 1)?;
        let side: String = recs_t.field(r, 2)?;
        let week: i64 = recs_t.field(r, 3)?;
        let record = Record {
            user_index: u,
            location_index: recs_t.field(r, 4)?,
            category_index: recs_t.optional(r, 5)?,
            timestamp_utc: recs_t.field(r, 6)?,
            local_time: LocalTime {
                epoch_seconds: recs_t.field(r, 7)?,
                weekday: recs_t.field(r, 8)?,
                hour: recs_t.field(r, 9)?,
                minute: recs_t.field(r, 10)?,
            },
        };
        if u >= per_user.len() || record.location_index >= locations.len() {
            return Err(bad(format!("row {}: index out of range", r + 2)));
        }
        let user = &mut per_user[u];
        if p == user.trajectories.len() {
            user.trajectories.push(SubTrajectory {
                user_index: u,
                week_index: week,
                records: Vec::new(),
            });
        } else if p + 1 != user.trajectories.len() {
            return Err(bad(format!("row {}: trajectories out of order", r + 2)));
        }
        match side.as_str() {
            "train" => user.n_train = p + 1,
            "test" => {}
            other => return Err(bad(format!("row {}: unknown split {other:?}", r + 2))),
        }
        user.trajectories[p].records.push(record);
    }
    let split = DatasetSplit {
        catalog: Catalog::new(users, locations, categories),
        users: per_user,
    };
    Ok((split, manifest, hash))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{parse_reader, preprocess, ParseOptions, Schema};

    fn toy_split() -> DatasetSplit {
        let mut text = String::new();
        // Two users, three locations, six weeks of three check-ins each.
        for u in 0..2 {
            for w in 0..6 {
                for i in 0..3 {
                    let ts = 1_333_324_800 + 43_200 + w * 7 * 86_400 + u * 3600 + i * 7200;
                    let dt = chrono::DateTime::from_timestamp(ts, 0).unwrap();
                    writeln!(
                        text,
                        "u{u}\tL{i}\tC{}\tcat {}\t40.{i}\t-73.9\t-240\t{}",
                        i % 2,
                        i % 2,
                        dt.format("%a %b %d %H:%M:%S +0000 %Y")
                    )
                    .unwrap();
                }
            }
        }
        let raw = parse_reader(
            text.as_bytes(),
            Schema::FoursquareTsv,
            ParseOptions::default(),
        )
        .unwrap();
        preprocess(&raw.checkins).unwrap().0
    }

    #[test]
    fn write_then_load_is_identity() {
        let split = toy_split();
        assert_eq!(split.num_records(), 36);
        let dir = tempfile::tempdir().unwrap();
        let hash = write_dataset(dir.path(), &split, DatasetManifest::default()).unwrap();
        let (loaded, manifest, hash2) = load_dataset(dir.path()).unwrap();
        assert_eq!(loaded, split);
        assert_eq!(hash, hash2);
        assert!(manifest.has_categories);
    }

    #[test]
    fn tampered_table_is_rejected() {
        let split = toy_split();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &split, DatasetManifest::default()).unwrap();
        let p = dir.path().join("users.tsv");
        let mut s = fs::read_to_string(&p).unwrap();
        s.push_str("9\textra\n");
        fs::write(&p, s).unwrap();
        assert!(matches!(
            load_dataset(dir.path()),
            Err(IngestError::Artifact { .. })
        ));
    }
}
