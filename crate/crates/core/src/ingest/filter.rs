use std::collections::{BTreeMap, HashMap};

use super::{Catalog, CategoryInfo, IngestError, LocalTime, LocationInfo, RawCheckin, Record};

pub const MIN_LOCATION_RECORDS: usize = 10;
pub const MIN_USER_RECORDS: usize = 10;

/// Surviving records grouped by user (dense user order), each sorted by time.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterOutput {
    pub catalog: Catalog,
    pub records: Vec<Vec<Record>>,
}

impl FilterOutput {
    pub fn num_records(&self) -> usize {
        self.records.iter().map(Vec::len).sum()
    }
}

#[derive(Clone, Copy)]
struct Work {
    user: usize,
    location: usize,
    timestamp: i64,
    local: LocalTime,
}

/// Removes unpopular locations, then sparse users, then merges consecutive
/// same-location check-ins that fall in one local hour, repeating the three
/// passes until nothing changes.
pub fn filter_and_merge(raw: &[RawCheckin]) -> Result<FilterOutput, IngestError> {
    if raw.is_empty() {
        return Err(IngestError::EmptyInput);
    }
    let mut users = Interner::default();
    let mut locations = Interner::default();
    // First occurrence (input order) of each location fixes its metadata.
    let mut first_seen: Vec<usize> = Vec::new();

    let mut per_user: Vec<Vec<(usize, Work)>> = Vec::new();
    for (i, c) in raw.iter().enumerate() {
        let u = users.intern(&c.user_id);
        let l = locations.intern(&c.location_id);
        if l == first_seen.len() {
            first_seen.push(i);
        }
        if u == per_user.len() {
            per_user.push(Vec::new());
        }
        per_user[u].push((
            i,
            Work {
                user: u,
                location: l,
                timestamp: c.timestamp_utc,
                local: LocalTime::from_utc(c.timestamp_utc, c.tz_offset_minutes),
            },
        ));
    }
    // Stable sort keeps input order for equal timestamps.
    let mut per_user: Vec<Vec<Work>> = per_user
        .into_iter()
        .map(|mut v| {
            v.sort_by_key(|(i, w)| (w.timestamp, *i));
            v.into_iter().map(|(_, w)| w).collect()
        })
        .collect();

    loop {
        let before: usize = per_user.iter().map(Vec::len).sum();

        let mut loc_counts = vec![0usize; locations.len()];
        for w in per_user.iter().flatten() {
            loc_counts[w.location] += 1;
        }
        for recs in &mut per_user {
            recs.retain(|w| loc_counts[w.location] >= MIN_LOCATION_RECORDS);
        }
        for recs in &mut per_user {
            if recs.len() < MIN_USER_RECORDS {
                recs.clear();
            }
        }
        for recs in &mut per_user {
            merge_same_hour(recs);
        }

        let after: usize = per_user.iter().map(Vec::len).sum();
        if after == before {
            break;
        }
    }

    if per_user.iter().all(Vec::is_empty) {
        return Err(IngestError::EmptySurvivors);
    }
    Ok(build_catalogs(
        raw,
        &users,
        &locations,
        &first_seen,
        per_user,
    ))
}

fn merge_same_hour(recs: &mut Vec<Work>) {
    let mut kept: Vec<Work> = Vec::with_capacity(recs.len());
    for &w in recs.iter() {
        if let Some(prev) = kept.last() {
            if prev.location == w.location && prev.local.hour_bucket() == w.local.hour_bucket() {
                continue;
            }
        }
        kept.push(w);
    }
    *recs = kept;
}

fn build_catalogs(
    raw: &[RawCheckin],
    users: &Interner,
    locations: &Interner,
    first_seen: &[usize],
    per_user: Vec<Vec<Work>>,
) -> FilterOutput {
    // Dense indices follow the sorted opaque ids so the result does not
    // depend on input order.
    let mut user_ids: BTreeMap<&str, usize> = BTreeMap::new();
    let mut loc_ids: BTreeMap<&str, usize> = BTreeMap::new();
    for w in per_user.iter().flatten() {
        user_ids.insert(users.name(w.user), w.user);
        loc_ids.insert(locations.name(w.location), w.location);
    }
    let mut cat_ids: BTreeMap<&str, Option<&str>> = BTreeMap::new();
    for &old in loc_ids.values() {
        let c = &raw[first_seen[old]];
        if let Some(id) = c.category_id.as_deref() {
            cat_ids.entry(id).or_insert(c.category_name.as_deref());
        }
    }
    let categories: Vec<CategoryInfo> = cat_ids
        .iter()
        .map(|(id, name)| CategoryInfo {
            id: id.to_string(),
            name: name.map(str::to_string),
        })
        .collect();
    let cat_index: HashMap<&str, usize> =
        cat_ids.keys().enumerate().map(|(i, k)| (*k, i)).collect();

    let mut loc_remap = vec![usize::MAX; locations.len()];
    let mut loc_infos = Vec::with_capacity(loc_ids.len());
    for (new, (&id, &old)) in loc_ids.iter().enumerate() {
        loc_remap[old] = new;
        let c = &raw[first_seen[old]];
        loc_infos.push(LocationInfo {
            id: id.to_string(),
            latitude: c.latitude,
            longitude: c.longitude,
            category: c.category_id.as_deref().map(|k| cat_index[k]),
        });
    }

    let mut user_remap = vec![usize::MAX; users.len()];
    for (new, &old) in user_ids.values().enumerate() {
        user_remap[old] = new;
    }
    let mut records: Vec<Vec<Record>> = vec![Vec::new(); user_ids.len()];
    for recs in per_user {
        for w in recs {
            let u = user_remap[w.user];
            let l = loc_remap[w.location];
            records[u].push(Record {
                user_index: u,
                location_index: l,
                category_index: loc_infos[l].category,
                timestamp_utc: w.timestamp,
                local_time: w.local,
            });
        }
    }
    let users_sorted = user_ids.keys().map(|s| s.to_string()).collect();
    FilterOutput {
        catalog: Catalog::new(users_sorted, loc_infos, categories),
        records,
    }
}

#[derive(Default)]
struct Interner {
    names: Vec<String>,
    lookup: HashMap<String, usize>,
}

impl Interner {
    fn intern(&mut self, s: &str) -> usize {
        if let Some(&i) = self.lookup.get(s) {
            return i;
        }
        self.names.push(s.to_string());
        self.lookup.insert(s.to_string(), self.names.len() - 1);
        self.names.len() - 1
    }

    fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    fn len(&self) -> usize {
        self.names.len()
    }
}

/// Regroups records into raw check-ins for re-filtering tests.
#[cfg(test)]
pub(crate) fn to_raw(out: &FilterOutput) -> Vec<RawCheckin> {
    let mut raw = Vec::new();
    for recs in &out.records {
        for r in recs {
            let loc = &out.catalog.locations[r.location_index];
            let cat = loc.category.map(|c| &out.catalog.categories[c]);
            let offset = (r.local_time.epoch_seconds - r.timestamp_utc) / 60;
            raw.push(RawCheckin {
                user_id: out.catalog.users[r.user_index].clone(),
                location_id: loc.id.clone(),
                category_id: cat.map(|c| c.id.clone()),
                category_name: cat.and_then(|c| c.name.clone()),
                latitude: loc.latitude,
                longitude: loc.longitude,
                timestamp_utc: r.timestamp_utc,
                tz_offset_minutes: offset as i32,
            });
        }
    }
    raw
}
