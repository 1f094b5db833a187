//! Deterministic check-in corpora with weekly-periodic routines, used by the
//! overfit and pipeline tests.

use crate::ingest::RawCheckin;

// 2012-04-02 00:00 UTC, a Monday.
const MONDAY: i64 = 1_333_324_800;
const WEEK: i64 = 7 * 86_400;

#[derive(Clone, Copy, Debug)]
pub struct PeriodicCorpus {
    pub users: usize,
    pub locations: usize,
    pub weeks: usize,
    /// Check-ins per user per week, at most 7 (one per day).
    pub visits_per_week: usize,
    pub categories: usize,
}

impl Default for PeriodicCorpus {
    fn default() -> Self {
        PeriodicCorpus {
            users: 20,
            locations: 30,
            weeks: 10,
            visits_per_week: 6,
            categories: 5,
        }
    }
}

impl PeriodicCorpus {
    /// Location of user `u`'s `k`-th weekly visit.
    pub fn route(&self, user: usize, k: usize) -> usize {
        (user * 7 + k * 11) % self.locations
    }

    /// Every user repeats the same route at the same weekday and hour every
    /// week: visit `k` falls on weekday `k` at `8 + 2k + user % 3` o'clock.
    pub fn checkins(&self) -> Vec<RawCheckin> {
        assert!(self.visits_per_week <= 7);
        let mut out = Vec::new();
        for u in 0..self.users {
            for w in 0..self.weeks {
                for k in 0..self.visits_per_week {
                    let l = self.route(u, k);
                    let hour = 8 + 2 * k + u % 3;
                    let ts = MONDAY + w as i64 * WEEK + k as i64 * 86_400 + hour as i64 * 3600;
                    let c = l % self.categories;
                    out.push(RawCheckin {
                        user_id: format!("u{u:02}"),
                        location_id: format!("l{l:02}"),
                        category_id: Some(format!("c{c}")),
                        category_name: Some(format!("Category {c}")),
                        latitude: 40.70 + 0.01 * (l % 6) as f64,
                        longitude: -74.00 + 0.01 * (l / 6) as f64,
                        timestamp_utc: ts,
                        tz_offset_minutes: 0,
                    });
                }
            }
        }
        out
    }
}
