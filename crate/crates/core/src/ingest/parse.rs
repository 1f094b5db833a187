use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;
use std::str::FromStr;

use chrono::DateTime;

use super::IngestError;

/// Column layout of a raw check-in dump.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Schema {
    /// `user, venue, category id, category name, lat, lon, tz offset (min), UTC time`
    /// with times like `Tue Apr 03 18:00:09 +0000 2012`.
    FoursquareTsv,
    /// `user, RFC 3339 UTC time, lat, lon, location id`, no categories.
    Gowalla,
}

impl FromStr for Schema {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "foursquare_tsv" => Ok(Schema::FoursquareTsv),
            "gowalla" => Ok(Schema::Gowalla),
            other => Err(format!(
                "unknown schema {other:?} (expected foursquare_tsv or gowalla)"
            )),
        }
    }
}

impl std::fmt::Display for Schema {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Schema::FoursquareTsv => "foursquare_tsv",
            Schema::Gowalla => "gowalla",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RawCheckin {
    pub user_id: String,
    pub location_id: String,
    pub category_id: Option<String>,
    pub category_name: Option<String>,
    pub latitude: f64,
    pub longitude: f64,
    pub timestamp_utc: i64,
    pub tz_offset_minutes: i32,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ParseOptions {
    pub skip_malformed: bool,
    /// Offset applied to schemas that carry no timezone column.
    pub default_tz_offset_minutes: i32,
}

#[derive(Clone, Debug, Default)]
pub struct ParseReport {
    pub checkins: Vec<RawCheckin>,
    /// Lines dropped under `skip_malformed`.
    pub skipped: usize,
}

pub fn parse_checkins(
    path: &Path,
    schema: Schema,
    opts: ParseOptions,
) -> Result<ParseReport, IngestError> {
    let file = File::open(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_reader(file, schema, opts).map_err(|e| match e {
        IngestError::Io { source, .. } => IngestError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => other,
    })
}

/// Parses tab-separated check-ins. Blank lines and lines starting with `#`
/// are ignored. Non-UTF-8 bytes (common in venue names) are replaced.
pub fn parse_reader(
    reader: impl Read,
    schema: Schema,
    opts: ParseOptions,
) -> Result<ParseReport, IngestError> {
    let mut reader = BufReader::new(reader);
    let mut report = ParseReport::default();
    let mut buf = Vec::new();
    let mut line_no = 0;
    loop {
        buf.clear();
        let n = reader
            .read_until(b'\n', &mut buf)
            .map_err(|source| IngestError::Io {
                path: Default::default(),
                source,
            })?;
        if n == 0 {
            break;
        }
        line_no += 1;
        let line = String::from_utf8_lossy(&buf);
        let line = line.trim_end_matches(['\n', '\r']);
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        match parse_line(line, line_no, schema, opts) {
            Ok(c) => report.checkins.push(c),
            Err(_) if opts.skip_malformed => report.skipped += 1,
            Err(e) => return Err(e),
        }
    }
    Ok(report)
}

fn parse_line(
    line: &str,
    line_no: usize,
    schema: Schema,
    opts: ParseOptions,
) -> Result<RawCheckin, IngestError> {
    let fields: Vec<&str> = line.split('\t').collect();
    let bad = |column: usize, field: &'static str| IngestError::Malformed {
        line: line_no,
        column,
        field,
        value: fields.get(column - 1).copied().unwrap_or("").to_string(),
    };
    let nonempty = |column: usize, field: &'static str| -> Result<String, IngestError> {
        match fields.get(column - 1) {
            Some(s) if !s.trim().is_empty() => Ok(s.trim().to_string()),
            _ => Err(bad(column, field)),
        }
    };
    let coord = |column: usize, field: &'static str, limit: f64| -> Result<f64, IngestError> {
        let v: f64 = fields
            .get(column - 1)
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| bad(column, field))?;
        if !v.is_finite() || v.abs() > limit {
            return Err(bad(column, field));
        }
        Ok(v)
    };

    match schema {
        Schema::FoursquareTsv => {
            if fields.len() < 8 {
                return Err(bad(fields.len() + 1, "column count"));
            }
            let category_id = nonempty(3, "category_id").ok();
            let category_name = fields[3].trim();
            let category_name = (!category_name.is_empty()).then(|| category_name.to_string());
            if category_id.is_none() && category_name.is_some() {
                return Err(bad(3, "category_id"));
            }
            let tz: i32 = fields[6]
                .trim()
                .parse()
                .map_err(|_| bad(7, "tz_offset_minutes"))?;
            let ts = DateTime::parse_from_str(fields[7].trim(), "%a %b %d %H:%M:%S %z %Y")
                .map_err(|_| bad(8, "timestamp"))?;
            Ok(RawCheckin {
                user_id: nonempty(1, "user_id")?,
                location_id: nonempty(2, "location_id")?,
                category_name: category_id.as_ref().and(category_name),
                category_id,
                latitude: coord(5, "latitude", 90.0)?,
                longitude: coord(6, "longitude", 180.0)?,
                timestamp_utc: ts.timestamp(),
                tz_offset_minutes: tz,
            })
        }
        Schema::Gowalla => {
            if fields.len() < 5 {
                return Err(bad(fields.len() + 1, "column count"));
            }
            let ts =
                DateTime::parse_from_rfc3339(fields[1].trim()).map_err(|_| bad(2, "timestamp"))?;
            Ok(RawCheckin {
                user_id: nonempty(1, "user_id")?,
                location_id: nonempty(5, "location_id")?,
                category_id: None,
                category_name: None,
                latitude: coord(3, "latitude", 90.0)?,
                longitude: coord(4, "longitude", 180.0)?,
                timestamp_utc: ts.timestamp(),
                tz_offset_minutes: opts.default_tz_offset_minutes,
            })
        }
    }
}
