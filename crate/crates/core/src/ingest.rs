//! Record parsing, cleaning, and per-user trajectory assembly.
//!
//! Cleaning runs in a fixed order: source filter, study-region filter,
//! de-duplication, time window, then the per-user speed and residency rules.
//! Every dropped record is tallied in a [`FilterReport`].

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, Write};
use std::str::FromStr;

use chrono::{DateTime, NaiveDateTime};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{planar_distance, Boundary, Projection};

pub const SECONDS_PER_DAY: f64 = 86_400.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SourceTag {
    Gps,
    Geocoded,
    #[default]
    Unknown,
}

impl FromStr for SourceTag {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gps" => Ok(SourceTag::Gps),
            "geocoded" => Ok(SourceTag::Geocoded),
            "" | "unknown" => Ok(SourceTag::Unknown),
            other => Err(Error::format("source tag", other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub user_id: String,
    pub lat: f64,
    pub lon: f64,
    pub t: f64,
    pub source: SourceTag,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointRecord {
    pub user_id: String,
    pub x: f64,
    pub y: f64,
    pub t: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackPoint {
    pub x: f64,
    pub y: f64,
    pub t: f64,
}

impl TrackPoint {
    pub fn xy(&self) -> (f64, f64) {
        (self.x, self.y)
    }
}

/// One user's observations in ascending time order.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub user_id: String,
    pub points: Vec<TrackPoint>,
}

impl Trajectory {
    /// Builds a trajectory, sorting points by `(t, x, y)`.
    pub fn new(user_id: impl Into<String>, mut points: Vec<TrackPoint>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("trajectory needs at least one point"));
        }
        points.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.x.total_cmp(&b.x)).then(a.y.total_cmp(&b.y)));
        Ok(Trajectory {
            user_id: user_id.into(),
            points,
        })
    }

    pub fn span_days(&self) -> f64 {
        match (self.points.first(), self.points.last()) {
            (Some(a), Some(b)) => (b.t - a.t) / SECONDS_PER_DAY,
            _ => 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DedupKey {
    UserTime,
    #[default]
    UserTimeLoc,
}

impl FromStr for DedupKey {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "user_time" => Ok(DedupKey::UserTime),
            "user_time_loc" => Ok(DedupKey::UserTimeLoc),
            other => Err(Error::invalid(format!("unknown dedup key `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    /// Meters per second; consecutive pairs strictly faster drop the user.
    pub max_speed: f64,
    /// Days; users must span strictly more than this.
    pub min_residency_days: f64,
    pub keep_geocoded: bool,
    pub keep_unknown: bool,
    pub time_window: Option<(f64, f64)>,
    pub dedup_key: DedupKey,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            max_speed: 240.0,
            min_residency_days: 30.0,
            keep_geocoded: false,
            keep_unknown: true,
            time_window: None,
            dedup_key: DedupKey::UserTimeLoc,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_speed > 0.0) {
            return Err(Error::invalid(format!("max_speed must be > 0, got {}", self.max_speed)));
        }
        if !(self.min_residency_days >= 0.0) {
            return Err(Error::invalid(format!(
                "min_residency must be >= 0, got {}",
                self.min_residency_days
            )));
        }
        if let Some((a, b)) = self.time_window {
            if !(a <= b) {
                return Err(Error::invalid(format!("time window [{a}, {b}] is empty")));
            }
        }
        Ok(())
    }
}

/// Record counts per cleaning stage.
///
/// `parsed` equals the sum of every `dropped_*` record count plus
/// `retained_records`. The `*_users` fields count users rather than records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FilterReport {
    pub parsed: u64,
    pub dropped_geocoded: u64,
    pub dropped_outside: u64,
    pub dropped_duplicate: u64,
    pub dropped_window: u64,
    pub dropped_speed: u64,
    pub dropped_residency: u64,
    pub retained_records: u64,
    pub retained_users: u64,
    pub dropped_speed_users: u64,
    pub dropped_residency_users: u64,
    pub parse_errors: u64,
}

impl FilterReport {
    /// Adds the counts of another shard.
    pub fn merge(&mut self, other: &FilterReport) {
        self.parsed += other.parsed;
        self.dropped_geocoded += other.dropped_geocoded;
        self.dropped_outside += other.dropped_outside;
        self.dropped_duplicate += other.dropped_duplicate;
        self.dropped_window += other.dropped_window;
        self.dropped_speed += other.dropped_speed;
        self.dropped_residency += other.dropped_residency;
        self.retained_records += other.retained_records;
        self.retained_users += other.retained_users;
        self.dropped_speed_users += other.dropped_speed_users;
        self.dropped_residency_users += other.dropped_residency_users;
        self.parse_errors += other.parse_errors;
    }

    pub fn is_consistent(&self) -> bool {
        self.parsed
            == self.dropped_geocoded
                + self.dropped_outside
                + self.dropped_duplicate
                + self.dropped_window
                + self.dropped_speed
                + self.dropped_residency
                + self.retained_records
            && self.retained_users <= self.retained_records
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputFormat {
    Csv,
    Jsonl,
}

impl FromStr for InputFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(InputFormat::Csv),
            "jsonl" | "json" => Ok(InputFormat::Jsonl),
            other => Err(Error::invalid(format!("unknown input format `{other}`"))),
        }
    }
}

/// Whether parsed coordinates must be valid WGS84 degrees.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoordCheck {
    Wgs84,
    /// Coordinates are projected meters; only finiteness is required.
    None,
}

#[derive(Debug, Default)]
pub struct Parsed {
    pub records: Vec<RawRecord>,
    pub errors: u64,
}

/// Parses epoch seconds (integer or decimal) or an ISO-8601 timestamp. Naive
/// ISO timestamps are read as UTC.
pub fn parse_timestamp(s: &str) -> Option<f64> {
    let s = s.trim();
    if let Ok(v) = s.parse::<f64>() {
        return v.is_finite().then_some(v);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(timestamp_seconds(dt.timestamp(), dt.timestamp_subsec_nanos()));
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            let utc = dt.and_utc();
            return Some(timestamp_seconds(utc.timestamp(), utc.timestamp_subsec_nanos()));
        }
    }
    None
}

fn timestamp_seconds(secs: i64, nanos: u32) -> f64 {
    secs as f64 + nanos as f64 * 1e-9
}

fn make_record(user: &str, lat: f64, lon: f64, t: f64, source: SourceTag, check: CoordCheck) -> Option<RawRecord> {
    let user = user.trim();
    if user.is_empty() || !lat.is_finite() || !lon.is_finite() || !t.is_finite() {
        return None;
    }
    if check == CoordCheck::Wgs84 && (!(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon)) {
        return None;
    }
    Some(RawRecord {
        user_id: user.to_string(),
        lat,
        lon,
        t,
        source,
    })
}

fn parse_csv_fields(fields: &[&str], check: CoordCheck) -> Option<RawRecord> {
    if fields.len() < 4 || fields.len() > 5 {
        return None;
    }
    let lat = fields[1].trim().parse().ok()?;
    let lon = fields[2].trim().parse().ok()?;
    let t = parse_timestamp(fields[3])?;
    let source = match fields.get(4) {
        Some(s) => s.parse().ok()?,
        None => SourceTag::Unknown,
    };
    make_record(fields[0], lat, lon, t, source, check)
}

#[derive(Deserialize)]
struct JsonRecord {
    user_id: serde_json::Value,
    lat: f64,
    lon: f64,
    t: serde_json::Value,
    #[serde(default)]
    source: Option<String>,
}

fn parse_json_line(line: &str, check: CoordCheck) -> Option<RawRecord> {
    let rec: JsonRecord = serde_json::from_str(line).ok()?;
    let user = match &rec.user_id {
        serde_json::Value::String(s) => s.clone(),
        serde_json::Value::Number(n) => n.to_string(),
        _ => return None,
    };
    let t = match &rec.t {
        serde_json::Value::Number(n) => n.as_f64()?,
        serde_json::Value::String(s) => parse_timestamp(s)?,
        _ => return None,
    };
    let source = match rec.source.as_deref() {
        Some(s) => s.parse().ok()?,
        None => SourceTag::Unknown,
    };
    make_record(&user, rec.lat, rec.lon, t, source, check)
}

/// Parses line-delimited records. Malformed lines are counted and skipped;
/// only read failures abort.
pub fn parse_records<R: BufRead>(input: R, format: InputFormat, check: CoordCheck) -> Result<Parsed> {
    let mut out = Parsed::default();
    match format {
        InputFormat::Csv => {
            let mut reader = csv::ReaderBuilder::new()
                .has_headers(false)
                .flexible(true)
                .from_reader(input);
            let mut record = csv::StringRecord::new();
            let mut first = true;
            loop {
                match reader.read_record(&mut record) {
                    Ok(false) => break,
                    Ok(true) => {
                        let fields: Vec<&str> = record.iter().collect();
                        let is_header = first && fields.first().is_some_and(|f| f.trim() == "user_id");
                        first = false;
                        if is_header || (fields.len() == 1 && fields[0].trim().is_empty()) {
                            continue;
                        }
                        match parse_csv_fields(&fields, check) {
                            Some(r) => out.records.push(r),
                            None => out.errors += 1,
                        }
                    }
                    Err(e) => match e.kind() {
                        csv::ErrorKind::Io(_) => {
                            return Err(match e.into_kind() {
                                csv::ErrorKind::Io(io) => Error::Stream(io),
                                _ => unreachable!(),
                            })
                        }
                        _ => {
                            first = false;
                            out.errors += 1;
                        }
                    },
                }
            }
        }
        InputFormat::Jsonl => {
            for line in input.lines() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                match parse_json_line(&line, check) {
                    Some(r) => out.records.push(r),
                    None => out.errors += 1,
                }
            }
        }
    }
    Ok(out)
}

impl SourceTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            SourceTag::Gps => "gps",
            SourceTag::Geocoded => "geocoded",
            SourceTag::Unknown => "unknown",
        }
    }
}

/// Writes records in the input format read by [`parse_records`]; floats use
/// their shortest round-trip form.
pub fn write_records<W: Write>(mut out: W, records: &[RawRecord], format: InputFormat) -> Result<()> {
    match format {
        InputFormat::Csv => {
            writeln!(out, "user_id,lat,lon,t,source")?;
            for r in records {
                writeln!(out, "{},{},{},{},{}", r.user_id, r.lat, r.lon, r.t, r.source.as_str())?;
            }
        }
        InputFormat::Jsonl => {
            for r in records {
                let line = serde_json::json!({
                    "user_id": r.user_id, "lat": r.lat, "lon": r.lon, "t": r.t, "source": r.source.as_str(),
                });
                writeln!(out, "{line}")?;
            }
        }
    }
    Ok(())
}

fn dedup_key_of(r: &RawRecord, key: DedupKey) -> (String, u64, u64, u64) {
    match key {
        DedupKey::UserTime => (r.user_id.clone(), r.t.to_bits(), 0, 0),
        DedupKey::UserTimeLoc => (r.user_id.clone(), r.t.to_bits(), r.lat.to_bits(), r.lon.to_bits()),
    }
}

/// Keeps the first record of each key, preserving order. Returns the kept
/// records and the number dropped.
pub fn deduplicate(records: Vec<RawRecord>, key: DedupKey) -> (Vec<RawRecord>, u64) {
    let mut seen: HashSet<(String, u64, u64, u64)> = HashSet::with_capacity(records.len());
    let before = records.len();
    let kept: Vec<RawRecord> = records
        .into_iter()
        .filter(|r| seen.insert(dedup_key_of(r, key)))
        .collect();
    let dropped = (before - kept.len()) as u64;
    (kept, dropped)
}

/// Result of the speed rule: `Some(i)` names the first offending pair
/// `(i, i + 1)`; `None` keeps the trajectory.
pub fn filter_speed(traj: &Trajectory, max_speed: f64) -> Option<usize> {
    traj.points.windows(2).position(|w| {
        let d = planar_distance(w[0].xy(), w[1].xy());
        let dt = w[1].t - w[0].t;
        if dt <= 0.0 {
            d > 0.0
        } else {
            d / dt > max_speed
        }
    })
}

/// True when the trajectory spans strictly more than `min_days`.
pub fn filter_residency(traj: &Trajectory, min_days: f64) -> bool {
    traj.span_days() > min_days
}

/// Source, study-region, duplicate, and time-window filters; projects the
/// surviving records.
pub fn prepare_points(
    records: Vec<RawRecord>,
    config: &FilterConfig,
    proj: &Projection,
    region: Option<&Boundary>,
    report: &mut FilterReport,
) -> Vec<PointRecord> {
    report.parsed += records.len() as u64;
    let before = records.len();
    let records: Vec<RawRecord> = records
        .into_iter()
        .filter(|r| match r.source {
            SourceTag::Gps => true,
            SourceTag::Geocoded => config.keep_geocoded,
            SourceTag::Unknown => config.keep_unknown,
        })
        .collect();
    report.dropped_geocoded += (before - records.len()) as u64;

    let before = records.len();
    let records: Vec<(RawRecord, f64, f64)> = records
        .into_par_iter()
        .filter_map(|r| {
            let (x, y) = proj.project(r.lat, r.lon);
            match region {
                Some(b) if !b.contains(x, y) => None,
                _ => Some((r, x, y)),
            }
        })
        .collect();
    report.dropped_outside += (before - records.len()) as u64;

    let mut seen: HashSet<(String, u64, u64, u64)> = HashSet::with_capacity(records.len());
    let before = records.len();
    let records: Vec<(RawRecord, f64, f64)> = records
        .into_iter()
        .filter(|(r, _, _)| seen.insert(dedup_key_of(r, config.dedup_key)))
        .collect();
    report.dropped_duplicate += (before - records.len()) as u64;

    let before = records.len();
    let points: Vec<PointRecord> = records
        .into_iter()
        .filter(|(r, _, _)| config.time_window.is_none_or(|(a, b)| r.t >= a && r.t <= b))
        .map(|(r, x, y)| PointRecord {
            user_id: r.user_id,
            x,
            y,
            t: r.t,
        })
        .collect();
    report.dropped_window += (before - points.len()) as u64;
    points
}

enum Verdict {
    Keep(Trajectory),
    Speed(u64),
    Residency(u64),
}

/// Groups records per user, sorts each by time, and applies the speed and
/// residency rules. Trajectories come back ordered by user id.
pub fn build_trajectories(records: Vec<PointRecord>, config: &FilterConfig) -> (Vec<Trajectory>, FilterReport) {
    let mut report = FilterReport {
        parsed: records.len() as u64,
        ..Default::default()
    };
    let mut by_user: BTreeMap<String, Vec<TrackPoint>> = BTreeMap::new();
    for r in records {
        by_user.entry(r.user_id).or_default().push(TrackPoint { x: r.x, y: r.y, t: r.t });
    }
    let groups: Vec<(String, Vec<TrackPoint>)> = by_user.into_iter().collect();
    let verdicts: Vec<Verdict> = groups
        .into_par_iter()
        .map(|(user, points)| {
            let n = points.len() as u64;
            let traj = Trajectory::new(user, points).expect("groups are non-empty");
            if filter_speed(&traj, config.max_speed).is_some() {
                Verdict::Speed(n)
            } else if !filter_residency(&traj, config.min_residency_days) {
                Verdict::Residency(n)
            } else {
                Verdict::Keep(traj)
            }
        })
        .collect();
    let mut kept = Vec::new();
    for v in verdicts {
        match v {
            Verdict::Keep(t) => {
                report.retained_records += t.len() as u64;
                report.retained_users += 1;
                kept.push(t);
            }
            Verdict::Speed(n) => {
                report.dropped_speed += n;
                report.dropped_speed_users += 1;
            }
            Verdict::Residency(n) => {
                report.dropped_residency += n;
                report.dropped_residency_users += 1;
            }
        }
    }
    (kept, report)
}

/// Full cleaning pipeline from raw records to trajectories.
pub fn filter_records(
    records: Vec<RawRecord>,
    config: &FilterConfig,
    proj: &Projection,
    region: Option<&Boundary>,
) -> Result<(Vec<Trajectory>, FilterReport)> {
    config.validate()?;
    let mut report = FilterReport::default();
    let points = prepare_points(records, config, proj, region, &mut report);
    let (trajectories, tail) = build_trajectories(points, config);
    report.dropped_speed += tail.dropped_speed;
    report.dropped_residency += tail.dropped_residency;
    report.dropped_speed_users += tail.dropped_speed_users;
    report.dropped_residency_users += tail.dropped_residency_users;
    report.retained_records += tail.retained_records;
    report.retained_users += tail.retained_users;
    Ok((trajectories, report))
}

/// Merges per-shard trajectory lists, restoring user-id order.
pub fn merge_trajectories(shards: Vec<Vec<Trajectory>>) -> Vec<Trajectory> {
    let mut all: Vec<Trajectory> = shards.into_iter().flatten().collect();
    all.sort_by(|a, b| a.user_id.cmp(&b.user_id));
    all
}

#[derive(Serialize, Deserialize)]
struct TrajectoryLine {
    user_id: String,
    points: Vec<[f64; 3]>,
}

/// Writes one JSON object per user: `{"user_id": .., "points": [[x, y, t], ..]}`.
pub fn write_trajectories<W: Write>(mut out: W, trajectories: &[Trajectory]) -> Result<()> {
    for t in trajectories {
        let line = TrajectoryLine {
            user_id: t.user_id.clone(),
            points: t.points.iter().map(|p| [p.x, p.y, p.t]).collect(),
        };
        serde_json::to_writer(&mut out, &line).map_err(|e| Error::format("trajectory store", e.to_string()))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_trajectories<R: BufRead>(input: R) -> Result<Vec<Trajectory>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: TrajectoryLine = serde_json::from_str(&line)
            .map_err(|e| Error::format("trajectory store", format!("line {}: {e}", i + 1)))?;
        let points = parsed
            .points
            .into_iter()
            .map(|[x, y, t]| TrackPoint { x, y, t })
            .collect();
        out.push(Trajectory::new(parsed.user_id, points)?);
    }
    Ok(out)
}
