//! Input parsing, sparse-day filtering and the nearest-station index.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::Read;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{validate_lon_lat, BaseStation, CheckIn, LocalClock, Poi, ProjectedPoint, Projection, Record};

/// Half-hour slots per day used by the sparse-day rule.
pub const SPARSE_SLOTS_PER_DAY: i64 = 48;
/// A day needs at least this many occupied half-hour slots to be kept.
pub const MIN_OCCUPIED_SLOTS: usize = 12;
/// Check-in users spanning less than this are treated as visitors.
pub const VISITOR_MIN_SPAN_SECS: i64 = 14 * 86_400;
pub const DEFAULT_GRID_CELL_M: f64 = 1000.0;

/// Parses an epoch-seconds integer or an ISO-8601 timestamp. Timestamps
/// without an offset are read as UTC.
pub fn parse_timestamp(s: &str) -> Option<i64> {
    let s = s.trim();
    if let Ok(v) = s.parse::<i64>() {
        return Some(v);
    }
    if let Ok(dt) = chrono::DateTime::parse_from_rfc3339(s) {
        return Some(dt.timestamp());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S"] {
        if let Ok(dt) = chrono::NaiveDateTime::parse_from_str(s, fmt) {
            return Some(dt.and_utc().timestamp());
        }
    }
    None
}

#[derive(Debug, Deserialize)]
struct XdrRow {
    user_id: String,
    timestamp: String,
    lon: f64,
    lat: f64,
    station_id: String,
}

/// Parsed event records, grouped by user and sorted by time.
#[derive(Debug, Default, Clone)]
pub struct XdrDataset {
    pub users: BTreeMap<String, Vec<Record>>,
    pub rows: usize,
    pub malformed: usize,
    pub duplicates: usize,
}

impl XdrDataset {
    pub fn n_records(&self) -> usize {
        self.users.values().map(Vec::len).sum()
    }
}

fn check_malformed(path: &str, malformed: usize, total: usize) -> Result<()> {
    if malformed * 100 > total {
        return Err(Error::TooManyMalformed {
            path: path.to_string(),
            malformed,
            total,
        });
    }
    if malformed > 0 {
        warn!("{path}: skipped {malformed} malformed rows of {total}");
    }
    Ok(())
}

fn reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r)
}

pub fn parse_xdr<R: Read>(input: R, source: &str) -> Result<XdrDataset> {
    let mut rdr = reader(input);
    let mut out = XdrDataset::default();
    let mut seen: HashMap<String, HashSet<(i64, String)>> = HashMap::new();
    for row in rdr.deserialize::<XdrRow>() {
        out.rows += 1;
        let rec = row.ok().and_then(|r| {
            let ts = parse_timestamp(&r.timestamp)?;
            validate_lon_lat(r.lon, r.lat).ok()?;
            Some(Record {
                user_id: r.user_id,
                timestamp: ts,
                lon: r.lon,
                lat: r.lat,
                station_id: r.station_id,
            })
        });
        let Some(rec) = rec else {
            out.malformed += 1;
            continue;
        };
        let key = (rec.timestamp, rec.station_id.clone());
        if !seen.entry(rec.user_id.clone()).or_default().insert(key) {
            out.duplicates += 1;
            continue;
        }
        out.users.entry(rec.user_id.clone()).or_default().push(rec);
    }
    check_malformed(source, out.malformed, out.rows)?;
    for recs in out.users.values_mut() {
        // stable: equal timestamps keep input order
        recs.sort_by_key(|r| r.timestamp);
    }
    Ok(out)
}

pub fn parse_stations<R: Read>(input: R, source: &str) -> Result<Vec<BaseStation>> {
    let mut rdr = reader(input);
    let (mut out, mut bad, mut total) = (Vec::new(), 0, 0);
    for row in rdr.deserialize::<BaseStation>() {
        total += 1;
        match row {
            Ok(s) if validate_lon_lat(s.lon, s.lat).is_ok() => out.push(s),
            _ => bad += 1,
        }
    }
    check_malformed(source, bad, total)?;
    Ok(out)
}

pub fn parse_pois<R: Read>(input: R, source: &str) -> Result<Vec<Poi>> {
    let mut rdr = reader(input);
    let (mut out, mut bad, mut total) = (Vec::new(), 0, 0);
    for row in rdr.deserialize::<Poi>() {
        total += 1;
        match row {
            Ok(p) if validate_lon_lat(p.lon, p.lat).is_ok() => out.push(p),
            _ => bad += 1,
        }
    }
    check_malformed(source, bad, total)?;
    Ok(out)
}

#[derive(Debug, Deserialize)]
struct CheckInRow {
    user_id: String,
    timestamp: String,
    category: String,
}

pub fn parse_checkins<R: Read>(input: R, source: &str) -> Result<Vec<CheckIn>> {
    let mut rdr = reader(input);
    let (mut out, mut bad, mut total) = (Vec::new(), 0, 0);
    for row in rdr.deserialize::<CheckInRow>() {
        total += 1;
        match row.ok().and_then(|r| Some((parse_timestamp(&r.timestamp)?, r))) {
            Some((ts, r)) => out.push(CheckIn {
                user_id: r.user_id,
                timestamp: ts,
                category: r.category,
            }),
            None => bad += 1,
        }
    }
    check_malformed(source, bad, total)?;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IngestParams {
    pub drop_weekends: bool,
    pub sparse_slots_per_day: i64,
    pub min_occupied_slots: usize,
    pub visitor_min_span_days: i64,
    pub grid_cell_m: f64,
}

impl Default for IngestParams {
    fn default() -> Self {
        Self {
            drop_weekends: true,
            sparse_slots_per_day: SPARSE_SLOTS_PER_DAY,
            min_occupied_slots: MIN_OCCUPIED_SLOTS,
            visitor_min_span_days: VISITOR_MIN_SPAN_SECS / 86_400,
            grid_cell_m: DEFAULT_GRID_CELL_M,
        }
    }
}

impl IngestParams {
    pub fn validate(&self) -> Result<()> {
        if self.sparse_slots_per_day <= 0 || 86_400 % self.sparse_slots_per_day != 0 {
            return Err(Error::InvalidParameter(format!("sparse_slots_per_day = {} must divide a day", self.sparse_slots_per_day)));
        }
        if !(self.grid_cell_m > 0.0) {
            return Err(Error::InvalidParameter("grid_cell_m must be positive".into()));
        }
        Ok(())
    }
}

/// Keeps a user-day iff at least `min_occupied_slots` of its
/// `sparse_slots_per_day` slots contain a record. `records` must belong to
/// one local day.
pub fn filter_sparse_days(records: &[Record], clock: &LocalClock, p: &IngestParams) -> bool {
    occupied_slots(records, clock, p.sparse_slots_per_day) >= p.min_occupied_slots
}

pub fn occupied_slots(records: &[Record], clock: &LocalClock, slots_per_day: i64) -> usize {
    let slot_len = 86_400 / slots_per_day;
    records
        .iter()
        .map(|r| clock.second_of_day(r.timestamp) / slot_len)
        .collect::<BTreeSet<_>>()
        .len()
}

/// A user's records after weekend removal and sparse-day filtering.
#[derive(Debug, Clone, Default)]
pub struct CleanTrace {
    pub records: Vec<Record>,
    pub kept_days: BTreeSet<i64>,
    pub dropped_days: usize,
}

pub fn clean_user_records(records: &[Record], clock: &LocalClock, p: &IngestParams) -> CleanTrace {
    let mut by_day: BTreeMap<i64, Vec<&Record>> = BTreeMap::new();
    for r in records {
        by_day.entry(clock.day(r.timestamp)).or_default().push(r);
    }
    let mut out = CleanTrace::default();
    for (day, recs) in by_day {
        if p.drop_weekends && clock.is_weekend(day) {
            continue;
        }
        let owned: Vec<Record> = recs.into_iter().cloned().collect();
        if filter_sparse_days(&owned, clock, p) {
            out.kept_days.insert(day);
            out.records.extend(owned);
        } else {
            out.dropped_days += 1;
        }
    }
    out
}

/// Drops users whose first-to-last check-in span is below `min_span_secs`.
/// A span of exactly `min_span_secs` is kept.
pub fn remove_visitors(checkins: &[CheckIn], min_span_secs: i64) -> BTreeMap<String, Vec<CheckIn>> {
    let mut by_user: BTreeMap<String, Vec<CheckIn>> = BTreeMap::new();
    for c in checkins {
        by_user.entry(c.user_id.clone()).or_default().push(c.clone());
    }
    by_user.retain(|_, cs| {
        let lo = cs.iter().map(|c| c.timestamp).min().unwrap_or(0);
        let hi = cs.iter().map(|c| c.timestamp).max().unwrap_or(0);
        hi - lo >= min_span_secs
    });
    by_user
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexedStation {
    pub station: BaseStation,
    pub point: ProjectedPoint,
}

/// Uniform-grid index answering nearest-station (Voronoi membership) queries.
#[derive(Debug, Clone)]
pub struct StationIndex {
    stations: Vec<IndexedStation>,
    by_id: HashMap<String, usize>,
    grid: HashMap<(i64, i64), Vec<usize>>,
    cell: f64,
    min_cell: (i64, i64),
    max_cell: (i64, i64),
    projection: Projection,
}

fn cmp_candidate(a: (f64, &str), b: (f64, &str)) -> Ordering {
    a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1))
}

impl StationIndex {
    pub fn build(stations: &[BaseStation], projection: Projection) -> Result<Self> {
        Self::with_cell_size(stations, projection, DEFAULT_GRID_CELL_M)
    }

    pub fn with_cell_size(stations: &[BaseStation], projection: Projection, cell: f64) -> Result<Self> {
        if !(cell > 0.0) {
            return Err(Error::InvalidParameter(format!("grid cell size {cell}")));
        }
        let mut out = StationIndex {
            stations: Vec::with_capacity(stations.len()),
            by_id: HashMap::new(),
            grid: HashMap::new(),
            cell,
            min_cell: (i64::MAX, i64::MAX),
            max_cell: (i64::MIN, i64::MIN),
            projection,
        };
        for s in stations {
            let point = projection.project(s.lon, s.lat)?;
            let idx = out.stations.len();
            let c = out.cell_of(point);
            out.min_cell = (out.min_cell.0.min(c.0), out.min_cell.1.min(c.1));
            out.max_cell = (out.max_cell.0.max(c.0), out.max_cell.1.max(c.1));
            out.grid.entry(c).or_default().push(idx);
            out.by_id.insert(s.station_id.clone(), idx);
            out.stations.push(IndexedStation {
                station: s.clone(),
                point,
            });
        }
        Ok(out)
    }

    pub fn projection(&self) -> &Projection {
        &self.projection
    }

    pub fn len(&self) -> usize {
        self.stations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stations.is_empty()
    }

    pub fn stations(&self) -> &[IndexedStation] {
        &self.stations
    }

    pub fn get(&self, station_id: &str) -> Option<&IndexedStation> {
        self.by_id.get(station_id).map(|&i| &self.stations[i])
    }

    fn cell_of(&self, p: ProjectedPoint) -> (i64, i64) {
        ((p.x / self.cell).floor() as i64, (p.y / self.cell).floor() as i64)
    }

    /// Station minimizing Euclidean distance to `p`; equal distances go to
    /// the lexicographically smallest id.
    pub fn nearest(&self, p: ProjectedPoint) -> Result<&IndexedStation> {
        self.nearest_k(p, 1)?.into_iter().next().ok_or(Error::EmptyIndex)
    }

    /// The `k` nearest stations in (distance, id) order.
    pub fn nearest_k(&self, p: ProjectedPoint, k: usize) -> Result<Vec<&IndexedStation>> {
        if self.stations.is_empty() {
            return Err(Error::EmptyIndex);
        }
        let k = k.min(self.stations.len());
        let (cx, cy) = self.cell_of(p);
        let max_ring = [
            (cx - self.min_cell.0).abs(),
            (self.max_cell.0 - cx).abs(),
            (cy - self.min_cell.1).abs(),
            (self.max_cell.1 - cy).abs(),
        ]
        .into_iter()
        .max()
        .unwrap_or(0);
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        let mut ring = 0i64;
        loop {
            for (gx, gy) in ring_cells(cx, cy, ring) {
                let Some(members) = self.grid.get(&(gx, gy)) else {
                    continue;
                };
                for &i in members {
                    let d = p.distance(&self.stations[i].point);
                    best.push((d, i));
                }
            }
            best.sort_by(|a, b| {
                cmp_candidate(
                    (a.0, &self.stations[a.1].station.station_id),
                    (b.0, &self.stations[b.1].station.station_id),
                )
            });
            best.truncate(k);
            // Anything in ring+1 is at least `ring` whole cells away.
            let reach = ring as f64 * self.cell;
            if (best.len() == k && best[k - 1].0 < reach) || ring >= max_ring {
                break;
            }
            ring += 1;
        }
        Ok(best.into_iter().map(|(_, i)| &self.stations[i]).collect())
    }
}

fn ring_cells(cx: i64, cy: i64, r: i64) -> Vec<(i64, i64)> {
    if r == 0 {
        return vec![(cx, cy)];
    }
    let mut out = Vec::with_capacity((8 * r) as usize);
    for dx in -r..=r {
        out.push((cx + dx, cy - r));
        out.push((cx + dx, cy + r));
    }
    for dy in (-r + 1)..r {
        out.push((cx - r, cy + dy));
        out.push((cx + r, cy + dy));
    }
    out
}
