//! Stay detection: temporal bursts, burst-level DBSCAN denoising,
//! significant-place merging and stay / pass-by classification.

use std::collections::HashMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{PlaceLabel, ProjectedPoint, Projection, Record, StayKind, StayPoint};

pub const NOISE: i64 = -1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DbscanParams {
    /// Neighborhood radius in meters (inclusive).
    pub eps: f64,
    /// Neighbors within `eps`, counting the point itself, needed for a core point.
    pub min_samples: usize,
}

impl DbscanParams {
    pub fn new(eps: f64, min_samples: usize) -> Result<Self> {
        let p = Self { eps, min_samples };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0) || self.min_samples < 1 {
            return Err(Error::InvalidParameter(format!(
                "dbscan eps={} min_samples={}",
                self.eps, self.min_samples
            )));
        }
        Ok(())
    }
}

/// Square-grid neighbor lookup with cell side `eps`.
struct NeighborGrid<'a> {
    points: &'a [ProjectedPoint],
    cells: HashMap<(i64, i64), Vec<usize>>,
    eps: f64,
}

impl<'a> NeighborGrid<'a> {
    fn new(points: &'a [ProjectedPoint], eps: f64) -> Self {
        let mut cells: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::key(p, eps)).or_default().push(i);
        }
        Self { points, cells, eps }
    }

    fn key(p: &ProjectedPoint, eps: f64) -> (i64, i64) {
        ((p.x / eps).floor() as i64, (p.y / eps).floor() as i64)
    }

    fn neighbors(&self, i: usize, out: &mut Vec<usize>) {
        out.clear();
        let p = self.points[i];
        let (cx, cy) = Self::key(&p, self.eps);
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(members) = self.cells.get(&(cx + dx, cy + dy)) {
                    out.extend(members.iter().copied().filter(|&j| p.distance(&self.points[j]) <= self.eps));
                }
            }
        }
        out.sort_unstable();
    }
}

/// DBSCAN over planar points. Returns one label per point: cluster ids in
/// discovery order starting at 0, or [`NOISE`]. Points are scanned in input
/// order, so a border point reachable from two clusters joins the one
/// discovered first.
pub fn dbscan(points: &[ProjectedPoint], params: DbscanParams) -> Vec<i64> {
    let n = points.len();
    let mut labels = vec![NOISE; n];
    if n == 0 {
        return labels;
    }
    let grid = NeighborGrid::new(points, params.eps);
    let mut visited = vec![false; n];
    let mut nbrs = Vec::new();
    let mut queue = std::collections::VecDeque::new();
    let mut next = 0i64;
    for i in 0..n {
        if visited[i] {
            continue;
        }
        visited[i] = true;
        grid.neighbors(i, &mut nbrs);
        if nbrs.len() < params.min_samples {
            continue;
        }
        let cluster = next;
        next += 1;
        labels[i] = cluster;
        queue.extend(nbrs.iter().copied());
        while let Some(j) = queue.pop_front() {
            if labels[j] == NOISE {
                labels[j] = cluster;
            }
            if visited[j] {
                continue;
            }
            visited[j] = true;
            grid.neighbors(j, &mut nbrs);
            if nbrs.len() >= params.min_samples {
                queue.extend(nbrs.iter().copied());
            }
        }
    }
    labels
}

/// Index of the member minimizing the summed distance to all members.
/// Ties go to the earliest timestamp, then the lowest index.
pub fn medoid(points: &[(ProjectedPoint, i64)]) -> Result<usize> {
    if points.is_empty() {
        return Err(Error::EmptyInput("medoid"));
    }
    // Collapse identical positions; their summed distances are equal.
    let mut distinct: Vec<(ProjectedPoint, f64)> = Vec::new();
    let mut slot = Vec::with_capacity(points.len());
    let mut lookup: HashMap<(u64, u64), usize> = HashMap::new();
    for (p, _) in points {
        let key = (p.x.to_bits(), p.y.to_bits());
        let k = *lookup.entry(key).or_insert_with(|| {
            distinct.push((*p, 0.0));
            distinct.len() - 1
        });
        distinct[k].1 += 1.0;
        slot.push(k);
    }
    let sums: Vec<f64> = distinct
        .iter()
        .map(|(p, _)| distinct.iter().map(|(q, w)| w * p.distance(q)).sum())
        .collect();
    let mut best = 0usize;
    for i in 1..points.len() {
        let (si, sb) = (sums[slot[i]], sums[slot[best]]);
        if si < sb || (si == sb && points[i].1 < points[best].1) {
            best = i;
        }
    }
    Ok(best)
}

/// One record as it moves through the stay pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct Footprint {
    pub timestamp: i64,
    pub pos: ProjectedPoint,
    pub station_id: String,
    pub place: Option<usize>,
}

impl Footprint {
    pub fn from_record(r: &Record, projection: &Projection) -> Result<Self> {
        Ok(Self {
            timestamp: r.timestamp,
            pos: projection.project(r.lon, r.lat)?,
            station_id: r.station_id.clone(),
            place: None,
        })
    }
}

/// Splits time-sorted footprints into bursts; a gap above `gap_secs` starts
/// a new burst.
pub fn segment_bursts(fps: &[Footprint], gap_secs: i64) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    if fps.is_empty() {
        return out;
    }
    let mut start = 0;
    for i in 1..fps.len() {
        if fps[i].timestamp - fps[i - 1].timestamp > gap_secs {
            out.push(start..i);
            start = i;
        }
    }
    out.push(start..fps.len());
    out
}

fn snap_cluster(fps: &mut [Footprint], members: &[usize]) -> Result<usize> {
    let pts: Vec<_> = members.iter().map(|&i| (fps[i].pos, fps[i].timestamp)).collect();
    let m = members[medoid(&pts)?];
    let (pos, station) = (fps[m].pos, fps[m].station_id.clone());
    for &i in members {
        fps[i].pos = pos;
        fps[i].station_id.clone_from(&station);
    }
    Ok(m)
}

fn group_labels(labels: &[i64]) -> Vec<Vec<usize>> {
    let n_clusters = labels.iter().copied().max().map_or(0, |m| (m + 1).max(0) as usize);
    let mut groups = vec![Vec::new(); n_clusters];
    for (i, &l) in labels.iter().enumerate() {
        if l >= 0 {
            groups[l as usize].push(i);
        }
    }
    groups
}

/// Within each burst, clusters of nearby records are snapped to their
/// medoid; noise records keep their own location.
pub fn denoise_bursts(fps: &mut [Footprint], bursts: &[Range<usize>], params: DbscanParams) -> Result<()> {
    for burst in bursts {
        if burst.len() < 2 {
            continue;
        }
        let pts: Vec<ProjectedPoint> = fps[burst.clone()].iter().map(|f| f.pos).collect();
        let labels = dbscan(&pts, params);
        for members in group_labels(&labels) {
            let global: Vec<usize> = members.iter().map(|&i| burst.start + i).collect();
            snap_cluster(fps, &global)?;
        }
    }
    Ok(())
}

/// A significant place: a cluster of a user's distinct locations.
#[derive(Debug, Clone, PartialEq)]
pub struct Place {
    pub center: ProjectedPoint,
    pub station_id: String,
    pub n_records: usize,
}

/// Clusters the distinct locations of a user's footprints (time ignored),
/// snaps each footprint to its cluster medoid and records its place index.
pub fn merge_significant_places(fps: &mut [Footprint], params: DbscanParams) -> Result<Vec<Place>> {
    let mut distinct: Vec<ProjectedPoint> = Vec::new();
    let mut lookup: HashMap<(u64, u64), usize> = HashMap::new();
    let mut loc_of = Vec::with_capacity(fps.len());
    for f in fps.iter() {
        let key = (f.pos.x.to_bits(), f.pos.y.to_bits());
        let k = *lookup.entry(key).or_insert_with(|| {
            distinct.push(f.pos);
            distinct.len() - 1
        });
        loc_of.push(k);
    }
    let labels = dbscan(&distinct, params);
    let groups = group_labels(&labels);
    // Noise is impossible with min_samples = 1 but keep such locations as
    // singleton places for other settings.
    let mut place_of_loc: Vec<usize> = labels.iter().map(|&l| l.max(0) as usize).collect();
    let mut n_places = groups.len();
    for (k, &l) in labels.iter().enumerate() {
        if l == NOISE {
            place_of_loc[k] = n_places;
            n_places += 1;
        }
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_places];
    for (i, &k) in loc_of.iter().enumerate() {
        members[place_of_loc[k]].push(i);
    }
    let mut places = Vec::with_capacity(n_places);
    for (pid, m) in members.iter().enumerate() {
        let idx = snap_cluster(fps, m)?;
        for &i in m {
            fps[i].place = Some(pid);
        }
        places.push(Place {
            center: fps[idx].pos,
            station_id: fps[idx].station_id.clone(),
            n_records: m.len(),
        });
    }
    Ok(places)
}

/// Turns maximal runs of consecutive footprints at one place into stay
/// points; runs lasting at least `min_duration_secs` are stays.
pub fn classify_stays(user_id: &str, fps: &[Footprint], places: &[Place], min_duration_secs: i64) -> Vec<StayPoint> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < fps.len() {
        let place = fps[i].place.expect("footprints merged into places");
        let mut j = i + 1;
        while j < fps.len() && fps[j].place == Some(place) {
            j += 1;
        }
        let (arrival, departure) = (fps[i].timestamp, fps[j - 1].timestamp);
        let kind = if departure - arrival >= min_duration_secs {
            StayKind::Stay
        } else {
            StayKind::PassBy
        };
        out.push(StayPoint {
            user_id: user_id.to_string(),
            place_id: place,
            center: places[place].center,
            arrival,
            departure,
            kind,
            label: PlaceLabel::Unlabeled,
            activity: None,
            station_id: places[place].station_id.clone(),
            n_records: j - i,
        });
        i = j;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StayParams {
    pub burst_gap_secs: i64,
    pub denoise_eps_m: f64,
    pub denoise_min_samples: usize,
    pub place_eps_m: f64,
    pub place_min_samples: usize,
    pub stay_min_duration_secs: i64,
}

impl Default for StayParams {
    fn default() -> Self {
        Self {
            burst_gap_secs: 600,
            denoise_eps_m: 50.0,
            denoise_min_samples: 2,
            place_eps_m: 300.0,
            place_min_samples: 1,
            stay_min_duration_secs: 600,
        }
    }
}

/// Result of stay detection for one user.
#[derive(Debug, Clone, Default)]
pub struct UserStays {
    pub places: Vec<Place>,
    pub stays: Vec<StayPoint>,
    /// Footprints after denoising and place snapping, in time order.
    pub footprints: Vec<Footprint>,
}

/// Runs the full stay pipeline over one user's time-sorted records.
pub fn detect_stays(user_id: &str, records: &[Record], projection: &Projection, params: &StayParams) -> Result<UserStays> {
    let denoise = DbscanParams::new(params.denoise_eps_m, params.denoise_min_samples)?;
    let merge = DbscanParams::new(params.place_eps_m, params.place_min_samples)?;
    let mut fps = records
        .iter()
        .map(|r| Footprint::from_record(r, projection))
        .collect::<Result<Vec<_>>>()?;
    let bursts = segment_bursts(&fps, params.burst_gap_secs);
    denoise_bursts(&mut fps, &bursts, denoise)?;
    let places = merge_significant_places(&mut fps, merge)?;
    let stays = classify_stays(user_id, &fps, &places, params.stay_min_duration_secs);
    Ok(UserStays {
        places,
        stays,
        footprints: fps,
    })
}
