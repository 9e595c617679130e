//! Home / work / other labeling, residency and commuter classification,
//! per-day chain assembly and trip purposes.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::model::{
    euclidean_distance, ActivityChain, LocalClock, PlaceLabel, ProjectedPoint, StayPoint, Trip, TripPurpose,
    SECONDS_PER_DAY,
};
use crate::staydetect::Footprint;

const HOUR: i64 = 3600;

/// How "most frequently visited" is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VisitMeasure {
    Duration,
    RecordCount,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LabelParams {
    pub night_start_hour: i64,
    pub night_end_hour: i64,
    pub work_start_hour: i64,
    pub work_end_hour: i64,
    pub min_work_distance_m: f64,
    pub min_work_days_per_week: f64,
    pub resident_min_fraction: f64,
    pub measure: VisitMeasure,
}

impl Default for LabelParams {
    fn default() -> Self {
        Self {
            night_start_hour: 22,
            night_end_hour: 6,
            work_start_hour: 8,
            work_end_hour: 18,
            min_work_distance_m: 500.0,
            min_work_days_per_week: 2.0,
            resident_min_fraction: 0.30,
            measure: VisitMeasure::Duration,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaceRef {
    pub place_id: usize,
    pub center: ProjectedPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    pub user_id: String,
    pub home: Option<PlaceRef>,
    pub work: Option<PlaceRef>,
    pub is_resident: bool,
    pub is_commuter: bool,
}

/// Local windows `[start, end)` on every day touched by `[from, to]`.
/// A window whose end hour is not after its start hour wraps past midnight.
fn windows(clock: &LocalClock, from: i64, to: i64, start_h: i64, end_h: i64) -> Vec<(i64, i64, i64)> {
    let wraps = end_h <= start_h;
    let span = if wraps { end_h + 24 - start_h } else { end_h - start_h } * HOUR;
    let first = clock.day(from) - 1;
    let last = clock.day(to);
    (first..=last)
        .map(|d| {
            let s = clock.day_start(d) + start_h * HOUR;
            (d, s, s + span)
        })
        .filter(|&(_, s, e)| e > from && s <= to)
        .collect()
}

#[derive(Default, Clone)]
struct Score {
    window: i64,
    total: i64,
    days: BTreeSet<i64>,
}

fn argmax_place(scores: &BTreeMap<usize, Score>) -> Option<usize> {
    let mut best: Option<(usize, &Score)> = None;
    // BTreeMap iterates in ascending place id, so strict comparisons keep
    // the smallest id on full ties.
    for (&pid, s) in scores {
        if s.window <= 0 {
            continue;
        }
        best = match best {
            None => Some((pid, s)),
            Some((_, b)) if (s.window, s.total) > (b.window, b.total) => Some((pid, s)),
            keep => keep,
        };
    }
    best.map(|(pid, _)| pid)
}

fn night_seconds(clock: &LocalClock, ts: i64, p: &LabelParams) -> bool {
    let h = clock.second_of_day(ts);
    h >= p.night_start_hour * HOUR || h < p.night_end_hour * HOUR
}

/// Place with the most night-time stay overlap (or night-time records in
/// record-count mode). `None` when no stay touches the night window.
pub fn detect_home(stays: &[StayPoint], footprints: &[Footprint], clock: &LocalClock, p: &LabelParams) -> Option<usize> {
    let mut scores: BTreeMap<usize, Score> = BTreeMap::new();
    for s in stays.iter().filter(|s| s.is_stay()) {
        let e = scores.entry(s.place_id).or_default();
        e.total += s.duration();
        if p.measure == VisitMeasure::Duration {
            for (_, ws, we) in windows(clock, s.arrival, s.departure, p.night_start_hour, p.night_end_hour) {
                e.window += s.overlap(ws, we);
            }
        }
    }
    if p.measure == VisitMeasure::RecordCount {
        let stay_places: BTreeSet<usize> = scores.keys().copied().collect();
        for f in footprints {
            if let Some(pid) = f.place.filter(|pid| stay_places.contains(pid)) {
                if night_seconds(clock, f.timestamp, p) {
                    scores.entry(pid).or_default().window += 1;
                }
            }
        }
    }
    argmax_place(&scores)
}

/// Resident iff at least `resident_min_fraction` of records sit at home.
pub fn filter_resident(footprints: &[Footprint], home: Option<usize>, p: &LabelParams) -> bool {
    let Some(home) = home else {
        return false;
    };
    if footprints.is_empty() {
        return false;
    }
    let at_home = footprints.iter().filter(|f| f.place == Some(home)).count();
    at_home as f64 >= p.resident_min_fraction * footprints.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkDemotion {
    TooCloseToHome,
    TooInfrequent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkDecision {
    pub candidate: Option<usize>,
    pub work: Option<usize>,
    pub demoted: Option<WorkDemotion>,
}

/// Most visited non-home place during weekday working hours, demoted when
/// it is too close to home or visited on too few days per week.
/// `study_days` is the calendar length of the observation window.
pub fn detect_work(
    stays: &[StayPoint],
    footprints: &[Footprint],
    home: &PlaceRef,
    centers: &dyn Fn(usize) -> ProjectedPoint,
    clock: &LocalClock,
    study_days: i64,
    p: &LabelParams,
) -> WorkDecision {
    let mut scores: BTreeMap<usize, Score> = BTreeMap::new();
    for s in stays.iter().filter(|s| s.is_stay() && s.place_id != home.place_id) {
        let e = scores.entry(s.place_id).or_default();
        e.total += s.duration();
        for (d, ws, we) in windows(clock, s.arrival, s.departure, p.work_start_hour, p.work_end_hour) {
            if clock.is_weekend(d) {
                continue;
            }
            let o = s.overlap(ws, we);
            if o > 0 {
                e.days.insert(d);
                if p.measure == VisitMeasure::Duration {
                    e.window += o;
                }
            }
        }
    }
    if p.measure == VisitMeasure::RecordCount {
        for f in footprints {
            let Some(pid) = f.place else { continue };
            let Some(e) = scores.get_mut(&pid) else { continue };
            let day = clock.day(f.timestamp);
            let h = clock.second_of_day(f.timestamp);
            if !clock.is_weekend(day) && h >= p.work_start_hour * HOUR && h < p.work_end_hour * HOUR {
                e.window += 1;
            }
        }
    }
    let candidate = argmax_place(&scores);
    let Some(c) = candidate else {
        return WorkDecision {
            candidate: None,
            work: None,
            demoted: None,
        };
    };
    let weeks = study_days.max(7) as f64 / 7.0;
    let per_week = scores[&c].days.len() as f64 / weeks;
    let demoted = if euclidean_distance(home.center, centers(c)) < p.min_work_distance_m {
        Some(WorkDemotion::TooCloseToHome)
    } else if per_week < p.min_work_days_per_week {
        Some(WorkDemotion::TooInfrequent)
    } else {
        None
    };
    WorkDecision {
        candidate,
        work: if demoted.is_none() { Some(c) } else { None },
        demoted,
    }
}

/// Builds the profile of one user from detected stays.
pub fn build_profile(
    user_id: &str,
    stays: &[StayPoint],
    footprints: &[Footprint],
    centers: &dyn Fn(usize) -> ProjectedPoint,
    clock: &LocalClock,
    study_days: i64,
    p: &LabelParams,
) -> UserProfile {
    let home = detect_home(stays, footprints, clock, p);
    let is_resident = filter_resident(footprints, home, p);
    let home_ref = home.map(|place_id| PlaceRef {
        place_id,
        center: centers(place_id),
    });
    let work = match (&home_ref, is_resident) {
        (Some(h), true) => detect_work(stays, footprints, h, centers, clock, study_days, p).work,
        _ => None,
    };
    let work_ref = work.map(|place_id| PlaceRef {
        place_id,
        center: centers(place_id),
    });
    UserProfile {
        user_id: user_id.to_string(),
        home: home_ref,
        is_commuter: is_resident && work_ref.is_some(),
        work: work_ref,
        is_resident,
    }
}

pub fn label_stays(stays: &mut [StayPoint], profile: &UserProfile) {
    let home = profile.home.map(|h| h.place_id);
    let work = profile.work.map(|w| w.place_id);
    for s in stays {
        s.label = if !s.is_stay() {
            PlaceLabel::Unlabeled
        } else if Some(s.place_id) == home {
            PlaceLabel::Home
        } else if Some(s.place_id) == work {
            PlaceLabel::Work
        } else {
            PlaceLabel::Other
        };
    }
}

pub fn trip_purpose(a: PlaceLabel, b: PlaceLabel) -> TripPurpose {
    use PlaceLabel::*;
    match (a, b) {
        (Home, Work) | (Work, Home) => TripPurpose::HomeBasedWork,
        (Home, Other) | (Other, Home) => TripPurpose::HomeBasedOther,
        _ => TripPurpose::NonHomeBased,
    }
}

/// Trips between consecutive stays (pass-bys skipped) at different places.
pub fn label_trip_purposes(chain: &ActivityChain) -> Vec<Trip> {
    let idx: Vec<usize> = (0..chain.stays.len()).filter(|&i| chain.stays[i].is_stay()).collect();
    idx.windows(2)
        .filter(|w| chain.stays[w[0]].place_id != chain.stays[w[1]].place_id)
        .map(|w| Trip {
            origin: w[0],
            destination: w[1],
            purpose: trip_purpose(chain.stays[w[0]].label, chain.stays[w[1]].label),
        })
        .collect()
}

/// Splits stay points at local midnight and groups the pieces into one
/// chain per kept day.
pub fn build_chains(user_id: &str, stays: &[StayPoint], clock: &LocalClock, kept_days: &BTreeSet<i64>) -> Vec<ActivityChain> {
    let mut by_day: BTreeMap<i64, Vec<StayPoint>> = BTreeMap::new();
    for s in stays {
        for d in clock.day(s.arrival)..=clock.day(s.departure) {
            if !kept_days.contains(&d) {
                continue;
            }
            let ds = clock.day_start(d);
            let (a, b) = (s.arrival.max(ds), s.departure.min(ds + SECONDS_PER_DAY));
            if b < a || (b == a && s.departure > s.arrival) {
                continue;
            }
            let mut piece = s.clone();
            piece.arrival = a;
            piece.departure = b;
            by_day.entry(d).or_default().push(piece);
        }
    }
    by_day
        .into_iter()
        .map(|(day, stays)| {
            let mut chain = ActivityChain {
                user_id: user_id.to_string(),
                day,
                stays,
                trips: Vec::new(),
            };
            chain.trips = label_trip_purposes(&chain);
            chain
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::StayKind;

    const DAY0: i64 = 1_388_937_600; // Monday 2014-01-06 00:00 +08:00

    fn clock() -> LocalClock {
        LocalClock::default()
    }

    fn stay(place: usize, from_h: f64, to_h: f64) -> StayPoint {
        let a = DAY0 + (from_h * 3600.0) as i64;
        let b = DAY0 + (to_h * 3600.0) as i64;
        StayPoint {
            user_id: "u".into(),
            place_id: place,
            center: ProjectedPoint::new(place as f64 * 1000.0, 0.0),
            arrival: a,
            departure: b,
            kind: if b - a >= 600 { StayKind::Stay } else { StayKind::PassBy },
            label: PlaceLabel::Unlabeled,
            activity: None,
            station_id: format!("s{place}"),
            n_records: 2,
        }
    }

    fn centers(pid: usize) -> ProjectedPoint {
        ProjectedPoint::new(pid as f64 * 1000.0, 0.0)
    }

    #[test]
    fn home_all_nights_at_a() {
        let stays: Vec<_> = (0..5).map(|d| stay(0, d as f64 * 24.0 - 2.0, d as f64 * 24.0 + 7.0)).collect();
        assert_eq!(detect_home(&stays, &[], &clock(), &LabelParams::default()), Some(0));
    }

    #[test]
    fn home_more_night_hours_wins() {
        // A: 10 night hours over two nights, B: 2 night hours
        let stays = vec![stay(1, -2.0, 3.0), stay(2, 3.0, 5.0), stay(1, 22.0, 24.0 + 3.0)];
        let p = LabelParams::default();
        assert_eq!(detect_home(&stays, &[], &clock(), &p), Some(1));
    }

    #[test]
    fn home_none_for_daytime_only() {
        let stays = vec![stay(0, 9.0, 12.0), stay(1, 13.0, 17.0)];
        assert_eq!(detect_home(&stays, &[], &clock(), &LabelParams::default()), None);
    }

    fn fps(at_home: usize, total: usize) -> Vec<Footprint> {
        (0..total)
            .map(|i| Footprint {
                timestamp: i as i64,
                pos: ProjectedPoint::default(),
                station_id: String::new(),
                place: Some(if i < at_home { 0 } else { 1 }),
            })
            .collect()
    }

    #[test]
    fn residency_threshold() {
        let p = LabelParams::default();
        assert!(filter_resident(&fps(40, 100), Some(0), &p));
        assert!(!filter_resident(&fps(29, 100), Some(0), &p));
        assert!(filter_resident(&fps(30, 100), Some(0), &p));
        assert!(!filter_resident(&fps(30, 100), None, &p));
    }

    fn weekday_stays(place: usize, days: &[i64]) -> Vec<StayPoint> {
        days.iter().map(|&d| stay(place, d as f64 * 24.0 + 9.0, d as f64 * 24.0 + 17.0)).collect()
    }

    #[test]
    fn work_detected_for_regular_office() {
        let home = PlaceRef {
            place_id: 0,
            center: centers(0),
        };
        let stays = weekday_stays(3, &[0, 1, 2, 3, 4, 7, 8, 9, 10, 11]);
        let d = detect_work(&stays, &[], &home, &centers, &clock(), 14, &LabelParams::default());
        assert_eq!(d.work, Some(3));
    }

    #[test]
    fn work_demoted_when_close() {
        let home = PlaceRef {
            place_id: 0,
            center: ProjectedPoint::new(2600.0, 0.0),
        };
        let stays = weekday_stays(3, &[0, 1, 2, 3, 4, 7, 8, 9, 10, 11]);
        let d = detect_work(&stays, &[], &home, &centers, &clock(), 14, &LabelParams::default());
        assert_eq!(d.candidate, Some(3));
        assert_eq!(d.work, None);
        assert_eq!(d.demoted, Some(WorkDemotion::TooCloseToHome));
    }

    #[test]
    fn work_demoted_when_infrequent() {
        let home = PlaceRef {
            place_id: 0,
            center: centers(0),
        };
        let stays = weekday_stays(3, &[2]);
        let d = detect_work(&stays, &[], &home, &centers, &clock(), 14, &LabelParams::default());
        assert_eq!(d.demoted, Some(WorkDemotion::TooInfrequent));
    }

    #[test]
    fn labels_and_purposes() {
        let profile = UserProfile {
            user_id: "u".into(),
            home: Some(PlaceRef {
                place_id: 0,
                center: centers(0),
            }),
            work: Some(PlaceRef {
                place_id: 1,
                center: centers(1),
            }),
            is_resident: true,
            is_commuter: true,
        };
        let mut stays = vec![
            stay(0, 0.0, 8.0),
            stay(1, 9.0, 12.0),
            stay(2, 12.2, 13.0),
            stay(5, 13.01, 13.02),
            stay(1, 13.5, 17.0),
            stay(0, 18.0, 24.0),
        ];
        label_stays(&mut stays, &profile);
        let labels: Vec<_> = stays.iter().map(|s| s.label).collect();
        use PlaceLabel::*;
        assert_eq!(labels, vec![Home, Work, Other, Unlabeled, Work, Home]);
        let again = {
            let mut s2 = stays.clone();
            label_stays(&mut s2, &profile);
            s2
        };
        assert_eq!(again, stays);
        let kept: BTreeSet<i64> = [clock().day(DAY0)].into();
        let chains = build_chains("u", &stays, &clock(), &kept);
        assert_eq!(chains.len(), 1);
        let purposes: Vec<_> = chains[0].trips.iter().map(|t| t.purpose).collect();
        use TripPurpose::*;
        assert_eq!(purposes, vec![HomeBasedWork, NonHomeBased, NonHomeBased, HomeBasedWork]);
    }

    #[test]
    fn purpose_table() {
        use PlaceLabel::*;
        assert_eq!(trip_purpose(Home, Work), TripPurpose::HomeBasedWork);
        assert_eq!(trip_purpose(Work, Home), TripPurpose::HomeBasedWork);
        assert_eq!(trip_purpose(Other, Work), TripPurpose::NonHomeBased);
        assert_eq!(trip_purpose(Home, Other), TripPurpose::HomeBasedOther);
        assert_eq!(trip_purpose(Other, Other), TripPurpose::NonHomeBased);
    }

    #[test]
    fn chains_split_at_midnight() {
        let stays = vec![stay(0, -4.0, 8.0), stay(1, 9.0, 17.0), stay(0, 18.0, 24.0 + 8.0)];
        let d0 = clock().day(DAY0);
        let kept: BTreeSet<i64> = [d0 - 1, d0, d0 + 1].into();
        let chains = build_chains("u", &stays, &clock(), &kept);
        assert_eq!(chains.len(), 3);
        let day0 = &chains[1];
        assert_eq!(day0.day, d0);
        assert_eq!(day0.stays.first().unwrap().arrival, DAY0);
        assert_eq!(day0.stays.last().unwrap().departure, DAY0 + 86_400);
        let total: i64 = day0.stays.iter().map(|s| s.duration()).sum();
        assert_eq!(total, 24 * 3600 - 2 * 3600);
        // dropped days produce no chain
        let only0: BTreeSet<i64> = [d0].into();
        assert_eq!(build_chains("u", &stays, &clock(), &only0).len(), 1);
    }
}
