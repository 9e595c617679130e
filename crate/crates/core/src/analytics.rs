//! Descriptive statistics over reconstructed activity chains.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lda::{word_name, GAP, VOCAB_SIZE};
use crate::model::{euclidean_distance, ActivityChain, ActivityType, LocalClock, ProjectedPoint, TripPurpose};

/// Maximum-likelihood log-normal parameters of positive samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogNormalFit {
    pub mu: f64,
    pub sigma: f64,
    pub sample_mean: f64,
    pub n: usize,
}

/// Non-positive samples are ignored. Needs two distinct positive values.
pub fn fit_lognormal(xs: &[f64]) -> Result<LogNormalFit> {
    let pos: Vec<f64> = xs.iter().copied().filter(|&x| x > 0.0 && x.is_finite()).collect();
    let n = pos.len();
    if n < 2 {
        return Err(Error::EmptyInput("log-normal sample"));
    }
    let logs: Vec<f64> = pos.iter().map(|x| x.ln()).collect();
    let mu = logs.iter().sum::<f64>() / n as f64;
    let sigma = (logs.iter().map(|l| (l - mu).powi(2)).sum::<f64>() / n as f64).sqrt();
    if !(sigma > 0.0) {
        return Err(Error::InvalidParameter("log-normal sample has zero spread".into()));
    }
    Ok(LogNormalFit {
        mu,
        sigma,
        sample_mean: pos.iter().sum::<f64>() / n as f64,
        n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayValue {
    pub user_id: String,
    pub day: i64,
    pub value: f64,
}

fn values(v: &[DayValue]) -> Vec<f64> {
    v.iter().map(|d| d.value).collect()
}

/// Distinct stay places per user-day.
pub fn daily_location_count(chains: &[ActivityChain]) -> (Vec<DayValue>, Option<LogNormalFit>) {
    let out: Vec<DayValue> = chains
        .par_iter()
        .map(|c| DayValue {
            user_id: c.user_id.clone(),
            day: c.day,
            value: c.stays_only().map(|s| s.place_id).collect::<BTreeSet<_>>().len() as f64,
        })
        .collect();
    let fit = fit_lognormal(&values(&out)).ok();
    (out, fit)
}

/// Kilometres along home, each stay in order, then home again. Users
/// without a home are skipped.
pub fn daily_travel_distance(chains: &[ActivityChain], homes: &BTreeMap<String, ProjectedPoint>) -> (Vec<DayValue>, Option<LogNormalFit>) {
    let out: Vec<DayValue> = chains
        .par_iter()
        .filter_map(|c| {
            let home = *homes.get(&c.user_id)?;
            let mut at = home;
            let mut m = 0.0;
            for s in c.stays_only() {
                m += euclidean_distance(at, s.center);
                at = s.center;
            }
            m += euclidean_distance(at, home);
            Some(DayValue {
                user_id: c.user_id.clone(),
                day: c.day,
                value: m / 1000.0,
            })
        })
        .collect();
    let fit = fit_lognormal(&values(&out)).ok();
    (out, fit)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HourlyPurpose {
    /// `counts[hour][purpose]`, purposes in [`TripPurpose::ALL`] order.
    pub counts: Vec<[u64; 3]>,
}

impl HourlyPurpose {
    pub fn fractions(&self) -> Vec<[f64; 3]> {
        self.counts
            .iter()
            .map(|c| {
                let n: u64 = c.iter().sum();
                if n == 0 {
                    [0.0; 3]
                } else {
                    c.map(|x| x as f64 / n as f64)
                }
            })
            .collect()
    }
}

/// Trips binned by the local hour of departure from their origin.
pub fn trip_purpose_fractions(chains: &[ActivityChain], clock: &LocalClock) -> HourlyPurpose {
    let mut counts = vec![[0u64; 3]; 24];
    for c in chains {
        for t in &c.trips {
            let h = (clock.second_of_day(c.stays[t.origin].departure) / 3600) as usize;
            let p = TripPurpose::ALL.iter().position(|&x| x == t.purpose).unwrap_or(2);
            counts[h][p] += 1;
        }
    }
    HourlyPurpose { counts }
}

pub const HIST_BIN_SECS: i64 = 1800;
pub const HIST_BINS: usize = 48;

/// Stay counts by 30-minute arrival bin and 30-minute duration bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrivalDurationHist {
    pub activity: ActivityType,
    pub commuter: Vec<Vec<u64>>,
    pub non_commuter: Vec<Vec<u64>>,
}

impl ArrivalDurationHist {
    pub fn total(&self) -> u64 {
        self.commuter.iter().chain(&self.non_commuter).flatten().sum()
    }
}

/// Durations of a day or more land in the last bin.
pub fn arrival_duration_hist(chains: &[ActivityChain], activity: ActivityType, commuters: &BTreeSet<String>, clock: &LocalClock) -> ArrivalDurationHist {
    let mut h = ArrivalDurationHist {
        activity,
        commuter: vec![vec![0; HIST_BINS]; HIST_BINS],
        non_commuter: vec![vec![0; HIST_BINS]; HIST_BINS],
    };
    for c in chains {
        let grid = if commuters.contains(&c.user_id) {
            &mut h.commuter
        } else {
            &mut h.non_commuter
        };
        for s in c.stays_only().filter(|s| s.activity_type() == activity) {
            let a = (clock.second_of_day(s.arrival) / HIST_BIN_SECS) as usize;
            let d = ((s.duration() / HIST_BIN_SECS) as usize).min(HIST_BINS - 1);
            grid[a][d] += 1;
        }
    }
    h
}

/// Activity states: the nine activity types followed by Gap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionMatrix {
    pub t1_secs: i64,
    pub t2_secs: i64,
    pub counts: Vec<Vec<u64>>,
}

impl TransitionMatrix {
    pub fn probs(&self) -> Vec<Vec<f64>> {
        self.counts
            .iter()
            .map(|r| {
                let n: u64 = r.iter().sum();
                r.iter().map(|&x| if n == 0 { 0.0 } else { x as f64 / n as f64 }).collect()
            })
            .collect()
    }
}

/// State index of a chain at local second-of-day `t`.
pub fn state_at(chain: &ActivityChain, t: i64, clock: &LocalClock) -> usize {
    let ts = clock.day_start(chain.day) + t;
    chain
        .stays_only()
        .find(|s| s.arrival <= ts && ts < s.departure)
        .map_or(GAP, |s| s.activity_type().index())
}

pub fn transition_matrix(chains: &[ActivityChain], t1_secs: i64, t2_secs: i64, clock: &LocalClock) -> Result<TransitionMatrix> {
    if !(0 <= t1_secs && t1_secs < t2_secs && t2_secs < 86_400) {
        return Err(Error::InvalidParameter(format!("transition times {t1_secs} -> {t2_secs}")));
    }
    let counts = chains
        .par_iter()
        .fold(
            || vec![vec![0u64; VOCAB_SIZE]; VOCAB_SIZE],
            |mut acc, c| {
                acc[state_at(c, t1_secs, clock)][state_at(c, t2_secs, clock)] += 1;
                acc
            },
        )
        .reduce(
            || vec![vec![0u64; VOCAB_SIZE]; VOCAB_SIZE],
            |mut a, b| {
                for (ra, rb) in a.iter_mut().zip(b) {
                    for (x, y) in ra.iter_mut().zip(rb) {
                        *x += y;
                    }
                }
                a
            },
        );
    Ok(TransitionMatrix { t1_secs, t2_secs, counts })
}

/// Time-use rows: the nine activity types, then pass-by.
pub const TIME_USE_ROWS: usize = 10;

pub fn time_use_row_name(i: usize) -> &'static str {
    if i == ActivityType::ALL.len() {
        "PassBy"
    } else {
        ActivityType::ALL[i].name()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeUse {
    pub commuter_hours: Vec<f64>,
    pub non_commuter_hours: Vec<f64>,
    pub commuter_days: usize,
    pub non_commuter_days: usize,
}

/// Hours per row for one user-day.
pub fn day_hours(chain: &ActivityChain) -> [f64; TIME_USE_ROWS] {
    let mut h = [0.0; TIME_USE_ROWS];
    for s in &chain.stays {
        let row = if s.is_stay() {
            s.activity_type().index()
        } else {
            ActivityType::ALL.len()
        };
        h[row] += s.duration() as f64 / 3600.0;
    }
    h
}

/// Mean daily hours per row, by cohort.
pub fn time_use_summary(chains: &[ActivityChain], commuters: &BTreeSet<String>) -> TimeUse {
    let mut acc = [[0.0; TIME_USE_ROWS]; 2];
    let mut days = [0usize; 2];
    for c in chains {
        let i = usize::from(!commuters.contains(&c.user_id));
        days[i] += 1;
        for (a, h) in acc[i].iter_mut().zip(day_hours(c)) {
            *a += h;
        }
    }
    let mean = |i: usize| acc[i].iter().map(|x| if days[i] == 0 { 0.0 } else { x / days[i] as f64 }).collect();
    TimeUse {
        commuter_hours: mean(0),
        non_commuter_hours: mean(1),
        commuter_days: days[0],
        non_commuter_days: days[1],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupProfile {
    pub group: usize,
    pub n_users: usize,
    /// Share of stay time per activity type, in [`ActivityType::ALL`] order.
    pub shares: Vec<f64>,
    pub mean_travel_km: f64,
    pub mean_locations: f64,
}

pub fn group_profiles(chains: &[ActivityChain], groups: &BTreeMap<String, usize>, homes: &BTreeMap<String, ProjectedPoint>) -> Vec<GroupProfile> {
    let (locs, _) = daily_location_count(chains);
    let (dist, _) = daily_travel_distance(chains, homes);
    let mut out: BTreeMap<usize, (BTreeSet<&str>, [f64; 9], Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for (c, l) in chains.iter().zip(&locs) {
        let Some(&g) = groups.get(&c.user_id) else { continue };
        let e = out.entry(g).or_default();
        e.0.insert(&c.user_id);
        let h = day_hours(c);
        for (a, x) in e.1.iter_mut().zip(&h[..9]) {
            *a += x;
        }
        e.3.push(l.value);
    }
    for d in &dist {
        if let Some(&g) = groups.get(&d.user_id) {
            out.entry(g).or_default().2.push(d.value);
        }
    }
    let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
    out.into_iter()
        .map(|(group, (users, hours, dist, locs))| {
            let total: f64 = hours.iter().sum();
            GroupProfile {
                group,
                n_users: users.len(),
                shares: hours.iter().map(|h| if total > 0.0 { h / total } else { 0.0 }).collect(),
                mean_travel_km: mean(&dist),
                mean_locations: mean(&locs),
            }
        })
        .collect()
}

/// Station-to-station trip counts by purpose.
pub fn od_flows(chains: &[ActivityChain]) -> BTreeMap<(String, String, TripPurpose), u64> {
    let mut m = BTreeMap::new();
    for c in chains {
        for t in &c.trips {
            let key = (c.stays[t.origin].station_id.clone(), c.stays[t.destination].station_id.clone(), t.purpose);
            *m.entry(key).or_insert(0) += 1;
        }
    }
    m
}

pub fn write_day_values<W: Write>(w: W, column: &str, rows: &[DayValue]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["user_id", "day", column])?;
    for r in rows {
        wr.write_record([r.user_id.as_str(), &r.day.to_string(), &r.value.to_string()])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn write_hourly_purpose<W: Write>(w: W, h: &HourlyPurpose) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["hour", "HBW", "HBO", "NHB", "n_trips"])?;
    for (hour, (f, c)) in h.fractions().iter().zip(&h.counts).enumerate() {
        let n: u64 = c.iter().sum();
        wr.write_record([hour.to_string(), f[0].to_string(), f[1].to_string(), f[2].to_string(), n.to_string()])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn write_transitions<W: Write>(w: W, m: &TransitionMatrix) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let mut header = vec!["from".to_string()];
    header.extend((0..VOCAB_SIZE).map(|j| word_name(j).to_string()));
    header.push("n".into());
    wr.write_record(&header)?;
    for (i, (p, c)) in m.probs().iter().zip(&m.counts).enumerate() {
        let mut row = vec![word_name(i).to_string()];
        row.extend(p.iter().map(|x| x.to_string()));
        row.push(c.iter().sum::<u64>().to_string());
        wr.write_record(&row)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn write_time_use<W: Write>(w: W, t: &TimeUse) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["activity", "commuter_hours", "non_commuter_hours"])?;
    for i in 0..TIME_USE_ROWS {
        wr.write_record([time_use_row_name(i).to_string(), t.commuter_hours[i].to_string(), t.non_commuter_hours[i].to_string()])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn write_group_profiles<W: Write>(w: W, g: &[GroupProfile]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let mut header: Vec<String> = vec!["group".into(), "n_users".into()];
    header.extend(ActivityType::ALL.iter().map(|t| format!("share_{}", t.name())));
    header.extend(["mean_travel_km".into(), "mean_locations".into()]);
    wr.write_record(&header)?;
    for p in g {
        let mut row = vec![p.group.to_string(), p.n_users.to_string()];
        row.extend(p.shares.iter().map(|x| x.to_string()));
        row.extend([p.mean_travel_km.to_string(), p.mean_locations.to_string()]);
        wr.write_record(&row)?;
    }
    wr.flush()?;
    Ok(())
}

/// Rows of (arrival bin start hour, duration bin hours, cohort, count),
/// non-zero cells only.
pub fn write_hist<W: Write>(w: W, h: &ArrivalDurationHist) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["arrival_h", "duration_h", "cohort", "count"])?;
    for (cohort, grid) in [("commuter", &h.commuter), ("non_commuter", &h.non_commuter)] {
        for (a, row) in grid.iter().enumerate() {
            for (d, &n) in row.iter().enumerate() {
                if n > 0 {
                    wr.write_record([(a as f64 * 0.5).to_string(), (d as f64 * 0.5).to_string(), cohort.to_string(), n.to_string()])?;
                }
            }
        }
    }
    wr.flush()?;
    Ok(())
}

pub fn write_od_flows<W: Write>(w: W, flows: &BTreeMap<(String, String, TripPurpose), u64>) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["origin_station", "destination_station", "purpose", "trips"])?;
    for ((o, d, p), n) in flows {
        wr.write_record([o.as_str(), d.as_str(), p.code(), &n.to_string()])?;
    }
    wr.flush()?;
    Ok(())
}
