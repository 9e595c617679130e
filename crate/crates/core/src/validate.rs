//! Reconstruction accuracy (one minus hourly MAPE) of duration-expanded
//! activity series against check-in series, and subset-bootstrap
//! confidence-interval widths.

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ActivityChain, ActivityType, LocalClock};

pub const WINDOW_START_SECS: i64 = 7 * 3600;
pub const WINDOW_END_SECS: i64 = 22 * 3600;
pub const SLOT_SECS: i64 = 600;
/// Ten-minute slots between 07:00 and 22:00.
pub const WINDOW_SLOTS: usize = 90;
pub const HOURS: usize = 15;

/// Fraction of activity per ten-minute slot over 07:00-22:00.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FractionSeries {
    pub activity: ActivityType,
    pub values: Vec<f64>,
}

impl FractionSeries {
    pub fn from_counts(activity: ActivityType, counts: &[f64]) -> Result<Self> {
        if counts.len() != WINDOW_SLOTS {
            return Err(Error::LengthMismatch(counts.len(), WINDOW_SLOTS));
        }
        let total: f64 = counts.iter().sum();
        if !(total > 0.0) {
            return Err(Error::NoActivity(activity.to_string()));
        }
        Ok(Self {
            activity,
            values: counts.iter().map(|c| c / total).collect(),
        })
    }
}

/// Per-slot counts: each stay of `activity` adds one to every slot its
/// `[arrival, departure)` interval overlaps.
pub fn stay_slot_counts<'a, I>(chains: I, activity: ActivityType, clock: &LocalClock) -> Vec<f64>
where
    I: IntoIterator<Item = &'a ActivityChain>,
{
    let mut counts = vec![0.0; WINDOW_SLOTS];
    for chain in chains {
        let base = clock.day_start(chain.day) + WINDOW_START_SECS;
        for s in chain.stays_only().filter(|s| s.activity == Some(activity)) {
            let lo = ((s.arrival - base).max(0)) / SLOT_SECS;
            let hi = ((s.departure - base + SLOT_SECS - 1).min(WINDOW_SLOTS as i64 * SLOT_SECS)) / SLOT_SECS;
            for k in lo..hi.max(lo) {
                counts[k as usize] += 1.0;
            }
        }
    }
    counts
}

pub fn expand_stay_slots(chains: &[ActivityChain], activity: ActivityType, clock: &LocalClock) -> Result<FractionSeries> {
    FractionSeries::from_counts(activity, &stay_slot_counts(chains, activity, clock))
}

/// Reference series from check-in timestamps of one type.
pub fn checkin_series<I>(checkins: I, activity: ActivityType, clock: &LocalClock) -> Result<FractionSeries>
where
    I: IntoIterator<Item = (i64, ActivityType)>,
{
    let mut counts = vec![0.0; WINDOW_SLOTS];
    for (ts, t) in checkins {
        if t != activity {
            continue;
        }
        let s = clock.second_of_day(ts);
        if (WINDOW_START_SECS..WINDOW_END_SECS).contains(&s) {
            counts[((s - WINDOW_START_SECS) / SLOT_SECS) as usize] += 1.0;
        }
    }
    FractionSeries::from_counts(activity, &counts)
}

/// Mean absolute percentage error for each hour of 07:00-22:00 over its
/// six slots. Slots with a zero reference are skipped; an hour with no
/// usable slot is `None`.
pub fn mape_per_hour(pred: &[f64], reference: &[f64]) -> Result<Vec<Option<f64>>> {
    if pred.len() != reference.len() || pred.len() != WINDOW_SLOTS {
        return Err(Error::LengthMismatch(pred.len(), reference.len()));
    }
    let mut out = Vec::with_capacity(HOURS);
    for h in 0..HOURS {
        let terms: Vec<f64> = (h * 6..h * 6 + 6)
            .filter(|&k| reference[k] > 0.0)
            .map(|k| (pred[k] - reference[k]).abs() / reference[k])
            .collect();
        if terms.is_empty() {
            warn!("hour {:02}:00 has no reference mass; excluded", 7 + h);
            out.push(None);
        } else {
            out.push(Some(terms.iter().sum::<f64>() / terms.len() as f64));
        }
    }
    Ok(out)
}

/// One minus the mean of the hourly MAPE values.
pub fn reconstruction_accuracy(pred: &[f64], reference: &[f64]) -> Result<f64> {
    let hours: Vec<f64> = mape_per_hour(pred, reference)?.into_iter().flatten().collect();
    if hours.is_empty() {
        return Err(Error::EmptyInput("reference series"));
    }
    Ok(1.0 - hours.iter().sum::<f64>() / hours.len() as f64)
}

/// Linear-interpolation empirical quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let (lo, hi) = (h.floor() as usize, h.ceil() as usize);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BootstrapParams {
    pub n_subsets: usize,
    pub fraction: f64,
    pub level: f64,
    pub seed: u64,
}

impl Default for BootstrapParams {
    fn default() -> Self {
        Self {
            n_subsets: 20,
            fraction: 0.20,
            level: 0.75,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiWidths {
    pub activity: ActivityType,
    pub widths: Vec<f64>,
}

impl CiWidths {
    pub fn mean(&self) -> f64 {
        self.widths.iter().sum::<f64>() / self.widths.len() as f64
    }
}

/// Central `level` interval width per slot and type across `n_subsets`
/// random user subsets of size `fraction * users`. Types absent from any
/// subset are left out.
pub fn bootstrap_ci(users: &[Vec<ActivityChain>], types: &[ActivityType], params: &BootstrapParams, clock: &LocalClock) -> Result<Vec<CiWidths>> {
    if !(params.fraction > 0.0 && params.fraction <= 1.0) || !(params.level > 0.0 && params.level < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "bootstrap fraction={} level={}",
            params.fraction, params.level
        )));
    }
    if params.n_subsets < 2 {
        return Err(Error::InvalidParameter("bootstrap needs at least two subsets".into()));
    }
    let needed = (20.0 / params.fraction).ceil() as usize;
    if users.len() < needed {
        return Err(Error::TooFewUsers {
            needed,
            have: users.len(),
        });
    }
    let k = ((params.fraction * users.len() as f64).round() as usize).max(1);
    let per_subset: Vec<Vec<Option<FractionSeries>>> = (0..params.n_subsets)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(params.seed.wrapping_add(i as u64));
            let picked = rand::seq::index::sample(&mut rng, users.len(), k);
            types
                .iter()
                .map(|&t| {
                    let counts = stay_slot_counts(picked.iter().flat_map(|u| users[u].iter()), t, clock);
                    FractionSeries::from_counts(t, &counts).ok()
                })
                .collect()
        })
        .collect();
    let (qlo, qhi) = ((1.0 - params.level) / 2.0, (1.0 + params.level) / 2.0);
    let mut out = Vec::new();
    for (ti, &t) in types.iter().enumerate() {
        let series: Option<Vec<&FractionSeries>> = per_subset.iter().map(|s| s[ti].as_ref()).collect();
        let Some(series) = series else {
            warn!("{t} missing from at least one subset; no interval reported");
            continue;
        };
        let widths = (0..WINDOW_SLOTS)
            .map(|k| {
                let mut v: Vec<f64> = series.iter().map(|s| s.values[k]).collect();
                v.sort_by(f64::total_cmp);
                quantile_sorted(&v, qhi) - quantile_sorted(&v, qlo)
            })
            .collect();
        out.push(CiWidths { activity: t, widths });
    }
    Ok(out)
}
