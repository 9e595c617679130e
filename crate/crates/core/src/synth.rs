//! Deterministic synthetic world: base-station sites, POIs, agents with
//! ground-truth schedules, XDR-style records and check-ins.

use std::collections::BTreeMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::StationIndex;
use crate::lda::{ActivityDocument, DOC_TOKENS};
use crate::model::{euclidean_distance, ActivityType, BaseStation, CheckIn, LocalClock, Poi, ProjectedPoint, Projection, Record, SECONDS_PER_DAY};

const H: f64 = 3600.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchetypeMix {
    pub work_led: f64,
    pub leisure_led: f64,
    pub home_led: f64,
    pub shopping_led: f64,
}

impl Default for ArchetypeMix {
    fn default() -> Self {
        Self {
            work_led: 0.4,
            leisure_led: 0.2,
            home_led: 0.2,
            shopping_led: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Archetype {
    WorkLed,
    LeisureLed,
    HomeLed,
    ShoppingLed,
}

impl Archetype {
    pub const ALL: [Archetype; 4] = [Archetype::WorkLed, Archetype::LeisureLed, Archetype::HomeLed, Archetype::ShoppingLed];

    /// Discretionary type weights in [`ActivityType::INFERABLE`] order.
    fn type_weights(self) -> [f64; 7] {
        match self {
            Archetype::WorkLed => [0.15, 0.10, 0.05, 0.50, 0.10, 0.05, 0.05],
            Archetype::LeisureLed => [0.15, 0.10, 0.05, 0.25, 0.35, 0.05, 0.05],
            Archetype::HomeLed => [0.20, 0.30, 0.05, 0.25, 0.10, 0.05, 0.05],
            Archetype::ShoppingLed => [0.45, 0.10, 0.05, 0.25, 0.10, 0.00, 0.05],
        }
    }

    /// Mean number of discretionary activities on a free day and after work.
    fn activity_rates(self) -> (f64, f64) {
        match self {
            Archetype::WorkLed => (1.5, 0.5),
            Archetype::LeisureLed => (2.5, 1.0),
            Archetype::HomeLed => (1.0, 0.3),
            Archetype::ShoppingLed => (2.5, 1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub seed: u64,
    pub origin_lon: f64,
    pub origin_lat: f64,
    pub area_radius_m: f64,
    /// Each site hosts `stations_per_site` sector stations.
    pub n_sites: usize,
    pub stations_per_site: usize,
    pub min_site_spacing_m: f64,
    pub sector_offset_m: f64,
    /// POIs of the site's dominant type.
    pub pois_per_site: usize,
    /// Chance that a site also hosts one POI of another type.
    pub off_type_poi_prob: f64,
    pub workplace_prob: f64,
    pub poi_radius_m: f64,
    pub n_agents: usize,
    pub commuter_fraction: f64,
    pub archetypes: ArchetypeMix,
    pub records_per_day: f64,
    pub night_record_weight: f64,
    pub reassignment_prob: f64,
    /// First local day, ISO date.
    pub start_date: String,
    pub study_days: usize,
    pub checkin_days: usize,
    pub checkin_prob: f64,
    pub utc_offset_secs: i64,
    pub travel_speed_mps: f64,
    pub activity_radius_m: f64,
    pub lunch_prob: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            origin_lon: 121.47,
            origin_lat: 31.23,
            area_radius_m: 8000.0,
            n_sites: 300,
            stations_per_site: 2,
            min_site_spacing_m: 400.0,
            sector_offset_m: 20.0,
            pois_per_site: 4,
            off_type_poi_prob: 0.5,
            workplace_prob: 0.5,
            poi_radius_m: 150.0,
            n_agents: 500,
            commuter_fraction: 0.7,
            archetypes: ArchetypeMix::default(),
            records_per_day: 40.0,
            night_record_weight: 0.3,
            reassignment_prob: 0.1,
            start_date: "2014-01-06".into(),
            study_days: 14,
            checkin_days: 112,
            checkin_prob: 0.6,
            utc_offset_secs: 8 * 3600,
            travel_speed_mps: 10.0,
            activity_radius_m: 4000.0,
            lunch_prob: 0.5,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let probs = [
            ("off_type_poi_prob", self.off_type_poi_prob),
            ("workplace_prob", self.workplace_prob),
            ("commuter_fraction", self.commuter_fraction),
            ("night_record_weight", self.night_record_weight),
            ("reassignment_prob", self.reassignment_prob),
            ("checkin_prob", self.checkin_prob),
            ("lunch_prob", self.lunch_prob),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidParameter(format!("{name} = {p} outside [0, 1]")));
            }
        }
        if self.n_sites == 0 || self.stations_per_site == 0 {
            return Err(Error::InvalidParameter("synthetic world needs stations".into()));
        }
        if !(self.records_per_day >= 0.0) || !(self.travel_speed_mps > 0.0) || !(self.area_radius_m > 0.0) {
            return Err(Error::InvalidParameter("rates, speeds and radii must be positive".into()));
        }
        let a = self.archetypes;
        if [a.work_led, a.leisure_led, a.home_led, a.shopping_led].iter().any(|w| *w < 0.0) || a.work_led + a.leisure_led + a.home_led + a.shopping_led <= 0.0 {
            return Err(Error::InvalidParameter("archetype weights".into()));
        }
        self.first_day()?;
        Ok(())
    }

    pub fn clock(&self) -> LocalClock {
        LocalClock::new(self.utc_offset_secs)
    }

    /// Local day number of `start_date`.
    pub fn first_day(&self) -> Result<i64> {
        let d = chrono::NaiveDate::parse_from_str(&self.start_date, "%Y-%m-%d").map_err(|e| Error::Config(format!("start_date {:?}: {e}", self.start_date)))?;
        Ok(d.signed_duration_since(chrono::NaiveDate::default()).num_days())
    }
}

/// Per-purpose seed derived from the base seed.
pub(crate) fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const STREAM_WORLD: u64 = 1;
const STREAM_AGENT: u64 = 2;
const STREAM_XDR: u64 = 3;
const STREAM_CHECKIN: u64 = 4;

fn poi_categories(t: ActivityType) -> &'static [&'static str] {
    match t {
        ActivityType::Shopping => &["Shopping", "Store", "Mall", "Supermarket"],
        ActivityType::DailyLife => &["Banks", "Hospitals", "Government Building"],
        ActivityType::Transport => &["Transportation", "Railway station"],
        ActivityType::DrinkEat => &["Catering services", "Restaurant"],
        ActivityType::LeisureSport => &["Recreation", "Hotel", "Travel"],
        ActivityType::Education => &["School", "Research related", "University"],
        ActivityType::Home => &["Housing estate"],
        ActivityType::Work => &["Factory", "Professional Places", "Software Park", "Office Tower", "Construction Site"],
        ActivityType::Other => &["Other facilities", "Building"],
    }
}

fn checkin_categories(t: ActivityType) -> &'static [&'static str] {
    match t {
        ActivityType::Shopping => &["Convenience Store", "Clothing Store", "Mall", "Supermarket", "Bookstore"],
        ActivityType::DailyLife => &["Bank", "Medical Center", "Post Office", "Temple"],
        ActivityType::Transport => &["Train Station", "Subway", "Bus Station"],
        ActivityType::DrinkEat => &["Café", "Diner", "Fast Food Restaurant", "Breakfast Spot", "Bakery"],
        ActivityType::LeisureSport => &["Gym", "Park", "Movie Theater", "Bar"],
        ActivityType::Education => &["School", "College", "Library"],
        ActivityType::Home => &["Home (private)"],
        ActivityType::Work => &["Work location"],
        ActivityType::Other => &["Building", "Event Space"],
    }
}

/// Site land-use weights in [`ActivityType::INFERABLE`] order.
const LAND_USE: [f64; 7] = [0.20, 0.12, 0.08, 0.25, 0.15, 0.10, 0.10];

#[derive(Debug, Clone, PartialEq)]
pub struct Site {
    pub center: ProjectedPoint,
    pub land_use: ActivityType,
}

#[derive(Debug, Clone)]
pub struct World {
    pub projection: Projection,
    pub sites: Vec<Site>,
    pub stations: Vec<BaseStation>,
    pub pois: Vec<Poi>,
    pub poi_points: Vec<ProjectedPoint>,
    pub poi_types: Vec<ActivityType>,
    /// Site index each POI was placed around.
    pub poi_sites: Vec<usize>,
}

impl World {
    pub fn index(&self) -> Result<StationIndex> {
        StationIndex::build(&self.stations, self.projection)
    }

    pub fn pois_of(&self, t: ActivityType) -> Vec<usize> {
        (0..self.pois.len()).filter(|&i| self.poi_types[i] == t).collect()
    }
}

fn weighted<R: Rng>(rng: &mut R, w: &[f64]) -> usize {
    let total: f64 = w.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, &x) in w.iter().enumerate() {
        if u < x {
            return i;
        }
        u -= x;
    }
    w.len() - 1
}

fn in_disc<R: Rng>(rng: &mut R, r: f64) -> ProjectedPoint {
    let rad = r * rng.random::<f64>().sqrt();
    let th = rng.random::<f64>() * std::f64::consts::TAU;
    ProjectedPoint::new(rad * th.cos(), rad * th.sin())
}

fn offset(p: ProjectedPoint, d: ProjectedPoint) -> ProjectedPoint {
    ProjectedPoint::new(p.x + d.x, p.y + d.y)
}

/// Sites by dart throwing with a minimum spacing; each hosts sector
/// stations, dominant-type POIs, a residential compound and possibly a
/// workplace.
pub fn generate_world(cfg: &SynthConfig) -> Result<World> {
    cfg.validate()?;
    let projection = Projection::new(cfg.origin_lon, cfg.origin_lat)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_WORLD, 0));
    let mut centers: Vec<ProjectedPoint> = Vec::with_capacity(cfg.n_sites);
    let mut attempts = 0usize;
    while centers.len() < cfg.n_sites {
        let p = in_disc(&mut rng, cfg.area_radius_m);
        attempts += 1;
        let relax = attempts > 200 * cfg.n_sites;
        if relax || centers.iter().all(|c| euclidean_distance(*c, p) >= cfg.min_site_spacing_m) {
            centers.push(p);
        }
    }
    if attempts > 200 * cfg.n_sites {
        log::warn!("site spacing relaxed; area too small for {} sites", cfg.n_sites);
    }
    let mut w = World {
        projection,
        sites: Vec::new(),
        stations: Vec::new(),
        pois: Vec::new(),
        poi_points: Vec::new(),
        poi_types: Vec::new(),
        poi_sites: Vec::new(),
    };
    let ll = |p: ProjectedPoint| projection.unproject(p);
    for (si, &c) in centers.iter().enumerate() {
        let land_use = ActivityType::INFERABLE[weighted(&mut rng, &LAND_USE)];
        let th0 = rng.random::<f64>() * std::f64::consts::TAU;
        for k in 0..cfg.stations_per_site {
            let p = if cfg.stations_per_site == 1 {
                c
            } else {
                let th = th0 + std::f64::consts::TAU * k as f64 / cfg.stations_per_site as f64;
                offset(c, ProjectedPoint::new(cfg.sector_offset_m * th.cos(), cfg.sector_offset_m * th.sin()))
            };
            let (lon, lat) = ll(p);
            w.stations.push(BaseStation {
                station_id: format!("S{si:04}{}", (b'a' + k as u8) as char),
                lon: round7(lon),
                lat: round7(lat),
            });
        }
        let mut types = vec![land_use; cfg.pois_per_site];
        if rng.random::<f64>() < cfg.off_type_poi_prob {
            let others: Vec<ActivityType> = ActivityType::INFERABLE.into_iter().filter(|&t| t != land_use).collect();
            types.push(others[rng.random_range(0..others.len())]);
        }
        types.push(ActivityType::Home);
        if rng.random::<f64>() < cfg.workplace_prob {
            types.push(ActivityType::Work);
        }
        for t in types {
            let names = poi_categories(t);
            let p = offset(c, in_disc(&mut rng, cfg.poi_radius_m));
            let (lon, lat) = ll(p);
            let (lon, lat) = (round7(lon), round7(lat));
            w.pois.push(Poi {
                poi_id: format!("P{:05}", w.pois.len()),
                lon,
                lat,
                category: names[rng.random_range(0..names.len())].to_string(),
            });
            w.poi_points.push(projection.project(lon, lat)?);
            w.poi_types.push(t);
            w.poi_sites.push(si);
        }
        w.sites.push(Site { center: c, land_use });
    }
    Ok(w)
}

fn round7(x: f64) -> f64 {
    (x * 1e7).round() / 1e7
}

/// One scheduled visit; times are epoch seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthDwell {
    pub poi_id: String,
    pub activity: ActivityType,
    pub arrival: i64,
    pub departure: i64,
    pub lon: f64,
    pub lat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthDay {
    pub day: i64,
    pub date: String,
    /// Contiguous cover of the local day, travel between consecutive dwells.
    pub dwells: Vec<TruthDwell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthPlace {
    pub poi_id: String,
    pub lon: f64,
    pub lat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTruth {
    pub user_id: String,
    pub archetype: Archetype,
    pub commuter: bool,
    pub home: TruthPlace,
    pub work: Option<TruthPlace>,
    pub days: Vec<TruthDay>,
}

#[derive(Debug, Clone, Copy)]
struct Slot {
    poi: usize,
    activity: ActivityType,
    arrival: f64,
    departure: f64,
}

/// Arrival-hour mixture components (weight, mean hour, sd hours).
fn arrival_profile(t: ActivityType) -> &'static [(f64, f64, f64)] {
    match t {
        ActivityType::DrinkEat => &[(0.15, 8.0, 1.0), (0.35, 12.3, 1.2), (0.35, 18.3, 1.4), (0.15, 14.5, 4.0)],
        ActivityType::Shopping => &[(0.3, 10.5, 1.5), (0.3, 15.0, 1.5), (0.25, 19.0, 1.2), (0.15, 14.5, 4.0)],
        ActivityType::LeisureSport => &[(0.3, 9.5, 1.5), (0.3, 15.5, 1.5), (0.4, 19.0, 1.0)],
        ActivityType::DailyLife => &[(0.6, 10.0, 1.5), (0.4, 15.0, 1.5)],
        ActivityType::Education => &[(0.6, 8.5, 0.7), (0.4, 14.0, 1.0)],
        ActivityType::Transport => &[(0.5, 8.0, 1.0), (0.5, 17.5, 1.5)],
        _ => &[(0.5, 11.0, 2.5), (0.5, 16.0, 2.5)],
    }
}

fn median_duration_min(t: ActivityType) -> f64 {
    match t {
        ActivityType::DrinkEat => 60.0,
        ActivityType::Shopping => 70.0,
        ActivityType::LeisureSport => 110.0,
        ActivityType::DailyLife => 50.0,
        ActivityType::Education => 150.0,
        ActivityType::Transport => 30.0,
        _ => 60.0,
    }
}

const EARLIEST_ARRIVAL: f64 = 6.5 * H;
const LATEST_DEPARTURE: f64 = 21.5 * H;
const MIN_DWELL: f64 = 20.0 * 60.0;
/// Free time kept around every dwell; exceeds any travel time.
const BUFFER: f64 = 25.0 * 60.0;

struct AgentPlan {
    archetype: Archetype,
    commuter: bool,
    home: usize,
    work: Option<usize>,
    favorites: Vec<Vec<usize>>,
    lunch: Vec<usize>,
}

fn pick_near<R: Rng>(rng: &mut R, w: &World, candidates: &[usize], at: ProjectedPoint, radius: f64, n: usize) -> Vec<usize> {
    let near: Vec<usize> = candidates.iter().copied().filter(|&i| euclidean_distance(w.poi_points[i], at) <= radius).collect();
    let pool = if near.is_empty() {
        candidates
            .iter()
            .copied()
            .min_by(|&a, &b| euclidean_distance(w.poi_points[a], at).total_cmp(&euclidean_distance(w.poi_points[b], at)))
            .into_iter()
            .collect()
    } else {
        near
    };
    if pool.is_empty() {
        return Vec::new();
    }
    rand::seq::index::sample(rng, pool.len(), n.min(pool.len())).into_iter().map(|i| pool[i]).collect()
}

fn plan_agent<R: Rng>(rng: &mut R, cfg: &SynthConfig, w: &World, by_type: &BTreeMap<ActivityType, Vec<usize>>) -> AgentPlan {
    let a = cfg.archetypes;
    let archetype = Archetype::ALL[weighted(rng, &[a.work_led, a.leisure_led, a.home_led, a.shopping_led])];
    let homes = &by_type[&ActivityType::Home];
    let home = homes[rng.random_range(0..homes.len())];
    let hp = w.poi_points[home];
    let commuter = rng.random::<f64>() < cfg.commuter_fraction;
    let work = if commuter {
        let works = &by_type[&ActivityType::Work];
        let ok: Vec<usize> = works
            .iter()
            .copied()
            .filter(|&i| (1000.0..=4000.0).contains(&euclidean_distance(w.poi_points[i], hp)))
            .collect();
        let pool = if ok.is_empty() { works.clone() } else { ok };
        (!pool.is_empty()).then(|| pool[rng.random_range(0..pool.len())])
    } else {
        None
    };
    let favorites = ActivityType::INFERABLE
        .iter()
        .map(|t| {
            let n = rng.random_range(2..=3);
            pick_near(rng, w, &by_type[t], hp, cfg.activity_radius_m, n)
        })
        .collect();
    let lunch = work.map_or_else(Vec::new, |wi| pick_near(rng, w, &by_type[&ActivityType::DrinkEat], w.poi_points[wi], 1500.0, 2));
    AgentPlan {
        archetype,
        commuter: work.is_some(),
        home,
        work,
        favorites,
        lunch,
    }
}

fn sample_arrival<R: Rng>(rng: &mut R, t: ActivityType) -> f64 {
    let prof = arrival_profile(t);
    let weights: Vec<f64> = prof.iter().map(|c| c.0).collect();
    let (_, mu, sd) = prof[weighted(rng, &weights)];
    Normal::new(mu, sd).expect("valid normal").sample(rng) * H
}

fn sample_duration<R: Rng>(rng: &mut R, t: ActivityType) -> f64 {
    let d = LogNormal::new((median_duration_min(t) * 60.0).ln(), 0.25).expect("valid lognormal");
    d.sample(rng).clamp(MIN_DWELL, 4.0 * H)
}

/// Earliest arrival hour per type.
fn opening_hour(t: ActivityType) -> f64 {
    match t {
        ActivityType::Shopping => 9.0,
        ActivityType::DailyLife => 8.0,
        _ => 6.5,
    }
}

fn fits(slots: &[Slot], t: ActivityType, a: f64, b: f64) -> bool {
    a >= EARLIEST_ARRIVAL.max(opening_hour(t) * H) && b <= LATEST_DEPARTURE && slots.iter().all(|s| b + BUFFER <= s.arrival || a >= s.departure + BUFFER)
}

fn schedule_day<R: Rng>(rng: &mut R, cfg: &SynthConfig, w: &World, plan: &AgentPlan, weekend: bool) -> Vec<Slot> {
    let mut slots: Vec<Slot> = Vec::new();
    let (free_rate, after_rate) = plan.archetype.activity_rates();
    let working = plan.commuter && !weekend;
    if let (true, Some(wp)) = (working, plan.work) {
        let extra = if plan.archetype == Archetype::WorkLed { 0.75 * H } else { 0.0 };
        let ws = (Normal::new(8.75, 0.35).expect("valid").sample(rng) * H).clamp(7.5 * H, 10.0 * H);
        let dur = (Normal::new(8.3, 0.5).expect("valid").sample(rng) * H + extra).clamp(6.0 * H, 10.5 * H);
        let we = (ws + dur).min(19.5 * H);
        if rng.random::<f64>() < cfg.lunch_prob && !plan.lunch.is_empty() {
            let li = plan.lunch[rng.random_range(0..plan.lunch.len())];
            let travel = euclidean_distance(w.poi_points[wp], w.poi_points[li]) / cfg.travel_speed_mps;
            let la = Normal::new(12.2, 0.6).expect("valid").sample(rng) * H;
            let ld = la + rng.random_range(35.0..60.0) * 60.0;
            if la - travel > ws + 1800.0 && ld + travel < we - 1800.0 {
                slots.push(Slot { poi: wp, activity: ActivityType::Work, arrival: ws, departure: la - travel });
                slots.push(Slot { poi: li, activity: ActivityType::DrinkEat, arrival: la, departure: ld });
                slots.push(Slot { poi: wp, activity: ActivityType::Work, arrival: ld + travel, departure: we });
            }
        }
        if slots.is_empty() {
            slots.push(Slot { poi: wp, activity: ActivityType::Work, arrival: ws, departure: we });
        }
    }
    let rate = if working { after_rate } else { free_rate };
    let n = Poisson::new(rate).map_or(0, |p| p.sample(rng) as usize).min(4);
    let tw = plan.archetype.type_weights();
    for _ in 0..n {
        let ti = weighted(rng, &tw);
        let t = ActivityType::INFERABLE[ti];
        if plan.favorites[ti].is_empty() {
            continue;
        }
        let poi = plan.favorites[ti][rng.random_range(0..plan.favorites[ti].len())];
        for _ in 0..12 {
            let a = sample_arrival(rng, t);
            let b = a + sample_duration(rng, t);
            if fits(&slots, t, a, b) {
                slots.push(Slot { poi, activity: t, arrival: a, departure: b });
                break;
            }
        }
    }
    slots.sort_by(|a, b| a.arrival.total_cmp(&b.arrival));
    slots
}

/// Contiguous day cover: home, the scheduled visits with travel between
/// them (returning home when the gap allows), then home until midnight.
fn fill_day(cfg: &SynthConfig, w: &World, home: usize, slots: &[Slot]) -> Vec<Slot> {
    let tt = |a: usize, b: usize| euclidean_distance(w.poi_points[a], w.poi_points[b]) / cfg.travel_speed_mps;
    let mut out = vec![Slot { poi: home, activity: ActivityType::Home, arrival: 0.0, departure: 86_400.0 }];
    for s in slots {
        let last = out.len() - 1;
        let cur = out[last];
        if cur.poi == home && cur.activity == ActivityType::Home {
            out[last].departure = s.arrival - tt(home, s.poi);
        } else {
            let via_home = tt(cur.poi, home) + tt(home, s.poi);
            if s.arrival - cur.departure >= via_home + 1800.0 {
                out.push(Slot {
                    poi: home,
                    activity: ActivityType::Home,
                    arrival: cur.departure + tt(cur.poi, home),
                    departure: s.arrival - tt(home, s.poi),
                });
            } else {
                out[last].departure = s.arrival - tt(cur.poi, s.poi);
            }
        }
        out.push(*s);
    }
    let last = out[out.len() - 1];
    if !(last.poi == home && last.activity == ActivityType::Home) {
        out.push(Slot {
            poi: home,
            activity: ActivityType::Home,
            arrival: last.departure + tt(last.poi, home),
            departure: 86_400.0,
        });
    }
    out
}

fn place(w: &World, i: usize) -> TruthPlace {
    TruthPlace {
        poi_id: w.pois[i].poi_id.clone(),
        lon: w.pois[i].lon,
        lat: w.pois[i].lat,
    }
}

/// Ground-truth schedules for `checkin_days` days, one RNG stream per agent.
pub fn generate_agents(cfg: &SynthConfig, w: &World) -> Result<Vec<AgentTruth>> {
    cfg.validate()?;
    let first = cfg.first_day()?;
    let clock = cfg.clock();
    let n_days = cfg.study_days.max(cfg.checkin_days);
    let mut by_type: BTreeMap<ActivityType, Vec<usize>> = ActivityType::ALL.iter().map(|&t| (t, w.pois_of(t))).collect();
    by_type.entry(ActivityType::Work).or_default();
    if by_type[&ActivityType::Home].is_empty() {
        return Err(Error::InvalidParameter("world has no residential POIs".into()));
    }
    Ok((0..cfg.n_agents)
        .into_par_iter()
        .map(|ai| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_AGENT, ai as u64));
            let plan = plan_agent(&mut rng, cfg, w, &by_type);
            let days = (0..n_days as i64)
                .map(|d| {
                    let day = first + d;
                    let slots = schedule_day(&mut rng, cfg, w, &plan, clock.is_weekend(day));
                    let base = clock.day_start(day);
                    let dwells = fill_day(cfg, w, plan.home, &slots)
                        .into_iter()
                        .map(|s| TruthDwell {
                            poi_id: w.pois[s.poi].poi_id.clone(),
                            activity: s.activity,
                            arrival: base + s.arrival.round() as i64,
                            departure: base + s.departure.round() as i64,
                            lon: w.pois[s.poi].lon,
                            lat: w.pois[s.poi].lat,
                        })
                        .collect();
                    TruthDay {
                        day,
                        date: clock.date_string(day),
                        dwells,
                    }
                })
                .collect();
            AgentTruth {
                user_id: format!("U{ai:05}"),
                archetype: plan.archetype,
                commuter: plan.commuter,
                home: place(w, plan.home),
                work: plan.work.map(|i| place(w, i)),
                days,
            }
        })
        .collect())
}

fn position_at(dwells: &[(ProjectedPoint, i64, i64)], t: i64) -> ProjectedPoint {
    for (i, &(p, a, b)) in dwells.iter().enumerate() {
        if t < a {
            // travelling from the previous dwell
            let Some(&(q, _, qb)) = i.checked_sub(1).and_then(|j| dwells.get(j)) else { return p };
            let f = if a > qb { (t - qb) as f64 / (a - qb) as f64 } else { 1.0 };
            return ProjectedPoint::new(q.x + f * (p.x - q.x), q.y + f * (p.y - q.y));
        }
        if t < b {
            return p;
        }
    }
    dwells.last().map_or_else(ProjectedPoint::default, |d| d.0)
}

/// XDR records over the first `study_days` days: a location update on
/// arriving at and leaving each dwell, plus Poisson background records
/// topping each day up to `records_per_day`. Each record reports the
/// nearest station, or the second nearest with `reassignment_prob`.
pub fn emit_xdr(truth: &[AgentTruth], w: &World, cfg: &SynthConfig) -> Result<Vec<Record>> {
    let index = w.index()?;
    let clock = cfg.clock();
    let per_agent: Vec<Result<Vec<Record>>> = truth
        .par_iter()
        .enumerate()
        .map(|(ai, agent)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_XDR, ai as u64));
            let mut out = Vec::new();
            if cfg.records_per_day <= 0.0 {
                return Ok(out);
            }
            for day in agent.days.iter().take(cfg.study_days) {
                let base = clock.day_start(day.day);
                let dw: Vec<(ProjectedPoint, i64, i64)> = day
                    .dwells
                    .iter()
                    .map(|d| Ok((w.projection.project(d.lon, d.lat)?, d.arrival, d.departure)))
                    .collect::<Result<_>>()?;
                let mut times = Vec::new();
                for &(_, a, b) in &dw {
                    if a > base {
                        times.push(a + rng.random_range(0..60));
                    }
                    if b < base + SECONDS_PER_DAY && b - a > 180 {
                        times.push(b - rng.random_range(1..60));
                    }
                }
                let lambda = (cfg.records_per_day - times.len() as f64).max(0.0);
                let n = if lambda > 0.0 { Poisson::new(lambda).map_or(0, |p| p.sample(&mut rng) as usize) } else { 0 };
                let mut k = 0;
                while k < n {
                    let s = rng.random_range(0..SECONDS_PER_DAY);
                    let wgt = if s < 6 * 3600 { cfg.night_record_weight } else { 1.0 };
                    if rng.random::<f64>() < wgt {
                        times.push(base + s);
                        k += 1;
                    }
                }
                times.sort_unstable();
                for t in times {
                    let near = index.nearest_k(position_at(&dw, t), 2)?;
                    let st = if near.len() > 1 && rng.random::<f64>() < cfg.reassignment_prob { near[1] } else { near[0] };
                    out.push(Record {
                        user_id: agent.user_id.clone(),
                        timestamp: t,
                        lon: st.station.lon,
                        lat: st.station.lat,
                        station_id: st.station.station_id.clone(),
                    });
                }
            }
            Ok(out)
        })
        .collect();
    let mut all = Vec::new();
    for r in per_agent {
        all.extend(r?);
    }
    Ok(all)
}

/// One check-in per non-home dwell with probability `checkin_prob`,
/// uniformly timed within the dwell.
pub fn emit_checkins(truth: &[AgentTruth], cfg: &SynthConfig) -> Vec<CheckIn> {
    truth
        .par_iter()
        .enumerate()
        .map(|(ai, agent)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_CHECKIN, ai as u64));
            let mut out = Vec::new();
            for day in agent.days.iter().take(cfg.checkin_days) {
                for d in day.dwells.iter().filter(|d| d.activity != ActivityType::Home && d.departure > d.arrival) {
                    if rng.random::<f64>() < cfg.checkin_prob {
                        let names = checkin_categories(d.activity);
                        out.push(CheckIn {
                            user_id: agent.user_id.clone(),
                            timestamp: rng.random_range(d.arrival..d.departure),
                            category: names[rng.random_range(0..names.len())].to_string(),
                        });
                    }
                }
            }
            out
        })
        .flatten_iter()
        .collect()
}

/// Everything the generator produces for one configuration.
pub struct SynthOutput {
    pub world: World,
    pub truth: Vec<AgentTruth>,
    pub records: Vec<Record>,
    pub checkins: Vec<CheckIn>,
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthOutput> {
    let world = generate_world(cfg)?;
    let truth = generate_agents(cfg, &world)?;
    let records = emit_xdr(&truth, &world, cfg)?;
    let checkins = emit_checkins(&truth, cfg);
    Ok(SynthOutput {
        world,
        truth,
        records,
        checkins,
    })
}

fn fmt_coord(x: f64) -> String {
    format!("{x:.7}")
}

pub fn write_stations<W: Write>(w: W, stations: &[BaseStation]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["station_id", "lon", "lat"])?;
    for s in stations {
        wr.write_record([s.station_id.clone(), fmt_coord(s.lon), fmt_coord(s.lat)])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn write_pois<W: Write>(w: W, pois: &[Poi]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["poi_id", "lon", "lat", "category"])?;
    for p in pois {
        wr.write_record([p.poi_id.clone(), fmt_coord(p.lon), fmt_coord(p.lat), p.category.clone()])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn write_xdr<W: Write>(w: W, records: &[Record]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["user_id", "timestamp", "lon", "lat", "station_id"])?;
    for r in records {
        wr.write_record([r.user_id.clone(), r.timestamp.to_string(), fmt_coord(r.lon), fmt_coord(r.lat), r.station_id.clone()])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn write_checkins<W: Write>(w: W, checkins: &[CheckIn]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["user_id", "timestamp", "category"])?;
    for c in checkins {
        wr.write_record([c.user_id.as_str(), &c.timestamp.to_string(), c.category.as_str()])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn write_truth<W: Write>(mut w: W, truth: &[AgentTruth]) -> Result<()> {
    for a in truth {
        serde_json::to_writer(&mut w, a)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_truth<R: std::io::BufRead>(r: R) -> Result<Vec<AgentTruth>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// A corpus drawn from planted topics: each document picks a dominant
/// topic uniformly and mixes it with weight `dominant_weight`, the rest
/// spread evenly. Returns the documents and each one's dominant topic.
pub fn planted_topic_corpus(topics: &[Vec<f64>], n_docs: usize, dominant_weight: f64, seed: u64) -> Result<(Vec<ActivityDocument>, Vec<usize>)> {
    let k = topics.len();
    if k == 0 || !(0.0..=1.0).contains(&dominant_weight) {
        return Err(Error::InvalidParameter("planted corpus needs topics and a weight in [0, 1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut docs = Vec::with_capacity(n_docs);
    let mut labels = Vec::with_capacity(n_docs);
    for m in 0..n_docs {
        let dom = rng.random_range(0..k);
        let theta: Vec<f64> = (0..k)
            .map(|j| if j == dom { dominant_weight } else if k > 1 { (1.0 - dominant_weight) / (k - 1) as f64 } else { 0.0 })
            .collect();
        let tokens = (0..DOC_TOKENS)
            .map(|_| {
                let z = weighted(&mut rng, &theta);
                weighted(&mut rng, &topics[z])
            })
            .collect();
        docs.push(ActivityDocument {
            user_id: format!("D{m:05}"),
            day: None,
            tokens,
        });
        labels.push(dom);
    }
    Ok((docs, labels))
}
