//! Domain types shared by every stage: the activity taxonomy, raw inputs,
//! projected coordinates, stay points and per-day activity chains.

use std::collections::HashMap;
use std::fmt;
use std::io::Read;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean Earth radius used by the local projection, in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

pub const SECONDS_PER_DAY: i64 = 86_400;

/// Activity taxonomy. Declaration order is the tie-break order used by
/// every argmax in the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ActivityType {
    Shopping,
    DailyLife,
    Transport,
    DrinkEat,
    LeisureSport,
    Education,
    Home,
    Work,
    Other,
}

impl ActivityType {
    pub const ALL: [ActivityType; 9] = [
        ActivityType::Shopping,
        ActivityType::DailyLife,
        ActivityType::Transport,
        ActivityType::DrinkEat,
        ActivityType::LeisureSport,
        ActivityType::Education,
        ActivityType::Home,
        ActivityType::Work,
        ActivityType::Other,
    ];

    /// The seven types the Bayesian model chooses between.
    pub const INFERABLE: [ActivityType; 7] = [
        ActivityType::Shopping,
        ActivityType::DailyLife,
        ActivityType::Transport,
        ActivityType::DrinkEat,
        ActivityType::LeisureSport,
        ActivityType::Education,
        ActivityType::Other,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn is_inferable(self) -> bool {
        !matches!(self, ActivityType::Home | ActivityType::Work)
    }

    /// Position among [`ActivityType::INFERABLE`], if any.
    pub fn inferable_index(self) -> Option<usize> {
        Self::INFERABLE.iter().position(|&t| t == self)
    }

    pub fn name(self) -> &'static str {
        match self {
            ActivityType::Shopping => "Shopping",
            ActivityType::DailyLife => "DailyLife",
            ActivityType::Transport => "Transport",
            ActivityType::DrinkEat => "DrinkEat",
            ActivityType::LeisureSport => "LeisureSport",
            ActivityType::Education => "Education",
            ActivityType::Home => "Home",
            ActivityType::Work => "Work",
            ActivityType::Other => "Other",
        }
    }
}

impl fmt::Display for ActivityType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn squash(s: &str) -> String {
    s.chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(char::to_lowercase)
        .collect()
}

impl FromStr for ActivityType {
    type Err = Error;

    /// Accepts canonical names as well as spaced forms such as
    /// `"Drink & Eat"` or `"daily_life"`.
    fn from_str(s: &str) -> Result<Self> {
        let key = squash(s);
        let t = match key.as_str() {
            "shopping" => ActivityType::Shopping,
            "dailylife" => ActivityType::DailyLife,
            "transport" => ActivityType::Transport,
            "drinkeat" | "drinkandeat" => ActivityType::DrinkEat,
            "leisuresport" | "leisureandsport" => ActivityType::LeisureSport,
            "education" => ActivityType::Education,
            "home" => ActivityType::Home,
            "work" => ActivityType::Work,
            "other" => ActivityType::Other,
            _ => return Err(Error::UnknownActivityType(s.to_string())),
        };
        Ok(t)
    }
}

/// One timestamped base-station observation of one user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub user_id: String,
    pub timestamp: i64,
    pub lon: f64,
    pub lat: f64,
    pub station_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseStation {
    pub station_id: String,
    pub lon: f64,
    pub lat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Poi {
    pub poi_id: String,
    pub lon: f64,
    pub lat: f64,
    pub category: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckIn {
    pub user_id: String,
    pub timestamp: i64,
    pub category: String,
}

pub fn validate_lon_lat(lon: f64, lat: f64) -> Result<()> {
    if lon.is_finite() && lat.is_finite() && (-180.0..=180.0).contains(&lon) && (-90.0..=90.0).contains(&lat) {
        Ok(())
    } else {
        Err(Error::CoordinateOutOfRange { lon, lat })
    }
}

/// Planar position in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ProjectedPoint {
    pub x: f64,
    pub y: f64,
}

impl ProjectedPoint {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &ProjectedPoint) -> f64 {
        euclidean_distance(*self, *other)
    }
}

pub fn euclidean_distance(a: ProjectedPoint, b: ProjectedPoint) -> f64 {
    (a.x - b.x).hypot(a.y - b.y)
}

/// Equirectangular projection about a fixed origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub lon0: f64,
    pub lat0: f64,
}

impl Projection {
    pub fn new(lon0: f64, lat0: f64) -> Result<Self> {
        validate_lon_lat(lon0, lat0)?;
        Ok(Self { lon0, lat0 })
    }

    /// Projection centred on the mean position of `coords`.
    pub fn centroid_of<I>(coords: I) -> Result<Self>
    where
        I: IntoIterator<Item = (f64, f64)>,
    {
        let (mut slon, mut slat, mut n) = (0.0, 0.0, 0usize);
        for (lon, lat) in coords {
            slon += lon;
            slat += lat;
            n += 1;
        }
        if n == 0 {
            return Err(Error::EmptyInput("projection centroid"));
        }
        Self::new(slon / n as f64, slat / n as f64)
    }

    pub fn project(&self, lon: f64, lat: f64) -> Result<ProjectedPoint> {
        validate_lon_lat(lon, lat)?;
        let k = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;
        Ok(ProjectedPoint {
            x: k * (lon - self.lon0) * self.lat0.to_radians().cos(),
            y: k * (lat - self.lat0),
        })
    }

    pub fn unproject(&self, p: ProjectedPoint) -> (f64, f64) {
        let k = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;
        let lon = self.lon0 + p.x / (k * self.lat0.to_radians().cos());
        let lat = self.lat0 + p.y / k;
        (lon, lat)
    }
}

/// Local wall clock at a fixed UTC offset, no DST.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocalClock {
    pub utc_offset_secs: i64,
}

impl Default for LocalClock {
    fn default() -> Self {
        Self { utc_offset_secs: 8 * 3600 }
    }
}

impl LocalClock {
    pub fn new(utc_offset_secs: i64) -> Self {
        Self { utc_offset_secs }
    }

    /// Local day number (days since 1970-01-01 local).
    pub fn day(&self, ts: i64) -> i64 {
        (ts + self.utc_offset_secs).div_euclid(SECONDS_PER_DAY)
    }

    pub fn second_of_day(&self, ts: i64) -> i64 {
        (ts + self.utc_offset_secs).rem_euclid(SECONDS_PER_DAY)
    }

    /// Epoch seconds of local midnight starting `day`.
    pub fn day_start(&self, day: i64) -> i64 {
        day * SECONDS_PER_DAY - self.utc_offset_secs
    }

    /// 0 = Monday .. 6 = Sunday.
    pub fn weekday(&self, day: i64) -> u32 {
        // 1970-01-01 was a Thursday.
        (day + 3).rem_euclid(7) as u32
    }

    pub fn is_weekend(&self, day: i64) -> bool {
        self.weekday(day) >= 5
    }

    pub fn date_string(&self, day: i64) -> String {
        chrono::DateTime::from_timestamp(day * SECONDS_PER_DAY, 0)
            .map(|d| d.date_naive().to_string())
            .unwrap_or_else(|| day.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StayKind {
    Stay,
    PassBy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PlaceLabel {
    Home,
    Work,
    Other,
    Unlabeled,
}

/// A maximal run of one user's records at one significant place.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StayPoint {
    pub user_id: String,
    /// Index of the significant place within the user's place list.
    pub place_id: usize,
    pub center: ProjectedPoint,
    pub arrival: i64,
    pub departure: i64,
    pub kind: StayKind,
    pub label: PlaceLabel,
    pub activity: Option<ActivityType>,
    pub station_id: String,
    pub n_records: usize,
}

impl StayPoint {
    pub fn duration(&self) -> i64 {
        self.departure - self.arrival
    }

    pub fn is_stay(&self) -> bool {
        self.kind == StayKind::Stay
    }

    /// Inferred activity, else the one implied by the place label.
    pub fn activity_type(&self) -> ActivityType {
        self.activity.unwrap_or(match self.label {
            PlaceLabel::Home => ActivityType::Home,
            PlaceLabel::Work => ActivityType::Work,
            _ => ActivityType::Other,
        })
    }

    /// Seconds of `[arrival, departure)` falling inside `[start, end)`.
    pub fn overlap(&self, start: i64, end: i64) -> i64 {
        (self.departure.min(end) - self.arrival.max(start)).max(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TripPurpose {
    #[serde(rename = "HBW")]
    HomeBasedWork,
    #[serde(rename = "HBO")]
    HomeBasedOther,
    #[serde(rename = "NHB")]
    NonHomeBased,
}

impl TripPurpose {
    pub const ALL: [TripPurpose; 3] = [
        TripPurpose::HomeBasedWork,
        TripPurpose::HomeBasedOther,
        TripPurpose::NonHomeBased,
    ];

    pub fn code(self) -> &'static str {
        match self {
            TripPurpose::HomeBasedWork => "HBW",
            TripPurpose::HomeBasedOther => "HBO",
            TripPurpose::NonHomeBased => "NHB",
        }
    }
}

/// A move between two consecutive stays of a chain; indices point into
/// [`ActivityChain::stays`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trip {
    pub origin: usize,
    pub destination: usize,
    pub purpose: TripPurpose,
}

/// One user's day: every stay and pass-by piece falling on that local day,
/// in arrival order, and the trips linking consecutive stays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivityChain {
    pub user_id: String,
    pub day: i64,
    pub stays: Vec<StayPoint>,
    pub trips: Vec<Trip>,
}

impl ActivityChain {
    pub fn stays_only(&self) -> impl Iterator<Item = &StayPoint> {
        self.stays.iter().filter(|s| s.is_stay())
    }
}

/// Raw POI / check-in category to activity type lookup.
#[derive(Debug, Clone, Default)]
pub struct CategoryMap {
    entries: HashMap<String, ActivityType>,
}

const DEFAULT_CATEGORY_MAP: &str = include_str!("../data/category_map.csv");

#[derive(Deserialize)]
struct CategoryRow {
    raw_category: String,
    activity_type: String,
}

impl CategoryMap {
    /// The built-in mapping shipped with the crate.
    pub fn builtin() -> Self {
        Self::from_reader(DEFAULT_CATEGORY_MAP.as_bytes()).expect("built-in category map is valid")
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let mut entries = HashMap::new();
        for row in rdr.deserialize::<CategoryRow>() {
            let row = row?;
            let t: ActivityType = row.activity_type.parse()?;
            entries.insert(squash(&row.raw_category), t);
        }
        Ok(Self { entries })
    }

    pub fn insert(&mut self, raw: &str, t: ActivityType) {
        self.entries.insert(squash(raw), t);
    }

    pub fn get(&self, raw: &str) -> Option<ActivityType> {
        self.entries.get(&squash(raw)).copied()
    }

    pub fn map(&self, raw: &str) -> Result<ActivityType> {
        self.get(raw).ok_or_else(|| Error::UnknownCategory(raw.to_string()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Independent great-circle distance for checking the planar projection.
    fn haversine(lon1: f64, lat1: f64, lon2: f64, lat2: f64) -> f64 {
        let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
        let dp = p2 - p1;
        let dl = (lon2 - lon1).to_radians();
        let a = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
        2.0 * EARTH_RADIUS_M * a.sqrt().asin()
    }

    #[test]
    fn origin_maps_to_origin() {
        let prj = Projection::new(121.47, 31.23).unwrap();
        let p = prj.project(121.47, 31.23).unwrap();
        assert_eq!(p, ProjectedPoint::new(0.0, 0.0));
    }

    #[test]
    fn thousandth_degree_north_is_111_19_m() {
        let prj = Projection::new(121.47, 31.23).unwrap();
        let p = prj.project(121.47, 31.231).unwrap();
        // R * pi / 180 * 0.001
        let expected = 6_371_000.0 * std::f64::consts::PI / 180.0 * 0.001;
        assert!((p.y - expected).abs() < 1e-6);
        assert!((p.y - 111.19).abs() < 0.01);
        assert!(p.x.abs() < 1e-9);
    }

    #[test]
    fn one_km_pair_matches_haversine() {
        let prj = Projection::new(121.47, 31.23).unwrap();
        let (lon1, lat1) = (121.471, 31.232);
        // ~1 km east
        let (lon2, lat2) = (121.471 + 1000.0 / (111_194.9 * 31.232f64.to_radians().cos()), 31.232);
        let d = prj.project(lon1, lat1).unwrap().distance(&prj.project(lon2, lat2).unwrap());
        let h = haversine(lon1, lat1, lon2, lat2);
        assert!((h - 1000.0).abs() < 5.0);
        assert!((d - h).abs() < 1.0, "planar {d} vs haversine {h}");
    }

    #[test]
    fn random_pairs_within_half_percent_of_haversine() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let prj = Projection::new(121.47, 31.23).unwrap();
        let deg = 50_000.0 / 111_194.9;
        let mut checked = 0;
        while checked < 1000 {
            let a = (121.47 + rng.random_range(-deg..deg), 31.23 + rng.random_range(-deg..deg));
            let b = (121.47 + rng.random_range(-deg..deg), 31.23 + rng.random_range(-deg..deg));
            let pa = prj.project(a.0, a.1).unwrap();
            let pb = prj.project(b.0, b.1).unwrap();
            if pa.x.hypot(pa.y) > 50_000.0 || pb.x.hypot(pb.y) > 50_000.0 {
                continue;
            }
            let h = haversine(a.0, a.1, b.0, b.1);
            if h < 100.0 {
                continue;
            }
            let d = pa.distance(&pb);
            assert!(((d - h) / h).abs() < 0.005, "d={d} h={h}");
            checked += 1;
        }
    }

    #[test]
    fn euclidean_basics() {
        let a = ProjectedPoint::new(0.0, 0.0);
        assert_eq!(euclidean_distance(a, a), 0.0);
        assert_eq!(euclidean_distance(a, ProjectedPoint::new(3.0, 4.0)), 5.0);
    }

    #[test]
    fn out_of_range_rejected() {
        let prj = Projection::new(0.0, 0.0).unwrap();
        assert!(matches!(prj.project(181.0, 0.0), Err(Error::CoordinateOutOfRange { .. })));
        assert!(prj.project(0.0, -90.5).is_err());
        assert!(prj.project(f64::NAN, 0.0).is_err());
    }

    #[test]
    fn round_trip_within_1e6_degrees() {
        let prj = Projection::new(121.47, 31.23).unwrap();
        for &(lon, lat) in &[(121.9, 31.6), (121.0, 30.9), (121.47, 31.23), (122.3, 31.9)] {
            let (l2, a2) = prj.unproject(prj.project(lon, lat).unwrap());
            assert!((l2 - lon).abs() < 1e-6 && (a2 - lat).abs() < 1e-6);
        }
    }

    #[test]
    fn activity_type_parsing() {
        assert_eq!("Drink & Eat".parse::<ActivityType>().unwrap(), ActivityType::DrinkEat);
        assert_eq!("leisure_sport".parse::<ActivityType>().unwrap(), ActivityType::LeisureSport);
        assert!("Nightlife".parse::<ActivityType>().is_err());
        assert_eq!(ActivityType::ALL.len(), 9);
        assert_eq!(ActivityType::INFERABLE.len(), 7);
        assert!(ActivityType::INFERABLE.iter().all(|t| t.is_inferable()));
    }

    #[test]
    fn builtin_map_covers_table_rows() {
        let m = CategoryMap::builtin();
        assert_eq!(m.get("Catering services"), Some(ActivityType::DrinkEat));
        assert_eq!(m.get("restaurant"), Some(ActivityType::DrinkEat));
        assert_eq!(m.get("Housing estate"), Some(ActivityType::Home));
        assert_eq!(m.get("Bus Station"), Some(ActivityType::Transport));
        assert!(matches!(m.map("Spaceport"), Err(Error::UnknownCategory(_))));
    }

    #[test]
    fn clock_days_and_weekdays() {
        let c = LocalClock::default();
        // 2014-01-06 00:00 +08:00 is a Monday.
        let ts = 1_388_937_600;
        let d = c.day(ts);
        assert_eq!(c.second_of_day(ts), 0);
        assert_eq!(c.weekday(d), 0);
        assert_eq!(c.date_string(d), "2014-01-06");
        assert!(c.is_weekend(d + 5));
        assert_eq!(c.day_start(d), ts);
    }
}
