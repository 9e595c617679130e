//! Activity-type inference from candidate POIs and check-in temporal
//! profiles, plus commuter profession inference.
//!
//! For a stay arriving in ten-minute slot `t` at a station whose candidate
//! POIs have type proportions `p(O_i | c)`, the posterior over the seven
//! inferable types is `p(O_i | c, t) ∝ p(t | O_i) p(O_i | c)`. The evidence
//! term `p(t) = 1/144` is constant and cancels in the normalization.

use std::collections::{BTreeMap, HashMap};
use std::io::Read;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::StationIndex;
use crate::model::{ActivityType, CategoryMap, LocalClock, PlaceLabel, Poi, ProjectedPoint, StayPoint};

/// Ten-minute slots per day.
pub const SLOTS: usize = 144;
pub const SLOT_SECS: i64 = 600;
/// Uniform prior over arrival slots.
pub const SLOT_PRIOR: f64 = 1.0 / SLOTS as f64;
pub const N_INFERABLE: usize = 7;
pub const DEFAULT_CANDIDATE_BUFFER_M: f64 = 900.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BayesParams {
    pub candidate_buffer_m: f64,
    pub laplace_pseudo_count: f64,
}

impl Default for BayesParams {
    fn default() -> Self {
        Self {
            candidate_buffer_m: DEFAULT_CANDIDATE_BUFFER_M,
            laplace_pseudo_count: 1.0,
        }
    }
}

pub fn arrival_slot(ts: i64, clock: &LocalClock) -> usize {
    (clock.second_of_day(ts) / SLOT_SECS) as usize
}

/// `p(t | O_i)` over 144 slots for each inferable type, in
/// [`ActivityType::INFERABLE`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalProfile {
    probs: Vec<[f64; SLOTS]>,
    counts: Vec<u64>,
}

impl TemporalProfile {
    pub fn uniform() -> Self {
        Self {
            probs: vec![[SLOT_PRIOR; SLOTS]; N_INFERABLE],
            counts: vec![0; N_INFERABLE],
        }
    }

    /// Builds profiles from raw per-type probability rows (already normalized).
    pub fn from_rows(rows: Vec<[f64; SLOTS]>) -> Result<Self> {
        if rows.len() != N_INFERABLE {
            return Err(Error::LengthMismatch(rows.len(), N_INFERABLE));
        }
        for r in &rows {
            let s: f64 = r.iter().sum();
            if (s - 1.0).abs() > 1e-9 || r.iter().any(|&v| !(v > 0.0)) {
                return Err(Error::NotNormalized(s));
            }
        }
        Ok(Self {
            probs: rows,
            counts: vec![0; N_INFERABLE],
        })
    }

    pub fn p(&self, t: ActivityType, slot: usize) -> f64 {
        t.inferable_index().map_or(0.0, |i| self.probs[i][slot])
    }

    pub fn row(&self, t: ActivityType) -> Option<&[f64; SLOTS]> {
        t.inferable_index().map(|i| &self.probs[i])
    }

    pub fn count(&self, t: ActivityType) -> u64 {
        t.inferable_index().map_or(0, |i| self.counts[i])
    }

    /// CSV with columns `activity_type,slot_0..slot_143`.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["activity_type".to_string()];
        header.extend((0..SLOTS).map(|i| format!("slot_{i}")));
        wtr.write_record(&header)?;
        for (i, t) in ActivityType::INFERABLE.iter().enumerate() {
            let mut row = vec![t.name().to_string()];
            row.extend(self.probs[i].iter().map(|v| v.to_string()));
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut rows = vec![None; N_INFERABLE];
        for rec in rdr.records() {
            let rec = rec?;
            let t: ActivityType = rec.get(0).unwrap_or_default().parse()?;
            let idx = t
                .inferable_index()
                .ok_or_else(|| Error::InvalidParameter(format!("{t} has no temporal profile")))?;
            if rec.len() != SLOTS + 1 {
                return Err(Error::LengthMismatch(rec.len(), SLOTS + 1));
            }
            let mut row = [0.0; SLOTS];
            for (k, v) in row.iter_mut().enumerate() {
                *v = rec[k + 1]
                    .parse()
                    .map_err(|_| Error::InvalidParameter(format!("bad probability {:?}", &rec[k + 1])))?;
            }
            rows[idx] = Some(row);
        }
        let rows = rows
            .into_iter()
            .enumerate()
            .map(|(i, r)| r.ok_or_else(|| Error::NoActivity(ActivityType::INFERABLE[i].to_string())))
            .collect::<Result<Vec<_>>>()?;
        Self::from_rows(rows)
    }
}

/// Histogram of check-in local times per inferable type with add-`pseudo`
/// smoothing. Types with no check-ins come out uniform and are reported.
pub fn build_temporal_profiles<I>(checkins: I, clock: &LocalClock, pseudo: f64) -> Result<(TemporalProfile, Vec<ActivityType>)>
where
    I: IntoIterator<Item = (i64, ActivityType)>,
{
    if !(pseudo > 0.0) {
        return Err(Error::InvalidParameter(format!("pseudo-count {pseudo}")));
    }
    let mut hist = vec![[0u64; SLOTS]; N_INFERABLE];
    for (ts, t) in checkins {
        if let Some(i) = t.inferable_index() {
            hist[i][arrival_slot(ts, clock)] += 1;
        }
    }
    let mut empty = Vec::new();
    let mut probs = Vec::with_capacity(N_INFERABLE);
    let mut counts = Vec::with_capacity(N_INFERABLE);
    for (i, h) in hist.iter().enumerate() {
        let n: u64 = h.iter().sum();
        if n == 0 {
            warn!("no check-ins for {}; using a uniform profile", ActivityType::INFERABLE[i]);
            empty.push(ActivityType::INFERABLE[i]);
        }
        let denom = n as f64 + pseudo * SLOTS as f64;
        let mut row = [0.0; SLOTS];
        for (k, v) in row.iter_mut().enumerate() {
            *v = (h[k] as f64 + pseudo) / denom;
        }
        probs.push(row);
        counts.push(n);
    }
    Ok((TemporalProfile { probs, counts }, empty))
}

/// A POI with its projected position and mapped activity type.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidatePoi {
    pub poi: Poi,
    pub point: ProjectedPoint,
    pub activity: Option<ActivityType>,
}

/// POIs falling in `station`'s Voronoi cell and within `buffer_m` of it.
pub fn candidate_pois<'a>(station_id: &str, pois: &'a [CandidatePoi], index: &StationIndex, buffer_m: f64) -> Result<Vec<&'a CandidatePoi>> {
    let Some(st) = index.get(station_id) else {
        return Err(Error::InvalidParameter(format!("unknown station {station_id}")));
    };
    let mut out = Vec::new();
    for p in pois {
        let near = index.nearest(p.point)?;
        if near.station.station_id == station_id && p.point.distance(&st.point) <= buffer_m {
            out.push(p);
        }
    }
    Ok(out)
}

/// Precomputed candidate lists for every station.
#[derive(Debug, Clone, Default)]
pub struct CandidateIndex {
    pois: Vec<CandidatePoi>,
    by_station: HashMap<String, Vec<usize>>,
    pub unknown_categories: BTreeMap<String, usize>,
}

impl CandidateIndex {
    pub fn build(pois: &[Poi], categories: &CategoryMap, index: &StationIndex, buffer_m: f64) -> Result<Self> {
        let projection = *index.projection();
        let mut out = CandidateIndex::default();
        for poi in pois {
            let point = projection.project(poi.lon, poi.lat)?;
            let activity = categories.get(&poi.category);
            if activity.is_none() {
                *out.unknown_categories.entry(poi.category.clone()).or_default() += 1;
            }
            let near = index.nearest(point)?;
            if point.distance(&near.point) <= buffer_m {
                out.by_station
                    .entry(near.station.station_id.clone())
                    .or_default()
                    .push(out.pois.len());
            }
            out.pois.push(CandidatePoi {
                poi: poi.clone(),
                point,
                activity,
            });
        }
        for (cat, n) in &out.unknown_categories {
            warn!("{n} POIs with unmapped category {cat:?}");
        }
        Ok(out)
    }

    pub fn candidates(&self, station_id: &str) -> Vec<&CandidatePoi> {
        self.by_station
            .get(station_id)
            .map(|ix| ix.iter().map(|&i| &self.pois[i]).collect())
            .unwrap_or_default()
    }

    pub fn pois(&self) -> &[CandidatePoi] {
        &self.pois
    }
}

/// `p(O_i | c)`: share of each inferable type among candidates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TypeMixture {
    pub props: [f64; N_INFERABLE],
    pub n: usize,
}

impl TypeMixture {
    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, t: ActivityType) -> f64 {
        t.inferable_index().map_or(0.0, |i| self.props[i])
    }
}

pub fn type_mixture<'a, I>(candidates: I) -> TypeMixture
where
    I: IntoIterator<Item = &'a CandidatePoi>,
{
    mixture_of(candidates.into_iter().filter_map(|c| c.activity))
}

/// Mixture over a bag of activity types; Home/Work entries are ignored.
pub fn mixture_of<I: IntoIterator<Item = ActivityType>>(types: I) -> TypeMixture {
    let mut counts = [0usize; N_INFERABLE];
    for t in types {
        if let Some(i) = t.inferable_index() {
            counts[i] += 1;
        }
    }
    let n: usize = counts.iter().sum();
    let mut props = [0.0; N_INFERABLE];
    if n > 0 {
        for (p, c) in props.iter_mut().zip(counts) {
            *p = c as f64 / n as f64;
        }
    }
    TypeMixture { props, n }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Posterior {
    pub probs: [f64; N_INFERABLE],
    pub argmax: ActivityType,
}

impl Posterior {
    pub fn get(&self, t: ActivityType) -> f64 {
        t.inferable_index().map_or(0.0, |i| self.probs[i])
    }
}

pub fn posterior(mixture: &TypeMixture, slot: usize, profile: &TemporalProfile) -> Result<Posterior> {
    if mixture.is_empty() {
        return Err(Error::EmptyInput("candidate mixture"));
    }
    if slot >= SLOTS {
        return Err(Error::InvalidParameter(format!("slot {slot}")));
    }
    let mut w = [0.0; N_INFERABLE];
    for (i, wi) in w.iter_mut().enumerate() {
        *wi = profile.probs[i][slot] * mixture.props[i];
    }
    let total: f64 = w.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::NotNormalized(total));
    }
    let mut best = 0;
    for i in 1..N_INFERABLE {
        if w[i] > w[best] {
            best = i;
        }
    }
    for wi in &mut w {
        *wi /= total;
    }
    Ok(Posterior {
        probs: w,
        argmax: ActivityType::INFERABLE[best],
    })
}

/// Home and work stays keep their habit-derived type; other stays take the
/// posterior argmax at their arrival slot, or `Other` with no candidates.
pub fn infer_activity(stay: &StayPoint, profile: &TemporalProfile, candidates: &CandidateIndex, clock: &LocalClock) -> Result<ActivityType> {
    match stay.label {
        PlaceLabel::Home => return Ok(ActivityType::Home),
        PlaceLabel::Work => return Ok(ActivityType::Work),
        _ => {}
    }
    let mix = type_mixture(candidates.candidates(&stay.station_id));
    if mix.is_empty() {
        return Ok(ActivityType::Other);
    }
    Ok(posterior(&mix, arrival_slot(stay.arrival, clock), profile)?.argmax)
}

/// The fourteen occupation groups.
pub const PROFESSIONS: [&str; 14] = [
    "Sales",
    "Manufacturing",
    "Catering",
    "IT",
    "Finance",
    "RealEstate",
    "Education",
    "SocialPublic",
    "Transport",
    "Construction",
    "Hospitality",
    "Culture",
    "BusinessServices",
    "Other",
];

pub const PROFESSION_OTHER: &str = "Other";

/// POI category to occupation group lookup.
#[derive(Debug, Clone, Default)]
pub struct ProfessionMap {
    entries: HashMap<String, usize>,
}

const DEFAULT_PROFESSION_MAP: &str = include_str!("../data/profession_map.csv");

#[derive(Deserialize)]
struct ProfessionRow {
    raw_category: String,
    profession: String,
}

fn norm(s: &str) -> String {
    s.trim().to_lowercase()
}

impl ProfessionMap {
    pub fn builtin() -> Self {
        Self::from_reader(DEFAULT_PROFESSION_MAP.as_bytes()).expect("built-in profession map is valid")
    }

    pub fn from_reader<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
        let mut entries = HashMap::new();
        for row in rdr.deserialize::<ProfessionRow>() {
            let row = row?;
            let idx = PROFESSIONS
                .iter()
                .position(|p| p.eq_ignore_ascii_case(&row.profession))
                .ok_or_else(|| Error::InvalidParameter(format!("unknown profession {:?}", row.profession)))?;
            entries.insert(norm(&row.raw_category), idx);
        }
        Ok(Self { entries })
    }

    pub fn get(&self, raw: &str) -> Option<&'static str> {
        self.entries.get(&norm(raw)).map(|&i| PROFESSIONS[i])
    }
}

/// Profession of a commuter from the category shares of the POIs around
/// its work station. No candidates, a tie for the top share, or a top
/// category of `Other` all give `Other`.
pub fn infer_profession(work_station: &str, candidates: &CandidateIndex, map: &ProfessionMap) -> &'static str {
    let mut counts = [0usize; PROFESSIONS.len()];
    for c in candidates.candidates(work_station) {
        let p = map.get(&c.poi.category).unwrap_or(PROFESSION_OTHER);
        let i = PROFESSIONS.iter().position(|&q| q == p).unwrap_or(PROFESSIONS.len() - 1);
        counts[i] += 1;
    }
    let mut order: Vec<usize> = (0..PROFESSIONS.len()).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    let (top, second) = (counts[order[0]], counts[order[1]]);
    if top == 0 || top == second {
        PROFESSION_OTHER
    } else {
        PROFESSIONS[order[0]]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BaseStation, Projection, StayKind};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn world() -> (StationIndex, Projection) {
        let prj = Projection::new(121.5, 31.2).unwrap();
        let mk = |id: &str, x: f64, y: f64| {
            let (lon, lat) = prj.unproject(ProjectedPoint::new(x, y));
            BaseStation {
                station_id: id.into(),
                lon,
                lat,
            }
        };
        let st = vec![mk("s", 0.0, 0.0), mk("t", 3000.0, 0.0), mk("far", -20_000.0, 0.0)];
        (StationIndex::build(&st, prj).unwrap(), prj)
    }

    fn cpoi(id: &str, x: f64, y: f64, cat: &str, t: Option<ActivityType>) -> CandidatePoi {
        let prj = Projection::new(121.5, 31.2).unwrap();
        let (lon, lat) = prj.unproject(ProjectedPoint::new(x, y));
        CandidatePoi {
            poi: Poi {
                poi_id: id.into(),
                lon,
                lat,
                category: cat.into(),
            },
            point: ProjectedPoint::new(x, y),
            activity: t,
        }
    }

    #[test]
    fn candidates_respect_buffer_and_voronoi() {
        let (idx, _) = world();
        let pois = vec![
            cpoi("near", 100.0, 0.0, "Shop", Some(ActivityType::Shopping)),
            cpoi("outside_buffer", -1200.0, 0.0, "Shop", Some(ActivityType::Shopping)),
            cpoi("other_cell", 2900.0, 0.0, "Shop", Some(ActivityType::Shopping)),
        ];
        let got: Vec<_> = candidate_pois("s", &pois, &idx, 900.0).unwrap().iter().map(|c| c.poi.poi_id.clone()).collect();
        assert_eq!(got, vec!["near"]);
        // POI 100 m from s but nearer to t
        let (idx2, _) = {
            let prj = Projection::new(121.5, 31.2).unwrap();
            let mk = |id: &str, x: f64| {
                let (lon, lat) = prj.unproject(ProjectedPoint::new(x, 0.0));
                BaseStation {
                    station_id: id.into(),
                    lon,
                    lat,
                }
            };
            (StationIndex::build(&[mk("s", 0.0), mk("t", 150.0)], prj).unwrap(), prj)
        };
        let p = vec![cpoi("x", 100.0, 0.0, "Shop", Some(ActivityType::Shopping))];
        assert!(candidate_pois("s", &p, &idx2, 900.0).unwrap().is_empty());
        assert_eq!(candidate_pois("t", &p, &idx2, 900.0).unwrap().len(), 1);
    }

    #[test]
    fn candidate_index_matches_direct_selection() {
        let (idx, _) = world();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let pois: Vec<Poi> = (0..400)
            .map(|i| {
                let x = rng.random_range(-3000.0..6000.0);
                let y = rng.random_range(-2000.0..2000.0);
                let (lon, lat) = idx.projection().unproject(ProjectedPoint::new(x, y));
                Poi {
                    poi_id: format!("p{i}"),
                    lon,
                    lat,
                    category: "Restaurant".into(),
                }
            })
            .collect();
        let ci = CandidateIndex::build(&pois, &CategoryMap::builtin(), &idx, 900.0).unwrap();
        for s in ["s", "t", "far"] {
            let a: Vec<_> = ci.candidates(s).iter().map(|c| c.poi.poi_id.clone()).collect();
            let b: Vec<_> = candidate_pois(s, ci.pois(), &idx, 900.0).unwrap().iter().map(|c| c.poi.poi_id.clone()).collect();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn zero_checkins_give_uniform() {
        let (p, empty) = build_temporal_profiles(std::iter::empty(), &LocalClock::new(0), 1.0).unwrap();
        assert_eq!(empty.len(), 7);
        for t in ActivityType::INFERABLE {
            assert!(p.row(t).unwrap().iter().all(|&v| (v - 1.0 / 144.0).abs() < 1e-15));
        }
    }

    #[test]
    fn one_per_bin_is_uniform() {
        let c = (0..144).map(|k| (k as i64 * 600 + 30, ActivityType::Shopping));
        let (p, _) = build_temporal_profiles(c, &LocalClock::new(0), 1.0).unwrap();
        assert!(p.row(ActivityType::Shopping).unwrap().iter().all(|&v| (v - 1.0 / 144.0).abs() < 1e-15));
    }

    #[test]
    fn concentrated_bin_closed_form() {
        let n = 50u64;
        let c = (0..n).map(|_| (72 * 600 + 1, ActivityType::DrinkEat));
        let (p, _) = build_temporal_profiles(c, &LocalClock::new(0), 1.0).unwrap();
        let row = p.row(ActivityType::DrinkEat).unwrap();
        let nf = n as f64;
        assert!((row[72] - (nf + 1.0) / (nf + 144.0)).abs() < 1e-15);
        assert!((row[0] - 1.0 / (nf + 144.0)).abs() < 1e-15);
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn mixture_examples() {
        use ActivityType::*;
        let m = mixture_of([DrinkEat, DrinkEat, Shopping, Shopping]);
        assert_eq!(m.get(DrinkEat), 0.5);
        assert_eq!(m.get(Shopping), 0.5);
        assert_eq!(mixture_of([Education]).get(Education), 1.0);
        assert!(mixture_of([Home, Work]).is_empty());
    }

    #[test]
    fn mixture_matches_counting() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10_000 {
            let n = rng.random_range(1..30);
            let types: Vec<ActivityType> = (0..n).map(|_| ActivityType::ALL[rng.random_range(0..9)]).collect();
            let m = mixture_of(types.iter().copied());
            let denom = types.iter().filter(|t| t.is_inferable()).count();
            for t in ActivityType::INFERABLE {
                let c = types.iter().filter(|&&x| x == t).count();
                let expect = if denom == 0 { 0.0 } else { c as f64 / denom as f64 };
                assert_eq!(m.get(t), expect);
            }
        }
    }

    fn profile_with(values: &[(ActivityType, usize, f64)]) -> TemporalProfile {
        let mut rows = vec![[0.0; SLOTS]; N_INFERABLE];
        for (i, row) in rows.iter_mut().enumerate() {
            let t = ActivityType::INFERABLE[i];
            let fixed: Vec<_> = values.iter().filter(|v| v.0 == t).collect();
            let used: f64 = fixed.iter().map(|v| v.2).sum();
            let rest = (1.0 - used) / (SLOTS - fixed.len()) as f64;
            for (k, v) in row.iter_mut().enumerate() {
                *v = fixed.iter().find(|f| f.1 == k).map_or(rest, |f| f.2);
            }
        }
        TemporalProfile::from_rows(rows).unwrap()
    }

    #[test]
    fn posterior_hand_example() {
        use ActivityType::*;
        let prof = profile_with(&[(DrinkEat, 70, 0.02), (Shopping, 70, 0.01)]);
        let post = posterior(&mixture_of([DrinkEat, Shopping]), 70, &prof).unwrap();
        assert!((post.get(DrinkEat) - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(post.argmax, DrinkEat);
    }

    #[test]
    fn single_type_posterior_is_certain() {
        let prof = TemporalProfile::uniform();
        let p = posterior(&mixture_of([ActivityType::Education]), 10, &prof).unwrap();
        assert_eq!(p.get(ActivityType::Education), 1.0);
    }

    #[test]
    fn posterior_rejects_empty_and_bad_slot() {
        let prof = TemporalProfile::uniform();
        assert!(posterior(&mixture_of([]), 0, &prof).is_err());
        assert!(posterior(&mixture_of([ActivityType::Shopping]), 144, &prof).is_err());
    }

    #[test]
    fn uniform_tie_goes_to_enum_order() {
        use ActivityType::*;
        let prof = TemporalProfile::uniform();
        let p = posterior(&mixture_of([Other, Education, DrinkEat]), 3, &prof).unwrap();
        assert_eq!(p.argmax, DrinkEat);
    }

    fn stay_with(label: PlaceLabel, station: &str) -> StayPoint {
        StayPoint {
            user_id: "u".into(),
            place_id: 0,
            center: ProjectedPoint::default(),
            arrival: 36_000,
            departure: 40_000,
            kind: StayKind::Stay,
            label,
            activity: None,
            station_id: station.into(),
            n_records: 3,
        }
    }

    #[test]
    fn infer_activity_rules() {
        let (idx, prj) = world();
        let (lon, lat) = prj.unproject(ProjectedPoint::new(50.0, 0.0));
        let pois = vec![Poi {
            poi_id: "school".into(),
            lon,
            lat,
            category: "School".into(),
        }];
        let ci = CandidateIndex::build(&pois, &CategoryMap::builtin(), &idx, 900.0).unwrap();
        let prof = TemporalProfile::uniform();
        let clock = LocalClock::new(0);
        assert_eq!(infer_activity(&stay_with(PlaceLabel::Home, "s"), &prof, &ci, &clock).unwrap(), ActivityType::Home);
        assert_eq!(infer_activity(&stay_with(PlaceLabel::Work, "s"), &prof, &ci, &clock).unwrap(), ActivityType::Work);
        assert_eq!(infer_activity(&stay_with(PlaceLabel::Other, "s"), &prof, &ci, &clock).unwrap(), ActivityType::Education);
        assert_eq!(infer_activity(&stay_with(PlaceLabel::Other, "t"), &prof, &ci, &clock).unwrap(), ActivityType::Other);
    }

    #[test]
    fn profession_rules() {
        let (idx, prj) = world();
        let mk = |id: &str, x: f64, cat: &str| {
            let (lon, lat) = prj.unproject(ProjectedPoint::new(x, 10.0));
            Poi {
                poi_id: id.into(),
                lon,
                lat,
                category: cat.into(),
            }
        };
        let map = ProfessionMap::builtin();
        let sales = vec![mk("a", 10.0, "Shopping"), mk("b", 20.0, "Store")];
        let ci = CandidateIndex::build(&sales, &CategoryMap::builtin(), &idx, 900.0).unwrap();
        assert_eq!(infer_profession("s", &ci, &map), "Sales");
        assert_eq!(infer_profession("t", &ci, &map), "Other");
        let tie = vec![mk("a", 10.0, "Shopping"), mk("b", 20.0, "Catering services")];
        let ci = CandidateIndex::build(&tie, &CategoryMap::builtin(), &idx, 900.0).unwrap();
        assert_eq!(infer_profession("s", &ci, &map), "Other");
    }

    #[test]
    fn profile_csv_round_trip() {
        let c = (0..500).map(|k| ((k * 97 % 86_400) as i64, ActivityType::INFERABLE[k % 7]));
        let (p, _) = build_temporal_profiles(c, &LocalClock::new(0), 1.0).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let back = TemporalProfile::read_csv(buf.as_slice()).unwrap();
        for t in ActivityType::INFERABLE {
            assert_eq!(p.row(t), back.row(t));
        }
    }

    fn random_profile(rng: &mut impl Rng) -> TemporalProfile {
        let rows = (0..N_INFERABLE)
            .map(|_| {
                let mut r = [0.0; SLOTS];
                for v in r.iter_mut() {
                    *v = rng.random_range(0.01..1.0);
                }
                let s: f64 = r.iter().sum();
                for v in r.iter_mut() {
                    *v /= s;
                }
                let s2: f64 = r.iter().sum();
                r[0] += 1.0 - s2;
                r
            })
            .collect();
        TemporalProfile::from_rows(rows).unwrap()
    }

    proptest! {
        #[test]
        fn posterior_normalized_and_scale_invariant(
            seed in 0u64..10_000,
            types in prop::collection::vec(0usize..7, 1..20),
            slot in 0usize..144,
            scale in 0.01f64..100.0,
        ) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let prof = random_profile(&mut rng);
            let mix = mixture_of(types.iter().map(|&i| ActivityType::INFERABLE[i]));
            let post = posterior(&mix, slot, &prof).unwrap();
            prop_assert!((post.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            // scaling every type's entry at this slot leaves the argmax alone
            let mut rows: Vec<[f64; SLOTS]> =
                ActivityType::INFERABLE.iter().map(|&t| *prof.row(t).unwrap()).collect();
            for r in rows.iter_mut() {
                r[slot] *= scale;
            }
            let scaled = TemporalProfile { probs: rows, counts: vec![0; N_INFERABLE] };
            prop_assert_eq!(posterior(&mix, slot, &scaled).unwrap().argmax, post.argmax);
        }

        #[test]
        fn posterior_monotone_in_own_likelihood(
            seed in 0u64..10_000,
            types in prop::collection::vec(0usize..7, 1..20),
            slot in 0usize..144,
            target in 0usize..7,
            bump in 1.0f64..10.0,
        ) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let prof = random_profile(&mut rng);
            let mix = mixture_of(types.iter().map(|&i| ActivityType::INFERABLE[i]));
            let before = posterior(&mix, slot, &prof).unwrap().probs[target];
            let mut rows: Vec<[f64; SLOTS]> =
                ActivityType::INFERABLE.iter().map(|&t| *prof.row(t).unwrap()).collect();
            rows[target][slot] *= bump;
            let bumped = TemporalProfile { probs: rows, counts: vec![0; N_INFERABLE] };
            let after = posterior(&mix, slot, &bumped).unwrap().probs[target];
            prop_assert!(after >= before - 1e-15);
        }

        #[test]
        fn posterior_equals_per_poi_enumeration(
            seed in 0u64..10_000,
            types in prop::collection::vec(0usize..7, 1..12),
            slot in 0usize..144,
        ) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let prof = random_profile(&mut rng);
            let bag: Vec<ActivityType> = types.iter().map(|&i| ActivityType::INFERABLE[i]).collect();
            let post = posterior(&mixture_of(bag.iter().copied()), slot, &prof).unwrap();
            // every candidate POI weighted by its own type's temporal profile
            let weights: Vec<f64> = bag.iter().map(|&t| prof.p(t, slot)).collect();
            let z: f64 = weights.iter().sum();
            for t in ActivityType::INFERABLE {
                let mass: f64 = bag.iter().zip(&weights).filter(|(b, _)| **b == t).map(|(_, w)| w).sum();
                prop_assert!((post.get(t) - mass / z).abs() < 1e-12);
            }
        }
    }
}
