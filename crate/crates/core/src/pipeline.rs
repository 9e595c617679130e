//! Stage orchestration: in-memory stage results and on-disk artifacts.
//!
//! Every stage function recomputes what it needs from the configured
//! inputs, so any subcommand can run on its own. Artifact directories hold
//! the stage outputs plus `resolved_config.json` and `manifest.json`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::analytics;
use crate::bayes::{self, CandidateIndex, ProfessionMap, TemporalProfile};
use crate::config::{parse_hhmm, PipelineConfig};
use crate::error::{Error, Result};
use crate::ingest::{self, CleanTrace, StationIndex, XdrDataset};
use crate::lda::{self, ActivityDocument, Coherence, SweepCell, TopicModel};
use crate::model::{ActivityChain, ActivityType, BaseStation, CategoryMap, CheckIn, Poi, ProjectedPoint, Projection, StayPoint};
use crate::staydetect::{self, UserStays};
use crate::staylabel::{self, UserProfile};
use crate::synth;
use crate::validate::{self, CiWidths};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Synth,
    Ingest,
    Stays,
    Label,
    Profiles,
    Infer,
    Validate,
    Lda,
    Sweep,
    Analytics,
    All,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Ingest => "ingest",
            Stage::Stays => "stays",
            Stage::Label => "label",
            Stage::Profiles => "profiles",
            Stage::Infer => "infer",
            Stage::Validate => "validate",
            Stage::Lda => "lda",
            Stage::Sweep => "sweep",
            Stage::Analytics => "analytics",
            Stage::All => "all",
        }
    }
}

/// Raw parsed inputs.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub xdr: XdrDataset,
    pub stations: Vec<BaseStation>,
    pub pois: Vec<Poi>,
    pub checkins: Vec<CheckIn>,
    pub categories: CategoryMap,
    pub professions: ProfessionMap,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    match File::open(path) {
        Ok(f) => Ok(BufReader::new(f)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(Error::MissingInput(path.to_path_buf())),
        Err(e) => Err(e.into()),
    }
}

fn input_paths(cfg: &PipelineConfig) -> Vec<&Path> {
    let i = &cfg.inputs;
    let mut v: Vec<&Path> = vec![&i.xdr, &i.stations, &i.pois, &i.checkins];
    v.extend(i.category_map.as_deref());
    v.extend(i.profession_map.as_deref());
    v
}

pub fn load_inputs(cfg: &PipelineConfig) -> Result<Inputs> {
    for p in input_paths(cfg) {
        if !p.is_file() {
            return Err(Error::MissingInput(p.to_path_buf()));
        }
    }
    let i = &cfg.inputs;
    let src = |p: &Path| p.display().to_string();
    let xdr = ingest::parse_xdr(open(&i.xdr)?, &src(&i.xdr))?;
    let stations = ingest::parse_stations(open(&i.stations)?, &src(&i.stations))?;
    let pois = ingest::parse_pois(open(&i.pois)?, &src(&i.pois))?;
    let checkins = ingest::parse_checkins(open(&i.checkins)?, &src(&i.checkins))?;
    let categories = match &i.category_map {
        Some(p) => CategoryMap::from_reader(open(p)?)?,
        None => CategoryMap::builtin(),
    };
    let professions = match &i.profession_map {
        Some(p) => ProfessionMap::from_reader(open(p)?)?,
        None => ProfessionMap::builtin(),
    };
    Ok(Inputs {
        xdr,
        stations,
        pois,
        checkins,
        categories,
        professions,
    })
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct IngestStats {
    pub users: usize,
    pub records: usize,
    pub malformed_rows: usize,
    pub duplicate_rows: usize,
    pub kept_user_days: usize,
    pub dropped_user_days: usize,
    pub study_days: i64,
    pub stations: usize,
    pub pois: usize,
    pub checkins: usize,
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub projection: Projection,
    pub index: StationIndex,
    pub traces: BTreeMap<String, CleanTrace>,
    /// Local days from the first to the last record, inclusive.
    pub study_days: i64,
    pub stats: IngestStats,
}

pub fn ingest_stage(cfg: &PipelineConfig, inputs: &Inputs) -> Result<Ingested> {
    let clock = cfg.clock();
    let projection = Projection::centroid_of(inputs.stations.iter().map(|s| (s.lon, s.lat)))?;
    let index = StationIndex::with_cell_size(&inputs.stations, projection, cfg.ingest.grid_cell_m)?;
    let days: BTreeSet<i64> = inputs.xdr.users.values().flatten().map(|r| clock.day(r.timestamp)).collect();
    let study_days = match (days.first(), days.last()) {
        (Some(a), Some(b)) => b - a + 1,
        _ => 0,
    };
    let traces: BTreeMap<String, CleanTrace> = inputs
        .xdr
        .users
        .par_iter()
        .map(|(u, recs)| (u.clone(), ingest::clean_user_records(recs, &clock, &cfg.ingest)))
        .collect::<Vec<_>>()
        .into_iter()
        .filter(|(_, t)| !t.records.is_empty())
        .collect();
    let stats = IngestStats {
        users: traces.len(),
        records: traces.values().map(|t| t.records.len()).sum(),
        malformed_rows: inputs.xdr.malformed,
        duplicate_rows: inputs.xdr.duplicates,
        kept_user_days: traces.values().map(|t| t.kept_days.len()).sum(),
        dropped_user_days: inputs.xdr.users.keys().filter_map(|u| traces.get(u)).map(|t| t.dropped_days).sum::<usize>()
            + inputs.xdr.users.len().saturating_sub(traces.len()),
        study_days,
        stations: inputs.stations.len(),
        pois: inputs.pois.len(),
        checkins: inputs.checkins.len(),
    };
    info!("ingest: {} users, {} records kept", stats.users, stats.records);
    Ok(Ingested {
        projection,
        index,
        traces,
        study_days,
        stats,
    })
}

pub fn stays_stage(cfg: &PipelineConfig, ing: &Ingested) -> Result<BTreeMap<String, UserStays>> {
    let out: Vec<(String, UserStays)> = ing
        .traces
        .par_iter()
        .map(|(u, t)| staydetect::detect_stays(u, &t.records, &ing.projection, &cfg.stays).map(|s| (u.clone(), s)))
        .collect::<Result<_>>()?;
    info!("stays: {} stays", out.iter().map(|(_, s)| s.stays.len()).sum::<usize>());
    Ok(out.into_iter().collect())
}

#[derive(Debug, Clone, Default)]
pub struct Labeled {
    pub profiles: BTreeMap<String, UserProfile>,
    /// Every user's stays with place labels applied.
    pub stays: BTreeMap<String, Vec<StayPoint>>,
    /// Chains of residents only.
    pub chains: BTreeMap<String, Vec<ActivityChain>>,
    /// Station of each commuter's work place.
    pub work_stations: BTreeMap<String, String>,
}

impl Labeled {
    pub fn homes(&self) -> BTreeMap<String, ProjectedPoint> {
        self.profiles
            .iter()
            .filter(|(_, p)| p.is_resident)
            .filter_map(|(u, p)| p.home.map(|h| (u.clone(), h.center)))
            .collect()
    }

    pub fn commuters(&self) -> BTreeSet<String> {
        self.profiles.iter().filter(|(_, p)| p.is_commuter).map(|(u, _)| u.clone()).collect()
    }
}

pub fn label_stage(cfg: &PipelineConfig, ing: &Ingested, detected: &BTreeMap<String, UserStays>) -> Labeled {
    let clock = cfg.clock();
    let per_user: Vec<_> = detected
        .par_iter()
        .map(|(u, us)| {
            let centers = |pid: usize| us.places[pid].center;
            let profile = staylabel::build_profile(u, &us.stays, &us.footprints, &centers, &clock, ing.study_days, &cfg.label);
            let mut stays = us.stays.clone();
            staylabel::label_stays(&mut stays, &profile);
            let chains = if profile.is_resident {
                let kept = ing.traces.get(u).map(|t| t.kept_days.clone()).unwrap_or_default();
                Some(staylabel::build_chains(u, &stays, &clock, &kept))
            } else {
                None
            };
            let work_station = profile.work.map(|w| us.places[w.place_id].station_id.clone());
            (u.clone(), profile, stays, chains, work_station)
        })
        .collect();
    let mut out = Labeled::default();
    for (u, profile, stays, chains, ws) in per_user {
        if let Some(c) = chains {
            out.chains.insert(u.clone(), c);
        }
        if let Some(ws) = ws {
            out.work_stations.insert(u.clone(), ws);
        }
        out.stays.insert(u.clone(), stays);
        out.profiles.insert(u, profile);
    }
    info!("label: {} residents of {} users, {} commuters", out.chains.len(), out.profiles.len(), out.work_stations.len());
    out
}

/// Check-ins of one user with a resolved activity type.
#[derive(Debug, Clone, PartialEq)]
pub struct TypedCheckIn {
    pub user_id: String,
    pub timestamp: i64,
    pub activity: ActivityType,
}

#[derive(Debug, Clone)]
pub struct Profiles {
    pub profile: TemporalProfile,
    pub empty_types: Vec<ActivityType>,
    /// Check-ins kept after visitor removal, category mapping and the
    /// weekday filter.
    pub checkins: Vec<TypedCheckIn>,
    pub visitors_removed: usize,
    pub unmapped: BTreeMap<String, usize>,
}

pub fn profiles_stage(cfg: &PipelineConfig, inputs: &Inputs) -> Result<Profiles> {
    let clock = cfg.clock();
    let all_users: BTreeSet<&str> = inputs.checkins.iter().map(|c| c.user_id.as_str()).collect();
    let kept = ingest::remove_visitors(&inputs.checkins, cfg.ingest.visitor_min_span_days * 86_400);
    let mut unmapped: BTreeMap<String, usize> = BTreeMap::new();
    let mut checkins = Vec::new();
    for (u, cs) in &kept {
        for c in cs {
            if cfg.ingest.drop_weekends && clock.is_weekend(clock.day(c.timestamp)) {
                continue;
            }
            match inputs.categories.get(&c.category) {
                Some(t) => checkins.push(TypedCheckIn {
                    user_id: u.clone(),
                    timestamp: c.timestamp,
                    activity: t,
                }),
                None => *unmapped.entry(c.category.clone()).or_default() += 1,
            }
        }
    }
    for (cat, n) in &unmapped {
        warn!("{n} check-ins with unmapped category {cat:?}");
    }
    let (profile, empty_types) = bayes::build_temporal_profiles(checkins.iter().map(|c| (c.timestamp, c.activity)), &clock, cfg.bayes.laplace_pseudo_count)?;
    Ok(Profiles {
        profile,
        empty_types,
        checkins,
        visitors_removed: all_users.len() - kept.len(),
        unmapped,
    })
}

#[derive(Debug, Clone, Default)]
pub struct Inferred {
    pub chains: BTreeMap<String, Vec<ActivityChain>>,
    pub professions: BTreeMap<String, &'static str>,
}

impl Inferred {
    pub fn all_chains(&self) -> Vec<ActivityChain> {
        self.chains.values().flatten().cloned().collect()
    }
}

pub fn infer_stage(cfg: &PipelineConfig, inputs: &Inputs, ing: &Ingested, labeled: &Labeled, profiles: &Profiles) -> Result<Inferred> {
    let clock = cfg.clock();
    let cand = CandidateIndex::build(&inputs.pois, &inputs.categories, &ing.index, cfg.bayes.candidate_buffer_m)?;
    let chains: Vec<(String, Vec<ActivityChain>)> = labeled
        .chains
        .par_iter()
        .map(|(u, cs)| {
            let mut cs = cs.clone();
            for c in &mut cs {
                for s in c.stays.iter_mut().filter(|s| s.is_stay()) {
                    s.activity = Some(bayes::infer_activity(s, &profiles.profile, &cand, &clock)?);
                }
            }
            Ok((u.clone(), cs))
        })
        .collect::<Result<_>>()?;
    let professions = labeled
        .work_stations
        .iter()
        .map(|(u, st)| (u.clone(), bayes::infer_profession(st, &cand, &inputs.professions)))
        .collect();
    Ok(Inferred {
        chains: chains.into_iter().collect(),
        professions,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TypeValidation {
    pub activity: ActivityType,
    pub accuracy: Option<f64>,
    pub mape_per_hour: Vec<Option<f64>>,
    pub inferred: Vec<f64>,
    pub reference: Vec<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub types: Vec<TypeValidation>,
    pub bootstrap: Option<Vec<CiWidths>>,
    pub bootstrap_skipped: Option<String>,
}

pub fn validate_stage(cfg: &PipelineConfig, inferred: &Inferred, profiles: &Profiles) -> Result<ValidationReport> {
    let clock = cfg.clock();
    let chains = inferred.all_chains();
    let mut types = Vec::new();
    for &t in &cfg.validate.types {
        let pred = validate::expand_stay_slots(&chains, t, &clock);
        let reference = validate::checkin_series(profiles.checkins.iter().map(|c| (c.timestamp, c.activity)), t, &clock);
        let tv = match (pred, reference) {
            (Ok(p), Ok(r)) => TypeValidation {
                activity: t,
                accuracy: Some(validate::reconstruction_accuracy(&p.values, &r.values)?),
                mape_per_hour: validate::mape_per_hour(&p.values, &r.values)?,
                inferred: p.values,
                reference: r.values,
                error: None,
            },
            (p, r) => TypeValidation {
                activity: t,
                accuracy: None,
                mape_per_hour: Vec::new(),
                inferred: p.as_ref().map(|s| s.values.clone()).unwrap_or_default(),
                reference: r.as_ref().map(|s| s.values.clone()).unwrap_or_default(),
                error: Some(p.err().or(r.err()).map(|e| e.to_string()).unwrap_or_default()),
            },
        };
        match tv.accuracy {
            Some(a) => info!("validate: {t} accuracy {a:.4}"),
            None => warn!("validate: {t} has no accuracy: {}", tv.error.as_deref().unwrap_or("")),
        }
        types.push(tv);
    }
    let users: Vec<Vec<ActivityChain>> = inferred.chains.values().cloned().collect();
    let (bootstrap, bootstrap_skipped) = match validate::bootstrap_ci(&users, &cfg.validate.types, &cfg.validate.bootstrap, &clock) {
        Ok(w) => (Some(w), None),
        Err(e @ Error::TooFewUsers { .. }) => {
            warn!("bootstrap skipped: {e}");
            (None, Some(e.to_string()))
        }
        Err(e) => return Err(e),
    };
    let report = ValidationReport {
        types,
        bootstrap,
        bootstrap_skipped,
    };
    if let Some(min) = cfg.validate.min_accuracy {
        for t in &report.types {
            if t.accuracy.is_none_or(|a| a < min) {
                return Err(Error::ValidationFailed(format!("{} accuracy {:?} below {min}", t.activity, t.accuracy)));
            }
        }
    }
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct LdaResult {
    pub docs: Vec<ActivityDocument>,
    pub model: TopicModel,
    pub coherence: Coherence,
    pub user_groups: BTreeMap<String, usize>,
}

pub fn documents(cfg: &PipelineConfig, inferred: &Inferred) -> Vec<ActivityDocument> {
    lda::tokenize_chains(&inferred.all_chains(), &cfg.clock(), cfg.lda.unit)
}

pub fn lda_stage(cfg: &PipelineConfig, inferred: &Inferred) -> Result<LdaResult> {
    let docs = documents(cfg, inferred);
    info!("lda: {} documents", docs.len());
    let model = lda::gibbs_fit(&docs, &cfg.lda)?;
    let coherence = lda::umass_coherence(&model.phi, &docs, cfg.lda.top_n);
    let user_groups = lda::assign_user_groups(&model, &docs);
    Ok(LdaResult {
        docs,
        model,
        coherence,
        user_groups,
    })
}

pub fn sweep_stage(cfg: &PipelineConfig, inferred: &Inferred) -> Result<Vec<SweepCell>> {
    let docs = documents(cfg, inferred);
    lda::hyperparameter_sweep(&docs, &cfg.sweep, cfg.lda.seed)
}

#[derive(Debug, Clone)]
pub struct AnalyticsResult {
    pub locations: (Vec<analytics::DayValue>, Option<analytics::LogNormalFit>),
    pub travel: (Vec<analytics::DayValue>, Option<analytics::LogNormalFit>),
    pub purposes: analytics::HourlyPurpose,
    pub transitions: Vec<analytics::TransitionMatrix>,
    pub time_use: analytics::TimeUse,
    pub groups: Vec<analytics::GroupProfile>,
    pub hists: Vec<analytics::ArrivalDurationHist>,
    pub od: BTreeMap<(String, String, crate::model::TripPurpose), u64>,
}

pub fn analytics_stage(cfg: &PipelineConfig, labeled: &Labeled, inferred: &Inferred, groups: &BTreeMap<String, usize>) -> Result<AnalyticsResult> {
    let clock = cfg.clock();
    let chains = inferred.all_chains();
    let homes = labeled.homes();
    let commuters = labeled.commuters();
    let transitions = cfg
        .analytics
        .transitions
        .iter()
        .map(|[a, b]| analytics::transition_matrix(&chains, parse_hhmm(a)?, parse_hhmm(b)?, &clock))
        .collect::<Result<_>>()?;
    Ok(AnalyticsResult {
        locations: analytics::daily_location_count(&chains),
        travel: analytics::daily_travel_distance(&chains, &homes),
        purposes: analytics::trip_purpose_fractions(&chains, &clock),
        transitions,
        time_use: analytics::time_use_summary(&chains, &commuters),
        groups: analytics::group_profiles(&chains, groups, &homes),
        hists: cfg
            .analytics
            .histogram_types
            .iter()
            .map(|&t| analytics::arrival_duration_hist(&chains, t, &commuters, &clock))
            .collect(),
        od: analytics::od_flows(&chains),
    })
}

/// Writes one stage directory and records a hash for every file.
pub struct ArtifactDir {
    dir: PathBuf,
    outputs: BTreeMap<String, String>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl ArtifactDir {
    pub fn create(root: &Path, stage: &str) -> Result<Self> {
        let dir = root.join(stage);
        std::fs::create_dir_all(&dir)?;
        Ok(Self {
            dir,
            outputs: BTreeMap::new(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    pub fn write<F>(&mut self, name: &str, f: F) -> Result<()>
    where
        F: FnOnce(&mut Vec<u8>) -> Result<()>,
    {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.outputs.insert(name.to_string(), sha256_hex(&buf));
        std::fs::write(self.dir.join(name), &buf)?;
        Ok(())
    }

    pub fn write_jsonl<T: Serialize>(&mut self, name: &str, rows: impl IntoIterator<Item = T>) -> Result<()> {
        self.write(name, |w| {
            for r in rows {
                serde_json::to_writer(&mut *w, &r)?;
                w.push(b'\n');
            }
            Ok(())
        })
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        self.write(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value)?;
            w.push(b'\n');
            Ok(())
        })
    }

    /// Writes the resolved config and the manifest.
    pub fn finish(mut self, stage: &str, cfg: &PipelineConfig, inputs: &[&Path]) -> Result<PathBuf> {
        let mut input_hashes = BTreeMap::new();
        for p in inputs {
            input_hashes.insert(p.display().to_string(), sha256_hex(&std::fs::read(p)?));
        }
        let config = cfg.to_json_pretty()? + "\n";
        std::fs::write(self.dir.join("resolved_config.json"), &config)?;
        let manifest = json!({
            "stage": stage,
            "config_sha256": sha256_hex(config.as_bytes()),
            "inputs": input_hashes,
            "outputs": std::mem::take(&mut self.outputs),
        });
        std::fs::write(self.dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(self.dir)
    }
}

fn csv_rows<W: Write>(w: W, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(header)?;
    for r in rows {
        wr.write_record(&r)?;
    }
    wr.flush()?;
    Ok(())
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// Runs `stage` and everything it depends on, writing artifacts of the
/// requested stage (or of every stage for [`Stage::All`]). Returns a JSON
/// summary.
pub fn run(stage: Stage, cfg: &PipelineConfig) -> Result<Value> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| run_inner(stage, cfg))
}

fn run_inner(stage: Stage, cfg: &PipelineConfig) -> Result<Value> {
    let root = &cfg.output_dir;
    if stage == Stage::Synth {
        return write_synth(cfg, &root.join("synth"));
    }
    let all = stage == Stage::All;
    let wants = |s: Stage| all || stage == s;
    let ins = input_paths(cfg);
    let mut summary = serde_json::Map::new();

    let inputs = load_inputs(cfg)?;
    let ing = ingest_stage(cfg, &inputs)?;
    if wants(Stage::Ingest) {
        let mut a = ArtifactDir::create(root, "ingest")?;
        a.write_json("summary.json", &ing.stats)?;
        a.write("kept_days.csv", |w| {
            csv_rows(
                w,
                &["user_id", "kept_days", "dropped_days", "records"],
                ing.traces
                    .iter()
                    .map(|(u, t)| vec![u.clone(), t.kept_days.len().to_string(), t.dropped_days.to_string(), t.records.len().to_string()]),
            )
        })?;
        a.finish("ingest", cfg, &ins)?;
        summary.insert("ingest".into(), serde_json::to_value(&ing.stats)?);
    }
    if stage == Stage::Ingest {
        return Ok(Value::Object(summary));
    }
    if stage == Stage::Profiles {
        let p = profiles_stage(cfg, &inputs)?;
        write_profiles(cfg, &p, &ins, &mut summary)?;
        return Ok(Value::Object(summary));
    }

    let detected = stays_stage(cfg, &ing)?;
    if wants(Stage::Stays) {
        let mut a = ArtifactDir::create(root, "stays")?;
        a.write_jsonl("stays.jsonl", detected.values().flat_map(|s| s.stays.iter()))?;
        a.finish("stays", cfg, &ins)?;
        let n: usize = detected.values().map(|s| s.stays.iter().filter(|s| s.is_stay()).count()).sum();
        summary.insert("stays".into(), json!({"users": detected.len(), "stays": n}));
    }
    if stage == Stage::Stays {
        return Ok(Value::Object(summary));
    }

    let labeled = label_stage(cfg, &ing, &detected);
    if wants(Stage::Label) {
        let mut a = ArtifactDir::create(root, "label")?;
        a.write_jsonl("user_profiles.jsonl", labeled.profiles.values())?;
        a.write_jsonl("labeled_stays.jsonl", labeled.stays.values().flatten())?;
        a.write_jsonl("chains.jsonl", labeled.chains.values().flatten())?;
        a.finish("label", cfg, &ins)?;
        summary.insert(
            "label".into(),
            json!({"users": labeled.profiles.len(), "residents": labeled.chains.len(), "commuters": labeled.work_stations.len()}),
        );
    }
    if stage == Stage::Label {
        return Ok(Value::Object(summary));
    }

    let profiles = profiles_stage(cfg, &inputs)?;
    if all {
        write_profiles(cfg, &profiles, &ins, &mut summary)?;
    }
    let inferred = infer_stage(cfg, &inputs, &ing, &labeled, &profiles)?;
    if wants(Stage::Infer) {
        let mut a = ArtifactDir::create(root, "infer")?;
        a.write_jsonl("inferred_chains.jsonl", inferred.chains.values().flatten())?;
        a.write("professions.csv", |w| {
            csv_rows(w, &["user_id", "profession"], inferred.professions.iter().map(|(u, p)| vec![u.clone(), p.to_string()]))
        })?;
        a.finish("infer", cfg, &ins)?;
        let mut counts = BTreeMap::<String, usize>::new();
        for c in inferred.chains.values().flatten() {
            for s in c.stays_only() {
                *counts.entry(s.activity_type().to_string()).or_default() += 1;
            }
        }
        summary.insert("infer".into(), json!({"stays_by_activity": counts}));
    }
    if stage == Stage::Infer {
        return Ok(Value::Object(summary));
    }

    if wants(Stage::Validate) {
        let report = validate_stage(cfg, &inferred, &profiles);
        let report = match report {
            Err(Error::ValidationFailed(msg)) => {
                summary.insert("validate".into(), json!({ "failed": msg }));
                return Err(Error::ValidationFailed(msg));
            }
            r => r?,
        };
        let mut a = ArtifactDir::create(root, "validate")?;
        a.write_json("validation_report.json", &report)?;
        a.write("series.csv", |w| {
            let mut rows = Vec::new();
            for t in &report.types {
                for k in 0..t.inferred.len().max(t.reference.len()) {
                    let secs = validate::WINDOW_START_SECS + k as i64 * validate::SLOT_SECS;
                    rows.push(vec![
                        t.activity.to_string(),
                        format!("{:02}:{:02}", secs / 3600, secs % 3600 / 60),
                        opt(t.inferred.get(k).copied()),
                        opt(t.reference.get(k).copied()),
                    ]);
                }
            }
            csv_rows(w, &["activity", "slot_start", "inferred", "reference"], rows)
        })?;
        a.write("mape_per_hour.csv", |w| {
            let mut rows = Vec::new();
            for t in &report.types {
                for (h, m) in t.mape_per_hour.iter().enumerate() {
                    rows.push(vec![t.activity.to_string(), format!("{:02}:00", 7 + h), opt(*m)]);
                }
            }
            csv_rows(w, &["activity", "hour", "mape"], rows)
        })?;
        if let Some(b) = &report.bootstrap {
            a.write("bootstrap_ci.csv", |w| {
                let mut rows = Vec::new();
                for c in b {
                    for (k, width) in c.widths.iter().enumerate() {
                        rows.push(vec![c.activity.to_string(), k.to_string(), width.to_string()]);
                    }
                }
                csv_rows(w, &["activity", "slot", "ci_width"], rows)
            })?;
        }
        a.finish("validate", cfg, &ins)?;
        summary.insert(
            "validate".into(),
            json!({
                "accuracy": report.types.iter().map(|t| (t.activity.to_string(), t.accuracy)).collect::<BTreeMap<_, _>>(),
                "bootstrap_mean_width": report.bootstrap.as_ref().map(|b| b.iter().map(|c| (c.activity.to_string(), c.mean())).collect::<BTreeMap<_, _>>()),
            }),
        );
    }
    if stage == Stage::Validate {
        return Ok(Value::Object(summary));
    }

    if wants(Stage::Sweep) {
        let cells = sweep_stage(cfg, &inferred)?;
        let mut a = ArtifactDir::create(root, "sweep")?;
        a.write("sweep.csv", |w| {
            csv_rows(
                w,
                &["alpha", "beta", "k", "coherence", "error"],
                cells
                    .iter()
                    .map(|c| vec![c.alpha.clone(), c.beta.clone(), c.k.to_string(), opt(c.coherence), c.error.clone().unwrap_or_default()]),
            )
        })?;
        a.finish("sweep", cfg, &ins)?;
        let best = cells
            .iter()
            .filter_map(|c| c.coherence.map(|v| (v, c)))
            .max_by(|a, b| a.0.total_cmp(&b.0))
            .map(|(v, c)| json!({"alpha": c.alpha, "beta": c.beta, "k": c.k, "coherence": v}));
        summary.insert("sweep".into(), json!({"cells": cells.len(), "best": best}));
    }
    if stage == Stage::Sweep {
        return Ok(Value::Object(summary));
    }

    let fit = lda_stage(cfg, &inferred)?;
    if wants(Stage::Lda) {
        let mut a = ArtifactDir::create(root, "lda")?;
        a.write("model.json", |w| fit.model.write_json(&mut *w))?;
        a.write("groups.csv", |w| {
            csv_rows(w, &["user_id", "group"], fit.user_groups.iter().map(|(u, g)| vec![u.clone(), g.to_string()]))
        })?;
        a.write("document_groups.csv", |w| {
            csv_rows(
                w,
                &["document", "group"],
                fit.model.documents.iter().zip(lda::assign_groups(&fit.model)).map(|(d, g)| vec![d.clone(), g.to_string()]),
            )
        })?;
        a.write("topics.csv", |w| {
            let mut header = vec!["topic".to_string()];
            header.extend(fit.model.vocabulary.iter().cloned());
            header.push("coherence".into());
            let h: Vec<&str> = header.iter().map(String::as_str).collect();
            csv_rows(
                w,
                &h,
                fit.model.phi.iter().enumerate().map(|(k, row)| {
                    let mut r = vec![k.to_string()];
                    r.extend(row.iter().map(|x| x.to_string()));
                    r.push(opt(fit.coherence.per_topic.get(k).copied()));
                    r
                }),
            )
        })?;
        a.finish("lda", cfg, &ins)?;
        summary.insert("lda".into(), json!({"documents": fit.docs.len(), "k": fit.model.k, "coherence": fit.coherence.mean}));
    }
    if stage == Stage::Lda {
        return Ok(Value::Object(summary));
    }

    let res = analytics_stage(cfg, &labeled, &inferred, &fit.user_groups)?;
    let mut a = ArtifactDir::create(root, "analytics")?;
    a.write("location_counts.csv", |w| analytics::write_day_values(w, "locations", &res.locations.0))?;
    a.write("travel_distance.csv", |w| analytics::write_day_values(w, "km", &res.travel.0))?;
    a.write("trip_purpose_hourly.csv", |w| analytics::write_hourly_purpose(w, &res.purposes))?;
    for (m, [t1, t2]) in res.transitions.iter().zip(&cfg.analytics.transitions) {
        let name = format!("transitions_{}_{}.csv", t1.replace(':', ""), t2.replace(':', ""));
        a.write(&name, |w| analytics::write_transitions(w, m))?;
    }
    a.write("time_use.csv", |w| analytics::write_time_use(w, &res.time_use))?;
    a.write("group_profiles.csv", |w| analytics::write_group_profiles(w, &res.groups))?;
    for h in &res.hists {
        a.write(&format!("arrival_duration_{}.csv", h.activity.name()), |w| analytics::write_hist(w, h))?;
    }
    a.write("od_flows.csv", |w| analytics::write_od_flows(w, &res.od))?;
    a.write_json("lognormal_fits.json", &json!({"locations": res.locations.1, "travel_km": res.travel.1}))?;
    a.finish("analytics", cfg, &ins)?;
    summary.insert(
        "analytics".into(),
        json!({"locations": res.locations.1, "travel_km": res.travel.1, "groups": res.groups.len()}),
    );
    Ok(Value::Object(summary))
}

fn write_profiles(cfg: &PipelineConfig, p: &Profiles, ins: &[&Path], summary: &mut serde_json::Map<String, Value>) -> Result<()> {
    let mut a = ArtifactDir::create(&cfg.output_dir, "profiles")?;
    a.write("temporal_profiles.csv", |w| p.profile.write_csv(&mut *w))?;
    a.finish("profiles", cfg, ins)?;
    summary.insert(
        "profiles".into(),
        json!({
            "checkins": p.checkins.len(),
            "visitors_removed": p.visitors_removed,
            "empty_types": p.empty_types.iter().map(|t| t.to_string()).collect::<Vec<_>>(),
        }),
    );
    Ok(())
}

/// Generates a synthetic world and writes it in the ingest formats.
pub fn write_synth(cfg: &PipelineConfig, dir: &Path) -> Result<Value> {
    let out = synth::generate(&cfg.synth)?;
    let parent = dir.parent().unwrap_or(Path::new("."));
    let name = dir.file_name().and_then(|s| s.to_str()).unwrap_or("synth");
    let mut a = ArtifactDir::create(parent, name)?;
    a.write("stations.csv", |w| synth::write_stations(&mut *w, &out.world.stations))?;
    a.write("pois.csv", |w| synth::write_pois(&mut *w, &out.world.pois))?;
    a.write("xdr.csv", |w| synth::write_xdr(&mut *w, &out.records))?;
    a.write("checkins.csv", |w| synth::write_checkins(&mut *w, &out.checkins))?;
    a.write("truth.jsonl", |w| synth::write_truth(&mut *w, &out.truth))?;
    let dir = a.finish("synth", cfg, &[])?;
    Ok(json!({"synth": {
        "dir": dir.display().to_string(),
        "agents": out.truth.len(),
        "stations": out.world.stations.len(),
        "pois": out.world.pois.len(),
        "records": out.records.len(),
        "checkins": out.checkins.len(),
    }}))
}

/// A config whose inputs point at the files [`write_synth`] produces.
pub fn config_for_synth_dir(base: &PipelineConfig, dir: &Path) -> PipelineConfig {
    let mut cfg = base.clone();
    cfg.inputs.xdr = dir.join("xdr.csv");
    cfg.inputs.stations = dir.join("stations.csv");
    cfg.inputs.pois = dir.join("pois.csv");
    cfg.inputs.checkins = dir.join("checkins.csv");
    cfg.utc_offset_secs = base.synth.utc_offset_secs;
    cfg
}
