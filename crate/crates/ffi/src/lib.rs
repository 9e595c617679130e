//! C ABI over the reconstruction library.
//!
//! Every fallible call returns an [`ArStatus`]; on failure the message is
//! available from [`ar_last_error_message`] on the same thread. Handles are
//! opaque and released with their matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fs::File;
use std::io::BufReader;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use actrecon::bayes::{self, TemporalProfile, N_INFERABLE, SLOTS};
use actrecon::config::PipelineConfig;
use actrecon::ingest::{self, StationIndex};
use actrecon::model::{ActivityType, BaseStation, Projection};
use actrecon::pipeline::{self, Stage};
use actrecon::Error;

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Config = 5,
    MissingInput = 6,
    EmptyInput = 7,
    Numeric = 8,
    ValidationFailed = 9,
    BufferTooSmall = 10,
    Panic = 11,
}

impl From<&Error> for ArStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Io(_) => ArStatus::Io,
            Error::Csv(_) | Error::Json(_) | Error::TooManyMalformed { .. } | Error::UnknownCategory(_) | Error::UnknownActivityType(_) => ArStatus::Parse,
            Error::Config(_) => ArStatus::Config,
            Error::MissingInput(_) => ArStatus::MissingInput,
            Error::EmptyIndex | Error::EmptyInput(_) | Error::NoActivity(_) | Error::TooFewUsers { .. } => ArStatus::EmptyInput,
            Error::NotNormalized(_) | Error::LengthMismatch(..) => ArStatus::Numeric,
            Error::ValidationFailed(_) => ArStatus::ValidationFailed,
            Error::CoordinateOutOfRange { .. } | Error::InvalidParameter(_) => ArStatus::InvalidArgument,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: ArStatus, msg: impl Into<String>) -> ArStatus {
    set_error(msg.into());
    status
}

fn guard<F: FnOnce() -> Result<(), ArStatus>>(f: F) -> ArStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ArStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => fail(ArStatus::Panic, "internal panic"),
    }
}

fn lib_err(e: Error) -> ArStatus {
    fail(ArStatus::from(&e), e.to_string())
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, ArStatus> {
    if p.is_null() {
        return Err(fail(ArStatus::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(ArStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

fn out_arg<T>(p: *mut T, what: &str) -> Result<(), ArStatus> {
    if p.is_null() {
        Err(fail(ArStatus::NullArgument, format!("{what} is null")))
    } else {
        Ok(())
    }
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ar_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ar_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Number of activity types; indices run from 0 to this value minus one.
#[no_mangle]
pub extern "C" fn ar_activity_count() -> usize {
    ActivityType::ALL.len()
}

/// Static name of activity type `index`, or null when out of range.
#[no_mangle]
pub extern "C" fn ar_activity_name(index: usize) -> *const c_char {
    const NAMES: [&str; 9] = [
        "Shopping\0",
        "DailyLife\0",
        "Transport\0",
        "DrinkEat\0",
        "LeisureSport\0",
        "Education\0",
        "Home\0",
        "Work\0",
        "Other\0",
    ];
    match ActivityType::from_index(index) {
        Some(t) => NAMES[t.index()].as_ptr().cast(),
        None => ptr::null(),
    }
}

/// Opaque nearest-station index.
pub struct ArStationIndex {
    inner: StationIndex,
}

fn boxed_index(stations: &[BaseStation], out: *mut *mut ArStationIndex) -> Result<(), ArStatus> {
    let projection = Projection::centroid_of(stations.iter().map(|s| (s.lon, s.lat))).map_err(lib_err)?;
    let inner = StationIndex::build(stations, projection).map_err(lib_err)?;
    unsafe { *out = Box::into_raw(Box::new(ArStationIndex { inner })) };
    Ok(())
}

/// Builds an index from a `station_id,lon,lat` CSV file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ar_station_index_from_csv(path: *const c_char, out: *mut *mut ArStationIndex) -> ArStatus {
    guard(|| {
        out_arg(out, "out")?;
        let path = str_arg(path, "path")?;
        let file = File::open(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                lib_err(Error::MissingInput(Path::new(path).to_path_buf()))
            } else {
                lib_err(e.into())
            }
        })?;
        let stations = ingest::parse_stations(BufReader::new(file), path).map_err(lib_err)?;
        boxed_index(&stations, out)
    })
}

/// Builds an index from `n` parallel arrays of ids and WGS84 coordinates.
///
/// # Safety
/// `ids`, `lons` and `lats` must each point to `n` valid elements and every
/// id must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ar_station_index_new(
    ids: *const *const c_char,
    lons: *const f64,
    lats: *const f64,
    n: usize,
    out: *mut *mut ArStationIndex,
) -> ArStatus {
    guard(|| {
        out_arg(out, "out")?;
        if n > 0 && (ids.is_null() || lons.is_null() || lats.is_null()) {
            return Err(fail(ArStatus::NullArgument, "station arrays are null"));
        }
        let mut stations = Vec::with_capacity(n);
        for i in 0..n {
            stations.push(BaseStation {
                station_id: str_arg(*ids.add(i), "station id")?.to_string(),
                lon: *lons.add(i),
                lat: *lats.add(i),
            });
        }
        boxed_index(&stations, out)
    })
}

/// Number of stations in the index; 0 for null.
///
/// # Safety
/// `index` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ar_station_index_len(index: *const ArStationIndex) -> usize {
    index.as_ref().map_or(0, |i| i.inner.len())
}

/// Nearest station to a WGS84 point. Writes the NUL-terminated id into
/// `id_buf` (capacity `id_len` bytes) and the distance in meters into
/// `distance_m` when non-null.
///
/// # Safety
/// `index` must be a live handle and `id_buf` must hold `id_len` bytes.
#[no_mangle]
pub unsafe extern "C" fn ar_station_index_nearest(
    index: *const ArStationIndex,
    lon: f64,
    lat: f64,
    id_buf: *mut c_char,
    id_len: usize,
    distance_m: *mut f64,
) -> ArStatus {
    guard(|| {
        let idx = index.as_ref().ok_or_else(|| fail(ArStatus::NullArgument, "index is null"))?;
        out_arg(id_buf, "id_buf")?;
        let p = idx.inner.projection().project(lon, lat).map_err(lib_err)?;
        let near = idx.inner.nearest(p).map_err(lib_err)?;
        let id = near.station.station_id.as_bytes();
        if id.len() + 1 > id_len {
            return Err(fail(ArStatus::BufferTooSmall, format!("station id needs {} bytes", id.len() + 1)));
        }
        ptr::copy_nonoverlapping(id.as_ptr(), id_buf.cast::<u8>(), id.len());
        *id_buf.add(id.len()) = 0;
        if !distance_m.is_null() {
            *distance_m = p.distance(&near.point);
        }
        Ok(())
    })
}

/// # Safety
/// `index` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ar_station_index_free(index: *mut ArStationIndex) {
    if !index.is_null() {
        drop(Box::from_raw(index));
    }
}

/// Opaque per-type temporal profile over 144 ten-minute slots.
pub struct ArProfile {
    inner: TemporalProfile,
}

/// Loads a profile written by the `profiles` stage.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ar_profile_from_csv(path: *const c_char, out: *mut *mut ArProfile) -> ArStatus {
    guard(|| {
        out_arg(out, "out")?;
        let path = str_arg(path, "path")?;
        let file = File::open(path).map_err(|_| lib_err(Error::MissingInput(Path::new(path).to_path_buf())))?;
        let inner = TemporalProfile::read_csv(BufReader::new(file)).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(ArProfile { inner }));
        Ok(())
    })
}

/// Builds a profile from `7 * 144` row-major probabilities, one row per
/// inferable type: Shopping, DailyLife, Transport, DrinkEat, LeisureSport,
/// Education, Other.
///
/// # Safety
/// `probs` must point to `7 * 144` values and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ar_profile_new(probs: *const f64, out: *mut *mut ArProfile) -> ArStatus {
    guard(|| {
        out_arg(out, "out")?;
        if probs.is_null() {
            return Err(fail(ArStatus::NullArgument, "probs is null"));
        }
        let flat = std::slice::from_raw_parts(probs, N_INFERABLE * SLOTS);
        let rows = flat
            .chunks_exact(SLOTS)
            .map(|c| {
                let mut r = [0.0; SLOTS];
                r.copy_from_slice(c);
                r
            })
            .collect();
        let inner = TemporalProfile::from_rows(rows).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(ArProfile { inner }));
        Ok(())
    })
}

/// Posterior over the 7 inferable types for a stay arriving in `slot`
/// (0..144) whose candidate POIs number `counts[i]` of inferable type `i`,
/// in the order of [`ar_profile_new`].
/// Writes 7 probabilities to `out_probs` and the argmax activity index
/// (as used by [`ar_activity_name`]) to `out_argmax` when non-null.
///
/// # Safety
/// `profile` must be live, `counts` must hold 7 values and `out_probs`
/// must have room for 7.
#[no_mangle]
pub unsafe extern "C" fn ar_profile_posterior(
    profile: *const ArProfile,
    counts: *const u32,
    slot: usize,
    out_probs: *mut f64,
    out_argmax: *mut usize,
) -> ArStatus {
    guard(|| {
        let prof = profile.as_ref().ok_or_else(|| fail(ArStatus::NullArgument, "profile is null"))?;
        if counts.is_null() {
            return Err(fail(ArStatus::NullArgument, "counts is null"));
        }
        out_arg(out_probs, "out_probs")?;
        let counts = std::slice::from_raw_parts(counts, N_INFERABLE);
        let bag = ActivityType::INFERABLE
            .iter()
            .zip(counts)
            .flat_map(|(&t, &n)| std::iter::repeat_n(t, n as usize));
        let post = bayes::posterior(&bayes::mixture_of(bag), slot, &prof.inner).map_err(lib_err)?;
        ptr::copy_nonoverlapping(post.probs.as_ptr(), out_probs, N_INFERABLE);
        if !out_argmax.is_null() {
            *out_argmax = post.argmax.index();
        }
        Ok(())
    })
}

/// # Safety
/// `profile` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ar_profile_free(profile: *mut ArProfile) {
    if !profile.is_null() {
        drop(Box::from_raw(profile));
    }
}

fn parse_stage(s: &str) -> Option<Stage> {
    Some(match s {
        "synth" => Stage::Synth,
        "ingest" => Stage::Ingest,
        "stays" => Stage::Stays,
        "label" => Stage::Label,
        "profiles" => Stage::Profiles,
        "infer" => Stage::Infer,
        "validate" => Stage::Validate,
        "lda" => Stage::Lda,
        "sweep" => Stage::Sweep,
        "analytics" => Stage::Analytics,
        "all" => Stage::All,
        _ => return None,
    })
}

/// Runs a pipeline stage the way the command line does. `config_path` may
/// be null for built-in defaults; `overrides` holds `n_overrides`
/// `key=value` strings. On success `out_summary` (when non-null) receives a
/// JSON summary to release with [`ar_string_free`].
///
/// # Safety
/// String arguments must be NUL-terminated; `overrides` must point to
/// `n_overrides` strings.
#[no_mangle]
pub unsafe extern "C" fn ar_pipeline_run(
    stage: *const c_char,
    config_path: *const c_char,
    overrides: *const *const c_char,
    n_overrides: usize,
    out_summary: *mut *mut c_char,
) -> ArStatus {
    guard(|| {
        let name = str_arg(stage, "stage")?;
        let stage = parse_stage(name).ok_or_else(|| fail(ArStatus::InvalidArgument, format!("unknown stage {name:?}")))?;
        let base = if config_path.is_null() {
            PipelineConfig::default()
        } else {
            PipelineConfig::load(Path::new(str_arg(config_path, "config_path")?)).map_err(lib_err)?
        };
        if n_overrides > 0 && overrides.is_null() {
            return Err(fail(ArStatus::NullArgument, "overrides is null"));
        }
        let sets = (0..n_overrides).map(|i| str_arg(*overrides.add(i), "override")).collect::<Result<Vec<_>, _>>()?;
        let cfg = base.with_overrides(&sets).map_err(lib_err)?;
        let summary = pipeline::run(stage, &cfg).map_err(lib_err)?;
        if !out_summary.is_null() {
            *out_summary = CString::new(summary.to_string()).unwrap_or_default().into_raw();
        }
        Ok(())
    })
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must be null or a string from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ar_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
