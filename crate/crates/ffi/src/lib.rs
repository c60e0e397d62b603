//! C interface to `corrwatch`.
//!
//! Every function returns a [`CwStatus`]. On failure a description of the
//! error is kept per thread and can be read with [`cw_last_error_message`].
//! Handles are opaque; each `*_new`/`*_load` call must be paired with the
//! matching `*_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fs::File;
use std::io::BufReader;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use corrwatch::corr::CorrelationMatrix;
use corrwatch::harness::{GroupSize, Pipeline, PipelineParams};
use corrwatch::ingest::{load_csv, load_labels, CsvSchema, Dataset, LabelRegistry};
use corrwatch::localize::{localize, Algorithm};
use corrwatch::spectral::detect;
use corrwatch::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CwStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Numerical = 3,
    Io = 4,
    Panic = 5,
    /// An output buffer is too small for the result.
    BufferTooSmall = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CwAlgorithm {
    LowRank = 0,
    Las = 1,
    Igp = 2,
}

impl From<CwAlgorithm> for Algorithm {
    fn from(a: CwAlgorithm) -> Self {
        match a {
            CwAlgorithm::LowRank => Algorithm::LowRank,
            CwAlgorithm::Las => Algorithm::Las,
            CwAlgorithm::Igp => Algorithm::Igp,
        }
    }
}

/// Pipeline settings. `k = 0` selects `round(√N)`.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct CwParams {
    pub tau_av: usize,
    pub tau_corr: usize,
    pub k: usize,
    pub algorithm: CwAlgorithm,
    pub restarts: usize,
    pub seed: u64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct CwDetection {
    pub detected: bool,
    pub margin: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub noise_scale: f64,
    pub top_eigenvalue: f64,
}

pub struct CwDataset(Dataset);

pub struct CwLabels(LabelRegistry);

pub struct CwCorrelation(CorrelationMatrix);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> CwStatus {
    let root = err.root();
    if root.is_numerical() {
        CwStatus::Numerical
    } else if root.is_io() {
        CwStatus::Io
    } else {
        CwStatus::InvalidArgument
    }
}

enum Failure {
    Null(&'static str),
    Lib(Error),
    Status(CwStatus, String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CwStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CwStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer passed as `{what}`"));
            CwStatus::NullPointer
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Ok(Err(Failure::Status(s, msg))) => {
            set_error(msg);
            s
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            CwStatus::Panic
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn text<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Status(CwStatus::InvalidArgument, format!("`{what}` is not UTF-8")))
}

fn check_out<T>(p: *mut T, what: &'static str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure::Null(what))
    } else {
        Ok(())
    }
}

fn open(path: &str) -> Result<BufReader<File>, Failure> {
    Ok(BufReader::new(File::open(path).map_err(Error::from)?))
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn cw_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cw_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Default pipeline settings.
#[no_mangle]
pub extern "C" fn cw_params_default() -> CwParams {
    let p = PipelineParams::default();
    CwParams {
        tau_av: p.tau_av,
        tau_corr: p.tau_corr,
        k: 0,
        algorithm: CwAlgorithm::LowRank,
        restarts: p.restarts,
        seed: p.seed,
    }
}

impl From<&CwParams> for PipelineParams {
    fn from(p: &CwParams) -> Self {
        PipelineParams {
            tau_av: p.tau_av,
            tau_corr: p.tau_corr,
            group_size: if p.k == 0 {
                GroupSize::SqrtN
            } else {
                GroupSize::Fixed(p.k)
            },
            algorithm: p.algorithm.into(),
            restarts: p.restarts,
            seed: p.seed,
        }
    }
}

/// Load a data CSV with comma delimiter and inferred interval.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cw_dataset_load_csv(
    path: *const c_char,
    out: *mut *mut CwDataset,
) -> CwStatus {
    guard(|| {
        check_out(out, "out")?;
        let path = text(path, "path")?;
        let ds = load_csv(open(path)?, &CsvSchema::default())?;
        *out = Box::into_raw(Box::new(CwDataset(ds)));
        Ok(())
    })
}

/// Build a dataset from `n_sensors` series of `n_steps` samples each, stored
/// sensor-major in `values`. NaN marks a missing sample.
///
/// # Safety
/// `ids` must hold `n_sensors` NUL-terminated strings and `values`
/// `n_sensors * n_steps` doubles.
#[no_mangle]
pub unsafe extern "C" fn cw_dataset_from_values(
    ids: *const *const c_char,
    values: *const f64,
    n_sensors: usize,
    n_steps: usize,
    out: *mut *mut CwDataset,
) -> CwStatus {
    guard(|| {
        check_out(out, "out")?;
        if ids.is_null() {
            return Err(Failure::Null("ids"));
        }
        if values.is_null() {
            return Err(Failure::Null("values"));
        }
        let total = n_sensors.checked_mul(n_steps).ok_or_else(|| {
            Failure::Status(CwStatus::InvalidArgument, "dataset size overflows".into())
        })?;
        let values = std::slice::from_raw_parts(values, total);
        let ids = std::slice::from_raw_parts(ids, n_sensors);
        let sensors = ids
            .iter()
            .map(|&p| text(p, "ids[i]").map(str::to_owned))
            .collect::<Result<Vec<_>, _>>()?;
        let samples = if n_steps == 0 {
            vec![Vec::new(); n_sensors]
        } else {
            values.chunks(n_steps).map(<[f64]>::to_vec).collect()
        };
        let ds = Dataset::from_series(sensors, samples)?;
        *out = Box::into_raw(Box::new(CwDataset(ds)));
        Ok(())
    })
}

/// # Safety
/// `ds` must be a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn cw_dataset_n_sensors(ds: *const CwDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.0.n_sensors())
}

/// # Safety
/// `ds` must be a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn cw_dataset_len(ds: *const CwDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.0.len())
}

/// # Safety
/// `ds` must come from this library and not be used afterwards. Null is
/// ignored.
#[no_mangle]
pub unsafe extern "C" fn cw_dataset_free(ds: *mut CwDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Empty label registry.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cw_labels_new(out: *mut *mut CwLabels) -> CwStatus {
    guard(|| {
        check_out(out, "out")?;
        *out = Box::into_raw(Box::new(CwLabels(LabelRegistry::new())));
        Ok(())
    })
}

/// Load a labels CSV (`sensor_id,tag,tag,...` per line).
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cw_labels_load_csv(
    path: *const c_char,
    out: *mut *mut CwLabels,
) -> CwStatus {
    guard(|| {
        check_out(out, "out")?;
        let reg = load_labels(open(text(path, "path")?)?)?;
        *out = Box::into_raw(Box::new(CwLabels(reg)));
        Ok(())
    })
}

/// Attach `n_tags` tags to sensor `id`.
///
/// # Safety
/// `labels` must be a live handle, `id` a NUL-terminated string and `tags`
/// an array of `n_tags` NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn cw_labels_insert(
    labels: *mut CwLabels,
    id: *const c_char,
    tags: *const *const c_char,
    n_tags: usize,
) -> CwStatus {
    guard(|| {
        let labels = labels.as_mut().ok_or(Failure::Null("labels"))?;
        let id = text(id, "id")?;
        let tags = if n_tags == 0 {
            Vec::new()
        } else {
            if tags.is_null() {
                return Err(Failure::Null("tags"));
            }
            std::slice::from_raw_parts(tags, n_tags)
                .iter()
                .map(|&t| text(t, "tags[i]").map(str::to_owned))
                .collect::<Result<Vec<_>, _>>()?
        };
        labels.0.insert(id, tags)?;
        Ok(())
    })
}

/// # Safety
/// `labels` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cw_labels_free(labels: *mut CwLabels) {
    if !labels.is_null() {
        drop(Box::from_raw(labels));
    }
}

/// Correlation matrix of the detrended window ending at `t_end`.
///
/// # Safety
/// `ds` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cw_correlation(
    ds: *const CwDataset,
    tau_av: usize,
    tau_corr: usize,
    t_end: usize,
    out: *mut *mut CwCorrelation,
) -> CwStatus {
    guard(|| {
        check_out(out, "out")?;
        let ds = &borrow(ds, "ds")?.0;
        let labels = LabelRegistry::new();
        let params = PipelineParams {
            tau_av,
            tau_corr,
            ..PipelineParams::default()
        };
        let cm = Pipeline::new(ds, &labels, params)?.correlation(t_end)?;
        *out = Box::into_raw(Box::new(CwCorrelation(cm)));
        Ok(())
    })
}

/// Number of sensors kept in the matrix.
///
/// # Safety
/// `cm` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn cw_correlation_size(cm: *const CwCorrelation) -> usize {
    cm.as_ref().map_or(0, |c| c.0.n())
}

/// Copy the matrix row-major into `buf`, which must hold `size * size`
/// doubles, and the dataset index of each row into `positions` (may be null).
///
/// # Safety
/// `buf` must hold `len` doubles and `positions` `size` entries if non-null.
#[no_mangle]
pub unsafe extern "C" fn cw_correlation_copy(
    cm: *const CwCorrelation,
    buf: *mut f64,
    len: usize,
    positions: *mut usize,
) -> CwStatus {
    guard(|| {
        let cm = &borrow(cm, "cm")?.0;
        check_out(buf, "buf")?;
        let n = cm.n();
        if len < n * n {
            return Err(Failure::Status(
                CwStatus::BufferTooSmall,
                format!("buffer holds {len} values, need {}", n * n),
            ));
        }
        let out = std::slice::from_raw_parts_mut(buf, n * n);
        let m = cm.matrix();
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = m[(i, j)];
            }
        }
        if !positions.is_null() {
            std::slice::from_raw_parts_mut(positions, n).copy_from_slice(cm.positions());
        }
        Ok(())
    })
}

/// # Safety
/// `cm` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cw_correlation_free(cm: *mut CwCorrelation) {
    if !cm.is_null() {
        drop(Box::from_raw(cm));
    }
}

/// Spectral-gap detection on a correlation matrix.
///
/// # Safety
/// `cm` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cw_detect(cm: *const CwCorrelation, out: *mut CwDetection) -> CwStatus {
    guard(|| {
        check_out(out, "out")?;
        let report = detect(borrow(cm, "cm")?.0.matrix())?;
        *out = CwDetection {
            detected: report.detected,
            margin: report.margin,
            delta1: report.delta1,
            delta2: report.delta2,
            noise_scale: report.noise_scale,
            top_eigenvalue: report.eigenvalues[0],
        };
        Ok(())
    })
}

/// Localize a group of `k` sensors (`k = 0` for `round(√N)`).
///
/// Dataset indices of the selection are written to `selected`, which must
/// have room for `capacity` entries; `out_len` receives the group size
/// and `out_score` (may be null) the objective value.
///
/// # Safety
/// Pointers must be valid for the stated sizes.
#[no_mangle]
pub unsafe extern "C" fn cw_localize(
    cm: *const CwCorrelation,
    algorithm: CwAlgorithm,
    k: usize,
    restarts: usize,
    seed: u64,
    selected: *mut usize,
    capacity: usize,
    out_len: *mut usize,
    out_score: *mut f64,
) -> CwStatus {
    guard(|| {
        let cm = &borrow(cm, "cm")?.0;
        check_out(out_len, "out_len")?;
        let k = if k == 0 {
            corrwatch::localize::default_group_size(cm.n())
        } else {
            k
        }
        .min(cm.n());
        let result = localize(cm.matrix(), algorithm.into(), k, restarts, seed)?;
        *out_len = result.selected.len();
        if capacity < result.selected.len() {
            return Err(Failure::Status(
                CwStatus::BufferTooSmall,
                format!("capacity {capacity}, need {}", result.selected.len()),
            ));
        }
        check_out(selected, "selected")?;
        let dst = std::slice::from_raw_parts_mut(selected, result.selected.len());
        for (d, &i) in dst.iter_mut().zip(&result.selected) {
            *d = cm.positions()[i];
        }
        if !out_score.is_null() {
            *out_score = result.score;
        }
        Ok(())
    })
}

/// Full pipeline on the window ending at `t_end`, as a JSON record. Free the
/// string with [`cw_string_free`].
///
/// # Safety
/// `ds` and `params` must be valid; `labels` may be null.
#[no_mangle]
pub unsafe extern "C" fn cw_run_json(
    ds: *const CwDataset,
    labels: *const CwLabels,
    params: *const CwParams,
    t_end: usize,
    out: *mut *mut c_char,
) -> CwStatus {
    guard(|| {
        check_out(out, "out")?;
        let ds = &borrow(ds, "ds")?.0;
        let params = PipelineParams::from(borrow(params, "params")?);
        let empty = LabelRegistry::new();
        let labels = labels.as_ref().map_or(&empty, |l| &l.0);
        let record = Pipeline::new(ds, labels, params)?.run_window(t_end)?;
        let json = serde_json::to_string(&record)
            .map_err(|e| Failure::Status(CwStatus::InvalidArgument, e.to_string()))?;
        *out = CString::new(json).expect("JSON has no NUL").into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cw_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
