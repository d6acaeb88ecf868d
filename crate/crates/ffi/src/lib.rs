//! C ABI over the chartlab library.
//!
//! Objects cross the boundary as opaque handles created by a `*_new`/`*_from_*`
//! function and released with the matching `*_free`. Every fallible call
//! returns a [`ChartlabStatus`]; on failure the message is available from
//! [`chartlab_last_error`] on the same thread until the next failing call.
//! Panics are caught at the boundary and reported as `CHARTLAB_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use chartlab::channel::C64;
use chartlab::charting::{fit, Chart, LabeledSplit};
use chartlab::config::ExperimentConfig;
use chartlab::evaluate::{continuity, kruskal_stress, trustworthiness};
use chartlab::features::{dissimilarity_from_covariances, DissimilarityMatrix};
use chartlab::raytrace::TraceMode;
use chartlab::{pipeline, Error};
use nalgebra::DMatrix;

/// Result of every fallible call. Values 2 to 4 match the CLI exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChartlabStatus {
    Ok = 0,
    /// Invalid configuration or arguments.
    Config = 2,
    /// Bad or inconsistent data, geometry or I/O.
    Data = 3,
    /// A numerical routine failed to converge.
    Numerical = 4,
    /// A required pointer argument was null.
    NullPointer = 5,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 6,
    /// The library panicked; the handle arguments should be considered unusable.
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChartlabMode {
    Static = 0,
    Dynamic = 1,
}

/// Experiment configuration.
pub struct ChartlabConfig(ExperimentConfig);

/// Pairwise dissimilarity matrix.
pub struct ChartlabDissimilarity(DissimilarityMatrix);

/// Fitted chart.
pub struct ChartlabChart(Chart);

/// Chart quality scores.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ChartlabMetrics {
    pub continuity: f64,
    pub trustworthiness: f64,
    pub kruskal_stress: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> ChartlabStatus {
    match e.exit_code() {
        2 => ChartlabStatus::Config,
        4 => ChartlabStatus::Numerical,
        _ => ChartlabStatus::Data,
    }
}

/// Internal failure carrying the status to report.
struct Fail(ChartlabStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(ChartlabStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, converting errors and panics into a status plus last-error message.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> ChartlabStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ChartlabStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            ChartlabStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(s: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if s.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| Fail(ChartlabStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output handle pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

fn points(xy: &[f64]) -> Vec<[f64; 2]> {
    xy.chunks_exact(2).map(|p| [p[0], p[1]]).collect()
}

/// Message of the last failing call on this thread, or null if none failed.
/// The string stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn chartlab_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn chartlab_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

// ---------------------------------------------------------------------------
// configuration

/// Built-in default configuration.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn chartlab_config_default(out: *mut *mut ChartlabConfig) -> ChartlabStatus {
    guard(|| put(out, ChartlabConfig(ExperimentConfig::default())))
}

/// Parses and validates a TOML configuration.
///
/// # Safety
/// `toml` must be a NUL-terminated string; `out` as in [`chartlab_config_default`].
#[no_mangle]
pub unsafe extern "C" fn chartlab_config_from_toml(
    toml: *const c_char,
    out: *mut *mut ChartlabConfig,
) -> ChartlabStatus {
    guard(|| {
        let text = str_arg(toml, "toml")?;
        put(out, ChartlabConfig(ExperimentConfig::from_toml(text)?))
    })
}

/// # Safety
/// `cfg` must be null or a handle from this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn chartlab_config_free(cfg: *mut ChartlabConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// # Safety
/// `cfg` must be a live configuration handle.
#[no_mangle]
pub unsafe extern "C" fn chartlab_config_set_seed(cfg: *mut ChartlabConfig, seed: u64) -> ChartlabStatus {
    guard(|| {
        cfg.as_mut().ok_or_else(|| null("cfg"))?.0.seed = seed;
        Ok(())
    })
}

/// # Safety
/// `cfg` must be a live configuration handle.
#[no_mangle]
pub unsafe extern "C" fn chartlab_config_set_mode(cfg: *mut ChartlabConfig, mode: ChartlabMode) -> ChartlabStatus {
    guard(|| {
        cfg.as_mut().ok_or_else(|| null("cfg"))?.0.mode = match mode {
            ChartlabMode::Static => TraceMode::Static,
            ChartlabMode::Dynamic => TraceMode::Dynamic,
        };
        Ok(())
    })
}

/// Sets the number of samples drawn by `chartlab_generate`.
///
/// # Safety
/// `cfg` must be a live configuration handle.
#[no_mangle]
pub unsafe extern "C" fn chartlab_config_set_samples(cfg: *mut ChartlabConfig, samples: usize) -> ChartlabStatus {
    guard(|| {
        let c = cfg.as_mut().ok_or_else(|| null("cfg"))?;
        let mut next = c.0.clone();
        next.samples = samples;
        next.validate()?;
        c.0 = next;
        Ok(())
    })
}

/// Writes the canonical dataset hash (64 hex digits plus NUL) into `buf`.
///
/// # Safety
/// `cfg` must be a live handle and `buf` must hold at least `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn chartlab_config_dataset_hash(
    cfg: *const ChartlabConfig,
    buf: *mut c_char,
    len: usize,
) -> ChartlabStatus {
    guard(|| {
        let hash = ref_arg(cfg, "cfg")?.0.dataset_hash();
        if buf.is_null() {
            return Err(null("buf"));
        }
        if len < hash.len() + 1 {
            return Err(Fail(ChartlabStatus::Config, format!("buffer needs {} bytes", hash.len() + 1)));
        }
        ptr::copy_nonoverlapping(hash.as_ptr().cast::<c_char>(), buf, hash.len());
        *buf.add(hash.len()) = 0;
        Ok(())
    })
}

// ---------------------------------------------------------------------------
// pipeline

/// Runs the `generate` stage into `out_dir`.
///
/// # Safety
/// `cfg` must be a live handle; `out_dir` a NUL-terminated path.
#[no_mangle]
pub unsafe extern "C" fn chartlab_generate(cfg: *const ChartlabConfig, out_dir: *const c_char) -> ChartlabStatus {
    guard(|| {
        let cfg = &ref_arg(cfg, "cfg")?.0;
        let dir = PathBuf::from(str_arg(out_dir, "out_dir")?);
        pipeline::cmd_generate(cfg, &dir)?;
        Ok(())
    })
}

/// Runs the full static and dynamic sweep into `out_dir`.
///
/// # Safety
/// As for [`chartlab_generate`].
#[no_mangle]
pub unsafe extern "C" fn chartlab_sweep(cfg: *const ChartlabConfig, out_dir: *const c_char) -> ChartlabStatus {
    guard(|| {
        let cfg = &ref_arg(cfg, "cfg")?.0;
        let dir = PathBuf::from(str_arg(out_dir, "out_dir")?);
        pipeline::cmd_sweep(cfg, &dir)?;
        Ok(())
    })
}

// ---------------------------------------------------------------------------
// features

/// Log-Euclidean dissimilarities of `n` Hermitian `n_r × n_r` covariances.
///
/// `re_im` holds `n · n_r · n_r` complex entries as interleaved (re, im)
/// doubles, each matrix row-major.
///
/// # Safety
/// `re_im` must point to `2 · n · n_r · n_r` readable doubles; `out` as above.
#[no_mangle]
pub unsafe extern "C" fn chartlab_dissimilarity_from_covariances(
    n: usize,
    n_r: usize,
    re_im: *const f64,
    eig_floor: f64,
    out: *mut *mut ChartlabDissimilarity,
) -> ChartlabStatus {
    guard(|| {
        let len = n
            .checked_mul(n_r * n_r * 2)
            .ok_or_else(|| Fail(ChartlabStatus::Config, "matrix count overflows".into()))?;
        let data = slice_arg(re_im, len, "re_im")?;
        let stride = 2 * n_r * n_r;
        let covs: Vec<DMatrix<C64>> = (0..n)
            .map(|k| {
                let m = &data[k * stride..(k + 1) * stride];
                DMatrix::from_fn(n_r, n_r, |r, c| {
                    let i = 2 * (r * n_r + c);
                    C64::new(m[i], m[i + 1])
                })
            })
            .collect();
        put(out, ChartlabDissimilarity(dissimilarity_from_covariances(&covs, eig_floor)?))
    })
}

/// Builds a dissimilarity handle from a dense row-major `n × n` matrix.
///
/// # Safety
/// `dense` must point to `n · n` readable doubles; `out` as above.
#[no_mangle]
pub unsafe extern "C" fn chartlab_dissimilarity_from_dense(
    n: usize,
    dense: *const f64,
    out: *mut *mut ChartlabDissimilarity,
) -> ChartlabStatus {
    guard(|| {
        let data = slice_arg(dense, n * n, "dense")?;
        put(out, ChartlabDissimilarity(DissimilarityMatrix::from_dense(n, data.to_vec())?))
    })
}

/// Number of samples, or 0 for a null handle.
///
/// # Safety
/// `d` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn chartlab_dissimilarity_len(d: *const ChartlabDissimilarity) -> usize {
    d.as_ref().map_or(0, |d| d.0.len())
}

/// Entry `(i, j)`, written to `value`.
///
/// # Safety
/// `d` must be a live handle and `value` writable.
#[no_mangle]
pub unsafe extern "C" fn chartlab_dissimilarity_get(
    d: *const ChartlabDissimilarity,
    i: usize,
    j: usize,
    value: *mut f64,
) -> ChartlabStatus {
    guard(|| {
        let d = &ref_arg(d, "d")?.0;
        if i >= d.len() || j >= d.len() {
            return Err(Fail(ChartlabStatus::Config, format!("index ({i}, {j}) out of range")));
        }
        *value.as_mut().ok_or_else(|| null("value"))? = d.get(i, j);
        Ok(())
    })
}

/// # Safety
/// `d` must be null or a handle from this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn chartlab_dissimilarity_free(d: *mut ChartlabDissimilarity) {
    if !d.is_null() {
        drop(Box::from_raw(d));
    }
}

// ---------------------------------------------------------------------------
// charting

/// Fits a chart with the charting settings of `cfg`.
///
/// `labeled` lists `n_labeled` sample indices whose true positions are given
/// as interleaved (x, y) pairs in `positions`.
///
/// # Safety
/// Handles must be live; `labeled` must hold `n_labeled` entries and
/// `positions` `2 · n_labeled` doubles; `out` as above.
#[no_mangle]
pub unsafe extern "C" fn chartlab_chart_fit(
    d: *const ChartlabDissimilarity,
    cfg: *const ChartlabConfig,
    n_labeled: usize,
    labeled: *const usize,
    positions: *const f64,
    seed: u64,
    out: *mut *mut ChartlabChart,
) -> ChartlabStatus {
    guard(|| {
        let d = &ref_arg(d, "d")?.0;
        let cfg = &ref_arg(cfg, "cfg")?.0;
        let idx = slice_arg(labeled, n_labeled, "labeled")?.to_vec();
        let pos = points(slice_arg(positions, 2 * n_labeled, "positions")?);
        let split = LabeledSplit::new(d.len(), idx, pos)?;
        put(out, ChartlabChart(fit(d, &split, &cfg.charting, seed)?))
    })
}

/// Number of chart points, or 0 for a null handle.
///
/// # Safety
/// `chart` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn chartlab_chart_len(chart: *const ChartlabChart) -> usize {
    chart.as_ref().map_or(0, |c| c.0.len())
}

/// Chart coordinates as interleaved (z_x, z_y) pairs.
///
/// # Safety
/// `chart` must be live and `xy` must hold `2 · len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn chartlab_chart_coordinates(chart: *const ChartlabChart, xy: *mut f64) -> ChartlabStatus {
    guard(|| {
        let c = &ref_arg(chart, "chart")?.0;
        if xy.is_null() {
            return Err(null("xy"));
        }
        let out = std::slice::from_raw_parts_mut(xy, 2 * c.len());
        for (k, z) in c.z.iter().enumerate() {
            out[2 * k] = z[0];
            out[2 * k + 1] = z[1];
        }
        Ok(())
    })
}

/// Position estimates in meters as interleaved (x, y) pairs.
///
/// # Safety
/// As for [`chartlab_chart_coordinates`].
#[no_mangle]
pub unsafe extern "C" fn chartlab_chart_positions(chart: *const ChartlabChart, xy: *mut f64) -> ChartlabStatus {
    guard(|| {
        let c = &ref_arg(chart, "chart")?.0;
        if xy.is_null() {
            return Err(null("xy"));
        }
        let out = std::slice::from_raw_parts_mut(xy, 2 * c.len());
        for k in 0..c.len() {
            let p = c.localize(k);
            out[2 * k] = p[0];
            out[2 * k + 1] = p[1];
        }
        Ok(())
    })
}

/// # Safety
/// `chart` must be null or a handle from this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn chartlab_chart_free(chart: *mut ChartlabChart) {
    if !chart.is_null() {
        drop(Box::from_raw(chart));
    }
}

// ---------------------------------------------------------------------------
// evaluation

/// Continuity and trustworthiness at neighborhood size `k`, and Kruskal
/// stress, of `n` chart points against ground truth (both interleaved x, y).
///
/// # Safety
/// `truth` and `chart` must hold `2 · n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn chartlab_metrics(
    n: usize,
    truth: *const f64,
    chart: *const f64,
    k: usize,
    out: *mut ChartlabMetrics,
) -> ChartlabStatus {
    guard(|| {
        let t = points(slice_arg(truth, 2 * n, "truth")?);
        let c = points(slice_arg(chart, 2 * n, "chart")?);
        let m = ChartlabMetrics {
            continuity: continuity(&t, &c, k)?,
            trustworthiness: trustworthiness(&t, &c, k)?,
            kruskal_stress: kruskal_stress(&t, &c)?,
        };
        *out.as_mut().ok_or_else(|| null("out"))? = m;
        Ok(())
    })
}
