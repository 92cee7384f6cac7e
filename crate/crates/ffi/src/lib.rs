//! C interface to `stlgcp`.
//!
//! Every fallible function returns an [`StlgcpStatus`]; on failure the
//! message is available from [`stlgcp_last_error_message`] on the same
//! thread. Objects are handed out as opaque pointers and must be released
//! with the matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fs::File;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use stlgcp::bandwidth::{select_bandwidth, KMeansOptions};
use stlgcp::config::PipelineConfig;
use stlgcp::covfit::{theoretical_pcf, CovarianceParams};
use stlgcp::data::{
    load_point_pattern, GridSpec, ObservationWindow, Point, Raster, SpatioTemporalPointPattern,
    TimeRange,
};
use stlgcp::forecast::forecast_weight;
use stlgcp::grf::{circulant_eigenvalues, extend_grid, sample_grf};
use stlgcp::intensity::kernel_intensity_raster;
use stlgcp::pipeline::Pipeline;
use stlgcp::rng::stream_rng;
use stlgcp::Error;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StlgcpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Numerical = 5,
    Config = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(err: &Error) -> StlgcpStatus {
    match err {
        Error::Io(_) => StlgcpStatus::Io,
        Error::Parse { .. } | Error::Csv(_) | Error::Json(_) | Error::Toml(_) => {
            StlgcpStatus::Parse
        }
        Error::Config { .. } => StlgcpStatus::Config,
        Error::Stage { source, .. } | Error::Simulation { source, .. } => status_of(source),
        Error::Quadrature { .. }
        | Error::NonFiniteContrast(_)
        | Error::NegativeEigenvalues { .. }
        | Error::Numerical(_)
        | Error::NoConvergence { .. }
        | Error::TuningFailure { .. } => StlgcpStatus::Numerical,
        _ => StlgcpStatus::InvalidArgument,
    }
}

/// Runs `f`, recording any error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), (StlgcpStatus, String)>) -> StlgcpStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => StlgcpStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            StlgcpStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (StlgcpStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(name: &str) -> (StlgcpStatus, String) {
    (StlgcpStatus::NullPointer, format!("`{name}` is null"))
}

fn invalid(msg: impl Into<String>) -> (StlgcpStatus, String) {
    (StlgcpStatus::InvalidArgument, msg.into())
}

unsafe fn path_arg(p: *const c_char, name: &str) -> Result<PathBuf, (StlgcpStatus, String)> {
    if p.is_null() {
        return Err(null(name));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("`{name}` is not valid UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn out_arg<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, (StlgcpStatus, String)> {
    p.as_mut().ok_or_else(|| null(name))
}

/// Message of the last failure on this thread, or null. The pointer stays
/// valid until the next call into the library from this thread.
#[no_mangle]
pub extern "C" fn stlgcp_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn stlgcp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// A spatio-temporal point pattern.
pub struct StlgcpPattern {
    inner: SpatioTemporalPointPattern,
}

/// A gridded surface.
pub struct StlgcpRaster {
    inner: Raster,
}

/// A configured pipeline.
pub struct StlgcpPipeline {
    inner: Pipeline,
}

/// Loads `x,y,t` events inside the polygon of `window_path` (CSV `x,y`).
///
/// # Safety
/// Paths must be NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn stlgcp_pattern_load(
    pattern_path: *const c_char,
    window_path: *const c_char,
    out: *mut *mut StlgcpPattern,
) -> StlgcpStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let pattern_path = path_arg(pattern_path, "pattern_path")?;
        let window_path = path_arg(window_path, "window_path")?;
        let window = File::open(&window_path)
            .map_err(Error::from)
            .and_then(ObservationWindow::from_csv)
            .map_err(lib_err)?;
        let file = File::open(&pattern_path).map_err(|e| lib_err(e.into()))?;
        let wide = TimeRange::new(i64::MIN / 4, i64::MAX / 4).map_err(lib_err)?;
        let report = load_point_pattern(file, &window, wide).map_err(lib_err)?;
        let times = report.pattern.times();
        let range = TimeRange::new(times[0], times[times.len() - 1]).map_err(lib_err)?;
        let inner = report.pattern.restrict(range).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(StlgcpPattern { inner }));
        Ok(())
    })
}

/// Number of events, or zero for a null handle.
///
/// # Safety
/// `pattern` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn stlgcp_pattern_len(pattern: *const StlgcpPattern) -> usize {
    pattern.as_ref().map_or(0, |p| p.inner.len())
}

/// First and last day of the pattern.
///
/// # Safety
/// `pattern` must be a live handle; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn stlgcp_pattern_days(
    pattern: *const StlgcpPattern,
    first: *mut i64,
    last: *mut i64,
) -> StlgcpStatus {
    guard(|| {
        let p = pattern.as_ref().ok_or_else(|| null("pattern"))?;
        let r = p.inner.t_range();
        *out_arg(first, "first")? = r.start;
        *out_arg(last, "last")? = r.end;
        Ok(())
    })
}

/// # Safety
/// `pattern` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn stlgcp_pattern_free(pattern: *mut StlgcpPattern) {
    if !pattern.is_null() {
        drop(Box::from_raw(pattern));
    }
}

/// Cluster-based bandwidth of `n` planar points.
///
/// # Safety
/// `xs` and `ys` must hold `n` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn stlgcp_select_bandwidth(
    xs: *const f64,
    ys: *const f64,
    n: usize,
    k: usize,
    seed: u64,
    out: *mut f64,
) -> StlgcpStatus {
    guard(|| {
        if xs.is_null() || ys.is_null() {
            return Err(null("xs/ys"));
        }
        let out = out_arg(out, "out")?;
        let xs = std::slice::from_raw_parts(xs, n);
        let ys = std::slice::from_raw_parts(ys, n);
        let pts: Vec<Point> = xs.iter().zip(ys).map(|(&x, &y)| Point::new(x, y)).collect();
        let opts = KMeansOptions {
            k,
            seed,
            ..Default::default()
        };
        *out = select_bandwidth(&pts, &opts).map_err(lib_err)?;
        Ok(())
    })
}

/// Quartic kernel intensity of the pattern's locations on an `m x p` grid
/// over the window.
///
/// # Safety
/// `pattern` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn stlgcp_kernel_intensity(
    pattern: *const StlgcpPattern,
    m: usize,
    p: usize,
    bandwidth: f64,
    out: *mut *mut StlgcpRaster,
) -> StlgcpStatus {
    guard(|| {
        let pat = pattern.as_ref().ok_or_else(|| null("pattern"))?;
        let out = out_arg(out, "out")?;
        let grid = GridSpec::from_window(pat.inner.window(), m, p).map_err(lib_err)?;
        let inner = kernel_intensity_raster(&pat.inner, &grid, bandwidth).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(StlgcpRaster { inner }));
        Ok(())
    })
}

/// Grid shape of a raster.
///
/// # Safety
/// `raster` must be a live handle; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn stlgcp_raster_dims(
    raster: *const StlgcpRaster,
    m: *mut usize,
    p: *mut usize,
) -> StlgcpStatus {
    guard(|| {
        let r = raster.as_ref().ok_or_else(|| null("raster"))?;
        let g = r.inner.grid();
        *out_arg(m, "m")? = g.m;
        *out_arg(p, "p")? = g.p;
        Ok(())
    })
}

/// Copies the cell values in row-major order into `buf` of length `len`
/// (at least `m * p`).
///
/// # Safety
/// `raster` must be a live handle; `buf` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn stlgcp_raster_copy_values(
    raster: *const StlgcpRaster,
    buf: *mut f64,
    len: usize,
) -> StlgcpStatus {
    guard(|| {
        let r = raster.as_ref().ok_or_else(|| null("raster"))?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        let vals = r.inner.values();
        if len < vals.len() {
            return Err((
                StlgcpStatus::BufferTooSmall,
                format!("buffer holds {len} values, {} needed", vals.len()),
            ));
        }
        let dst = std::slice::from_raw_parts_mut(buf, vals.len());
        for (d, s) in dst.iter_mut().zip(vals.iter()) {
            *d = *s;
        }
        Ok(())
    })
}

/// Riemann integral of the raster over its mask.
///
/// # Safety
/// `raster` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn stlgcp_raster_integral(
    raster: *const StlgcpRaster,
    out: *mut f64,
) -> StlgcpStatus {
    guard(|| {
        let r = raster.as_ref().ok_or_else(|| null("raster"))?;
        *out_arg(out, "out")? = r.inner.integral();
        Ok(())
    })
}

/// # Safety
/// `raster` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn stlgcp_raster_free(raster: *mut StlgcpRaster) {
    if !raster.is_null() {
        drop(Box::from_raw(raster));
    }
}

/// Pair correlation `exp(sigma2 exp(-u/phi))`.
#[no_mangle]
pub extern "C" fn stlgcp_theoretical_pcf(u: f64, sigma2: f64, phi: f64) -> f64 {
    theoretical_pcf(u, sigma2, phi)
}

/// Weight `exp(-delta/theta)` on the current field after `delta` days.
#[no_mangle]
pub extern "C" fn stlgcp_forecast_weight(delta: f64, theta: f64) -> f64 {
    match CovarianceParams::new(0.0, 1.0, theta) {
        Ok(p) => forecast_weight(delta, &p),
        Err(_) => f64::NAN,
    }
}

/// One zero-mean Gaussian field with exponential covariance on an `m x p`
/// lattice of spacing `dx`, `dy`, written row-major into `buf`.
///
/// # Safety
/// `buf` must hold `len >= m * p` values.
#[no_mangle]
pub unsafe extern "C" fn stlgcp_grf_sample(
    m: usize,
    p: usize,
    dx: f64,
    dy: f64,
    sigma2: f64,
    phi: f64,
    seed: u64,
    buf: *mut f64,
    len: usize,
) -> StlgcpStatus {
    guard(|| {
        if buf.is_null() {
            return Err(null("buf"));
        }
        if len < m * p {
            return Err((
                StlgcpStatus::BufferTooSmall,
                format!("buffer holds {len} values, {} needed", m * p),
            ));
        }
        let grid = GridSpec::unmasked(0.0, 0.0, dx, dy, m, p).map_err(lib_err)?;
        let params = CovarianceParams::new(sigma2, phi, 1.0).map_err(lib_err)?;
        let spectrum = circulant_eigenvalues(&extend_grid(&grid), &params).map_err(lib_err)?;
        let sample = sample_grf(&spectrum, 0.0, &mut stream_rng(seed, 0)).map_err(lib_err)?;
        let dst = std::slice::from_raw_parts_mut(buf, m * p);
        for (d, s) in dst.iter_mut().zip(sample.base.values().iter()) {
            *d = *s;
        }
        Ok(())
    })
}

/// Creates a pipeline from a TOML config file. `resume` non-zero reuses
/// stage outputs whose inputs are unchanged.
///
/// # Safety
/// `config_path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn stlgcp_pipeline_open(
    config_path: *const c_char,
    resume: i32,
    out: *mut *mut StlgcpPipeline,
) -> StlgcpStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let path = path_arg(config_path, "config_path")?;
        let cfg = PipelineConfig::from_file(&path).map_err(lib_err)?;
        let inner = Pipeline::new(cfg, resume != 0).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(StlgcpPipeline { inner }));
        Ok(())
    })
}

/// Runs every stage.
///
/// # Safety
/// `pipeline` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn stlgcp_pipeline_run(pipeline: *mut StlgcpPipeline) -> StlgcpStatus {
    guard(|| {
        let pl = pipeline.as_mut().ok_or_else(|| null("pipeline"))?;
        pl.inner.run_all().map_err(lib_err)
    })
}

/// Fitted covariance parameters, running the stages up to the fit if needed.
///
/// # Safety
/// `pipeline` must be a live handle; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn stlgcp_pipeline_covariance(
    pipeline: *mut StlgcpPipeline,
    sigma2: *mut f64,
    phi: *mut f64,
    theta: *mut f64,
) -> StlgcpStatus {
    guard(|| {
        let pl = pipeline.as_mut().ok_or_else(|| null("pipeline"))?;
        let (s, f, t) = (
            out_arg(sigma2, "sigma2")?,
            out_arg(phi, "phi")?,
            out_arg(theta, "theta")?,
        );
        let params = pl.inner.fitcov().map_err(lib_err)?.value.params;
        *s = params.sigma2;
        *f = params.phi;
        *t = params.theta;
        Ok(())
    })
}

/// Number of manifest entries written so far.
///
/// # Safety
/// `pipeline` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn stlgcp_pipeline_manifest_len(pipeline: *const StlgcpPipeline) -> usize {
    pipeline.as_ref().map_or(0, |p| p.inner.manifest().len())
}

/// # Safety
/// `pipeline` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn stlgcp_pipeline_free(pipeline: *mut StlgcpPipeline) {
    if !pipeline.is_null() {
        drop(Box::from_raw(pipeline));
    }
}
