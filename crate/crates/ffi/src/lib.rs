//! C ABI for gridid-core.
//!
//! Networks and simulated datasets cross the boundary as opaque handles:
//! create them with `gridid_network_*` / `gridid_dataset_simulate` and
//! release them with the matching `*_free`. Every fallible call returns a
//! [`GridStatus`]; the text of the last failure on the calling thread is
//! available from [`gridid_last_error`]. Matrices are dense, row-major
//! `n x n` arrays of `double` split into real (`g`) and imaginary (`b`) parts.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use gridid_core::experiment::{
    measure, run_method, simulate_truth_for, EstimatorSettings, ExperimentConfig, GroundTruth,
    Method, DEFAULT_SIGMA_SLACK_REL, MAX_NOISE_LEVEL,
};
use gridid_core::metrics::rrmse;
use gridid_core::network::{build_admittance, ieee33, load_network, NetworkModel};
use gridid_core::GridError;
use nalgebra::DMatrix;
use num_complex::Complex64;

/// Result of every fallible call. Codes 2 to 4 match the exit codes of the
/// `gridid` tool.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// Invalid input: configuration, network or argument values.
    Config = 2,
    /// The computation failed: divergence, rank deficiency, singular data.
    Numerical = 3,
    /// A file could not be read or written.
    Io = 4,
    /// An output buffer is smaller than required.
    BufferTooSmall = 5,
    /// An unexpected internal failure was caught at the boundary.
    Panic = 6,
}

/// Estimation methods.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridMethod {
    MleWithPhase = 0,
    MlePhaseless = 1,
    LassoWithPhase = 2,
    LassoPhaseless = 3,
}

impl From<GridMethod> for Method {
    fn from(m: GridMethod) -> Self {
        match m {
            GridMethod::MleWithPhase => Method::MleWithPhase,
            GridMethod::MlePhaseless => Method::MlePhaseless,
            GridMethod::LassoWithPhase => Method::LassoWithPhase,
            GridMethod::LassoPhaseless => Method::LassoPhaseless,
        }
    }
}

/// Opaque grid description.
pub struct GridNetwork(NetworkModel);

/// Opaque simulated ground truth: operating points of a network under
/// random loads, from which noisy readings are drawn on demand.
pub struct GridDataset {
    cfg: ExperimentConfig,
    truth: GroundTruth,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

struct Failure(GridStatus, String);

impl From<GridError> for Failure {
    fn from(e: GridError) -> Self {
        let status = match e.exit_code() {
            2 => GridStatus::Config,
            4 => GridStatus::Io,
            _ => GridStatus::Numerical,
        };
        Failure(status, e.to_string())
    }
}

fn null(name: &str) -> Failure {
    Failure(GridStatus::NullArgument, format!("{name} is null"))
}

/// Runs `f`, records any failure for [`gridid_last_error`] and converts
/// panics into [`GridStatus::Panic`].
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> GridStatus {
    let (status, message) = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => (GridStatus::Ok, String::new()),
        Ok(Err(Failure(s, m))) => (s, m),
        Err(_) => (GridStatus::Panic, "internal error".to_string()),
    };
    LAST_ERROR.with(|e| *e.borrow_mut() = message);
    status
}

unsafe fn out_ptr<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(name))
}

unsafe fn handle<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(name))
}

/// Copies an `n x n` complex matrix into caller buffers of `len` doubles each.
unsafe fn write_matrix(
    y: &DMatrix<Complex64>,
    g: *mut f64,
    b: *mut f64,
    len: usize,
) -> Result<(), Failure> {
    if g.is_null() || b.is_null() {
        return Err(null("output matrix"));
    }
    let n = y.nrows();
    if len < n * n {
        return Err(Failure(
            GridStatus::BufferTooSmall,
            format!("matrix needs {} entries, buffer holds {len}", n * n),
        ));
    }
    let g = std::slice::from_raw_parts_mut(g, n * n);
    let b = std::slice::from_raw_parts_mut(b, n * n);
    for h in 0..n {
        for k in 0..n {
            g[h * n + k] = y[(h, k)].re;
            b[h * n + k] = y[(h, k)].im;
        }
    }
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gridid_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the last failure message of the calling thread into `buf` (NUL
/// terminated, truncated to `len - 1` bytes) and returns the full message
/// length in bytes excluding the terminator. An empty message means the
/// last call succeeded.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn gridid_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr().cast(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Reads a network description (JSON) from `path`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gridid_network_load(
    path: *const c_char,
    out: *mut *mut GridNetwork,
) -> GridStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        if path.is_null() {
            return Err(null("path"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Failure(GridStatus::Config, "path is not valid UTF-8".into()))?;
        let net = load_network(path)?;
        *out = Box::into_raw(Box::new(GridNetwork(net)));
        Ok(())
    })
}

/// The built-in IEEE 33-bus feeder.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gridid_network_ieee33(out: *mut *mut GridNetwork) -> GridStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = Box::into_raw(Box::new(GridNetwork(ieee33())));
        Ok(())
    })
}

/// Releases a network. Null is ignored.
///
/// # Safety
/// `net` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn gridid_network_free(net: *mut GridNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Number of buses.
///
/// # Safety
/// `net` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gridid_network_bus_count(
    net: *const GridNetwork,
    out: *mut usize,
) -> GridStatus {
    guard(|| {
        let net = handle(net, "net")?;
        *out_ptr(out, "out")? = net.0.bus_count();
        Ok(())
    })
}

/// Writes the per-unit admittance matrix into `g` and `b` (`len` doubles
/// each, at least `n * n`).
///
/// # Safety
/// `net` must be a live handle; `g` and `b` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn gridid_network_admittance(
    net: *const GridNetwork,
    g: *mut f64,
    b: *mut f64,
    len: usize,
) -> GridStatus {
    guard(|| {
        let net = handle(net, "net")?;
        write_matrix(&build_admittance(&net.0)?.to_complex(), g, b, len)
    })
}

/// Simulates `n_samples` operating points with loads varying by
/// `sigma_load_rel` around nominal. Deterministic in `seed`.
///
/// # Safety
/// `net` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gridid_dataset_simulate(
    net: *const GridNetwork,
    n_samples: usize,
    sigma_load_rel: f64,
    seed: u64,
    out: *mut *mut GridDataset,
) -> GridStatus {
    guard(|| {
        let net = handle(net, "net")?;
        let out = out_ptr(out, "out")?;
        let cfg = ExperimentConfig {
            network_path: PathBuf::new(),
            n_samples,
            sigma_load_rel,
            sigma_slack_rel: DEFAULT_SIGMA_SLACK_REL,
            noise_levels: Vec::new(),
            seed,
            methods: Method::ALL.to_vec(),
            output_dir: PathBuf::new(),
            estimator: EstimatorSettings::default(),
        };
        cfg.validate()?;
        let truth = simulate_truth_for(net.0.clone(), &cfg)?;
        *out = Box::into_raw(Box::new(GridDataset { cfg, truth }));
        Ok(())
    })
}

/// Releases a dataset. Null is ignored.
///
/// # Safety
/// `ds` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn gridid_dataset_free(ds: *mut GridDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Draws meter readings at `noise_level` (fraction, at most 0.1), runs
/// `method` and writes the estimated matrix into `g` and `b`. When
/// `rrmse_out` is not null it receives the relative error against the true
/// matrix. The same dataset and level always give the same readings.
///
/// # Safety
/// `ds` must be a live handle; `g` and `b` must hold `len` doubles;
/// `rrmse_out` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn gridid_dataset_estimate(
    ds: *const GridDataset,
    method: GridMethod,
    noise_level: f64,
    g: *mut f64,
    b: *mut f64,
    len: usize,
    rrmse_out: *mut f64,
) -> GridStatus {
    guard(|| {
        let ds = handle(ds, "ds")?;
        if !(0.0..=MAX_NOISE_LEVEL).contains(&noise_level) {
            return Err(Failure(
                GridStatus::Config,
                format!("noise level {noise_level} outside [0, {MAX_NOISE_LEVEL}]"),
            ));
        }
        let method = Method::from(method);
        let raw = measure(&ds.truth.states, noise_level, method.phase_mode(), &ds.cfg)?;
        let out = run_method(method, &raw, &ds.cfg)?;
        write_matrix(&out.y_hat, g, b, len)?;
        if let Some(r) = rrmse_out.as_mut() {
            *r = rrmse(&out.y_hat, &ds.truth.y_complex())?;
        }
        Ok(())
    })
}
