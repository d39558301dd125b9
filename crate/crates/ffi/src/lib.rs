//! C interface to `repcost`.
//!
//! Objects are exposed as opaque handles created by `rc_*_new`/`rc_*_load`/
//! `rc_*_train`/`rc_*_solve` and released with the matching `rc_*_free`.
//! Every fallible call returns an [`RcStatus`]; the message of the last
//! failure on the calling thread is available from [`rc_last_error`].
//! Matrices are passed as row-major `double` arrays, one sample per row.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use nalgebra::{DMatrix, DVector};
use repcost::net::{read_network, write_network};
use repcost::oracle::{atoms_to_network, build_grid, solve_group_lasso, OracleSolution, SolverConfig};
use repcost::pfunc::{matching_network_cost, PenaltyKind};
use repcost::tasks::{gen_random, load_csv, save_csv};
use repcost::train::{train, TrainConfig};
use repcost::{Architecture, Dataset, Error, NetworkParams};

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    UnsupportedDimension = 4,
    Numerical = 5,
    Parse = 6,
    Io = 7,
    Diverged = 8,
    Panic = 9,
}

/// A dataset of inputs, targets and observation mask.
pub struct RcDataset {
    inner: Dataset,
}

/// A stacked network together with its architecture.
pub struct RcNetwork {
    params: NetworkParams,
    arch: Architecture,
}

/// A solution of the group-lasso oracle.
pub struct RcOracle {
    inner: OracleSolution,
}

/// Training settings for [`rc_network_train_shallow`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct RcTrainConfig {
    pub lambda: f64,
    pub restarts: usize,
    pub adam_iters: usize,
    pub adam_lr: f64,
    pub adam_lr_final: f64,
    pub max_iters: usize,
    pub init_scale: f64,
    pub seed: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> RcStatus {
    match e {
        Error::Shape(_) => RcStatus::Shape,
        Error::InvalidArgument(_) => RcStatus::InvalidArgument,
        Error::UnsupportedDimension(_) => RcStatus::UnsupportedDimension,
        Error::Numerical(_) => RcStatus::Numerical,
        Error::Parse { .. } => RcStatus::Parse,
        Error::AllRestartsDiverged(_) => RcStatus::Diverged,
        Error::Io { .. } => RcStatus::Io,
    }
}

struct Fail(RcStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(RcStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(RcStatus::InvalidArgument, msg.into())
}

/// Runs `f`, records failures and converts panics into [`RcStatus::Panic`].
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> RcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RcStatus::Ok,
        Ok(Err(Fail(code, msg))) => {
            set_error(&msg);
            code
        }
        Err(_) => {
            set_error("internal panic");
            RcStatus::Panic
        }
    }
}

unsafe fn path_arg(path: *const c_char) -> Result<PathBuf, Fail> {
    if path.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(path)
        .to_str()
        .map_err(|_| invalid("path is not valid UTF-8"))?;
    Ok(PathBuf::from(s))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_slice<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output handle"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn get<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn write_scalar<T>(out: *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = value;
    Ok(())
}

/// Copies the last error message of this thread into `buf` (NUL
/// terminated, truncated to `len - 1` bytes) and returns its full length.
/// Returns 0 when there is no error.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn rc_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| match e.borrow().as_ref() {
        None => 0,
        Some(msg) => {
            let bytes = msg.as_bytes();
            if !buf.is_null() && len > 0 {
                let n = bytes.len().min(len - 1);
                ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
                *buf.add(n) = 0;
            }
            bytes.len()
        }
    })
}

/// Default training settings.
#[no_mangle]
pub extern "C" fn rc_train_config_default() -> RcTrainConfig {
    let d = TrainConfig::default();
    RcTrainConfig {
        lambda: d.lambda,
        restarts: d.restarts,
        adam_iters: d.adam_iters,
        adam_lr: d.adam_lr,
        adam_lr_final: d.adam_lr_final,
        max_iters: d.max_iters,
        init_scale: d.init_scale,
        seed: d.seed,
    }
}

/// Builds a fully observed dataset from row-major `x` (`n x d_in`) and `y`
/// (`n x d_out`).
///
/// # Safety
/// `x` and `y` must point to `n * d_in` and `n * d_out` readable doubles;
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rc_dataset_new(
    x: *const f64,
    y: *const f64,
    n: usize,
    d_in: usize,
    d_out: usize,
    out: *mut *mut RcDataset,
) -> RcStatus {
    guard(|| {
        let xs = slice_arg(x, n * d_in, "x")?;
        let ys = slice_arg(y, n * d_out, "y")?;
        let data = Dataset::new(
            DMatrix::from_row_slice(n, d_in, xs),
            DMatrix::from_row_slice(n, d_out, ys),
        )?;
        put(out, RcDataset { inner: data })
    })
}

/// Random data: inputs uniform on `[-1, 1]^d_in`, standard normal targets.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rc_dataset_random(
    n: usize,
    d_in: usize,
    d_out: usize,
    seed: u64,
    out: *mut *mut RcDataset,
) -> RcStatus {
    guard(|| {
        if n == 0 || d_in == 0 || d_out == 0 {
            return Err(invalid("n, d_in and d_out must be positive"));
        }
        put(out, RcDataset { inner: gen_random(n, d_in, d_out, seed) })
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rc_dataset_load_csv(path: *const c_char, out: *mut *mut RcDataset) -> RcStatus {
    guard(|| {
        let data = load_csv(&path_arg(path)?)?;
        put(out, RcDataset { inner: data })
    })
}

/// # Safety
/// `data` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn rc_dataset_save_csv(data: *const RcDataset, path: *const c_char) -> RcStatus {
    guard(|| {
        let d = get(data, "dataset")?;
        save_csv(&d.inner, &path_arg(path)?)?;
        Ok(())
    })
}

/// Writes `n`, `d_in` and `d_out`; any output pointer may be null.
///
/// # Safety
/// `data` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn rc_dataset_shape(
    data: *const RcDataset,
    n: *mut usize,
    d_in: *mut usize,
    d_out: *mut usize,
) -> RcStatus {
    guard(|| {
        let d = &get(data, "dataset")?.inner;
        for (p, v) in [(n, d.len()), (d_in, d.d_in()), (d_out, d.d_out())] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// # Safety
/// `data` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rc_dataset_free(data: *mut RcDataset) {
    if !data.is_null() {
        drop(Box::from_raw(data));
    }
}

/// Trains a one-stack network of `width` neurons.
///
/// # Safety
/// `data` must be a live handle, `cfg` valid; `out` a valid pointer;
/// `objective` may be null.
#[no_mangle]
pub unsafe extern "C" fn rc_network_train_shallow(
    data: *const RcDataset,
    width: usize,
    cfg: *const RcTrainConfig,
    out: *mut *mut RcNetwork,
    objective: *mut f64,
) -> RcStatus {
    guard(|| {
        let d = &get(data, "dataset")?.inner;
        let c = get(cfg, "config")?;
        if width == 0 {
            return Err(invalid("width must be positive"));
        }
        let tcfg = TrainConfig {
            lambda: c.lambda,
            restarts: c.restarts,
            adam_iters: c.adam_iters,
            adam_lr: c.adam_lr,
            adam_lr_final: c.adam_lr_final,
            max_iters: c.max_iters,
            init_scale: c.init_scale,
            seed: c.seed,
            ..TrainConfig::default()
        };
        let arch = Architecture::shallow(d.d_in(), width, d.d_out());
        let (params, report) = train(&arch, d, &tcfg)?;
        if !objective.is_null() {
            *objective = report.final_objective;
        }
        put(out, RcNetwork { params, arch })
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rc_network_load(path: *const c_char, out: *mut *mut RcNetwork) -> RcStatus {
    guard(|| {
        let (params, arch) = read_network(&path_arg(path)?)?;
        put(out, RcNetwork { params, arch })
    })
}

/// # Safety
/// `net` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn rc_network_save(net: *const RcNetwork, path: *const c_char) -> RcStatus {
    guard(|| {
        let n = get(net, "network")?;
        write_network(&path_arg(path)?, &n.params, &n.arch)?;
        Ok(())
    })
}

/// Writes the input and output dimensions; either pointer may be null.
///
/// # Safety
/// `net` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn rc_network_dims(net: *const RcNetwork, d_in: *mut usize, d_out: *mut usize) -> RcStatus {
    guard(|| {
        let n = get(net, "network")?;
        if !d_in.is_null() {
            *d_in = n.arch.d_in();
        }
        if !d_out.is_null() {
            *d_out = n.arch.d_out();
        }
        Ok(())
    })
}

/// Evaluates the network at `x` (length `d_in`) into `y` (length `d_out`).
///
/// # Safety
/// `x` and `y` must point to `d_in` readable and `d_out` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn rc_network_forward(
    net: *const RcNetwork,
    x: *const f64,
    d_in: usize,
    y: *mut f64,
    d_out: usize,
) -> RcStatus {
    guard(|| {
        let n = get(net, "network")?;
        if d_in != n.arch.d_in() || d_out != n.arch.d_out() {
            return Err(Fail(
                RcStatus::Shape,
                format!(
                    "network maps {} -> {}, buffers are {d_in} -> {d_out}",
                    n.arch.d_in(),
                    n.arch.d_out()
                ),
            ));
        }
        let input = DVector::from_column_slice(slice_arg(x, d_in, "x")?);
        let z = n.params.forward(&n.arch, &input)?;
        out_slice(y, d_out, "y")?.copy_from_slice(z.as_slice());
        Ok(())
    })
}

/// Sum of squared parameters.
///
/// # Safety
/// `net` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rc_network_param_norm_sq(net: *const RcNetwork, out: *mut f64) -> RcStatus {
    guard(|| write_scalar(out, get(net, "network")?.params.param_norm_sq()))
}

/// Representation cost of the network under the bias-regularized penalty.
///
/// # Safety
/// `net` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rc_network_cost(net: *const RcNetwork, out: *mut f64) -> RcStatus {
    guard(|| {
        let n = get(net, "network")?;
        write_scalar(out, matching_network_cost(&n.params, &n.arch)?)
    })
}

/// Replaces the network by its balanced rescaling (same function, no larger
/// squared parameter norm).
///
/// # Safety
/// `net` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn rc_network_balance(net: *mut RcNetwork) -> RcStatus {
    guard(|| {
        let n = net.as_mut().ok_or_else(|| null("network"))?;
        n.params = n.params.balance();
        Ok(())
    })
}

/// # Safety
/// `net` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rc_network_free(net: *mut RcNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Solves the group-lasso oracle on scalar-input data over a kink grid of
/// `resolution` points on `[min x - margin, max x + margin]` plus the data.
///
/// # Safety
/// `data` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rc_oracle_solve(
    data: *const RcDataset,
    lambda: f64,
    resolution: usize,
    margin: f64,
    out: *mut *mut RcOracle,
) -> RcStatus {
    guard(|| {
        let d = &get(data, "dataset")?.inner;
        let grid = build_grid(d, resolution, margin, PenaltyKind::BiasReg, 2.0)?;
        let sol = solve_group_lasso(d, lambda, &grid, &SolverConfig::default())?;
        put(out, RcOracle { inner: sol })
    })
}

/// Oracle prediction at scalar `x` into `y` (length `d_out`).
///
/// # Safety
/// `y` must point to `d_out` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn rc_oracle_predict(sol: *const RcOracle, x: f64, y: *mut f64, d_out: usize) -> RcStatus {
    guard(|| {
        let s = &get(sol, "oracle")?.inner;
        if d_out != s.d_out() {
            return Err(Fail(RcStatus::Shape, format!("oracle has {} outputs, buffer {d_out}", s.d_out())));
        }
        out_slice(y, d_out, "y")?.copy_from_slice(s.predict(x).as_slice());
        Ok(())
    })
}

/// Objective value, penalty, KKT residual and number of active atoms; any
/// output pointer may be null.
///
/// # Safety
/// `sol` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn rc_oracle_stats(
    sol: *const RcOracle,
    objective: *mut f64,
    penalty: *mut f64,
    kkt_residual: *mut f64,
    active_atoms: *mut usize,
) -> RcStatus {
    guard(|| {
        let s = &get(sol, "oracle")?.inner;
        for (p, v) in [(objective, s.objective), (penalty, s.penalty()), (kkt_residual, s.kkt_residual)] {
            if !p.is_null() {
                *p = v;
            }
        }
        if !active_atoms.is_null() {
            *active_atoms = s.active_set().len();
        }
        Ok(())
    })
}

/// A one-stack network realizing the oracle solution.
///
/// # Safety
/// `sol` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rc_oracle_to_network(sol: *const RcOracle, out: *mut *mut RcNetwork) -> RcStatus {
    guard(|| {
        let (params, arch) = atoms_to_network(&get(sol, "oracle")?.inner);
        put(out, RcNetwork { params, arch })
    })
}

/// # Safety
/// `sol` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rc_oracle_free(sol: *mut RcOracle) {
    if !sol.is_null() {
        drop(Box::from_raw(sol));
    }
}
