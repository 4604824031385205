//! C ABI over `barrier_solver`.
//!
//! Objects are opaque heap handles released with their `*_free` function.
//! Every call returns a [`BsStatus`]; on failure [`bs_last_error`] gives a
//! message for the calling thread. Panics are caught at the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use barrier_solver::closed_form::{self, ClosedFormError};
use barrier_solver::exppoly::PiecewiseExpPoly;
use barrier_solver::model::{expected_discount, ModelError, ModelParams, RateState, ValidationMode};
use barrier_solver::recursion::{self, RecursionError, Solution, SolverSettings};
use barrier_solver::simulator::{self, BarrierStrategy, SimConfig, SimError};

/// Result code of every exported function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// Parameters violate the model's well-posedness conditions.
    Validation = 3,
    /// The recursion did not converge or its HJB check failed.
    NoConvergence = 4,
    /// Another numerical failure.
    Numerical = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BsRateState {
    Low = 0,
    High = 1,
}

impl From<BsRateState> for RateState {
    fn from(s: BsRateState) -> Self {
        match s {
            BsRateState::Low => RateState::Low,
            BsRateState::High => RateState::High,
        }
    }
}

/// Validated model parameters.
pub struct BsParams(ModelParams);

/// Converged value functions and barrier.
pub struct BsSolution(Solution);

/// A piecewise exponential-polynomial function.
pub struct BsFunction(PiecewiseExpPoly);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Failure(BsStatus, String);

impl Failure {
    fn null(what: &str) -> Self {
        Failure(BsStatus::NullPointer, format!("{what} is null"))
    }

    fn arg(msg: impl Into<String>) -> Self {
        Failure(BsStatus::InvalidArgument, msg.into())
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        Failure(BsStatus::Validation, e.to_string())
    }
}

impl From<ClosedFormError> for Failure {
    fn from(e: ClosedFormError) -> Self {
        let status = match e {
            ClosedFormError::Model(_) => BsStatus::Validation,
            ClosedFormError::NotApplicable(_) => BsStatus::InvalidArgument,
            _ => BsStatus::Numerical,
        };
        Failure(status, e.to_string())
    }
}

impl From<RecursionError> for Failure {
    fn from(e: RecursionError) -> Self {
        let status = match e {
            RecursionError::Model(_) => BsStatus::Validation,
            RecursionError::BadSetting(_) => BsStatus::InvalidArgument,
            RecursionError::NoConvergence { .. } | RecursionError::IllConditioned { .. } => {
                BsStatus::NoConvergence
            }
            _ => BsStatus::Numerical,
        };
        Failure(status, e.to_string())
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        let status = match e {
            SimError::Model(_) => BsStatus::Validation,
            SimError::InvalidConfig(_) => BsStatus::InvalidArgument,
            _ => BsStatus::Numerical,
        };
        Failure(status, e.to_string())
    }
}

fn guard<F: FnOnce() -> Result<(), Failure>>(f: F) -> BsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            BsStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("panic inside barrier_solver");
            BsStatus::Panic
        }
    }
}

unsafe fn get<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| Failure::null(what))
}

unsafe fn put<T>(out: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::null(what));
    }
    out.write(value);
    Ok(())
}

fn boxed<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

/// Message for the last failed call on this thread; empty after a success.
/// Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn bs_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Creates validated parameters. `relaxed` admits `delta1 = delta2`.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn bs_params_new(
    mu: f64,
    sigma: f64,
    delta1: f64,
    delta2: f64,
    lambda1: f64,
    lambda2: f64,
    relaxed: bool,
    out: *mut *mut BsParams,
) -> BsStatus {
    guard(|| {
        let mode = if relaxed {
            ValidationMode::Relaxed
        } else {
            ValidationMode::Strict
        };
        let p = ModelParams::new(mu, sigma, delta1, delta2, lambda1, lambda2, mode);
        p.validate()?;
        put(out, boxed(BsParams(p)), "out")
    })
}

/// The worked-example parameters.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn bs_params_example(out: *mut *mut BsParams) -> BsStatus {
    guard(|| put(out, boxed(BsParams(ModelParams::worked_example())), "out"))
}

/// # Safety
/// `p` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn bs_params_free(p: *mut BsParams) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// `E[exp(-int_0^t r ds)]` started in `state`.
///
/// # Safety
/// `params` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn bs_expected_discount(
    params: *const BsParams,
    state: BsRateState,
    t: f64,
    out: *mut f64,
) -> BsStatus {
    guard(|| {
        let p = get(params, "params")?;
        if !(t >= 0.0 && t.is_finite()) {
            return Err(Failure::arg("t must be finite and >= 0"));
        }
        put(out, expected_discount(&p.0, state.into(), t)?, "out")
    })
}

/// Value of the minimal-amount strategy in `state`, plus the second
/// derivatives at 0 in both states (either pointer may be null).
///
/// # Safety
/// `params` must be a live handle; non-null pointers must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn bs_v0(
    params: *const BsParams,
    state: BsRateState,
    out: *mut *mut BsFunction,
    d2_low_at_0: *mut f64,
    d2_high_at_0: *mut f64,
) -> BsStatus {
    guard(|| {
        let p = get(params, "params")?;
        let r = closed_form::v0(&p.0)?;
        if !d2_low_at_0.is_null() {
            d2_low_at_0.write(r.d2_low_at_0);
        }
        if !d2_high_at_0.is_null() {
            d2_high_at_0.write(r.d2_high_at_0);
        }
        let f = match RateState::from(state) {
            RateState::Low => r.v_low,
            RateState::High => r.v_high,
        };
        put(out, boxed(BsFunction(f)), "out")
    })
}

/// Explicit optimal low-state barrier; needs `lambda2 = 0`.
///
/// # Safety
/// `params` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn bs_example_barrier(params: *const BsParams, out: *mut f64) -> BsStatus {
    guard(|| {
        let p = get(params, "params")?;
        put(out, closed_form::example_barrier_lambda2_zero(&p.0)?, "out")
    })
}

/// Runs the recursion. `tol <= 0` or `max_iter = 0` selects the default.
/// A converged solution that fails the HJB check returns `NoConvergence`.
///
/// # Safety
/// `params` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn bs_solve(
    params: *const BsParams,
    tol: f64,
    max_iter: u32,
    out: *mut *mut BsSolution,
) -> BsStatus {
    guard(|| {
        let p = get(params, "params")?;
        let mut settings = SolverSettings::default();
        if tol > 0.0 {
            settings.tol = tol;
        }
        if max_iter > 0 {
            settings.max_iter = max_iter as usize;
        }
        let sol = recursion::solve(&p.0, &settings)?;
        if !sol.residuals.passed {
            return Err(Failure(
                BsStatus::NoConvergence,
                format!("HJB residual {:e} exceeds {:e}", sol.residuals.max_violation(), sol.residuals.tol),
            ));
        }
        put(out, boxed(BsSolution(sol)), "out")
    })
}

/// # Safety
/// `sol` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn bs_solution_barrier(sol: *const BsSolution, out: *mut f64) -> BsStatus {
    guard(|| put(out, get(sol, "solution")?.0.barrier, "out"))
}

/// # Safety
/// `sol` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn bs_solution_iterations(sol: *const BsSolution, out: *mut u32) -> BsStatus {
    guard(|| put(out, get(sol, "solution")?.0.iterations as u32, "out"))
}

/// Largest HJB violation over both states on the solver grid.
///
/// # Safety
/// `sol` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn bs_solution_hjb_violation(sol: *const BsSolution, out: *mut f64) -> BsStatus {
    guard(|| put(out, get(sol, "solution")?.0.residuals.max_violation(), "out"))
}

/// Copies the value function of `state` into a new handle.
///
/// # Safety
/// `sol` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn bs_solution_function(
    sol: *const BsSolution,
    state: BsRateState,
    out: *mut *mut BsFunction,
) -> BsStatus {
    guard(|| {
        let s = get(sol, "solution")?;
        put(out, boxed(BsFunction(s.0.value(state.into()).clone())), "out")
    })
}

/// # Safety
/// `sol` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn bs_solution_free(sol: *mut BsSolution) {
    if !sol.is_null() {
        drop(Box::from_raw(sol));
    }
}

/// Derivative of order `order` (0, 1 or 2) at `x >= 0`.
///
/// # Safety
/// `f` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn bs_function_eval(
    f: *const BsFunction,
    x: f64,
    order: u8,
    out: *mut f64,
) -> BsStatus {
    guard(|| {
        let f = get(f, "function")?;
        if !(x >= 0.0 && x.is_finite()) {
            return Err(Failure::arg("x must be finite and >= 0"));
        }
        if order > 2 {
            return Err(Failure::arg("order must be 0, 1 or 2"));
        }
        put(out, f.0.eval(x, order), "out")
    })
}

/// Writes the JSON form (NUL-terminated) into `buf` of `len` bytes.
/// `needed` receives the required size including the NUL; pass a null
/// `buf` to query it.
///
/// # Safety
/// `f` must be a live handle, `needed` valid for writes and `buf` (when
/// non-null) valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn bs_function_to_json(
    f: *const BsFunction,
    buf: *mut c_char,
    len: usize,
    needed: *mut usize,
) -> BsStatus {
    guard(|| {
        let json = get(f, "function")?.0.to_json();
        let n = json.len() + 1;
        put(needed, n, "needed")?;
        if buf.is_null() {
            return Ok(());
        }
        if len < n {
            return Err(Failure(BsStatus::BufferTooSmall, format!("need {n} bytes")));
        }
        ptr::copy_nonoverlapping(json.as_ptr(), buf.cast::<u8>(), json.len());
        buf.add(json.len()).write(0);
        Ok(())
    })
}

/// Parses and validates a JSON function.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn bs_function_from_json(json: *const c_char, out: *mut *mut BsFunction) -> BsStatus {
    guard(|| {
        if json.is_null() {
            return Err(Failure::null("json"));
        }
        let s = CStr::from_ptr(json)
            .to_str()
            .map_err(|e| Failure::arg(e.to_string()))?;
        let f = PiecewiseExpPoly::from_json(s).map_err(|e| Failure::arg(e.to_string()))?;
        put(out, boxed(BsFunction(f)), "out")
    })
}

/// # Safety
/// `f` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn bs_function_free(f: *mut BsFunction) {
    if !f.is_null() {
        drop(Box::from_raw(f));
    }
}

/// Monte Carlo value of a barrier strategy (pathwise estimator, automatic horizon).
///
/// # Safety
/// `params` must be a live handle; `mean` and `stderr` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn bs_simulate_value(
    params: *const BsParams,
    barrier_low: f64,
    barrier_high: f64,
    x0: f64,
    state: BsRateState,
    n_paths: u64,
    seed: u64,
    dt: f64,
    mean: *mut f64,
    stderr: *mut f64,
) -> BsStatus {
    guard(|| {
        let p = get(params, "params")?;
        if mean.is_null() || stderr.is_null() {
            return Err(Failure::null("mean/stderr"));
        }
        let cfg = SimConfig {
            dt,
            ..SimConfig::new(x0, state.into(), n_paths as usize, seed)
        };
        let e = simulator::simulate_value(&p.0, &BarrierStrategy::new(barrier_low, barrier_high), &cfg)?;
        mean.write(e.mean);
        stderr.write(e.stderr);
        Ok(())
    })
}
