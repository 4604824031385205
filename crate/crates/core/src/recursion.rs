//! Value iteration alternating between the two rate states.
//!
//! Even iterates live in the high state and use barrier 0; odd iterates live
//! in the low state and use the root of [`barrier_gradient`] as barrier. The
//! pair of subsequences increases monotonically to the value function.

use serde::Serialize;
use thiserror::Error;

use crate::closed_form::{self, ClosedFormError};
use crate::exppoly::{
    linspace, solve_barrier_ode_with, ExpPolyError, ExpPolyTerm, PiecewiseExpPoly, SolveOptions,
    DEFAULT_MAX_POWER,
};
use crate::model::{ModelError, ModelParams, RateState};

/// Largest barrier searched before giving up.
pub const BARRIER_CAP: f64 = 1e3;
const MONOTONE_SLACK: f64 = 1e-10;
/// Slack of the barrier ordering `b_{n+2} <= b_n`, which is reported rather than enforced.
pub const BARRIER_SLACK: f64 = 1e-12;
/// Largest tolerated rounding noise of an iterate on the working grid.
const NOISE_LIMIT: f64 = 0.25 * MONOTONE_SLACK;

#[derive(Debug, Error)]
pub enum RecursionError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    ExpPoly(#[from] ExpPolyError),
    #[error(transparent)]
    ClosedForm(#[from] ClosedFormError),
    #[error("no convergence after {max_iter} iterations (last sup delta {:e})", last.sup_delta)]
    NoConvergence {
        max_iter: usize,
        last: Box<RecursionState>,
    },
    #[error("monotonicity violated at iterate {n}: {what} at x = {x}")]
    MonotonicityViolation { n: usize, what: &'static str, x: f64 },
    #[error("iterate {n} is dominated by cancellation (rounding noise {noise:e}); the exp-poly iteration cannot reach the tolerance for these parameters")]
    IllConditioned { n: usize, noise: f64 },
    #[error("barrier gradient has no sign change below {cap}")]
    BracketFailure { cap: f64 },
    #[error("iterate {n} has the wrong parity for this step")]
    WrongParity { n: usize },
    #[error("invalid solver setting: {0}")]
    BadSetting(&'static str),
}

#[derive(Debug, Clone, Serialize)]
pub struct RecursionState {
    pub n: usize,
    pub v: PiecewiseExpPoly,
    pub barrier: f64,
    pub sup_delta: f64,
    pub barrier_delta: f64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SolverSettings {
    pub tol: f64,
    pub tol_b: f64,
    pub tol_hjb: f64,
    pub max_iter: usize,
    pub grid_points: usize,
    pub max_power: u32,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            tol_b: 1e-10,
            tol_hjb: 1e-7,
            max_iter: 200,
            grid_points: 2001,
            max_power: DEFAULT_MAX_POWER,
        }
    }
}

impl SolverSettings {
    fn check(&self) -> Result<(), RecursionError> {
        if !(self.tol > 0.0 && self.tol_b > 0.0 && self.tol_hjb > 0.0) {
            return Err(RecursionError::BadSetting("tolerances must be positive"));
        }
        if self.grid_points < 2 || self.max_iter < 2 {
            return Err(RecursionError::BadSetting("need grid_points >= 2 and max_iter >= 2"));
        }
        Ok(())
    }

    fn solve_options(&self) -> SolveOptions {
        SolveOptions {
            max_power: self.max_power,
            ..SolveOptions::default()
        }
    }
}

/// One row of the iteration log.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct IterateSummary {
    pub n: usize,
    pub barrier: f64,
    pub value_at_0: f64,
    pub sup_delta: f64,
    pub slope_sup_delta: f64,
    pub barrier_delta: f64,
    pub terms: usize,
    pub max_power: u32,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct StateResidual {
    /// Largest violation of `min(r1, r2) = 0`, `r1 >= 0`, `r2 >= 0` on the grid.
    pub max_violation: f64,
    pub worst_x: f64,
    pub min_r1: f64,
    pub min_r2: f64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct HjbReport {
    pub low: StateResidual,
    pub high: StateResidual,
    pub tol: f64,
    pub passed: bool,
}

impl HjbReport {
    pub fn max_violation(&self) -> f64 {
        self.low.max_violation.max(self.high.max_violation)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Solution {
    pub v_low: PiecewiseExpPoly,
    pub v_high: PiecewiseExpPoly,
    pub barrier: f64,
    pub iterations: usize,
    /// The even iterates never moved because `lambda2 = 0`.
    pub lambda2_fixed_point: bool,
    pub x_max: f64,
    pub residuals: HjbReport,
    /// Largest `b_{n+2} - b_n` over the odd iterates (positive when a barrier grew).
    pub max_barrier_increase: f64,
    pub history: Vec<IterateSummary>,
}

impl Solution {
    pub fn value(&self, state: RateState) -> &PiecewiseExpPoly {
        match state {
            RateState::Low => &self.v_low,
            RateState::High => &self.v_high,
        }
    }

    pub fn grid(&self, points: usize) -> Vec<f64> {
        linspace(0.0, self.x_max, points)
    }
}

/// `V_0 = e^{-A2 x}/A2`, the value of reflecting at 0 in the high state.
pub fn v_initial(params: &ModelParams) -> Result<RecursionState, RecursionError> {
    params.validate()?;
    let a2 = params.ode_coeffs(RateState::High).a;
    Ok(RecursionState {
        n: 0,
        v: PiecewiseExpPoly::single(vec![ExpPolyTerm::exp(1.0 / a2, -a2)])?,
        barrier: 0.0,
        sup_delta: f64::INFINITY,
        barrier_delta: f64::INFINITY,
    })
}

/// Derivative in `b` of the low-state cost of pre-injecting up to `b` and
/// continuing with `v_even` after the next switch.
pub fn barrier_gradient(
    v_even: &PiecewiseExpPoly,
    b: f64,
    params: &ModelParams,
) -> Result<f64, RecursionError> {
    let c = params.ode_coeffs(RateState::Low);
    let tail = v_even.integrate_exp_tail(b, c.a_tilde)?;
    let k = 2.0 * c.lambda / (c.sigma * c.sigma * c.a);
    Ok(1.0 + k * (c.a_tilde * tail - v_even.eval(b, 0)))
}

/// Zero of [`barrier_gradient`], or 0 when the gradient is non-negative at 0.
pub fn find_barrier(
    v_even: &PiecewiseExpPoly,
    params: &ModelParams,
    tol_b: f64,
) -> Result<f64, RecursionError> {
    if barrier_gradient(v_even, 0.0, params)? >= 0.0 {
        return Ok(0.0);
    }
    let mut lo = 0.0;
    let mut hi = 1.0 / params.ode_coeffs(RateState::Low).a_tilde;
    while barrier_gradient(v_even, hi, params)? < 0.0 {
        lo = hi;
        hi *= 2.0;
        if hi > BARRIER_CAP {
            return Err(RecursionError::BracketFailure { cap: BARRIER_CAP });
        }
    }
    while hi - lo > tol_b {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if barrier_gradient(v_even, mid, params)? < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

pub fn step_odd(
    state: &RecursionState,
    params: &ModelParams,
    tol_b: f64,
) -> Result<RecursionState, RecursionError> {
    step_odd_with(state, params, tol_b, &SolveOptions::default())
}

fn step_odd_with(
    state: &RecursionState,
    params: &ModelParams,
    tol_b: f64,
    opts: &SolveOptions,
) -> Result<RecursionState, RecursionError> {
    if state.n % 2 != 0 {
        return Err(RecursionError::WrongParity { n: state.n });
    }
    let barrier = find_barrier(&state.v, params, tol_b)?;
    let v = solve_barrier_ode_with(&state.v, barrier, &params.ode_coeffs(RateState::Low), opts)?;
    Ok(RecursionState {
        n: state.n + 1,
        v,
        barrier,
        sup_delta: f64::INFINITY,
        barrier_delta: f64::INFINITY,
    })
}

/// High-state step with barrier 0. With `lambda2 = 0` this reproduces `V_0`.
pub fn step_even(
    state: &RecursionState,
    params: &ModelParams,
) -> Result<RecursionState, RecursionError> {
    step_even_with(state, params, &SolveOptions::default())
}

fn step_even_with(
    state: &RecursionState,
    params: &ModelParams,
    opts: &SolveOptions,
) -> Result<RecursionState, RecursionError> {
    if state.n % 2 != 1 {
        return Err(RecursionError::WrongParity { n: state.n });
    }
    let v = solve_barrier_ode_with(&state.v, 0.0, &params.ode_coeffs(RateState::High), opts)?;
    Ok(RecursionState {
        n: state.n + 1,
        v,
        barrier: 0.0,
        sup_delta: f64::INFINITY,
        barrier_delta: f64::INFINITY,
    })
}

/// Right end of the working grid: where the low-state minimal-strategy value
/// has fallen below `1e-10` of its value at 0. It dominates every iterate.
pub fn working_x_max(params: &ModelParams) -> Result<f64, RecursionError> {
    let v0 = closed_form::v0(params)?;
    let f = |x: f64| v0.v_low.eval(x, 0).max(v0.v_high.eval(x, 0));
    let target = 1e-10 * f(0.0);
    let mut x = 1.0;
    while f(x) >= target {
        x *= 1.25;
        if x > 1e6 {
            return Err(RecursionError::BadSetting("value does not decay on the working grid"));
        }
    }
    Ok(x)
}

/// Bound on the rounding error of evaluating `v` on `grid`: machine epsilon
/// times the largest sum of absolute term values.
pub fn rounding_noise(v: &PiecewiseExpPoly, grid: &[f64]) -> f64 {
    let worst = grid
        .iter()
        .map(|&x| {
            v.pieces()[v.piece_index(x)]
                .iter()
                .map(|t| t.eval(x, 0).abs())
                .sum::<f64>()
        })
        .fold(0.0, f64::max);
    f64::EPSILON * worst
}

struct Tracked {
    state: RecursionState,
    values: Vec<f64>,
    slopes: Vec<f64>,
}

impl Tracked {
    fn new(state: RecursionState, grid: &[f64]) -> Result<Self, RecursionError> {
        let noise = rounding_noise(&state.v, grid);
        if noise > NOISE_LIMIT {
            return Err(RecursionError::IllConditioned { n: state.n, noise });
        }
        let values = grid.iter().map(|&x| state.v.eval(x, 0)).collect();
        let slopes = grid.iter().map(|&x| state.v.eval(x, 1)).collect();
        Ok(Self { state, values, slopes })
    }

    /// Fills the deltas against `prev` (two steps back) and checks monotonicity.
    fn compare(&mut self, prev: &Tracked, grid: &[f64]) -> Result<f64, RecursionError> {
        let n = self.state.n;
        let mut sup = 0.0f64;
        let mut slope_sup = 0.0f64;
        for (i, &x) in grid.iter().enumerate() {
            let d = self.values[i] - prev.values[i];
            if d < -MONOTONE_SLACK {
                return Err(RecursionError::MonotonicityViolation {
                    n,
                    what: "V_{n+2} < V_n",
                    x,
                });
            }
            sup = sup.max(d.abs());
            slope_sup = slope_sup.max((self.slopes[i] - prev.slopes[i]).abs());
        }
        self.state.sup_delta = sup;
        self.state.barrier_delta = (self.state.barrier - prev.state.barrier).abs();
        Ok(slope_sup)
    }

    fn summary(&self, slope_sup_delta: f64) -> IterateSummary {
        IterateSummary {
            n: self.state.n,
            barrier: self.state.barrier,
            value_at_0: self.values[0],
            sup_delta: self.state.sup_delta,
            slope_sup_delta,
            barrier_delta: self.state.barrier_delta,
            terms: self.state.v.term_count(),
            max_power: self.state.v.max_power(),
        }
    }
}

/// Runs the iteration to convergence and certifies the limit against the HJB equation.
pub fn solve(params: &ModelParams, settings: &SolverSettings) -> Result<Solution, RecursionError> {
    settings.check()?;
    params.validate()?;
    let opts = settings.solve_options();
    let x_max = working_x_max(params)?;
    let grid = linspace(0.0, x_max, settings.grid_points);

    let mut even = Tracked::new(v_initial(params)?, &grid)?;
    let mut odd: Option<Tracked> = None;
    let mut history = vec![even.summary(f64::INFINITY)];
    loop {
        let next = step_odd_with(&even.state, params, settings.tol_b, &opts)?;
        let mut next_odd = Tracked::new(next, &grid)?;
        let odd_slope = match &odd {
            Some(prev) => next_odd.compare(prev, &grid)?,
            None => f64::INFINITY,
        };
        history.push(next_odd.summary(odd_slope));
        let next = step_even_with(&next_odd.state, params, &opts)?;
        let mut next_even = Tracked::new(next, &grid)?;
        let even_slope = next_even.compare(&even, &grid)?;
        history.push(next_even.summary(even_slope));

        let converged = next_odd.state.sup_delta < settings.tol
            && next_odd.state.barrier_delta < settings.tol
            && next_even.state.sup_delta < settings.tol;
        let n = next_even.state.n;
        odd = Some(next_odd);
        even = next_even;
        if converged {
            break;
        }
        if n + 2 > settings.max_iter {
            return Err(RecursionError::NoConvergence {
                max_iter: settings.max_iter,
                last: Box::new(odd.unwrap().state),
            });
        }
    }
    let odd = odd.expect("at least one odd step");
    let odd_barriers: Vec<f64> = history.iter().filter(|h| h.n % 2 == 1).map(|h| h.barrier).collect();
    let max_barrier_increase = odd_barriers
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::NEG_INFINITY, f64::max);
    let residuals = hjb_residual(&odd.state.v, &even.state.v, params, &grid, settings.tol_hjb);
    Ok(Solution {
        v_low: odd.state.v,
        v_high: even.state.v,
        barrier: odd.state.barrier,
        iterations: even.state.n,
        lambda2_fixed_point: params.lambda2 == 0.0,
        x_max,
        residuals,
        max_barrier_increase,
        history,
    })
}

fn state_residual(
    v: &PiecewiseExpPoly,
    other: &PiecewiseExpPoly,
    params: &ModelParams,
    state: RateState,
    grid: &[f64],
) -> StateResidual {
    let c = params.ode_coeffs(state);
    let mut out = StateResidual {
        max_violation: 0.0,
        worst_x: grid.first().copied().unwrap_or(0.0),
        min_r1: f64::INFINITY,
        min_r2: f64::INFINITY,
    };
    for &x in grid {
        let r1 = c.residual(v, other, x);
        let r2 = v.eval(x, 1) + 1.0;
        let violation = r1.min(r2).abs().max(-r1).max(-r2);
        if violation > out.max_violation {
            out.max_violation = violation;
            out.worst_x = x;
        }
        out.min_r1 = out.min_r1.min(r1);
        out.min_r2 = out.min_r2.min(r2);
    }
    out
}

/// Evaluates `min(L_i V_i + lambda_i V_j, V_i' + 1)` for both states on `grid`.
pub fn hjb_residual(
    v_low: &PiecewiseExpPoly,
    v_high: &PiecewiseExpPoly,
    params: &ModelParams,
    grid: &[f64],
    tol: f64,
) -> HjbReport {
    let low = state_residual(v_low, v_high, params, RateState::Low, grid);
    let high = state_residual(v_high, v_low, params, RateState::High, grid);
    HjbReport {
        low,
        high,
        tol,
        passed: low.max_violation <= tol && high.max_violation <= tol,
    }
}
