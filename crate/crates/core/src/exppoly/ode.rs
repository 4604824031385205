//! Explicit solver for the barrier ODE
//!
//! ```text
//! sigma^2/2 V'' + mu V' - (lambda + delta) V + lambda U = 0   on [b, inf)
//! V'(b) = -1,  V(x) -> 0 as x -> inf,  V(x) = V(b) + (b - x) on [0, b)
//! ```
//!
//! With `psi = sqrt(mu^2 + 2 sigma^2 (delta + lambda))`, the characteristic
//! roots are `-A = -(mu + psi)/sigma^2` and `A~ = (psi - mu)/sigma^2`. On each
//! piece of `U` the solution is a particular exp-poly solution plus
//! `alpha e^{-A x} + beta e^{A~ x}`; the last piece has `beta = 0`, the
//! coefficients are glued `C^1` across the breakpoints of `U`, and the
//! remaining constant is fixed by `V'(b) = -1`.

use serde::Serialize;

use super::{
    eval_terms, linspace, normalize_piece, ExpPolyError, ExpPolyTerm, PiecewiseExpPoly,
    DEFAULT_MAX_POWER, MERGE_EPS,
};

/// Relative distance of a rate to `-A` or `A~` below which it is treated as resonant.
const RESONANCE_EPS: f64 = 1e-9;

/// Coefficients of one state's ODE, plus the derived `psi`, `A`, `A~`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OdeCoeffs {
    pub mu: f64,
    pub sigma: f64,
    pub lambda: f64,
    pub delta: f64,
    pub psi: f64,
    /// `(mu + psi) / sigma^2`, the decay rate of the homogeneous solution.
    pub a: f64,
    /// `(psi - mu) / sigma^2`.
    pub a_tilde: f64,
}

impl OdeCoeffs {
    pub fn new(mu: f64, sigma: f64, lambda: f64, delta: f64) -> Self {
        let s2 = sigma * sigma;
        let psi = (mu * mu + 2.0 * s2 * (delta + lambda)).sqrt();
        Self {
            mu,
            sigma,
            lambda,
            delta,
            psi,
            a: (mu + psi) / s2,
            a_tilde: (psi - mu) / s2,
        }
    }

    pub fn check(&self) -> Result<(), ExpPolyError> {
        let ok = self.mu > 0.0
            && self.sigma > 0.0
            && self.lambda >= 0.0
            && self.delta + self.lambda > 0.0
            && self.psi.is_finite();
        if ok {
            Ok(())
        } else {
            Err(ExpPolyError::BadCoefficients(format!(
                "need mu > 0, sigma > 0, lambda >= 0, delta + lambda > 0 (got {self:?})"
            )))
        }
    }

    fn half_var(&self) -> f64 {
        0.5 * self.sigma * self.sigma
    }

    /// `sigma^2/2 theta^2 + mu theta - (lambda + delta)`.
    pub fn char_poly(&self, theta: f64) -> f64 {
        self.half_var() * theta * theta + self.mu * theta - (self.lambda + self.delta)
    }

    fn is_resonant(&self, theta: f64) -> bool {
        (theta + self.a).abs() < RESONANCE_EPS * self.a
            || (theta - self.a_tilde).abs() < RESONANCE_EPS * self.a_tilde
    }

    /// Residual `sigma^2/2 V'' + mu V' - (lambda + delta) V + lambda U` at `x`.
    pub fn residual(&self, v: &PiecewiseExpPoly, u: &PiecewiseExpPoly, x: f64) -> f64 {
        self.half_var() * v.eval(x, 2) + self.mu * v.eval(x, 1)
            - (self.lambda + self.delta) * v.eval(x, 0)
            + self.lambda * u.eval(x, 0)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    /// Largest admissible power `k` in the output.
    pub max_power: u32,
    /// Assert that `U` is non-negative, decreasing and convex on a grid.
    pub check_preconditions: bool,
    /// Tolerance of the grid assertions, relative to `max(1, U(0))`.
    pub precondition_tol: f64,
    pub precondition_points: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            max_power: DEFAULT_MAX_POWER,
            check_preconditions: true,
            precondition_tol: 1e-9,
            precondition_points: 400,
        }
    }
}

/// Solves the barrier ODE for the inhomogeneity `u` and barrier `b`.
pub fn solve_barrier_ode(
    u: &PiecewiseExpPoly,
    b: f64,
    coeffs: &OdeCoeffs,
) -> Result<PiecewiseExpPoly, ExpPolyError> {
    solve_barrier_ode_with(u, b, coeffs, &SolveOptions::default())
}

pub fn solve_barrier_ode_with(
    u: &PiecewiseExpPoly,
    b: f64,
    coeffs: &OdeCoeffs,
    opts: &SolveOptions,
) -> Result<PiecewiseExpPoly, ExpPolyError> {
    coeffs.check()?;
    if !(b >= 0.0) || !b.is_finite() {
        return Err(ExpPolyError::BadCoefficients(format!("barrier {b} must be finite and >= 0")));
    }
    let b = if b < MERGE_EPS { 0.0 } else { b };
    if opts.check_preconditions {
        check_inhomogeneity(u, b, coeffs, opts)?;
    }
    let a = coeffs.a;
    let at = coeffs.a_tilde;

    // segments of [b, inf) on which U is a single piece
    let first = u.piece_index(b + MERGE_EPS);
    let mut starts = vec![b];
    let mut source = vec![first];
    for j in first + 1..u.pieces().len() {
        starts.push(u.breakpoints()[j]);
        source.push(j);
    }
    let nseg = starts.len();

    let mut particular = Vec::with_capacity(nseg);
    for &j in &source {
        let p = particular_solution(&u.pieces()[j], coeffs)?;
        if let Some(t) = p.iter().find(|t| t.power > opts.max_power) {
            return Err(ExpPolyError::ResonanceEscalation {
                power: t.power,
                max: opts.max_power,
            });
        }
        particular.push(p);
    }

    // glue C^1 across interior breakpoints, walking back from the tail (beta = 0)
    let mut beta = vec![0.0; nseg];
    let mut alpha_offset = vec![0.0; nseg];
    for s in (0..nseg - 1).rev() {
        let x = starts[s + 1];
        let d0 = eval_terms(&particular[s + 1], x, 0) - eval_terms(&particular[s], x, 0);
        let d1 = eval_terms(&particular[s + 1], x, 1) - eval_terms(&particular[s], x, 1);
        let w = (a * d0 + d1) / (a + at);
        let v = (at * d0 - d1) / (a + at);
        beta[s] = beta[s + 1] + w * (-at * x).exp();
        alpha_offset[s] = alpha_offset[s + 1] + v * (a * x).exp();
    }
    // V'(b) = -1 fixes the tail coefficient of e^{-Ax}
    let slope_rest = eval_terms(&particular[0], b, 1) + at * beta[0] * (at * b).exp();
    let alpha_tail = (1.0 + slope_rest) * (a * b).exp() / a - alpha_offset[0];

    let mut breakpoints = Vec::with_capacity(nseg + 1);
    let mut pieces = Vec::with_capacity(nseg + 1);
    for s in 0..nseg {
        let mut terms = std::mem::take(&mut particular[s]);
        let alpha = alpha_tail + alpha_offset[s];
        terms.push(ExpPolyTerm::exp(alpha, -a));
        if beta[s] != 0.0 {
            terms.push(ExpPolyTerm::exp(beta[s], at));
        }
        let hi = starts.get(s + 1).copied().unwrap_or(f64::INFINITY);
        let terms = normalize_piece(terms, starts[s], hi);
        if terms.iter().any(|t| !t.coeff.is_finite()) {
            return Err(ExpPolyError::NonFinite);
        }
        breakpoints.push(starts[s]);
        pieces.push(terms);
    }
    if b > 0.0 {
        let vb = eval_terms(&pieces[0], b, 0);
        breakpoints.insert(0, 0.0);
        pieces.insert(
            0,
            vec![ExpPolyTerm::new(vb + b, 0, 0.0), ExpPolyTerm::new(-1.0, 1, 0.0)],
        );
    }
    Ok(PiecewiseExpPoly::from_parts_unchecked(breakpoints, pieces))
}

/// Particular solution of `L q = -lambda * (terms)` for one piece of `U`, rate by rate.
fn particular_solution(
    terms: &[ExpPolyTerm],
    c: &OdeCoeffs,
) -> Result<Vec<ExpPolyTerm>, ExpPolyError> {
    let mut out = Vec::new();
    if c.lambda == 0.0 {
        return Ok(out);
    }
    let mut rates: Vec<f64> = Vec::new();
    for t in terms {
        if !rates.iter().any(|&r| r == t.rate) {
            rates.push(t.rate);
        }
    }
    let s = c.half_var();
    for theta in rates {
        let deg = terms
            .iter()
            .filter(|t| t.rate == theta)
            .map(|t| t.power as usize)
            .max()
            .unwrap();
        let mut rhs = vec![0.0; deg + 1];
        for t in terms.iter().filter(|t| t.rate == theta) {
            rhs[t.power as usize] -= c.lambda * t.coeff;
        }
        // operator on q(x) e^{theta x}: e^{theta x} (s q'' + lin q' + p q)
        let lin = c.sigma * c.sigma * theta + c.mu;
        let q = if c.is_resonant(theta) {
            let mut q = vec![0.0; deg + 3];
            for j in (0..=deg).rev() {
                let jf = j as f64;
                q[j + 1] = (rhs[j] - s * (jf + 2.0) * (jf + 1.0) * q[j + 2]) / (lin * (jf + 1.0));
            }
            q.truncate(deg + 2);
            q
        } else {
            let p = c.char_poly(theta);
            let mut q = vec![0.0; deg + 3];
            for j in (0..=deg).rev() {
                let jf = j as f64;
                q[j] = (rhs[j]
                    - lin * (jf + 1.0) * q[j + 1]
                    - s * (jf + 2.0) * (jf + 1.0) * q[j + 2])
                    / p;
            }
            q.truncate(deg + 1);
            q
        };
        out.extend(
            q.into_iter()
                .enumerate()
                .filter(|(_, v)| *v != 0.0)
                .map(|(k, v)| ExpPolyTerm::new(v, k as u32, theta)),
        );
    }
    Ok(out)
}

fn check_inhomogeneity(
    u: &PiecewiseExpPoly,
    b: f64,
    c: &OdeCoeffs,
    opts: &SolveOptions,
) -> Result<(), ExpPolyError> {
    let tol = opts.precondition_tol * u.eval(0.0, 0).abs().max(1.0);
    for x in linspace(0.0, b + 40.0 / c.a_tilde, opts.precondition_points) {
        if u.eval(x, 0) < -tol {
            return Err(ExpPolyError::PreconditionViolated { what: "U >= 0", x });
        }
        if u.eval(x, 1) > tol {
            return Err(ExpPolyError::PreconditionViolated {
                what: "U decreasing",
                x,
            });
        }
        if u.eval(x, 2) < -tol {
            return Err(ExpPolyError::PreconditionViolated { what: "U convex", x });
        }
    }
    Ok(())
}

/// `V_b''(b)` for the solution with barrier `b`, without building `V_b`:
/// `A + (2 lambda / sigma^2) (A~ int_b^inf U(y) e^{-A~ (y-b)} dy - U(b))`.
pub fn second_derivative_at_barrier(
    u: &PiecewiseExpPoly,
    b: f64,
    coeffs: &OdeCoeffs,
) -> Result<f64, ExpPolyError> {
    coeffs.check()?;
    check_inhomogeneity(u, b, coeffs, &SolveOptions::default())?;
    let tail = u.integrate_exp_tail(b, coeffs.a_tilde)?;
    let s2 = coeffs.sigma * coeffs.sigma;
    Ok(coeffs.a + 2.0 * coeffs.lambda / s2 * (coeffs.a_tilde * tail - u.eval(b, 0)))
}
