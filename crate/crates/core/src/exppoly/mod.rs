//! Piecewise exponential-polynomial functions.
//!
//! A piece is a finite sum of terms `c * x^k * exp(theta * x)`. A
//! [`PiecewiseExpPoly`] glues pieces together at breakpoints
//! `0 = x_0 < x_1 < ... < x_{m-1}`: piece `j` is valid on `[x_j, x_{j+1})`
//! and the last one on `[x_{m-1}, inf)`. Every value function produced by
//! the solver lives in this class, so evaluation, differentiation and the
//! exponentially weighted tail integrals below are exact up to rounding.
//!
//! JSON shape: `{"breakpoints": [...], "pieces": [[{"c": .., "k": .., "theta": ..}, ...], ...]}`.

mod ode;

pub use ode::{
    second_derivative_at_barrier, solve_barrier_ode, solve_barrier_ode_with, OdeCoeffs,
    SolveOptions,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default cap on the power `k` of a single term.
pub const DEFAULT_MAX_POWER: u32 = 256;

/// Terms whose sup over their piece falls below this fraction of the piece's
/// largest term are dropped.
pub const PRUNE_EPS: f64 = 1e-14;

/// Breakpoints closer than this are merged.
pub const MERGE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExpPolyError {
    #[error("invalid piecewise structure: {0}")]
    InvalidStructure(String),
    #[error("last piece does not vanish at infinity (rate {0} >= 0)")]
    NonDecayingTail(f64),
    #[error("tail integral diverges: rate {rate} is not below beta = {beta}")]
    Divergent { rate: f64, beta: f64 },
    #[error("resonance raised the power to {power}, above the cap {max}")]
    ResonanceEscalation { power: u32, max: u32 },
    #[error("precondition violated: {what} at x = {x}")]
    PreconditionViolated { what: &'static str, x: f64 },
    #[error("bad ODE coefficients: {0}")]
    BadCoefficients(String),
    #[error("non-finite coefficient produced")]
    NonFinite,
}

/// One term `coeff * x^power * exp(rate * x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpPolyTerm {
    #[serde(rename = "c")]
    pub coeff: f64,
    #[serde(rename = "k")]
    pub power: u32,
    #[serde(rename = "theta")]
    pub rate: f64,
}

impl ExpPolyTerm {
    pub fn new(coeff: f64, power: u32, rate: f64) -> Self {
        Self { coeff, power, rate }
    }

    pub fn exp(coeff: f64, rate: f64) -> Self {
        Self::new(coeff, 0, rate)
    }

    /// Value (`order = 0`) or derivative of the term at `x`.
    pub fn eval(&self, x: f64, order: u8) -> f64 {
        let k = self.power;
        let th = self.rate;
        let kf = k as f64;
        let v = match order {
            0 => mono(x, k, th),
            1 => {
                let lower = if k >= 1 { kf * mono(x, k - 1, th) } else { 0.0 };
                lower + th * mono(x, k, th)
            }
            2 => {
                let l2 = if k >= 2 {
                    kf * (kf - 1.0) * mono(x, k - 2, th)
                } else {
                    0.0
                };
                let l1 = if k >= 1 {
                    2.0 * kf * th * mono(x, k - 1, th)
                } else {
                    0.0
                };
                l2 + l1 + th * th * mono(x, k, th)
            }
            _ => panic!("derivative order {order} not supported"),
        };
        self.coeff * v
    }
}

/// `x^k e^{theta x}`, falling back to log space when the factors over- or underflow.
pub(crate) fn mono(x: f64, k: u32, theta: f64) -> f64 {
    let e = (theta * x).exp();
    if k == 0 {
        return e;
    }
    if x == 0.0 {
        return 0.0;
    }
    let p = x.powi(k as i32);
    let v = p * e;
    if v.is_finite() && v != 0.0 && p.is_finite() && e.is_finite() && e != 0.0 {
        return v;
    }
    if x > 0.0 {
        (k as f64 * x.ln() + theta * x).exp()
    } else {
        v
    }
}

/// Sum of the terms of one piece at `x`.
pub fn eval_terms(terms: &[ExpPolyTerm], x: f64, order: u8) -> f64 {
    terms.iter().map(|t| t.eval(x, order)).sum()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPiecewise {
    breakpoints: Vec<f64>,
    pieces: Vec<Vec<ExpPolyTerm>>,
}

/// A breakpointed sum of exponential-polynomial terms on `[0, inf)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPiecewise", into = "RawPiecewise")]
pub struct PiecewiseExpPoly {
    breakpoints: Vec<f64>,
    pieces: Vec<Vec<ExpPolyTerm>>,
}

impl TryFrom<RawPiecewise> for PiecewiseExpPoly {
    type Error = ExpPolyError;

    fn try_from(raw: RawPiecewise) -> Result<Self, Self::Error> {
        PiecewiseExpPoly::new(raw.breakpoints, raw.pieces)
    }
}

impl From<PiecewiseExpPoly> for RawPiecewise {
    fn from(f: PiecewiseExpPoly) -> Self {
        RawPiecewise {
            breakpoints: f.breakpoints,
            pieces: f.pieces,
        }
    }
}

impl PiecewiseExpPoly {
    /// Builds a function from breakpoints and pieces.
    ///
    /// Checks the structure (first breakpoint 0, strictly increasing, one piece
    /// per breakpoint, finite numbers) and that the last piece decays. Continuity
    /// is not required here; see [`PiecewiseExpPoly::continuity_defect`].
    pub fn new(
        breakpoints: Vec<f64>,
        pieces: Vec<Vec<ExpPolyTerm>>,
    ) -> Result<Self, ExpPolyError> {
        if breakpoints.is_empty() || breakpoints.len() != pieces.len() {
            return Err(ExpPolyError::InvalidStructure(format!(
                "{} breakpoints for {} pieces",
                breakpoints.len(),
                pieces.len()
            )));
        }
        if breakpoints[0] != 0.0 {
            return Err(ExpPolyError::InvalidStructure(
                "first breakpoint must be 0".into(),
            ));
        }
        if breakpoints.windows(2).any(|w| !(w[1] > w[0])) || breakpoints.iter().any(|b| !b.is_finite()) {
            return Err(ExpPolyError::InvalidStructure(
                "breakpoints must be finite and strictly increasing".into(),
            ));
        }
        for t in pieces.iter().flatten() {
            if !t.coeff.is_finite() || !t.rate.is_finite() {
                return Err(ExpPolyError::NonFinite);
            }
        }
        if let Some(t) = pieces
            .last()
            .unwrap()
            .iter()
            .find(|t| t.coeff != 0.0 && t.rate >= 0.0)
        {
            return Err(ExpPolyError::NonDecayingTail(t.rate));
        }
        Ok(Self {
            breakpoints,
            pieces,
        })
    }

    /// A single piece valid on all of `[0, inf)`.
    pub fn single(terms: Vec<ExpPolyTerm>) -> Result<Self, ExpPolyError> {
        Self::new(vec![0.0], vec![terms])
    }

    pub fn zero() -> Self {
        Self {
            breakpoints: vec![0.0],
            pieces: vec![Vec::new()],
        }
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn pieces(&self) -> &[Vec<ExpPolyTerm>] {
        &self.pieces
    }

    pub fn term_count(&self) -> usize {
        self.pieces.iter().map(Vec::len).sum()
    }

    pub fn max_power(&self) -> u32 {
        self.pieces
            .iter()
            .flatten()
            .map(|t| t.power)
            .max()
            .unwrap_or(0)
    }

    /// Largest rate in the last piece; `-inf` when the tail is identically zero.
    pub fn tail_rate_bound(&self) -> f64 {
        self.pieces
            .last()
            .unwrap()
            .iter()
            .filter(|t| t.coeff != 0.0)
            .map(|t| t.rate)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Index of the piece used at `x` (the right piece at a breakpoint).
    pub fn piece_index(&self, x: f64) -> usize {
        self.breakpoints.partition_point(|&b| b <= x).saturating_sub(1)
    }

    /// `[start, end)` of piece `j`; `end` is infinite for the last piece.
    pub fn piece_range(&self, j: usize) -> (f64, f64) {
        let hi = self
            .breakpoints
            .get(j + 1)
            .copied()
            .unwrap_or(f64::INFINITY);
        (self.breakpoints[j], hi)
    }

    /// `f(x)`, `f'(x)` or `f''(x)` for `order` 0, 1 or 2.
    pub fn eval(&self, x: f64, order: u8) -> f64 {
        eval_terms(&self.pieces[self.piece_index(x)], x, order)
    }

    /// Left limit at `x`: uses the piece that ends at `x` when `x` is a breakpoint.
    pub fn eval_left(&self, x: f64, order: u8) -> f64 {
        let j = self.breakpoints.partition_point(|&b| b < x).saturating_sub(1);
        eval_terms(&self.pieces[j], x, order)
    }

    /// Largest relative jump of `f`, `f'` across the interior breakpoints.
    pub fn continuity_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for &x in &self.breakpoints[1..] {
            for order in 0..=1 {
                let l = self.eval_left(x, order);
                let r = self.eval(x, order);
                worst = worst.max((l - r).abs() / (1.0 + l.abs().max(r.abs())));
            }
        }
        worst
    }

    /// `int_b^inf f(y) exp(-beta (y - b)) dy`, split at breakpoints and
    /// integrated term by term in closed form.
    pub fn integrate_exp_tail(&self, b: f64, beta: f64) -> Result<f64, ExpPolyError> {
        let b = b.max(0.0);
        let bound = self.tail_rate_bound();
        if bound >= beta {
            return Err(ExpPolyError::Divergent { rate: bound, beta });
        }
        let mut total = 0.0;
        for j in self.piece_index(b)..self.pieces.len() {
            let (start, end) = self.piece_range(j);
            let lo = start.max(b);
            if end <= lo {
                continue;
            }
            let len = end - lo;
            for t in &self.pieces[j] {
                if t.coeff == 0.0 {
                    continue;
                }
                total += term_weighted_integral(t, lo, len, beta, b);
            }
        }
        Ok(total)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializing finite numbers cannot fail")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }

    pub(crate) fn from_parts_unchecked(breakpoints: Vec<f64>, pieces: Vec<Vec<ExpPolyTerm>>) -> Self {
        debug_assert_eq!(breakpoints.len(), pieces.len());
        Self {
            breakpoints,
            pieces,
        }
    }
}

/// `int_lo^{lo+len} c y^k e^{theta y} e^{-beta (y - b)} dy` via the binomial
/// expansion of `(lo + s)^k`, which keeps every summand non-negative.
fn term_weighted_integral(t: &ExpPolyTerm, lo: f64, len: f64, beta: f64, b: f64) -> f64 {
    let gamma = t.rate - beta;
    let k = t.power;
    let scale = (t.rate * lo - beta * (lo - b)).exp();
    let mut sum = 0.0;
    let mut binom = 1.0;
    for i in 0..=k {
        if i > 0 {
            binom *= (k - i + 1) as f64 / i as f64;
        }
        let lo_pow = if k - i == 0 { 1.0 } else { lo.powi((k - i) as i32) };
        if lo_pow == 0.0 {
            continue;
        }
        sum += binom * lo_pow * exp_moment(i, gamma, len);
    }
    t.coeff * scale * sum
}

/// `int_0^len s^i e^{gamma s} ds`; `len` may be infinite when `gamma < 0`.
pub(crate) fn exp_moment(i: u32, gamma: f64, len: f64) -> f64 {
    let ip1 = (i + 1) as f64;
    if len == 0.0 {
        return 0.0;
    }
    if len.is_infinite() {
        debug_assert!(gamma < 0.0);
        let a = -gamma;
        let mut r = 1.0 / a;
        for m in 1..=i {
            r *= m as f64 / a;
        }
        return r;
    }
    if gamma == 0.0 {
        return len.powi(i as i32 + 1) / ip1;
    }
    let lead = len.powi(i as i32 + 1);
    if gamma > 0.0 {
        // len^{i+1} sum_m (g len)^m / (m! (i+m+1)), all terms positive
        let x = gamma * len;
        let mut term = 1.0;
        let mut sum = 1.0 / ip1;
        let mut m = 0u32;
        loop {
            m += 1;
            term *= x / m as f64;
            let add = term / (ip1 + m as f64);
            sum += add;
            if (m as f64) > x && add <= 1e-17 * sum {
                break;
            }
        }
        return lead * sum;
    }
    let a = -gamma;
    let x = a * len;
    if x < ip1 + 20.0 {
        // e^{-x} len^{i+1}/(i+1) sum_m x^m / ((i+2)...(i+1+m))
        let mut term = 1.0;
        let mut sum = 1.0;
        let mut m = 0u32;
        loop {
            m += 1;
            term *= x / (ip1 + m as f64);
            sum += term;
            if term <= 1e-17 * sum {
                break;
            }
        }
        (-x).exp() * lead / ip1 * sum
    } else {
        // i!/a^{i+1} (1 - e^{-x} sum_{j<=i} x^j/j!)
        let mut full = 1.0 / a;
        for m in 1..=i {
            full *= m as f64 / a;
        }
        let mut term = (-x).exp();
        let mut q = term;
        for j in 1..=i {
            term *= x / j as f64;
            q += term;
        }
        full * (1.0 - q)
    }
}

/// Log of `sup |x^k e^{theta x}|` over `[lo, hi]`.
fn log_sup(power: u32, rate: f64, lo: f64, hi: f64) -> f64 {
    let at = |x: f64| {
        if power == 0 {
            rate * x
        } else if x <= 0.0 {
            f64::NEG_INFINITY
        } else {
            power as f64 * x.ln() + rate * x
        }
    };
    if power == 0 {
        return if rate > 0.0 {
            at(hi)
        } else if rate < 0.0 {
            at(lo)
        } else {
            0.0
        };
    }
    if rate >= 0.0 {
        return at(hi);
    }
    let peak = (-(power as f64) / rate).clamp(lo, hi);
    at(peak)
}

/// Merges like terms, drops negligible ones and sorts by `(rate, power)`.
pub(crate) fn normalize_piece(terms: Vec<ExpPolyTerm>, lo: f64, hi: f64) -> Vec<ExpPolyTerm> {
    let mut merged: Vec<ExpPolyTerm> = Vec::with_capacity(terms.len());
    for t in terms {
        if t.coeff == 0.0 {
            continue;
        }
        match merged.iter_mut().find(|m| {
            m.power == t.power && (m.rate - t.rate).abs() <= 1e-12 * m.rate.abs().max(1.0)
        }) {
            Some(m) => m.coeff += t.coeff,
            None => merged.push(t),
        }
    }
    let mags: Vec<f64> = merged
        .iter()
        .map(|t| {
            if t.coeff == 0.0 {
                f64::NEG_INFINITY
            } else {
                t.coeff.abs().ln() + log_sup(t.power, t.rate, lo, hi)
            }
        })
        .collect();
    let top = mags.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let cut = top + PRUNE_EPS.ln();
    let mut out: Vec<ExpPolyTerm> = merged
        .into_iter()
        .zip(mags)
        .filter(|(_, m)| m.is_finite() && *m >= cut)
        .map(|(t, _)| t)
        .collect();
    out.sort_by(|a, b| {
        a.rate
            .partial_cmp(&b.rate)
            .unwrap()
            .then(a.power.cmp(&b.power))
    });
    out
}

/// `n` equally spaced points on `[a, b]`.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => {
            let h = (b - a) / (n - 1) as f64;
            (0..n)
                .map(|i| if i == n - 1 { b } else { a + h * i as f64 })
                .collect()
        }
    }
}
