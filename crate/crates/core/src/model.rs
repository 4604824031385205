//! Model parameters, well-posedness checks and the regime-switching discount factor.
//!
//! The surplus follows `X_t = x + mu t + sigma W_t`. The interest rate is a
//! two-state Markov chain taking the value `delta1` (low state) or `delta2`
//! (high state), leaving the low state with intensity `lambda1` and the high
//! state with intensity `lambda2`.
//!
//! `E[exp(-int_0^t r_s ds)]` has a closed form through the matrix exponential
//! of
//!
//! ```text
//! R = [[-lambda1 - delta1 + delta2, lambda1],
//!      [ lambda2,                   -lambda2]]
//! ```
//!
//! whose eigenvalues are `omega1 >= omega2`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exppoly::OdeCoeffs;

/// Relative tolerance below which `omega1` and `omega2` are treated as equal.
pub const SPECTRUM_EPS: f64 = 1e-9;

/// Time span on which the discount envelope constant is certified.
pub const ENVELOPE_HORIZON: f64 = 50.0;

const ENVELOPE_GRID_STEPS: usize = 5000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("parameter {name} is not finite")]
    NotFinite { name: &'static str },
    #[error("drift mu must be > 0 (got {0})")]
    NonPositiveDrift(f64),
    #[error("volatility sigma must be > 0 (got {0})")]
    NonPositiveVolatility(f64),
    #[error("bad intensity: {0}")]
    BadIntensity(&'static str),
    #[error("rate ordering violated: {0}")]
    RateOrdering(&'static str),
    #[error("ill-posed: delta1 = {delta1} must exceed -lambda1*delta2/(lambda2+delta2) = {threshold}")]
    IllPosed { delta1: f64, threshold: f64 },
    #[error("rates coincide: no exponential envelope with rate c exists (omega1 = omega2 = {omega})")]
    DegenerateSpectrum { omega: f64 },
}

/// How strictly [`ModelParams::validate`] checks the rate parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValidationMode {
    /// `delta1 <= 0 < delta2` and `delta1 > -lambda1*delta2/(lambda2+delta2)`.
    #[default]
    Strict,
    /// Only `delta_i + lambda_i > 0`; meant for reductions and tests.
    Relaxed,
}

/// State of the interest-rate chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RateState {
    /// Carries `delta1`.
    Low,
    /// Carries `delta2`.
    High,
}

impl RateState {
    pub const BOTH: [RateState; 2] = [RateState::Low, RateState::High];

    pub fn other(self) -> RateState {
        match self {
            RateState::Low => RateState::High,
            RateState::High => RateState::Low,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            RateState::Low => "low",
            RateState::High => "high",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    pub mu: f64,
    pub sigma: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    #[serde(default)]
    pub mode: ValidationMode,
}

impl ModelParams {
    pub fn new(
        mu: f64,
        sigma: f64,
        delta1: f64,
        delta2: f64,
        lambda1: f64,
        lambda2: f64,
        mode: ValidationMode,
    ) -> Self {
        Self {
            mu,
            sigma,
            delta1,
            delta2,
            lambda1,
            lambda2,
            mode,
        }
    }

    /// The parameter set of the worked example: `(0.05, 0.45, -0.56, 0.1, 0.57, 0)`.
    pub fn worked_example() -> Self {
        Self::new(0.05, 0.45, -0.56, 0.1, 0.57, 0.0, ValidationMode::Strict)
    }

    /// Checks the invariants of the declared mode, reporting the first violated one.
    pub fn validate(&self) -> Result<(), ModelError> {
        for (name, v) in [
            ("mu", self.mu),
            ("sigma", self.sigma),
            ("delta1", self.delta1),
            ("delta2", self.delta2),
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
        ] {
            if !v.is_finite() {
                return Err(ModelError::NotFinite { name });
            }
        }
        if self.mu <= 0.0 {
            return Err(ModelError::NonPositiveDrift(self.mu));
        }
        if self.sigma <= 0.0 {
            return Err(ModelError::NonPositiveVolatility(self.sigma));
        }
        if self.lambda1 <= 0.0 {
            return Err(ModelError::BadIntensity("lambda1 must be > 0"));
        }
        if self.lambda2 < 0.0 {
            return Err(ModelError::BadIntensity("lambda2 must be >= 0"));
        }
        match self.mode {
            ValidationMode::Strict => {
                if self.delta1 > 0.0 {
                    return Err(ModelError::RateOrdering("delta1 must be <= 0"));
                }
                if self.delta2 <= 0.0 {
                    return Err(ModelError::RateOrdering("delta2 must be > 0"));
                }
                let threshold = self.well_posed_threshold();
                if self.delta1 <= threshold {
                    return Err(ModelError::IllPosed {
                        delta1: self.delta1,
                        threshold,
                    });
                }
            }
            ValidationMode::Relaxed => {
                if self.delta1 + self.lambda1 <= 0.0 {
                    return Err(ModelError::BadIntensity("delta1 + lambda1 must be > 0"));
                }
                if self.delta2 + self.lambda2 <= 0.0 {
                    return Err(ModelError::BadIntensity("delta2 + lambda2 must be > 0"));
                }
            }
        }
        Ok(())
    }

    /// `-lambda1*delta2/(lambda2+delta2)`, the infimum of admissible `delta1`.
    pub fn well_posed_threshold(&self) -> f64 {
        -self.lambda1 * self.delta2 / (self.lambda2 + self.delta2)
    }

    pub fn rate(&self, state: RateState) -> f64 {
        match state {
            RateState::Low => self.delta1,
            RateState::High => self.delta2,
        }
    }

    pub fn intensity(&self, state: RateState) -> f64 {
        match state {
            RateState::Low => self.lambda1,
            RateState::High => self.lambda2,
        }
    }

    /// Coefficients of `sigma^2/2 V'' + mu V' - (lambda+delta) V + lambda U = 0` for one state.
    pub fn ode_coeffs(&self, state: RateState) -> OdeCoeffs {
        OdeCoeffs::new(self.mu, self.sigma, self.intensity(state), self.rate(state))
    }
}

/// Eigen-structure of `R` together with the exponential envelope of the discount factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DiscountConstants {
    /// `-(lambda1 + lambda2 + delta1 + delta2)`.
    pub a: f64,
    /// `sqrt((lambda1 + lambda2 + delta1 - delta2)^2 + 4 lambda2 (delta2 - delta1))`.
    pub b: f64,
    pub omega1: f64,
    pub omega2: f64,
    /// Decay rate `delta2 - omega1`.
    pub c: f64,
    /// Envelope constant: `E[exp(-int r)] <= big_c * exp(-c t)`.
    pub big_c: f64,
}

#[derive(Debug, Clone, Copy)]
struct Spectrum {
    a: f64,
    b: f64,
    omega1: f64,
    omega2: f64,
    degenerate: bool,
}

fn spectrum(params: &ModelParams) -> Result<Spectrum, ModelError> {
    params.validate()?;
    let (l1, l2, d1, d2) = (params.lambda1, params.lambda2, params.delta1, params.delta2);
    if d2 < d1 {
        return Err(ModelError::RateOrdering(
            "the discount formula needs delta2 >= delta1",
        ));
    }
    let a = -(l1 + l2 + d1 + d2);
    let s = l1 + l2 + d1 - d2;
    let b = (s * s + 4.0 * l2 * (d2 - d1)).sqrt();
    let omega1 = d2 + 0.5 * (a + b);
    let omega2 = d2 + 0.5 * (a - b);
    let scale = a.abs().max(b).max(d2.abs()).max(f64::MIN_POSITIVE);
    Ok(Spectrum {
        a,
        b,
        omega1,
        omega2,
        degenerate: (omega1 - omega2).abs() < SPECTRUM_EPS * scale,
    })
}

/// `e^{t w2'} (e^{t*gap} - 1)/gap` with `w2' = omega2 - delta2`, continuous through `gap = 0`.
fn slow_growth(t: f64, slow_rate: f64, gap: f64, degenerate: bool) -> f64 {
    if degenerate || gap == 0.0 {
        t * (t * slow_rate).exp()
    } else if t * gap < 1.0 {
        (t * slow_rate).exp() * (t * gap).exp_m1() / gap
    } else {
        ((t * (slow_rate + gap)).exp() - (t * slow_rate).exp()) / gap
    }
}

fn discount_from_spectrum(sp: &Spectrum, params: &ModelParams, eta0: RateState, t: f64) -> f64 {
    let d2 = params.delta2;
    let slow_rate = sp.omega2 - d2;
    let slow = (t * slow_rate).exp();
    let grown = slow_growth(t, slow_rate, sp.omega1 - sp.omega2, sp.degenerate);
    // omega1 e^{t w2'} - omega2 e^{t w1'} over the gap, rewritten around e^{t w2'}
    let base = slow - sp.omega2 * grown;
    match eta0 {
        RateState::Low => base + grown * (d2 - params.delta1),
        RateState::High => base,
    }
}

/// Computes `a, b, omega1, omega2`, the decay rate `c` and a certified envelope constant.
pub fn discount_constants(params: &ModelParams) -> Result<DiscountConstants, ModelError> {
    let sp = spectrum(params)?;
    if sp.degenerate {
        return Err(ModelError::DegenerateSpectrum { omega: sp.omega1 });
    }
    let c = -(sp.omega1 - params.delta2);
    let gap = sp.omega1 - sp.omega2;
    // limit of E[..] e^{ct} as t -> infinity, per starting state
    let tail_high = -sp.omega2 / gap;
    let tail_low = (params.delta2 - params.delta1 - sp.omega2) / gap;
    let mut big_c = tail_high.max(tail_low).max(1.0);
    let dt = ENVELOPE_HORIZON / ENVELOPE_GRID_STEPS as f64;
    for i in 0..=ENVELOPE_GRID_STEPS {
        let t = i as f64 * dt;
        for eta in RateState::BOTH {
            let ratio = discount_from_spectrum(&sp, params, eta, t) * (c * t).exp();
            big_c = big_c.max(ratio);
        }
    }
    Ok(DiscountConstants {
        a: sp.a,
        b: sp.b,
        omega1: sp.omega1,
        omega2: sp.omega2,
        c,
        big_c: big_c * (1.0 + 8.0 * f64::EPSILON),
    })
}

/// `E[exp(-int_0^t r_s ds)]` for the chain started in `eta0`.
///
/// Coinciding eigenvalues are handled through the removable singularity, so
/// this never fails for parameters accepted by `discount_constants`' checks.
pub fn expected_discount(params: &ModelParams, eta0: RateState, t: f64) -> Result<f64, ModelError> {
    let sp = spectrum(params)?;
    Ok(discount_from_spectrum(&sp, params, eta0, t.max(0.0)))
}

/// `C exp(-c t)`, an upper bound of [`expected_discount`] for both starting states.
pub fn discount_envelope(params: &ModelParams, t: f64) -> Result<f64, ModelError> {
    let k = discount_constants(params)?;
    Ok(k.big_c * (-k.c * t).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn adjacent() -> ModelParams {
        ModelParams::new(0.05, 0.45, -0.1, 0.1, 1.0, 0.5, ValidationMode::Strict)
    }

    #[test]
    fn worked_example_is_well_posed() {
        let p = ModelParams::worked_example();
        assert!(p.validate().is_ok());
        assert_relative_eq!(p.well_posed_threshold(), -0.57, epsilon = 1e-15);
    }

    #[test]
    fn below_threshold_is_ill_posed() {
        let p = ModelParams {
            delta1: -0.58,
            ..ModelParams::worked_example()
        };
        assert!(matches!(p.validate(), Err(ModelError::IllPosed { .. })));
    }

    #[test]
    fn relaxed_equal_rates_ok() {
        let p = ModelParams::new(0.05, 0.45, 0.1, 0.1, 1.0, 1.0, ValidationMode::Relaxed);
        assert!(p.validate().is_ok());
        // strict mode rejects delta1 > 0
        let strict = ModelParams {
            mode: ValidationMode::Strict,
            ..p
        };
        assert!(matches!(strict.validate(), Err(ModelError::RateOrdering(_))));
    }

    #[test]
    fn first_violation_is_reported() {
        let mut p = adjacent();
        p.mu = 0.0;
        p.sigma = -1.0;
        assert!(matches!(p.validate(), Err(ModelError::NonPositiveDrift(_))));
        p.mu = 0.1;
        assert!(matches!(p.validate(), Err(ModelError::NonPositiveVolatility(_))));
        p.sigma = 0.3;
        p.lambda1 = 0.0;
        assert!(matches!(p.validate(), Err(ModelError::BadIntensity(_))));
        p.lambda1 = 1.0;
        p.lambda2 = -0.1;
        assert!(matches!(p.validate(), Err(ModelError::BadIntensity(_))));
    }

    #[test]
    fn example_constants() {
        let k = discount_constants(&ModelParams::worked_example()).unwrap();
        assert_relative_eq!(k.a, -0.11, epsilon = 1e-14);
        assert_relative_eq!(k.b, 0.09, epsilon = 1e-14);
        assert_relative_eq!(k.c, 0.01, epsilon = 1e-14);
    }

    #[test]
    fn equal_rates_collapse() {
        let p = ModelParams::new(0.05, 0.45, 0.1, 0.1, 1.0, 0.7, ValidationMode::Relaxed);
        let k = discount_constants(&p).unwrap();
        assert_relative_eq!(k.b, 1.7, epsilon = 1e-14);
        assert!(k.omega1.abs() < 1e-15);
        assert_relative_eq!(k.c, 0.1, epsilon = 1e-14);
        for t in [0.0, 0.3, 1.0, 7.5] {
            for eta in RateState::BOTH {
                let v = expected_discount(&p, eta, t).unwrap();
                assert_relative_eq!(v, (-0.1 * t).exp(), max_relative = 1e-12);
                assert!(discount_envelope(&p, t).unwrap() >= v);
            }
        }
        assert_relative_eq!(k.big_c, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn omegas_are_eigenvalues_of_r() {
        let p = adjacent();
        let k = discount_constants(&p).unwrap();
        let r11 = -p.lambda1 - p.delta1 + p.delta2;
        let r22 = -p.lambda2;
        let tr = r11 + r22;
        let det = r11 * r22 - p.lambda1 * p.lambda2;
        for w in [k.omega1, k.omega2] {
            let resid = w * w - tr * w + det;
            assert!(resid.abs() <= 1e-12 * (w * w).max(det.abs()).max(1e-300));
        }
        // independent root finding of the characteristic polynomial by bisection
        let chi = |w: f64| w * w - tr * w + det;
        let mut roots = Vec::new();
        let mut prev = -10.0;
        for i in 1..=20000 {
            let x = -10.0 + i as f64 * 1e-3;
            if chi(prev).signum() != chi(x).signum() {
                let (mut lo, mut hi) = (prev, x);
                for _ in 0..200 {
                    let m = 0.5 * (lo + hi);
                    if chi(lo).signum() == chi(m).signum() {
                        lo = m;
                    } else {
                        hi = m;
                    }
                }
                roots.push(0.5 * (lo + hi));
            }
            prev = x;
        }
        assert_eq!(roots.len(), 2);
        assert_relative_eq!(roots[1], k.omega1, max_relative = 1e-12);
        assert_relative_eq!(roots[0], k.omega2, max_relative = 1e-12);
        assert!(k.c > 0.0 && k.b >= 0.0);
        assert!(k.omega2 - p.delta2 < k.omega1 - p.delta2);
    }

    #[test]
    fn discount_at_zero_is_one() {
        for eta in RateState::BOTH {
            assert_eq!(expected_discount(&adjacent(), eta, 0.0).unwrap(), 1.0);
        }
        assert!(discount_envelope(&adjacent(), 0.0).unwrap() >= 1.0);
    }

    #[test]
    fn envelope_dominates_on_grid() {
        let p = adjacent();
        for i in 0..=40 {
            let t = 0.5 * i as f64;
            let env = discount_envelope(&p, t).unwrap();
            for eta in RateState::BOTH {
                let v = expected_discount(&p, eta, t).unwrap();
                assert!(v > 0.0 && v <= env, "t={t} eta={eta:?} v={v} env={env}");
            }
        }
    }

    #[test]
    fn low_start_discounts_less_and_decays() {
        let p = adjacent();
        for t in [0.0, 0.5, 1.0, 2.0, 5.0] {
            let lo = expected_discount(&p, RateState::Low, t).unwrap();
            assert!(lo >= expected_discount(&p, RateState::High, t).unwrap());
        }
        // a negative low rate lets the factor exceed 1 early on, so decay is checked late
        let mut last = f64::INFINITY;
        for t in [10.0, 20.0, 40.0] {
            let lo = expected_discount(&p, RateState::Low, t).unwrap();
            assert!(lo >= expected_discount(&p, RateState::High, t).unwrap());
            assert!(lo < last);
            last = lo;
        }
        assert!(expected_discount(&p, RateState::Low, 1000.0).unwrap() < 1e-6);
    }

    #[test]
    fn degenerate_spectrum_limit_is_continuous() {
        // lambda2 = 0 and delta2 = lambda1 + delta1 collapses the two eigenvalues
        let p = ModelParams::new(0.05, 0.45, -0.3, 0.2, 0.5, 0.0, ValidationMode::Strict);
        assert!(matches!(
            discount_constants(&p),
            Err(ModelError::DegenerateSpectrum { .. })
        ));
        let v = expected_discount(&p, RateState::Low, 2.0).unwrap();
        let near = ModelParams { delta2: 0.2 + 1e-6, ..p };
        let w = expected_discount(&near, RateState::Low, 2.0).unwrap();
        assert_relative_eq!(v, w, max_relative = 1e-5);
        // direct: stays low for Exp(0.5), then rate 0.2 forever
        let t: f64 = 2.0;
        let direct = (-0.5 * t).exp() * (0.3 * t).exp()
            + 0.5 * (-0.2 * t).exp() * t; // integrand e^{-0.5s} e^{0.3s} e^{-0.2(t-s)} is constant
        assert_relative_eq!(v, direct, max_relative = 1e-12);
    }

    #[test]
    fn closed_form_matches_chain_sampling() {
        let p = adjacent();
        let t = 1.0;
        let n = 200_000;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let mut state = RateState::Low;
            let mut clock = 0.0;
            let mut integral = 0.0;
            loop {
                let lam = p.intensity(state);
                let hold = -(1.0 - rng.random::<f64>()).ln() / lam;
                if clock + hold >= t {
                    integral += p.rate(state) * (t - clock);
                    break;
                }
                integral += p.rate(state) * hold;
                clock += hold;
                state = state.other();
            }
            let d = (-integral).exp();
            s += d;
            s2 += d * d;
        }
        let mean = s / n as f64;
        let se = ((s2 / n as f64 - mean * mean) / n as f64).sqrt();
        let exact = expected_discount(&p, RateState::Low, t).unwrap();
        assert!((mean - exact).abs() < 3.0 * se, "mc {mean} ± {se} vs {exact}");
    }
}
