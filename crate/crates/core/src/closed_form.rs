//! Value of the minimal-amount strategy (inject only at 0 in both states),
//! its optimality test, and the explicit optimal barrier when the high state
//! is absorbing.

use serde::Serialize;
use thiserror::Error;

use crate::exppoly::{solve_barrier_ode, ExpPolyError, ExpPolyTerm, PiecewiseExpPoly};
use crate::model::{ModelError, ModelParams, RateState};

#[derive(Debug, Error)]
pub enum ClosedFormError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    ExpPoly(#[from] ExpPolyError),
    #[error("lambda2 = 0: the coupled constants are undefined, use the decoupled path")]
    Lambda2Zero,
    #[error("explicit barrier needs lambda2 = 0 (got {0})")]
    NotApplicable(f64),
    #[error("lambda1 + delta1 - delta2 = 0")]
    DegenerateDenominator,
}

/// Constants of the coupled two-exponential solution (requires `lambda2 > 0`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct V0Constants {
    pub a: f64,
    pub alpha: f64,
    pub d1: f64,
    pub d2: f64,
    pub a1: f64,
    pub a2: f64,
    pub e: f64,
    pub f: f64,
    pub b1: f64,
    pub b2: f64,
    pub c1: f64,
    pub c2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum V0Kind {
    Coupled(V0Constants),
    /// `lambda2 = 0`: the high state is absorbing, `vHigh = e^{-A x}/A`.
    Decoupled { a_high: f64 },
}

#[derive(Debug, Clone, Serialize)]
pub struct V0Result {
    pub v_low: PiecewiseExpPoly,
    pub v_high: PiecewiseExpPoly,
    pub constants: V0Kind,
    pub d2_low_at_0: f64,
    pub d2_high_at_0: f64,
    pub optimal_low: bool,
    pub optimal_high: bool,
    /// Both second derivatives at 0 are non-negative.
    pub optimal: bool,
}

pub fn v0_constants(params: &ModelParams) -> Result<V0Constants, ClosedFormError> {
    params.validate()?;
    let ModelParams {
        mu,
        sigma,
        delta1,
        delta2,
        lambda1,
        lambda2,
        ..
    } = *params;
    if lambda2 == 0.0 {
        return Err(ClosedFormError::Lambda2Zero);
    }
    let s2 = sigma * sigma;
    let a = lambda1 + delta1 + lambda2 + delta2;
    let alpha = lambda1 + delta1 - lambda2 - delta2;
    let root = (alpha * alpha + 4.0 * lambda1 * lambda2).sqrt();
    let d1 = 0.5 * (a - root);
    let d2 = 0.5 * (a + root);
    let rate = |d: f64| (mu + (mu * mu + 2.0 * s2 * d).sqrt()) / s2;
    let a1 = rate(d1);
    let a2 = rate(d2);
    let e = (lambda2 + delta2 - d1) / lambda2;
    let f = (lambda2 + delta2 - d2) / lambda2;
    let b2 = (1.0 - f) / (a1 * (e - f));
    let c2 = (e - 1.0) / (a2 * (e - f));
    Ok(V0Constants {
        a,
        alpha,
        d1,
        d2,
        a1,
        a2,
        e,
        f,
        b1: e * b2,
        b2,
        c1: f * c2,
        c2,
    })
}

pub fn v0(params: &ModelParams) -> Result<V0Result, ClosedFormError> {
    params.validate()?;
    let (v_low, v_high, constants) = if params.lambda2 > 0.0 {
        let k = v0_constants(params)?;
        let pair = |b: f64, c: f64| {
            PiecewiseExpPoly::single(vec![ExpPolyTerm::exp(b, -k.a1), ExpPolyTerm::exp(c, -k.a2)])
        };
        (pair(k.b1, k.c1)?, pair(k.b2, k.c2)?, V0Kind::Coupled(k))
    } else {
        let high = params.ode_coeffs(RateState::High);
        let v_high = PiecewiseExpPoly::single(vec![ExpPolyTerm::exp(1.0 / high.a, -high.a)])?;
        let v_low = solve_barrier_ode(&v_high, 0.0, &params.ode_coeffs(RateState::Low))?;
        (v_low, v_high, V0Kind::Decoupled { a_high: high.a })
    };
    let d2_low_at_0 = v_low.eval(0.0, 2);
    let d2_high_at_0 = v_high.eval(0.0, 2);
    Ok(V0Result {
        v_low,
        v_high,
        constants,
        d2_low_at_0,
        d2_high_at_0,
        optimal_low: d2_low_at_0 >= 0.0,
        optimal_high: d2_high_at_0 >= 0.0,
        optimal: d2_low_at_0 >= 0.0 && d2_high_at_0 >= 0.0,
    })
}

pub fn v0_is_optimal(params: &ModelParams) -> Result<bool, ClosedFormError> {
    Ok(v0(params)?.optimal)
}

/// Optimal low-state barrier when `lambda2 = 0`, clamped at 0.
pub fn example_barrier_lambda2_zero(params: &ModelParams) -> Result<f64, ClosedFormError> {
    params.validate()?;
    let ModelParams {
        mu,
        sigma,
        delta1,
        delta2,
        lambda1,
        lambda2,
        ..
    } = *params;
    if lambda2 != 0.0 {
        return Err(ClosedFormError::NotApplicable(lambda2));
    }
    if (lambda1 + delta1 - delta2).abs() <= 1e-12 * (lambda1 + delta1.abs() + delta2.abs()) {
        return Err(ClosedFormError::DegenerateDenominator);
    }
    let s2 = sigma * sigma;
    let psi_low = (mu * mu + 2.0 * s2 * (delta1 + lambda1)).sqrt();
    let psi_high = (mu * mu + 2.0 * s2 * delta2).sqrt();
    let a = (mu + psi_high) / s2;
    // (psi_low - psi_high) / (lambda1 + delta1 - delta2) rationalised
    let ratio = 2.0 * s2 / (psi_low + psi_high);
    let arg = lambda1 * ratio / (mu + psi_low);
    Ok((arg.ln() / a).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exppoly::linspace;
    use crate::model::ValidationMode;
    use approx::assert_relative_eq;

    fn coupled() -> ModelParams {
        ModelParams::new(0.05, 0.45, -0.1, 0.1, 1.0, 0.5, ValidationMode::Strict)
    }

    fn equal_rates(lambda2: f64) -> ModelParams {
        ModelParams::new(0.05, 0.45, 0.1, 0.1, 1.0, lambda2, ValidationMode::Relaxed)
    }

    #[test]
    fn example_second_derivative() {
        let r = v0(&ModelParams::worked_example()).unwrap();
        assert_relative_eq!(r.d2_low_at_0, -3.3077, epsilon = 1e-3);
        assert!(!r.optimal);
        assert!(!v0_is_optimal(&ModelParams::worked_example()).unwrap());
        assert_relative_eq!(r.v_low.eval(0.0, 1), -1.0, epsilon = 1e-12);
        assert_relative_eq!(r.v_high.eval(0.0, 0), 0.78683, epsilon = 1e-5);
    }

    #[test]
    fn example_barrier() {
        let b = example_barrier_lambda2_zero(&ModelParams::worked_example()).unwrap();
        assert_relative_eq!(b, 1.4248, epsilon = 5e-4);
        assert!(matches!(
            example_barrier_lambda2_zero(&coupled()),
            Err(ClosedFormError::NotApplicable(_))
        ));
        let degenerate = ModelParams::new(0.05, 0.45, -0.4, 0.1, 0.5, 0.0, ValidationMode::Strict);
        assert!(matches!(
            example_barrier_lambda2_zero(&degenerate),
            Err(ClosedFormError::DegenerateDenominator)
        ));
    }

    #[test]
    fn equal_rates_clamp_to_zero() {
        assert_eq!(example_barrier_lambda2_zero(&equal_rates(0.0)).unwrap(), 0.0);
    }

    #[test]
    fn equal_rates_collapse() {
        let k = v0_constants(&equal_rates(0.5)).unwrap();
        assert_relative_eq!(k.d1, 0.1, max_relative = 1e-12);
        assert_relative_eq!(k.d2, 1.6, max_relative = 1e-12);
        assert_relative_eq!(k.e, 1.0, max_relative = 1e-12);
        assert!(k.c2.abs() < 1e-14 && k.c1.abs() < 1e-14);
        assert_relative_eq!(k.b1, 1.0 / k.a1, max_relative = 1e-12);
        assert_relative_eq!(k.b2, 1.0 / k.a1, max_relative = 1e-12);
        for p in [equal_rates(0.5), equal_rates(0.0)] {
            let r = v0(&p).unwrap();
            assert!(r.optimal);
            for x in linspace(0.0, 10.0, 41) {
                let exact = (-k.a1 * x).exp() / k.a1;
                assert_relative_eq!(r.v_low.eval(x, 0), exact, max_relative = 1e-10);
                assert_relative_eq!(r.v_high.eval(x, 0), exact, max_relative = 1e-10);
            }
        }
    }

    #[test]
    fn coupled_constants_satisfy_system() {
        let p = coupled();
        let k = v0_constants(&p).unwrap();
        assert!(k.d2 > k.d1 && k.d1 > 0.0);
        assert!(k.e > k.f);
        for (d, a) in [(k.d1, k.a1), (k.d2, k.a2)] {
            let s = 0.5 * p.sigma * p.sigma;
            assert_relative_eq!(s * a * a - p.mu * a, d, max_relative = 1e-10);
        }
        let r = v0(&p).unwrap();
        let low = p.ode_coeffs(RateState::Low);
        let high = p.ode_coeffs(RateState::High);
        for x in linspace(0.0, 20.0, 100) {
            let scale = 1.0 + r.v_low.eval(x, 0).abs();
            assert!(low.residual(&r.v_low, &r.v_high, x).abs() < 1e-9 * scale);
            assert!(high.residual(&r.v_high, &r.v_low, x).abs() < 1e-9 * scale);
            assert!(r.v_low.eval(x, 0) >= r.v_high.eval(x, 0));
        }
        assert_relative_eq!(r.v_low.eval(0.0, 1), -1.0, epsilon = 1e-10);
        assert_relative_eq!(r.v_high.eval(0.0, 1), -1.0, epsilon = 1e-10);
    }

    #[test]
    fn lambda2_zero_has_no_constants() {
        assert!(matches!(
            v0_constants(&ModelParams::worked_example()),
            Err(ClosedFormError::Lambda2Zero)
        ));
    }

    #[test]
    fn high_state_shape() {
        for p in [coupled(), ModelParams::worked_example()] {
            let r = v0(&p).unwrap();
            let mut sign_changes = 0;
            let mut last = r.v_high.eval(0.0, 2) >= 0.0;
            for x in linspace(0.0, 40.0, 2001) {
                let d1 = r.v_high.eval(x, 1);
                assert!(d1 >= -1.0 - 1e-10 && d1 < 0.0);
                assert!(r.v_high.eval(x, 2) >= -1e-10);
                let d2 = r.v_high.eval(x, 2);
                let s = d2 >= 0.0;
                if d2.abs() > 1e-13 && s != last {
                    sign_changes += 1;
                    last = s;
                }
            }
            assert!(sign_changes <= 1);
        }
    }
}
