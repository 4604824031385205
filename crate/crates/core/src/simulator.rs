//! Monte Carlo for the regime-switching surplus under barrier strategies.
//!
//! Every path (or antithetic pair) draws from its own ChaCha8 stream keyed by
//! `(seed, index)`, and results are reduced in index order, so estimates are
//! bit-identical for any worker count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::closed_form::{self, ClosedFormError};
use crate::model::{discount_constants, ModelError, ModelParams, RateState};

/// Environment variable capping the number of simulation workers.
pub const THREADS_ENV: &str = "BARRIER_SOLVER_THREADS";

/// Far from the barrier a step may grow until the barrier is this many
/// standard deviations of the Gaussian increment away.
const FAR_FIELD_SIGMAS: f64 = 6.0;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    ClosedForm(#[from] ClosedFormError),
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("thread pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BarrierStrategy {
    /// Reflection level while the rate is `delta1`.
    pub barrier_low: f64,
    /// Reflection level while the rate is `delta2`.
    pub barrier_high: f64,
}

impl BarrierStrategy {
    pub fn new(barrier_low: f64, barrier_high: f64) -> Self {
        Self {
            barrier_low,
            barrier_high,
        }
    }

    /// Inject only what keeps the surplus at 0.
    pub fn minimal() -> Self {
        Self::new(0.0, 0.0)
    }

    pub fn barrier(&self, state: RateState) -> f64 {
        match state {
            RateState::Low => self.barrier_low,
            RateState::High => self.barrier_high,
        }
    }

    fn check(&self) -> Result<(), SimError> {
        for b in [self.barrier_low, self.barrier_high] {
            if !(b.is_finite() && b >= 0.0) {
                return Err(SimError::InvalidConfig(format!("barrier {b} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

/// How a path's value is accumulated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// Sample switch epochs and discount pathwise.
    #[default]
    Pathwise,
    /// Only for `lambda2 = 0`: integrate the single switch out analytically.
    /// The low-state process is killed at rate `lambda1 + delta1` and collects
    /// `lambda1 * w(X)` per unit time, where `w` is the exact high-state value
    /// of the strategy. The pathwise weight `exp(-delta1 * tau)` has infinite
    /// variance once `2|delta1| >= lambda1`; this one does not.
    SwitchConditioned,
}

fn default_dt() -> f64 {
    1e-3
}

fn default_truncation_tol() -> f64 {
    1e-4
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub x0: f64,
    pub eta0: RateState,
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Simulation end; chosen from the discount envelope when absent.
    #[serde(default)]
    pub horizon: Option<f64>,
    pub n_paths: usize,
    pub seed: u64,
    #[serde(default)]
    pub antithetic: bool,
    #[serde(default = "default_truncation_tol")]
    pub truncation_tol: f64,
    #[serde(default)]
    pub estimator: Estimator,
    /// Worker count; falls back to `BARRIER_SOLVER_THREADS`, then to all cores.
    #[serde(default)]
    pub threads: Option<usize>,
}

impl SimConfig {
    pub fn new(x0: f64, eta0: RateState, n_paths: usize, seed: u64) -> Self {
        Self {
            x0,
            eta0,
            dt: default_dt(),
            horizon: None,
            n_paths,
            seed,
            antithetic: false,
            truncation_tol: default_truncation_tol(),
            estimator: Estimator::Pathwise,
            threads: None,
        }
    }

    fn check(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidConfig(m.to_string()));
        if !(self.x0.is_finite() && self.x0 >= 0.0) {
            return bad("x0 must be finite and >= 0");
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt must be > 0");
        }
        if !(self.truncation_tol > 0.0) {
            return bad("truncation_tol must be > 0");
        }
        if let Some(h) = self.horizon {
            if !(h >= 0.0 && h.is_finite()) {
                return bad("horizon must be finite and >= 0");
            }
        }
        if self.n_paths < 2 {
            return bad("n_paths must be >= 2");
        }
        if self.antithetic && self.n_paths % 2 != 0 {
            return bad("antithetic sampling needs an even n_paths");
        }
        if self.threads == Some(0) {
            return bad("threads must be >= 1");
        }
        Ok(())
    }

    fn check_estimator(&self, params: &ModelParams) -> Result<(), SimError> {
        if self.estimator == Estimator::SwitchConditioned {
            if params.lambda2 != 0.0 {
                return Err(SimError::InvalidConfig(
                    "switch_conditioned needs lambda2 = 0".into(),
                ));
            }
            if !(params.lambda1 + params.delta1 > 0.0) {
                return Err(SimError::InvalidConfig(
                    "switch_conditioned needs lambda1 + delta1 > 0".into(),
                ));
            }
        }
        Ok(())
    }

    fn units(&self) -> usize {
        if self.antithetic {
            self.n_paths / 2
        } else {
            self.n_paths
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n_paths: usize,
    /// Bound on the discounted value discarded after the horizon.
    pub truncation_bound: f64,
    pub horizon: f64,
    pub dt: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProbeRow {
    pub offset: f64,
    pub barrier_low: f64,
    pub estimate: SimEstimate,
    /// Mean and standard error of (this cell - reference cell) over common paths.
    pub diff_mean: f64,
    pub diff_stderr: f64,
}

/// Sum in a fixed binary-tree order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = pairwise_sum(xs) / n;
    let dev: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    let var = pairwise_sum(&dev) / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Worker count from the config, then the environment.
pub fn configured_threads(cfg: &SimConfig) -> Option<usize> {
    cfg.threads.or_else(|| {
        std::env::var(THREADS_ENV)
            .ok()
            .and_then(|v| v.trim().parse::<usize>().ok())
            .filter(|&n| n > 0)
    })
}

fn run_parallel<T, F>(cfg: &SimConfig, units: usize, f: F) -> Result<Vec<T>, SimError>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = configured_threads(cfg) {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| SimError::Pool(e.to_string()))?;
    Ok(pool.install(|| (0..units as u64).into_par_iter().map(&f).collect()))
}

/// Uniform and Gaussian draws, optionally reflected for the antithetic partner.
#[derive(Clone)]
struct Draws {
    rng: ChaCha8Rng,
    flip: bool,
}

impl Draws {
    fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { rng, flip: false }
    }

    fn flipped(&self) -> Self {
        Self {
            rng: self.rng.clone(),
            flip: true,
        }
    }

    /// Exponential holding time with the given intensity.
    fn holding(&mut self, rate: f64) -> f64 {
        let u: f64 = self.rng.random();
        if rate <= 0.0 {
            return f64::INFINITY;
        }
        let u = if self.flip { u } else { 1.0 - u };
        -u.ln() / rate
    }

    fn normal(&mut self) -> f64 {
        let z: f64 = self.rng.sample(StandardNormal);
        if self.flip {
            -z
        } else {
            z
        }
    }
}

/// Horizon and its truncation bound for `strategy`.
///
/// After time `T` the remaining discounted injections are at most
/// `C e^{-cT}` times a bound on the value from any state: the minimal
/// strategy's value at 0 plus the largest barrier for the initial lump and
/// for every later switch into the low state, which happen at discounted
/// rate at most `lambda2 C / c`.
pub fn horizon_for(
    params: &ModelParams,
    strategy: &BarrierStrategy,
    tol: f64,
) -> Result<(f64, f64), SimError> {
    let k = discount_constants(params)?;
    let v0 = closed_form::v0(params)?;
    let bmax = strategy.barrier_low.max(strategy.barrier_high);
    let scale = v0.v_low.eval(0.0, 0).max(v0.v_high.eval(0.0, 0))
        + bmax * (1.0 + params.lambda2 * k.big_c / k.c);
    let horizon = ((k.big_c * scale / tol).ln() / k.c).max(0.0);
    Ok((horizon, k.big_c * (-k.c * horizon).exp() * scale))
}

fn truncation_for(
    params: &ModelParams,
    strategy: &BarrierStrategy,
    cfg: &SimConfig,
) -> Result<(f64, f64), SimError> {
    let (auto, bound) = horizon_for(params, strategy, cfg.truncation_tol)?;
    let k = discount_constants(params)?;
    if cfg.estimator == Estimator::SwitchConditioned {
        // The killed process carries the whole remaining value, so the tail
        // after T is at most exp(-kappa T) times the same value bound.
        let kappa = params.lambda1 + params.delta1;
        let scale = bound / (k.big_c * (-k.c * auto).exp());
        let auto = ((scale / cfg.truncation_tol).ln() / kappa).max(0.0);
        let h = cfg.horizon.unwrap_or(auto);
        return Ok((h, scale * (-kappa * h).exp()));
    }
    match cfg.horizon {
        None => Ok((auto, bound)),
        Some(h) => Ok((h, bound * (-k.c * (h - auto)).exp())),
    }
}

/// Exact high-state value of reflecting at `barrier` when the high state is absorbing.
#[derive(Clone, Copy)]
struct AbsorbingHigh {
    a: f64,
    barrier: f64,
}

impl AbsorbingHigh {
    fn eval(&self, x: f64) -> f64 {
        if x < self.barrier {
            self.barrier - x + 1.0 / self.a
        } else {
            (-self.a * (x - self.barrier)).exp() / self.a
        }
    }
}

/// Discounted value along one killed low-state path (see [`Estimator::SwitchConditioned`]).
fn conditioned_path(
    params: &ModelParams,
    strategy: &BarrierStrategy,
    x0: f64,
    dt: f64,
    horizon: f64,
    draws: &mut Draws,
) -> f64 {
    let mu = params.mu;
    let sigma = params.sigma;
    let kappa = params.lambda1 + params.delta1;
    let high = AbsorbingHigh {
        a: params.ode_coeffs(RateState::High).a,
        barrier: strategy.barrier_high,
    };
    let bar = strategy.barrier_low;
    let inv_far = 1.0 / (FAR_FIELD_SIGMAS * sigma);
    let root_dt = dt.sqrt();
    // discount over a step, and its integral over the step divided by lambda1
    let step_factor = |h: f64| ((-kappa * h).exp(), -(-kappa * h).exp_m1() / kappa);
    let (decay_dt, weight_dt) = step_factor(dt);
    let mut x = x0;
    let mut t = 0.0f64;
    let mut discount = 1.0f64;
    let mut total = 0.0;
    let mut w = high.eval(x);
    loop {
        if x < bar {
            total += (bar - x) * discount;
            x = bar;
            w = high.eval(x);
        }
        if t >= horizon {
            return total;
        }
        let far = (x - bar) * inv_far;
        let far = far * far;
        let (h, root_h, decay, weight) = if far <= dt && t + dt <= horizon {
            (dt, root_dt, decay_dt, weight_dt)
        } else {
            let h = dt.max(far).min(horizon - t);
            let (decay, weight) = step_factor(h);
            (h, h.sqrt(), decay, weight)
        };
        x += mu * h + sigma * root_h * draws.normal();
        let w_next = high.eval(x.max(bar));
        total += params.lambda1 * discount * weight * 0.5 * (w + w_next);
        w = w_next;
        discount *= decay;
        t += h;
    }
}

/// Discounted injections along one path.
fn value_path(
    params: &ModelParams,
    strategy: &BarrierStrategy,
    x0: f64,
    eta0: RateState,
    dt: f64,
    horizon: f64,
    draws: &mut Draws,
) -> f64 {
    let mu = params.mu;
    let sigma = params.sigma;
    let mut state = eta0;
    let mut x = x0;
    let mut t = 0.0;
    let mut log_discount = 0.0f64;
    let mut total = 0.0;
    let mut next_switch = draws.holding(params.intensity(state));
    let inv_far = 1.0 / (FAR_FIELD_SIGMAS * sigma);
    let root_dt = dt.sqrt();
    loop {
        let bar = strategy.barrier(state);
        if x < bar {
            total += (bar - x) * (-log_discount).exp();
            x = bar;
        }
        if t >= horizon {
            return total;
        }
        let event = next_switch.min(horizon);
        let far = (x - bar) * inv_far;
        let far = far * far;
        let (h, root_h) = if far <= dt && t + dt <= event {
            (dt, root_dt)
        } else {
            let h = dt.max(far).min(event - t);
            (h, h.sqrt())
        };
        x += mu * h + sigma * root_h * draws.normal();
        log_discount += params.rate(state) * h;
        t += h;
        if t >= event {
            t = event;
            if event == next_switch && event < horizon {
                state = state.other();
                next_switch = t + draws.holding(params.intensity(state));
            }
        }
    }
}

fn discount_path(params: &ModelParams, eta0: RateState, t_end: f64, draws: &mut Draws) -> f64 {
    let mut state = eta0;
    let mut t = 0.0;
    let mut log_discount = 0.0f64;
    loop {
        let hold = draws.holding(params.intensity(state));
        if t + hold >= t_end {
            log_discount += params.rate(state) * (t_end - t);
            return (-log_discount).exp();
        }
        log_discount += params.rate(state) * hold;
        t += hold;
        state = state.other();
    }
}

/// Per-unit values for several strategies on common random numbers.
fn value_units(
    params: &ModelParams,
    strategies: &[BarrierStrategy],
    cfg: &SimConfig,
    horizon: f64,
) -> Result<Vec<Vec<f64>>, SimError> {
    let conditioned = cfg.estimator == Estimator::SwitchConditioned;
    if conditioned && cfg.eta0 == RateState::High {
        let a = params.ode_coeffs(RateState::High).a;
        let exact: Vec<f64> = strategies
            .iter()
            .map(|s| AbsorbingHigh { a, barrier: s.barrier_high }.eval(cfg.x0))
            .collect();
        return Ok(vec![exact; cfg.units()]);
    }
    let run = |draws: &Draws, s: &BarrierStrategy| {
        let mut d = draws.clone();
        if conditioned {
            conditioned_path(params, s, cfg.x0, cfg.dt, horizon, &mut d)
        } else {
            value_path(params, s, cfg.x0, cfg.eta0, cfg.dt, horizon, &mut d)
        }
    };
    run_parallel(cfg, cfg.units(), |i| {
        let draws = Draws::new(cfg.seed, i);
        strategies
            .iter()
            .map(|s| {
                if cfg.antithetic {
                    0.5 * (run(&draws, s) + run(&draws.flipped(), s))
                } else {
                    run(&draws, s)
                }
            })
            .collect()
    })
}

fn estimate(values: &[f64], cfg: &SimConfig, horizon: f64, truncation_bound: f64) -> SimEstimate {
    let (mean, stderr) = mean_and_stderr(values);
    SimEstimate {
        mean,
        stderr,
        n_paths: cfg.n_paths,
        truncation_bound,
        horizon,
        dt: cfg.dt,
        seed: cfg.seed,
    }
}

/// Expected discounted injections of `strategy` from `(config.x0, config.eta0)`.
pub fn simulate_value(
    params: &ModelParams,
    strategy: &BarrierStrategy,
    config: &SimConfig,
) -> Result<SimEstimate, SimError> {
    params.validate()?;
    strategy.check()?;
    config.check()?;
    config.check_estimator(params)?;
    let (horizon, bound) = truncation_for(params, strategy, config)?;
    let units = value_units(params, std::slice::from_ref(strategy), config, horizon)?;
    let values: Vec<f64> = units.into_iter().map(|v| v[0]).collect();
    Ok(estimate(&values, config, horizon, bound))
}

/// `E[exp(-int_0^t r ds)]` from sampled rate paths; no time discretisation.
pub fn simulate_discount(
    params: &ModelParams,
    eta0: RateState,
    t: f64,
    config: &SimConfig,
) -> Result<SimEstimate, SimError> {
    params.validate()?;
    config.check()?;
    if !(t >= 0.0 && t.is_finite()) {
        return Err(SimError::InvalidConfig(format!("t = {t} must be finite and >= 0")));
    }
    let values = run_parallel(config, config.units(), |i| {
        let mut draws = Draws::new(config.seed, i);
        if config.antithetic {
            let mut partner = draws.flipped();
            0.5 * (discount_path(params, eta0, t, &mut draws)
                + discount_path(params, eta0, t, &mut partner))
        } else {
            discount_path(params, eta0, t, &mut draws)
        }
    })?;
    Ok(estimate(&values, config, t, 0.0))
}

/// Values of `(b + offset, barrier_high)` strategies at `(x0, eta0)` from the
/// config, on common random numbers, with paired differences against the
/// offset closest to 0.
pub fn optimality_probe(
    params: &ModelParams,
    solution_barrier: f64,
    offsets: &[f64],
    config: &SimConfig,
) -> Result<Vec<ProbeRow>, SimError> {
    params.validate()?;
    config.check()?;
    config.check_estimator(params)?;
    if offsets.is_empty() {
        return Err(SimError::InvalidConfig("no offsets".into()));
    }
    let strategies: Vec<BarrierStrategy> = offsets
        .iter()
        .map(|o| BarrierStrategy::new(solution_barrier + o, 0.0))
        .collect();
    for s in &strategies {
        s.check()?;
    }
    let widest = strategies
        .iter()
        .copied()
        .max_by(|a, b| a.barrier_low.total_cmp(&b.barrier_low))
        .unwrap();
    let (horizon, bound) = truncation_for(params, &widest, config)?;
    let units = value_units(params, &strategies, config, horizon)?;
    let reference = offsets
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .map(|(i, _)| i)
        .unwrap();
    Ok(offsets
        .iter()
        .enumerate()
        .map(|(j, &offset)| {
            let values: Vec<f64> = units.iter().map(|u| u[j]).collect();
            let diffs: Vec<f64> = units.iter().map(|u| u[j] - u[reference]).collect();
            let (diff_mean, diff_stderr) = mean_and_stderr(&diffs);
            ProbeRow {
                offset,
                barrier_low: strategies[j].barrier_low,
                estimate: estimate(&values, config, horizon, bound),
                diff_mean,
                diff_stderr,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{expected_discount, ValidationMode};

    fn coupled() -> ModelParams {
        ModelParams::new(0.05, 0.45, -0.1, 0.1, 1.0, 0.5, ValidationMode::Strict)
    }

    #[test]
    fn pairwise_sum_matches_exact_integers() {
        let xs: Vec<f64> = (1..=1000).map(f64::from).collect();
        assert_eq!(pairwise_sum(&xs), 500500.0);
    }

    #[test]
    fn discount_at_zero_is_one() {
        let cfg = SimConfig::new(0.0, RateState::Low, 1000, 1);
        let e = simulate_discount(&coupled(), RateState::Low, 0.0, &cfg).unwrap();
        assert_eq!(e.mean, 1.0);
        assert_eq!(e.stderr, 0.0);
    }

    #[test]
    fn discount_constant_rate() {
        let p = ModelParams::new(0.05, 0.45, 0.1, 0.1, 1.0, 1.0, ValidationMode::Relaxed);
        let cfg = SimConfig::new(0.0, RateState::High, 1000, 2);
        let e = simulate_discount(&p, RateState::High, 2.0, &cfg).unwrap();
        assert!((e.mean - (-0.2f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn discount_matches_closed_form() {
        let p = coupled();
        let cfg = SimConfig::new(0.0, RateState::Low, 200_000, 3);
        for t in [0.5, 1.0, 3.0] {
            let e = simulate_discount(&p, RateState::Low, t, &cfg).unwrap();
            let exact = expected_discount(&p, RateState::Low, t).unwrap();
            assert!((e.mean - exact).abs() < 4.0 * e.stderr, "t={t} {e:?} {exact}");
        }
    }

    #[test]
    fn antithetic_reduces_discount_stderr() {
        let p = coupled();
        let plain = SimConfig::new(0.0, RateState::Low, 100_000, 4);
        let anti = SimConfig {
            antithetic: true,
            ..plain
        };
        let a = simulate_discount(&p, RateState::Low, 2.0, &plain).unwrap();
        let b = simulate_discount(&p, RateState::Low, 2.0, &anti).unwrap();
        assert!(b.stderr < a.stderr, "{} vs {}", b.stderr, a.stderr);
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let p = ModelParams::new(1.0, 0.5, -0.3, 0.3, 1.0, 0.2, ValidationMode::Strict);
        let s = BarrierStrategy::new(0.2, 0.0);
        let one = SimConfig {
            threads: Some(1),
            ..SimConfig::new(0.0, RateState::Low, 400, 5)
        };
        let four = SimConfig {
            threads: Some(4),
            ..one
        };
        let a = simulate_value(&p, &s, &one).unwrap();
        let b = simulate_value(&p, &s, &four).unwrap();
        assert_eq!(a.mean.to_bits(), b.mean.to_bits());
        assert_eq!(a.stderr.to_bits(), b.stderr.to_bits());
    }

    #[test]
    fn far_start_costs_nothing() {
        let p = ModelParams::new(1.0, 0.5, -0.3, 0.3, 1.0, 0.2, ValidationMode::Strict);
        let cfg = SimConfig::new(40.0, RateState::Low, 2000, 6);
        let e = simulate_value(&p, &BarrierStrategy::new(0.5, 0.0), &cfg).unwrap();
        assert!(e.mean < 1e-3);
    }

    #[test]
    fn injections_are_non_negative() {
        let p = ModelParams::new(1.0, 0.5, -0.3, 0.3, 1.0, 0.2, ValidationMode::Strict);
        let cfg = SimConfig::new(0.0, RateState::High, 64, 7);
        let (h, _) = horizon_for(&p, &BarrierStrategy::minimal(), 1e-4).unwrap();
        let units = value_units(&p, &[BarrierStrategy::minimal()], &cfg, h).unwrap();
        assert!(units.iter().all(|u| u[0] >= 0.0));
    }

    #[test]
    fn probe_with_single_offset_equals_value() {
        let p = ModelParams::new(1.0, 0.5, -0.3, 0.3, 1.0, 0.2, ValidationMode::Strict);
        let cfg = SimConfig::new(0.0, RateState::Low, 500, 8);
        let rows = optimality_probe(&p, 0.3, &[0.0], &cfg).unwrap();
        let direct = simulate_value(&p, &BarrierStrategy::new(0.3, 0.0), &cfg).unwrap();
        assert_eq!(rows[0].estimate.mean, direct.mean);
        assert_eq!(rows[0].diff_mean, 0.0);
    }

    #[test]
    fn conditioned_estimator_matches_pathwise() {
        // 2|delta1| < lambda1, so the pathwise estimator has finite variance too
        let p = ModelParams::new(0.3, 0.6, -0.4, 0.2, 1.5, 0.0, ValidationMode::Strict);
        let s = BarrierStrategy::new(0.3, 0.1);
        let plain = SimConfig::new(0.2, RateState::Low, 20_000, 9);
        let cond = SimConfig {
            estimator: Estimator::SwitchConditioned,
            ..plain
        };
        let a = simulate_value(&p, &s, &plain).unwrap();
        let b = simulate_value(&p, &s, &cond).unwrap();
        let noise = (a.stderr.powi(2) + b.stderr.powi(2)).sqrt();
        assert!((a.mean - b.mean).abs() < 4.0 * noise, "{a:?} {b:?}");
        assert!(b.stderr < a.stderr);
    }

    #[test]
    fn conditioned_high_state_is_exact() {
        let p = ModelParams::worked_example();
        let cfg = SimConfig {
            estimator: Estimator::SwitchConditioned,
            ..SimConfig::new(0.5, RateState::High, 10, 1)
        };
        let e = simulate_value(&p, &BarrierStrategy::new(1.0, 0.0), &cfg).unwrap();
        let a = p.ode_coeffs(RateState::High).a;
        assert!((e.mean - (-a * 0.5).exp() / a).abs() < 1e-15);
        assert!(e.stderr < 1e-15);
        let lifted = simulate_value(&p, &BarrierStrategy::new(0.0, 1.0), &cfg).unwrap();
        assert!((lifted.mean - (0.5 + 1.0 / a)).abs() < 1e-15);
    }

    #[test]
    fn conditioned_estimator_needs_absorbing_high_state() {
        let cfg = SimConfig {
            estimator: Estimator::SwitchConditioned,
            ..SimConfig::new(0.0, RateState::Low, 10, 1)
        };
        assert!(matches!(
            simulate_value(&coupled(), &BarrierStrategy::minimal(), &cfg),
            Err(SimError::InvalidConfig(_))
        ));
    }

    #[test]
    fn config_validation() {
        let p = coupled();
        let s = BarrierStrategy::minimal();
        let mut cfg = SimConfig::new(0.0, RateState::Low, 3, 1);
        cfg.antithetic = true;
        assert!(matches!(simulate_value(&p, &s, &cfg), Err(SimError::InvalidConfig(_))));
        cfg.antithetic = false;
        cfg.dt = 0.0;
        assert!(matches!(simulate_value(&p, &s, &cfg), Err(SimError::InvalidConfig(_))));
        let json = r#"{"x0": 0, "eta0": "low", "n_paths": 10, "seed": 1, "bogus": 1}"#;
        assert!(serde_json::from_str::<SimConfig>(json).is_err());
    }
}
