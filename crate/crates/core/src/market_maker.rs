//! Quote policies and the argmax mid-price dynamics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gaussian::GaussianState;
use crate::grid::FilterDiagnostics;
use crate::model::{ExpIntensity, GaussianPrior, Quotes};
use crate::roots::{decreasing_root, RootError, DEFAULT_MAX_ITER, DEFAULT_TOL};

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("policy `{policy}` cannot quote from a {state} posterior")]
    PolicyStateMismatch { policy: &'static str, state: &'static str },
    #[error("half-spread must be non-negative and finite, got {0}")]
    InvalidHalfSpread(f64),
    #[error("unknown quote policy `{0}` (known: {1})")]
    UnknownPolicy(String, String),
    #[error(transparent)]
    Root(#[from] RootError),
}

/// What a filter exposes to a quote policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PosteriorView {
    Grid(FilterDiagnostics),
    Gaussian(GaussianState),
    Argmax(ArgmaxMMState),
}

impl PosteriorView {
    pub fn kind(&self) -> &'static str {
        match self {
            PosteriorView::Grid(_) => "grid",
            PosteriorView::Gaussian(_) => "gaussian",
            PosteriorView::Argmax(_) => "argmax-root",
        }
    }

    pub fn mean(&self) -> Option<f64> {
        match self {
            PosteriorView::Grid(d) => Some(d.mean),
            PosteriorView::Gaussian(g) => Some(g.mean),
            PosteriorView::Argmax(_) => None,
        }
    }

    pub fn argmax(&self) -> f64 {
        match self {
            PosteriorView::Grid(d) => d.argmax,
            PosteriorView::Gaussian(g) => g.mean,
            PosteriorView::Argmax(s) => s.xhat,
        }
    }
}

/// Sets bid and ask from the current posterior.
pub trait QuotePolicy: Send + Sync {
    fn name(&self) -> &'static str;
    fn half_spread(&self) -> f64;
    fn quotes(&self, view: &PosteriorView) -> Result<Quotes, PolicyError>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedQuotes(pub Quotes);

impl QuotePolicy for FixedQuotes {
    fn name(&self) -> &'static str {
        "fixed"
    }

    fn half_spread(&self) -> f64 {
        self.0.half_spread()
    }

    fn quotes(&self, _: &PosteriorView) -> Result<Quotes, PolicyError> {
        Ok(self.0)
    }
}

/// Mid at the posterior mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MidAtMean {
    half_spread: f64,
}

impl MidAtMean {
    pub fn new(half_spread: f64) -> Result<Self, PolicyError> {
        check_spread(half_spread).map(|half_spread| Self { half_spread })
    }
}

impl QuotePolicy for MidAtMean {
    fn name(&self) -> &'static str {
        "mid-mean"
    }

    fn half_spread(&self) -> f64 {
        self.half_spread
    }

    fn quotes(&self, view: &PosteriorView) -> Result<Quotes, PolicyError> {
        let mean = view.mean().ok_or(PolicyError::PolicyStateMismatch {
            policy: self.name(),
            state: view.kind(),
        })?;
        Ok(Quotes::around(mean, self.half_spread))
    }
}

/// Mid at the posterior mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MidAtArgmax {
    half_spread: f64,
}

impl MidAtArgmax {
    pub fn new(half_spread: f64) -> Result<Self, PolicyError> {
        check_spread(half_spread).map(|half_spread| Self { half_spread })
    }
}

impl QuotePolicy for MidAtArgmax {
    fn name(&self) -> &'static str {
        "mid-argmax"
    }

    fn half_spread(&self) -> f64 {
        self.half_spread
    }

    fn quotes(&self, view: &PosteriorView) -> Result<Quotes, PolicyError> {
        Ok(Quotes::around(view.argmax(), self.half_spread))
    }
}

fn check_spread(half_spread: f64) -> Result<f64, PolicyError> {
    if half_spread >= 0.0 && half_spread.is_finite() {
        Ok(half_spread)
    } else {
        Err(PolicyError::InvalidHalfSpread(half_spread))
    }
}

/// Inputs a policy constructor may need.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyParams {
    pub half_spread: f64,
    /// Mid used by the fixed policy.
    pub mid: f64,
}

type PolicyCtor = fn(&PolicyParams) -> Result<Box<dyn QuotePolicy>, PolicyError>;

/// Quote policies by name.
pub struct PolicyRegistry {
    entries: BTreeMap<&'static str, PolicyCtor>,
}

impl Default for PolicyRegistry {
    fn default() -> Self {
        let mut r = Self { entries: BTreeMap::new() };
        r.register("fixed", |p| {
            check_spread(p.half_spread)?;
            Ok(Box::new(FixedQuotes(Quotes::around(p.mid, p.half_spread))))
        });
        r.register("mid-mean", |p| Ok(Box::new(MidAtMean::new(p.half_spread)?)));
        r.register("mid-argmax", |p| Ok(Box::new(MidAtArgmax::new(p.half_spread)?)));
        r
    }
}

impl PolicyRegistry {
    pub fn register(&mut self, name: &'static str, ctor: PolicyCtor) {
        self.entries.insert(name, ctor);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.keys().copied().collect()
    }

    pub fn build(&self, name: &str, params: &PolicyParams) -> Result<Box<dyn QuotePolicy>, PolicyError> {
        let ctor = self
            .entries
            .get(name)
            .ok_or_else(|| PolicyError::UnknownPolicy(name.to_string(), self.names().join(", ")))?;
        ctor(params)
    }
}

/// State of the exact posterior mode when `sigma = 0` and the half-spread is
/// constant. `u` and `v` hold `int e^{+-a (m_s - x_ref)} ds` over the mids
/// `m_s` quoted so far; `x_ref` keeps the exponentials in range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArgmaxMMState {
    pub xhat: f64,
    pub x_ref: f64,
    pub u: f64,
    pub v: f64,
    pub net_jumps: i64,
    pub t: f64,
}

impl ArgmaxMMState {
    pub fn new(prior: &GaussianPrior) -> Self {
        Self {
            xhat: prior.x0,
            x_ref: prior.x0,
            u: 0.0,
            v: 0.0,
            net_jumps: 0,
            t: 0.0,
        }
    }

    /// Accumulates `u`, `v` up to `t` with the mid held at `mid`.
    pub fn advance(&mut self, mid: f64, a: f64, t: f64) {
        let dt = t - self.t;
        if dt > 0.0 {
            let e = (a * (mid - self.x_ref)).exp();
            self.u += dt * e;
            self.v += dt / e;
            self.t = t;
        }
    }

    /// Gradient of the log posterior at `y` and its derivative, counting
    /// `net` signed trades.
    pub fn gradient(&self, prior: &GaussianPrior, intensity: &ExpIntensity, t1: f64, net: i64, y: f64) -> (f64, f64) {
        let a = intensity.a();
        let s2 = prior.variance();
        let z = a * (y - self.x_ref);
        let up = if self.v > 0.0 { z.exp() * self.v } else { 0.0 };
        let down = if self.u > 0.0 { (-z).exp() * self.u } else { 0.0 };
        let c = a / (2.0 * t1);
        let f = -(y - prior.x0) / s2 - c * (up - down) + a * net as f64;
        let df = -1.0 / s2 - c * a * (up + down);
        (f, df)
    }

    /// Solves for the mode with `net` signed trades observed.
    pub fn solve(&self, prior: &GaussianPrior, intensity: &ExpIntensity, t1: f64, net: i64) -> Result<f64, RootError> {
        let scale = 1.0 / intensity.a();
        let delta = decreasing_root(
            |d| self.gradient(prior, intensity, t1, net, self.xhat + d),
            0.0,
            1e-3 * scale,
            DEFAULT_TOL,
            DEFAULT_MAX_ITER,
        )?;
        Ok(self.xhat + delta)
    }
}

/// Jump of the mode at a trade (`sign = +1` ask or meta, `-1` bid) at time
/// `t`, with the mid at `xhat` since the last event.
pub fn argmax_jump(
    state: &ArgmaxMMState,
    prior: &GaussianPrior,
    intensity: &ExpIntensity,
    half_spread: f64,
    t: f64,
    sign: i64,
) -> Result<ArgmaxMMState, RootError> {
    let mut s = *state;
    s.advance(s.xhat, intensity.a(), t);
    let t1 = intensity.characteristic_time(half_spread);
    s.net_jumps += sign;
    s.xhat = s.solve(prior, intensity, t1, s.net_jumps)?;
    Ok(s)
}

/// Mode after each of the first `k_max` meta orders when the opportunistic
/// flow is balanced: solves
/// `k = (y_k - x0)/(a sigma0^2) + (1/(beta t1)) sum_{i<k} sinh(a (y_k - y_i))`.
pub fn impact_recursion(
    prior: &GaussianPrior,
    intensity: &ExpIntensity,
    half_spread: f64,
    beta: f64,
    k_max: usize,
) -> Result<Vec<f64>, RootError> {
    let a = intensity.a();
    let bt1 = beta * intensity.characteristic_time(half_spread);
    let s2 = prior.variance();
    let mut path = vec![prior.x0];
    for k in 1..=k_max {
        let prev = *path.last().unwrap();
        let h = |y: f64| {
            let (mut sum, mut dsum) = (0.0, 0.0);
            for &yi in &path {
                let z = a * (y - yi);
                sum += z.sinh();
                dsum += a * z.cosh();
            }
            let g = (y - prior.x0) / (a * s2) + sum / bt1 - k as f64;
            let dg = 1.0 / (a * s2) + dsum / bt1;
            (-g, -dg)
        };
        let y = prev + decreasing_root(|d| h(prev + d), 0.0, 1e-3 / a, DEFAULT_TOL, DEFAULT_MAX_ITER)?;
        path.push(y);
    }
    path.remove(0);
    Ok(path)
}

/// `(1/a) asinh(beta t1)`: first-jump limit as `sigma0 -> inf`.
pub fn first_jump_limit(intensity: &ExpIntensity, half_spread: f64, beta: f64) -> f64 {
    (beta * intensity.characteristic_time(half_spread)).asinh() / intensity.a()
}

/// `(1/a) asinh(beta t1 (1 + sqrt(1 - (3/2)/(1 + sqrt(1 + (beta t1)^2)))))`.
pub fn second_jump_limit(intensity: &ExpIntensity, half_spread: f64, beta: f64) -> f64 {
    let b = beta * intensity.characteristic_time(half_spread);
    let inner = 1.0 - 1.5 / (1.0 + (1.0 + b * b).sqrt());
    (b * (1.0 + inner.sqrt())).asinh() / intensity.a()
}

/// Fast-regime impact `(1/a) log(2 k beta t1)` after `k` meta orders.
pub fn fast_regime_impact(intensity: &ExpIntensity, half_spread: f64, beta: f64, k: u64) -> f64 {
    (2.0 * k as f64 * beta * intensity.characteristic_time(half_spread)).ln() / intensity.a()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::roots::bisect;

    fn lam() -> ExpIntensity {
        ExpIntensity::new(50.0, 5.0).unwrap()
    }

    #[test]
    fn policy_quotes() {
        let g = PosteriorView::Gaussian(GaussianState {
            mean: 100.0,
            variance: 1e-3,
            t: 0.0,
        });
        let q = MidAtMean::new(0.1).unwrap().quotes(&g).unwrap();
        assert!((q.bid - 99.9).abs() < 1e-12 && (q.ask - 100.1).abs() < 1e-12);
        let fixed = FixedQuotes(Quotes::new(99.9, 100.1).unwrap());
        assert_eq!(fixed.quotes(&g).unwrap(), Quotes::new(99.9, 100.1).unwrap());
        let mut st = ArgmaxMMState::new(&GaussianPrior::new(100.0, 0.05).unwrap());
        st.xhat = 100.05;
        let am = PosteriorView::Argmax(st);
        assert_eq!(MidAtArgmax::new(0.0).unwrap().quotes(&am).unwrap(), Quotes::around(100.05, 0.0));
        assert_eq!(
            MidAtMean::new(0.1).unwrap().quotes(&am).unwrap_err(),
            PolicyError::PolicyStateMismatch {
                policy: "mid-mean",
                state: "argmax-root"
            }
        );
        assert!(MidAtMean::new(-0.1).is_err());
    }

    #[test]
    fn registry_builds_by_name() {
        let reg = PolicyRegistry::default();
        assert_eq!(reg.names(), vec!["fixed", "mid-argmax", "mid-mean"]);
        let p = PolicyParams { half_spread: 0.1, mid: 100.0 };
        for name in reg.names() {
            assert_eq!(reg.build(name, &p).unwrap().name(), name);
        }
        assert!(matches!(reg.build("nope", &p), Err(PolicyError::UnknownPolicy(..))));
    }

    #[test]
    fn first_jump_without_history_is_gaussian_shift() {
        let prior = GaussianPrior::new(100.0, 0.05).unwrap();
        let s = argmax_jump(&ArgmaxMMState::new(&prior), &prior, &lam(), 0.1, 0.0, 1).unwrap();
        assert!((s.xhat - 100.0 - 5.0 * prior.variance()).abs() < 1e-12);
    }

    #[test]
    fn diffuse_prior_jump_limits() {
        let l = lam();
        let beta = 10.0;
        for sigma0 in [1e6, 1e7] {
            let prior = GaussianPrior::new(100.0, sigma0).unwrap();
            let s1 = argmax_jump(&ArgmaxMMState::new(&prior), &prior, &l, 0.1, 1.0 / beta, 1).unwrap();
            assert!((s1.xhat - 100.0 - first_jump_limit(&l, 0.1, beta)).abs() < 1e-9);
            let s2 = argmax_jump(&s1, &prior, &l, 0.1, 2.0 / beta, 1).unwrap();
            assert!((s2.xhat - 100.0 - second_jump_limit(&l, 0.1, beta)).abs() < 1e-9);
        }
    }

    #[test]
    fn opposite_pair_returns_to_root() {
        let prior = GaussianPrior::new(100.0, 0.05).unwrap();
        let l = lam();
        let s = argmax_jump(&ArgmaxMMState::new(&prior), &prior, &l, 0.1, 0.1, 1).unwrap();
        let up = argmax_jump(&s, &prior, &l, 0.1, 0.3, 1).unwrap();
        let back = argmax_jump(&up, &prior, &l, 0.1, 0.3, -1).unwrap();
        let mut reference = s;
        reference.advance(s.xhat, l.a(), 0.3);
        let root = reference.solve(&prior, &l, l.characteristic_time(0.1), reference.net_jumps).unwrap();
        assert!((back.xhat - root).abs() < 1e-10);
    }

    #[test]
    fn recursion_first_step_matches_bisection() {
        let l = lam();
        let prior = GaussianPrior::new(0.0, 1e6).unwrap();
        let beta = 10.0;
        let bt1 = beta * l.characteristic_time(0.1);
        assert!((bt1 - 0.164872).abs() < 1e-6);
        let y = impact_recursion(&prior, &l, 0.1, beta, 1).unwrap()[0];
        let oracle = bisect(|y| y / (5.0 * 1e12) + (5.0 * y).sinh() / bt1 - 1.0, 0.0, 10.0, 200);
        assert!((y - oracle).abs() < 1e-12);
        assert!((y - bt1.asinh() / 5.0).abs() < 1e-9);
    }

    #[test]
    fn recursion_matches_argmax_jumps() {
        let l = lam();
        let prior = GaussianPrior::new(100.0, 0.2).unwrap();
        let beta = 10.0;
        let rec = impact_recursion(&prior, &l, 0.1, beta, 10).unwrap();
        let mut s = ArgmaxMMState::new(&prior);
        for (k, y) in rec.iter().enumerate() {
            s = argmax_jump(&s, &prior, &l, 0.1, (k + 1) as f64 / beta, 1).unwrap();
            assert!((s.xhat - y).abs() < 1e-10, "{k}: {} vs {y}", s.xhat);
        }
        assert!(rec.windows(2).all(|w| w[1] > w[0]));
        assert!(impact_recursion(&prior, &l, 0.1, beta, 0).unwrap().is_empty());
    }

    #[test]
    fn gradient_is_decreasing_around_root() {
        let l = lam();
        let prior = GaussianPrior::new(100.0, 0.05).unwrap();
        let mut s = ArgmaxMMState::new(&prior);
        for k in 1..6 {
            s = argmax_jump(&s, &prior, &l, 0.1, k as f64 * 0.1, if k % 2 == 0 { -1 } else { 1 }).unwrap();
        }
        let t1 = l.characteristic_time(0.1);
        for dy in [-10.0, -1.0, 0.0, 1.0, 10.0] {
            let (_, df) = s.gradient(&prior, &l, t1, s.net_jumps, s.xhat + dy);
            assert!(df < 0.0);
        }
    }
}
