//! Grid solution of the Zakai equation for the unnormalized filter density.
//!
//! Between trades the density diffuses (Crank-Nicolson, reflecting boundary)
//! and decays under the potential `lambda(S^a - x) + lambda(x - S^b) - 2`;
//! trades multiply it by the intensity seen from the traded side.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ExpIntensity, Quotes, Side, TradeEvent};

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("grid needs at least 3 nodes and a positive step (n = {n}, dx = {dx})")]
    InvalidGrid { n: usize, dx: f64 },
    #[error("density has zero or non-finite mass ({0})")]
    ZeroMass(f64),
    #[error("density underflow: max value {0:e} below 1e-300, renormalize more often")]
    Underflow(f64),
    #[error("time step {dt} exceeds the stability bound {dt_max}")]
    StepTooLarge { dt: f64, dt_max: f64 },
    #[error("time step must be non-negative and finite, got {0}")]
    InvalidStep(f64),
    #[error("quote history must start at t = 0 and be time-ordered")]
    InvalidQuoteHistory,
}

/// Uniform grid `x_min + i dx`, `i = 0..n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x_min: f64,
    pub dx: f64,
    pub n: usize,
}

impl GridSpec {
    pub fn new(x_min: f64, dx: f64, n: usize) -> Result<Self, GridError> {
        if n < 3 || !(dx > 0.0 && dx.is_finite()) || !x_min.is_finite() {
            return Err(GridError::InvalidGrid { n, dx });
        }
        Ok(Self { x_min, dx, n })
    }

    /// `n` nodes spanning `[center - half_width, center + half_width]`.
    pub fn centered(center: f64, half_width: f64, n: usize) -> Result<Self, GridError> {
        if n < 3 {
            return Err(GridError::InvalidGrid { n, dx: f64::NAN });
        }
        Self::new(center - half_width, 2.0 * half_width / (n - 1) as f64, n)
    }

    /// Nodes of step `dx` covering `[center - half_width, center + half_width]`
    /// with `center` on a node.
    pub fn centered_with_step(center: f64, half_width: f64, dx: f64) -> Result<Self, GridError> {
        if !(dx > 0.0) {
            return Err(GridError::InvalidGrid { n: 0, dx });
        }
        let half = (half_width / dx).ceil() as usize;
        Self::new(center - half as f64 * dx, dx, 2 * half + 1)
    }

    /// Default span for a Gaussian prior and a Brownian price observed over `horizon`:
    /// `x0 +- (12 sigma0 + 6 sigma sqrt(horizon))`.
    pub fn default_for(x0: f64, sigma0: f64, sigma: f64, horizon: f64, n: usize) -> Result<Self, GridError> {
        let half = 12.0 * sigma0 + 6.0 * sigma * horizon.max(0.0).sqrt();
        Self::centered(x0, half, n)
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x_min + i as f64 * self.dx
    }

    pub fn x_max(&self) -> f64 {
        self.x(self.n - 1)
    }
}

/// Trapezoidal integral of equally spaced samples.
pub fn trapezoid(values: &[f64], dx: f64) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => 0.0,
        n => dx * (values.iter().sum::<f64>() - 0.5 * (values[0] + values[n - 1])),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridDensity {
    spec: GridSpec,
    values: Vec<f64>,
    normalized: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterDiagnostics {
    pub mean: f64,
    pub variance: f64,
    pub argmax: f64,
    pub mass: f64,
}

impl GridDensity {
    pub fn from_fn(spec: GridSpec, f: impl Fn(f64) -> f64) -> Self {
        let values = (0..spec.n).map(|i| f(spec.x(i)).max(0.0)).collect();
        Self {
            spec,
            values,
            normalized: false,
        }
    }

    pub fn from_values(spec: GridSpec, values: Vec<f64>) -> Result<Self, GridError> {
        if values.len() != spec.n {
            return Err(GridError::InvalidGrid { n: values.len(), dx: spec.dx });
        }
        Ok(Self {
            spec,
            values,
            normalized: false,
        })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn dx(&self) -> f64 {
        self.spec.dx
    }

    pub fn x_min(&self) -> f64 {
        self.spec.x_min
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn xs(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.spec.n).map(|i| self.spec.x(i))
    }

    pub fn mass(&self) -> f64 {
        trapezoid(&self.values, self.spec.dx)
    }

    pub fn normalize(&self) -> Result<GridDensity, GridError> {
        let mut out = self.clone();
        out.normalize_in_place()?;
        Ok(out)
    }

    pub fn normalize_in_place(&mut self) -> Result<(), GridError> {
        let mass = self.mass();
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(GridError::ZeroMass(mass));
        }
        let inv = 1.0 / mass;
        self.values.iter_mut().for_each(|v| *v *= inv);
        self.normalized = true;
        Ok(())
    }

    pub fn diagnostics(&self) -> Result<FilterDiagnostics, GridError> {
        let mass = self.mass();
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(GridError::ZeroMass(mass));
        }
        let spec = self.spec;
        let weighted: Vec<f64> = self
            .values
            .iter()
            .enumerate()
            .map(|(i, v)| v * spec.x(i))
            .collect();
        let mean = trapezoid(&weighted, spec.dx) / mass;
        let second: Vec<f64> = self
            .values
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let d = spec.x(i) - mean;
                v * d * d
            })
            .collect();
        let variance = (trapezoid(&second, spec.dx) / mass).max(0.0);
        Ok(FilterDiagnostics {
            mean,
            variance,
            argmax: self.argmax(),
            mass,
        })
    }

    /// Location of the maximum, refined by a parabola through the peak node
    /// and its two neighbours.
    pub fn argmax(&self) -> f64 {
        let (imax, _) = self
            .values
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });
        let x = self.spec.x(imax);
        if imax == 0 || imax + 1 == self.values.len() {
            return x;
        }
        let (l, c, r) = (self.values[imax - 1], self.values[imax], self.values[imax + 1]);
        let curv = l - 2.0 * c + r;
        if curv < 0.0 {
            let offset = (0.5 * (l - r) / curv).clamp(-1.0, 1.0);
            x + offset * self.spec.dx
        } else {
            x
        }
    }

    /// `int (x - mean)^order m(x) dx / mass`.
    pub fn central_moment(&self, order: i32) -> Result<f64, GridError> {
        let d = self.diagnostics()?;
        let spec = self.spec;
        let w: Vec<f64> = self
            .values
            .iter()
            .enumerate()
            .map(|(i, v)| v * (spec.x(i) - d.mean).powi(order))
            .collect();
        Ok(trapezoid(&w, spec.dx) / d.mass)
    }

    /// Piecewise-linear interpolant; zero outside the grid.
    pub fn interpolate(&self, x: f64) -> f64 {
        let s = (x - self.spec.x_min) / self.spec.dx;
        if !(s >= 0.0) || s > (self.spec.n - 1) as f64 {
            return 0.0;
        }
        let i = (s.floor() as usize).min(self.spec.n - 2);
        let w = s - i as f64;
        self.values[i] * (1.0 - w) + self.values[i + 1] * w
    }

    /// Multiplies by the intensity seen from the traded side: `lambda(S^a - x)`
    /// for an ask trade, `lambda(x - S^b)` for a bid trade.
    pub fn apply_trade(&self, quotes: &Quotes, intensity: &ExpIntensity, side: Side) -> GridDensity {
        let mut out = self.clone();
        out.apply_trade_in_place(quotes, intensity, side);
        out
    }

    pub fn apply_trade_in_place(&mut self, quotes: &Quotes, intensity: &ExpIntensity, side: Side) {
        let spec = self.spec;
        for (i, v) in self.values.iter_mut().enumerate() {
            if *v == 0.0 {
                continue;
            }
            let x = spec.x(i);
            let factor = match side {
                Side::Ask => intensity.evaluate(quotes.ask - x),
                Side::Bid => intensity.evaluate(x - quotes.bid),
            };
            *v *= factor;
        }
        self.normalized = false;
    }

    fn check_underflow(&self) -> Result<(), GridError> {
        let max = self.values.iter().cloned().fold(0.0, f64::max);
        if max < 1e-300 {
            return Err(GridError::Underflow(max));
        }
        Ok(())
    }
}

/// Largest step the grid pipeline accepts: resolves learning (`0.1 t1`) and
/// keeps the Crank-Nicolson update positivity-preserving (`dx^2 / sigma^2`).
pub fn dt_max(spec: &GridSpec, sigma: f64, intensity: &ExpIntensity, half_spread: f64) -> f64 {
    let learning = 0.1 * intensity.characteristic_time(half_spread);
    if sigma > 0.0 {
        learning.min(spec.dx * spec.dx / (sigma * sigma))
    } else {
        learning
    }
}

/// Crank-Nicolson operator for `u_t = D u_xx` with mirror (zero-flux)
/// boundaries. The discrete operator conserves the trapezoidal mass exactly.
#[derive(Debug, Clone)]
struct CrankNicolson {
    r: f64,
    // Forward-elimination factors of the implicit tridiagonal system.
    c_prime: Vec<f64>,
    inv_denom: Vec<f64>,
}

impl CrankNicolson {
    fn new(n: usize, diffusion: f64, dt: f64, dx: f64) -> Self {
        let r = diffusion * dt / (dx * dx);
        let lower = |i: usize| match i {
            0 => 0.0,
            i if i == n - 1 => -r,
            _ => -0.5 * r,
        };
        let upper = |i: usize| match i {
            0 => -r,
            i if i == n - 1 => 0.0,
            _ => -0.5 * r,
        };
        let mut c_prime = vec![0.0; n];
        let mut inv_denom = vec![0.0; n];
        let mut prev_c = 0.0;
        for i in 0..n {
            inv_denom[i] = 1.0 / (1.0 + r - lower(i) * prev_c);
            c_prime[i] = upper(i) * inv_denom[i];
            prev_c = c_prime[i];
        }
        Self { r, c_prime, inv_denom }
    }

    fn apply(&self, u: &mut [f64], scratch: &mut Vec<f64>) {
        let n = u.len();
        let r = self.r;
        scratch.clear();
        scratch.resize(n, 0.0);
        // Explicit half: (I + r/2 L) u.
        scratch[0] = (1.0 - r) * u[0] + r * u[1];
        for i in 1..n - 1 {
            scratch[i] = 0.5 * r * (u[i - 1] + u[i + 1]) + (1.0 - r) * u[i];
        }
        scratch[n - 1] = r * u[n - 2] + (1.0 - r) * u[n - 1];
        // Implicit half by the Thomas algorithm.
        let lower = |i: usize| if i == n - 1 { -r } else { -0.5 * r };
        let mut prev = 0.0;
        for (i, (s, inv)) in scratch.iter_mut().zip(&self.inv_denom).enumerate() {
            let l = if i == 0 { 0.0 } else { lower(i) };
            *s = (*s - l * prev) * inv;
            prev = *s;
        }
        u[n - 1] = scratch[n - 1];
        for i in (0..n - 1).rev() {
            u[i] = scratch[i] - self.c_prime[i] * u[i + 1];
        }
    }
}

/// Stateful grid filter: caches the diffusion factorization for the common
/// step and the exponentials `e^{+-a (x - x_ref)}` used by the decay term.
#[derive(Debug, Clone)]
pub struct ZakaiGrid {
    density: GridDensity,
    sigma: f64,
    intensity: ExpIntensity,
    x_ref: f64,
    exp_up: Vec<f64>,
    exp_down: Vec<f64>,
    cached: Option<(f64, CrankNicolson)>,
    scratch: Vec<f64>,
    renormalize_every: usize,
    steps_since_renorm: usize,
    log_scale: f64,
}

impl ZakaiGrid {
    pub const DEFAULT_RENORMALIZE_EVERY: usize = 100;

    pub fn new(density: GridDensity, sigma: f64, intensity: ExpIntensity) -> Self {
        let spec = *density.spec();
        let x_ref = 0.5 * (spec.x_min + spec.x_max());
        let a = intensity.a();
        let exp_up: Vec<f64> = (0..spec.n)
            .map(|i| (a * (spec.x(i) - x_ref)).clamp(-700.0, 700.0).exp())
            .collect();
        let exp_down = exp_up.iter().map(|e| 1.0 / e).collect();
        Self {
            density,
            sigma,
            intensity,
            x_ref,
            exp_up,
            exp_down,
            cached: None,
            scratch: Vec::new(),
            renormalize_every: Self::DEFAULT_RENORMALIZE_EVERY,
            steps_since_renorm: 0,
            log_scale: 0.0,
        }
    }

    pub fn with_renormalize_every(mut self, steps: usize) -> Self {
        self.renormalize_every = steps.max(1);
        self
    }

    pub fn density(&self) -> &GridDensity {
        &self.density
    }

    pub fn into_density(self) -> GridDensity {
        self.density
    }

    pub fn intensity(&self) -> &ExpIntensity {
        &self.intensity
    }

    /// Log of the factor divided out by renormalizations so far.
    pub fn log_scale(&self) -> f64 {
        self.log_scale
    }

    pub fn dt_max(&self, quotes: &Quotes) -> f64 {
        dt_max(self.density.spec(), self.sigma, &self.intensity, quotes.half_spread())
    }

    /// One operator-split step: diffusion then exact decay.
    pub fn step(&mut self, quotes: &Quotes, dt: f64) -> Result<(), GridError> {
        if !(dt >= 0.0 && dt.is_finite()) {
            return Err(GridError::InvalidStep(dt));
        }
        if dt == 0.0 {
            return Ok(());
        }
        let limit = self.dt_max(quotes);
        if dt > limit * (1.0 + 1e-9) {
            return Err(GridError::StepTooLarge { dt, dt_max: limit });
        }
        if self.sigma > 0.0 {
            let diffusion = 0.5 * self.sigma * self.sigma;
            let reuse = matches!(&self.cached, Some((cdt, _)) if *cdt == dt);
            let local;
            let cn = if reuse {
                &self.cached.as_ref().unwrap().1
            } else {
                local = CrankNicolson::new(self.density.len(), diffusion, dt, self.density.dx());
                if self.cached.is_none() {
                    self.cached = Some((dt, local.clone()));
                }
                &local
            };
            cn.apply(&mut self.density.values, &mut self.scratch);
            // Round-off can leave tiny negatives far in the tails.
            self.density.values.iter_mut().for_each(|v| {
                if *v < 0.0 {
                    *v = 0.0
                }
            });
        }
        self.decay(quotes, dt);
        self.density.normalized = false;
        self.steps_since_renorm += 1;
        if self.steps_since_renorm >= self.renormalize_every {
            self.renormalize()?;
        } else {
            self.density.check_underflow()?;
        }
        Ok(())
    }

    /// Caches the diffusion factorization for `dt` (the step used most often).
    pub fn prepare(&mut self, dt: f64) {
        if self.sigma > 0.0 && dt > 0.0 {
            let diffusion = 0.5 * self.sigma * self.sigma;
            self.cached = Some((dt, CrankNicolson::new(self.density.len(), diffusion, dt, self.density.dx())));
        }
    }

    fn decay(&mut self, quotes: &Quotes, dt: f64) {
        let l0 = self.intensity.lambda0();
        let a = self.intensity.a();
        let ca = l0 * (-a * (quotes.ask - self.x_ref)).exp();
        let cb = l0 * (-a * (self.x_ref - quotes.bid)).exp();
        for ((v, up), down) in self
            .density
            .values
            .iter_mut()
            .zip(&self.exp_up)
            .zip(&self.exp_down)
        {
            if *v == 0.0 {
                continue;
            }
            let rate = ca * up + cb * down - 2.0;
            *v *= (-rate * dt).exp();
        }
    }

    pub fn apply_trade(&mut self, quotes: &Quotes, side: Side) -> Result<(), GridError> {
        self.density.apply_trade_in_place(quotes, &self.intensity, side);
        self.renormalize()
    }

    pub fn renormalize(&mut self) -> Result<(), GridError> {
        let mass = self.density.mass();
        self.density.normalize_in_place()?;
        self.log_scale += mass.ln();
        self.steps_since_renorm = 0;
        Ok(())
    }

    pub fn diagnostics(&self) -> Result<FilterDiagnostics, GridError> {
        self.density.diagnostics()
    }
}

/// One Zakai step on a standalone density (diffusion with `sigma`, then decay).
pub fn step_continuous(
    density: &GridDensity,
    quotes: &Quotes,
    sigma: f64,
    intensity: &ExpIntensity,
    dt: f64,
) -> Result<GridDensity, GridError> {
    let mut z = ZakaiGrid::new(density.clone(), sigma, *intensity).with_renormalize_every(usize::MAX);
    z.step(quotes, dt)?;
    Ok(z.into_density())
}

/// Quotes piecewise constant in time: segment `k` applies on `[start_k, start_{k+1})`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuoteHistory {
    segments: Vec<(f64, Quotes)>,
}

impl QuoteHistory {
    pub fn constant(quotes: Quotes) -> Self {
        Self {
            segments: vec![(0.0, quotes)],
        }
    }

    pub fn new(segments: Vec<(f64, Quotes)>) -> Result<Self, GridError> {
        if segments.first().map(|s| s.0) != Some(0.0)
            || segments.windows(2).any(|w| !(w[1].0 > w[0].0))
        {
            return Err(GridError::InvalidQuoteHistory);
        }
        Ok(Self { segments })
    }

    pub fn segments(&self) -> &[(f64, Quotes)] {
        &self.segments
    }

    /// Quotes in force at `t` (right-continuous).
    pub fn at(&self, t: f64) -> Quotes {
        let idx = self.segments.partition_point(|s| s.0 <= t);
        self.segments[idx.saturating_sub(1)].1
    }

    /// Quotes in force just before `t`.
    pub fn before(&self, t: f64) -> Quotes {
        let idx = self.segments.partition_point(|s| s.0 < t);
        self.segments[idx.saturating_sub(1)].1
    }

    /// Segment boundaries strictly inside `(0, t)`.
    pub fn switch_times(&self, t: f64) -> impl Iterator<Item = f64> + '_ {
        self.segments.iter().skip(1).map(|s| s.0).take_while(move |&s| s < t)
    }
}

/// Log of the exact unnormalized solution for a fixed efficient price:
/// `log m0(x) - int_0^t (lambda(S^a - x) + lambda(x - S^b) - 2) du + sum log lambda(...)`
/// over trades up to and including `t`.
pub fn closed_form_log(
    prior: &GridDensity,
    quotes: &QuoteHistory,
    trades: &[TradeEvent],
    intensity: &ExpIntensity,
    t: f64,
) -> Vec<f64> {
    let spec = *prior.spec();
    let segs = quotes.segments();
    // Time spent under each quote segment up to t.
    let durations: Vec<(f64, Quotes)> = segs
        .iter()
        .enumerate()
        .filter_map(|(k, &(start, q))| {
            let end = segs.get(k + 1).map_or(t, |s| s.0.min(t));
            (end > start).then_some((end - start, q))
        })
        .collect();
    let a = intensity.a();
    (0..spec.n)
        .map(|i| {
            let x = spec.x(i);
            let m0 = prior.values()[i];
            if m0 <= 0.0 {
                return f64::NEG_INFINITY;
            }
            let mut log = m0.ln();
            for &(d, q) in &durations {
                log -= d * intensity.potential(&q, x);
            }
            for tr in trades.iter().filter(|tr| tr.time <= t) {
                let q = quotes.before(tr.time);
                log += intensity.lambda0().ln()
                    + match tr.side {
                        Side::Ask => -a * (q.ask - x),
                        Side::Bid => -a * (x - q.bid),
                    };
            }
            log
        })
        .collect()
}

/// Exact unnormalized filter density under a fixed efficient price.
pub fn closed_form_fixed_price(
    prior: &GridDensity,
    quotes: &QuoteHistory,
    trades: &[TradeEvent],
    intensity: &ExpIntensity,
    t: f64,
) -> GridDensity {
    let values = closed_form_log(prior, quotes, trades, intensity, t)
        .into_iter()
        .map(f64::exp)
        .collect();
    GridDensity {
        spec: *prior.spec(),
        values,
        normalized: false,
    }
}

/// The closed form, normalized via a max-shift so large `t` does not overflow.
pub fn closed_form_normalized(
    prior: &GridDensity,
    quotes: &QuoteHistory,
    trades: &[TradeEvent],
    intensity: &ExpIntensity,
    t: f64,
) -> Result<GridDensity, GridError> {
    let logs = closed_form_log(prior, quotes, trades, intensity, t);
    let shift = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let values = logs.into_iter().map(|l| (l - shift).exp()).collect();
    GridDensity {
        spec: *prior.spec(),
        values,
        normalized: false,
    }
    .normalize()
}

/// Which form of the long-time profile between trades to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AsymptoticForm {
    /// `a sqrt(t / (2 pi t1)) m0(x)/m0(mid) exp(-(t/t1)(cosh(a (x - mid)) - 1))`;
    /// the prefactor is the Laplace normalizer of the exponent, so the profile
    /// integrates to one as `t -> inf`.
    #[default]
    Consistent,
    /// `sqrt(t / (pi t1)) m0(x)/m0(mid) exp(-(t/t1)(cosh(x - mid) - 1))`, kept
    /// verbatim for comparison.
    Literal,
}

/// Long-time profile of the normalized posterior between trades under fixed quotes.
pub fn asymptotic_between_trades(
    spec: GridSpec,
    prior: impl Fn(f64) -> f64,
    quotes: &Quotes,
    intensity: &ExpIntensity,
    t: f64,
    form: AsymptoticForm,
) -> GridDensity {
    let mid = quotes.mid();
    let t1 = intensity.characteristic_time(quotes.half_spread());
    let a = intensity.a();
    let m_mid = prior(mid);
    let (pref, scale) = match form {
        AsymptoticForm::Consistent => (a * (t / (2.0 * std::f64::consts::PI * t1)).sqrt(), a),
        AsymptoticForm::Literal => ((t / (std::f64::consts::PI * t1)).sqrt(), 1.0),
    };
    GridDensity::from_fn(spec, |x| {
        pref * prior(x) / m_mid * (-(t / t1) * ((scale * (x - mid)).cosh() - 1.0)).exp()
    })
}

/// `int |p - q| dx` for two densities on the same grid (trapezoid).
pub fn l1_distance(p: &GridDensity, q: &GridDensity) -> f64 {
    debug_assert_eq!(p.len(), q.len());
    let diff: Vec<f64> = p
        .values()
        .iter()
        .zip(q.values())
        .map(|(a, b)| (a - b).abs())
        .collect();
    trapezoid(&diff, p.dx())
}
