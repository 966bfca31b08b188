//! Self-verification suite: each check compares the library against an
//! independent oracle or a stated limit and reports a measured value next to
//! its tolerance.

use std::fmt;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{Filter, Readout, RunConfig};
use crate::filter::{FilterSetup, GridFilter, PosteriorFilter};
use crate::flow::{simulate_trades, BrownianSource, MetaOrderSchedule, Thinning};
use crate::gaussian;
use crate::grid::{
    asymptotic_between_trades, closed_form_normalized, l1_distance, trapezoid, AsymptoticForm, GridDensity,
    GridSpec, QuoteHistory, ZakaiGrid,
};
use crate::impact::{
    self, fixed_quote_limit, run_experiment, run_replica, slow_limit_residual, Capture, ImpactCurve,
    ImpactExperiment,
};
use crate::market_maker::{
    fast_regime_impact, first_jump_limit, impact_recursion, second_jump_limit, MidAtMean, QuotePolicy,
};
use crate::model::{ExpIntensity, GaussianPrior, PriceModel, Quotes, Side, Source, TradeEvent};
use crate::output::{Manifest, OutputDir};
use crate::rng::stream;

type CheckResult = Result<CheckOutcome, Box<dyn std::error::Error + Send + Sync>>;

pub const CHECK_IDS: [u8; 10] = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Skipped,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Skipped => "SKIP",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub id: u8,
    pub name: &'static str,
    pub measured: f64,
    pub tolerance: f64,
    pub status: Status,
    pub detail: String,
}

impl CheckOutcome {
    fn judge(id: u8, measured: f64, tolerance: f64, pass: bool, detail: String) -> Self {
        Self {
            id,
            name: check_name(id),
            measured,
            tolerance,
            status: if pass { Status::Pass } else { Status::Fail },
            detail,
        }
    }

    fn skipped(id: u8, reason: &str) -> Self {
        Self {
            id,
            name: check_name(id),
            measured: f64::NAN,
            tolerance: f64::NAN,
            status: Status::Skipped,
            detail: reason.to_string(),
        }
    }
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] {:>2} {:<26} measured={:<12.6e} tol={:<10.3e} {}",
            self.status, self.id, self.name, self.measured, self.tolerance, self.detail
        )
    }
}

pub fn check_name(id: u8) -> &'static str {
    match id {
        1 => "closed-form oracle",
        2 => "gaussian jump law",
        3 => "dirac convergence",
        4 => "asymptotic confidence",
        5 => "quote stability",
        6 => "impact regimes",
        7 => "fixed-quote limit",
        8 => "impact overlay",
        9 => "boundedness/linearity",
        10 => "reproducibility",
        _ => "unknown",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub checks: Vec<CheckOutcome>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.status != Status::Fail)
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{c}")?;
        }
        let failed = self.checks.iter().filter(|c| c.status == Status::Fail).count();
        let skipped = self.checks.iter().filter(|c| c.status == Status::Skipped).count();
        write!(
            f,
            "{} checks: {} passed, {} failed, {} skipped",
            self.checks.len(),
            self.checks.len() - failed - skipped,
            failed,
            skipped
        )
    }
}

/// Knobs for the suite. `base` supplies the model parameters of the impact
/// experiment and the volatility that decides which checks apply.
#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOptions {
    pub base: RunConfig,
    pub seed: u64,
    /// Node count for the closed-form oracle grid (default: `dx = 1e-3`).
    pub oracle_grid_n: Option<usize>,
    /// Node count for the impact experiment grid.
    pub impact_grid_n: usize,
    pub replicas: usize,
}

impl VerifyOptions {
    pub const DEFAULT_SEED: u64 = 42;
    pub const IMPACT_GRID_N: usize = 1001;
    pub const MIN_REPLICAS: usize = 200;

    /// A grid size set away from its default is taken as an override for the
    /// closed-form oracle.
    pub fn from_config(cfg: &RunConfig) -> Self {
        let default_n = crate::config::GridConfig::default().n;
        Self {
            base: cfg.clone(),
            seed: cfg.seed.unwrap_or(Self::DEFAULT_SEED),
            oracle_grid_n: (cfg.grid.n != default_n).then_some(cfg.grid.n),
            impact_grid_n: Self::IMPACT_GRID_N,
            replicas: cfg.experiment.replicas.max(Self::MIN_REPLICAS),
        }
    }

    fn sigma(&self) -> f64 {
        self.base.price.sigma
    }
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self::from_config(&RunConfig::default())
    }
}

pub fn verify(opts: &VerifyOptions) -> Report {
    Report {
        checks: CHECK_IDS.iter().map(|&id| run_check(id, opts)).collect(),
    }
}

pub fn run_check(id: u8, opts: &VerifyOptions) -> CheckOutcome {
    let result = match id {
        1 => closed_form_oracle(opts),
        2 => gaussian_jump_law(),
        3 => dirac_convergence(),
        4 => asymptotic_confidence(opts),
        5 => quote_stability(),
        6 => impact_regimes(),
        7 => fixed_quote_limit_check(opts),
        8 => impact_overlay(opts),
        9 => boundedness_linearity(opts),
        10 => reproducibility(opts),
        _ => Err(format!("no check with id {id}").into()),
    };
    result.unwrap_or_else(|e| CheckOutcome::judge(id, f64::NAN, f64::NAN, false, format!("error: {e}")))
}

fn lam5() -> ExpIntensity {
    ExpIntensity::new(50.0, 5.0).expect("valid intensity")
}

/// Independent reference computations.
pub mod oracles {
    /// Classical fourth-order Runge-Kutta for a scalar autonomous ODE,
    /// sampled at `times` (increasing, starting at or after 0).
    pub fn rk4(f: impl Fn(f64) -> f64, y0: f64, times: &[f64], h: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(times.len());
        let (mut t, mut y) = (0.0, y0);
        for &target in times {
            while t < target {
                let step = h.min(target - t);
                let k1 = f(y);
                let k2 = f(y + 0.5 * step * k1);
                let k3 = f(y + 0.5 * step * k2);
                let k4 = f(y + step * k3);
                y += step / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
                t += step;
            }
            out.push(y);
        }
        out
    }

    /// Max relative difference between two equal-length slices.
    pub fn max_rel_error(got: &[f64], want: &[f64]) -> f64 {
        got.iter()
            .zip(want)
            .map(|(g, w)| ((g - w) / w).abs())
            .fold(0.0, f64::max)
    }
}

const REFINE: usize = 16;

/// L1 distance between the piecewise-linear interpolant of `coarse` and the
/// normalized closed form evaluated on a grid `REFINE` times finer.
fn interpolant_l1(
    coarse: &GridDensity,
    prior: &GaussianPrior,
    hist: &QuoteHistory,
    trades: &[TradeEvent],
    intensity: &ExpIntensity,
    t: f64,
) -> Result<f64, crate::grid::GridError> {
    let spec = *coarse.spec();
    let fine = GridSpec::new(spec.x_min, spec.dx / REFINE as f64, (spec.n - 1) * REFINE + 1)?;
    let m0 = GridDensity::from_fn(fine, |x| prior.pdf(x));
    let exact = closed_form_normalized(&m0, hist, trades, intensity, t)?;
    let diff: Vec<f64> = exact
        .xs()
        .zip(exact.values())
        .map(|(x, v)| (coarse.interpolate(x) - v).abs())
        .collect();
    Ok(trapezoid(&diff, fine.dx))
}

/// Runs the grid pipeline with `sigma = 0` through a piecewise-constant quote
/// history and a trade list, with steps no longer than `dt`.
fn grid_pipeline(
    spec: GridSpec,
    prior: &GaussianPrior,
    hist: &QuoteHistory,
    trades: &[TradeEvent],
    intensity: &ExpIntensity,
    horizon: f64,
    dt: f64,
) -> Result<GridDensity, crate::grid::GridError> {
    let mut z = ZakaiGrid::new(GridDensity::from_fn(spec, |x| prior.pdf(x)), 0.0, *intensity);
    let mut stops: Vec<f64> = hist.switch_times(horizon).collect();
    stops.extend(trades.iter().map(|e| e.time));
    stops.push(horizon);
    stops.sort_by(f64::total_cmp);
    let mut t = 0.0;
    let mut next_trade = 0;
    for stop in stops {
        let q = hist.at(t);
        let gap = stop - t;
        if gap > 0.0 {
            let n = (gap / dt * (1.0 - 1e-12)).ceil().max(1.0) as usize;
            for _ in 0..n {
                z.step(&q, gap / n as f64)?;
            }
        }
        t = stop;
        while next_trade < trades.len() && trades[next_trade].time <= t {
            z.apply_trade(&hist.before(t), trades[next_trade].side)?;
            next_trade += 1;
        }
    }
    z.into_density().normalize()
}

fn closed_form_oracle(opts: &VerifyOptions) -> CheckResult {
    const SEQUENCES: u64 = 20;
    const HORIZON: f64 = 0.2;
    const DT: f64 = 1e-4;
    const TOL: f64 = 1e-3;
    let l = lam5();
    let prior = GaussianPrior::new(100.0, 0.05)?;
    let half = 0.6;
    let n = opts.oracle_grid_n.unwrap_or(1201);
    let coarse = GridSpec::centered(100.0, half, n)?;
    let halved = GridSpec::centered(100.0, half, 2 * n - 1)?;
    let runs: Vec<Result<(f64, f64, usize), String>> = (0..SEQUENCES)
        .into_par_iter()
        .map(|j| {
            let mut rng = stream(opts.seed, (1 << 32) | j);
            let mut switches: Vec<f64> = (0..3).map(|_| rng.random::<f64>() * HORIZON).collect();
            switches.sort_by(f64::total_cmp);
            let mut segs = vec![0.0];
            segs.extend(switches);
            let hist = QuoteHistory::new(
                segs.into_iter()
                    .map(|s| {
                        let mid = 100.0 + rng.random_range(-0.05..0.05);
                        (s, Quotes::around(mid, rng.random_range(0.05..0.15)))
                    })
                    .collect(),
            )
            .map_err(|e| e.to_string())?;
            let price = 100.0 + rng.random_range(-0.05..0.05);
            let thinning = Thinning::new(l);
            let envelope = hist
                .segments()
                .iter()
                .map(|(_, q)| thinning.local_envelope(q, price, 0.0))
                .fold(0.0, f64::max);
            let mut src = BrownianSource::new(PriceModel::fixed(price));
            let trades: Vec<TradeEvent> =
                simulate_trades(&mut src, |t| hist.at(t), &thinning, envelope, HORIZON, &mut rng)
                    .map_err(|e| e.to_string())?
                    .into_iter()
                    .map(|e| TradeEvent::new(e.time, e.side, Source::Opportunistic))
                    .collect();
            let err = |spec| -> Result<f64, String> {
                let g = grid_pipeline(spec, &prior, &hist, &trades, &l, HORIZON, DT).map_err(|e| e.to_string())?;
                interpolant_l1(&g, &prior, &hist, &trades, &l, HORIZON).map_err(|e| e.to_string())
            };
            Ok((err(coarse)?, err(halved)?, trades.len()))
        })
        .collect();
    let mut worst = 0.0f64;
    let (mut ratio_lo, mut ratio_hi) = (f64::INFINITY, 0.0f64);
    let mut total_trades = 0;
    for r in runs {
        let (e1, e2, k) = r?;
        worst = worst.max(e1);
        let ratio = e2 / e1;
        ratio_lo = ratio_lo.min(ratio);
        ratio_hi = ratio_hi.max(ratio);
        total_trades += k;
    }
    let pass = worst < TOL && ratio_lo >= 0.2 && ratio_hi <= 0.8;
    Ok(CheckOutcome::judge(
        1,
        worst,
        TOL,
        pass,
        format!(
            "max L1 over {SEQUENCES} sequences ({total_trades} trades), dx={:.3e}; halving ratio in [{ratio_lo:.3}, {ratio_hi:.3}] (need [0.2, 0.8])",
            coarse.dx
        ),
    ))
}

fn gaussian_jump_law() -> CheckResult {
    let l = lam5();
    let prior = GaussianPrior::new(100.0, 0.05)?;
    let spec = GridSpec::default_for(100.0, 0.05, 0.0, 0.0, 4001)?;
    let d = GridDensity::from_fn(spec, |x| prior.pdf(x));
    let before = d.diagnostics()?.mean;
    let after = d.apply_trade(&Quotes::around(100.0, 0.1), &l, Side::Ask).diagnostics()?.mean;
    let expect = l.a() * prior.variance();
    let err = (after - before - expect).abs();
    let tol = 3.0 * spec.dx;
    Ok(CheckOutcome::judge(
        2,
        err,
        tol,
        err < tol,
        format!("mean shift {:.7} vs a*sigma^2 = {expect:.7}", after - before),
    ))
}

fn dirac_convergence() -> CheckResult {
    const TOL: f64 = 0.01;
    let l = lam5();
    let prior = GaussianPrior::new(100.0, 1.0)?;
    let q = Quotes::around(100.0, 0.1);
    let t1 = l.characteristic_time(0.1);
    let spec = GridSpec::centered(100.0, 2.0, 8001)?;
    let hist = QuoteHistory::constant(q);
    let at_t1 = grid_pipeline(spec, &prior, &hist, &[], &l, t1, 0.1 * t1)?;
    let at_50 = grid_pipeline(spec, &prior, &hist, &[], &l, 50.0 * t1, 0.1 * t1)?;
    let profile = asymptotic_between_trades(spec, |x| prior.pdf(x), &q, &l, 50.0 * t1, AsymptoticForm::Consistent);
    let dist = l1_distance(&at_50, &profile);
    let ratio = at_50.diagnostics()?.variance / at_t1.diagnostics()?.variance;
    Ok(CheckOutcome::judge(
        3,
        dist,
        TOL,
        dist < TOL && ratio < 0.05,
        format!("L1 to long-time profile at 50 t1; variance(50 t1)/variance(t1) = {ratio:.4} (need < 0.05)"),
    ))
}

fn asymptotic_confidence(opts: &VerifyOptions) -> CheckResult {
    const TOL: f64 = 1e-8;
    let sigma = opts.sigma();
    if sigma == 0.0 {
        return Ok(CheckOutcome::skipped(4, "needs sigma > 0"));
    }
    let c = &opts.base;
    let l = ExpIntensity::new(c.intensity.lambda0, c.intensity.a)?;
    let prior = GaussianPrior::new(c.prior.x0, c.prior.sigma0)?;
    let d = c.quotes.half_spread;
    let k = gaussian::learning_rate(&l, d);
    let times: Vec<f64> = (1..=200).map(|i| i as f64 * 0.025).collect();
    let ode = oracles::rk4(|v| sigma * sigma - k * v * v, prior.variance(), &times, 1e-5);
    let closed: Vec<f64> = times.iter().map(|&t| gaussian::variance_at(&prior, &l, d, sigma, t)).collect();
    let err = oracles::max_rel_error(&closed, &ode);
    let v_inf = gaussian::asymptotic_variance(&l, d, sigma);
    Ok(CheckOutcome::judge(
        4,
        err,
        TOL,
        err < TOL,
        format!("closed-form variance vs RK4 on [0, 5]; sigma_inf^2 = {v_inf:.6e}"),
    ))
}

fn quote_stability() -> CheckResult {
    let l = lam5();
    let prior = GaussianPrior::new(100.0, 0.05)?;
    let setup = FilterSetup {
        prior,
        intensity: l,
        sigma: 0.0,
        half_spread: 0.1,
        grid: GridSpec::default_for(100.0, 0.05, 0.0, 0.0, 4001)?,
    };
    let policy = MidAtMean::new(0.1)?;
    let mut f = GridFilter::new(&setup);
    let mut q = policy.quotes(&f.view()?)?;
    let mid0 = q.mid();
    let end = 10.0 * l.characteristic_time(0.1);
    let mut drift = 0.0f64;
    while f.time() < end * (1.0 - 1e-12) {
        let dt = f.max_step(&q).min(end - f.time());
        f.advance(&q, dt)?;
        q = policy.quotes(&f.view()?)?;
        drift = drift.max((q.mid() - mid0).abs());
    }
    let tol = 5.0 * setup.grid.dx;
    Ok(CheckOutcome::judge(
        5,
        drift,
        tol,
        drift < tol,
        "max |mid_t - mid_0| over [0, 10 t1] without trades".into(),
    ))
}

fn impact_regimes() -> CheckResult {
    let l = lam5();
    let t1 = l.characteristic_time(0.1);
    let mut fails = Vec::new();

    // (i) slow regime
    let slow = slow_limit_residual(0.1 / t1, t1, l.a())?;
    let tiny = slow_limit_residual(1e-6 / t1, t1, l.a())?;
    let ratio_err = (tiny.impact_log / tiny.impact_linear - 1.0).abs();
    if !(slow.residual < 1e-14) {
        fails.push(format!("slow residual {:.2e}", slow.residual));
    }
    if !(ratio_err < 1e-5) {
        fails.push(format!("slow ratio {ratio_err:.2e}"));
    }

    // (ii) fast regime: beta t1 = 1e3, a^2 sigma0^2 / (beta t1) = 1e4
    let beta = 1e3 / t1;
    let sigma0 = (1e4 * 1e3 / (l.a() * l.a())).sqrt();
    let wide = GaussianPrior::new(0.0, sigma0)?;
    let path = impact_recursion(&wide, &l, 0.1, beta, 10)?;
    let fast_err = path
        .iter()
        .enumerate()
        .map(|(k, y)| (y / fast_regime_impact(&l, 0.1, beta, k as u64 + 1) - 1.0).abs())
        .fold(0.0, f64::max);
    if !(fast_err < 0.05) {
        fails.push(format!("fast regime {fast_err:.3}"));
    }

    // (iii) first two jumps for a diffuse prior
    let beta = 10.0;
    let diffuse = GaussianPrior::new(0.0, 1e6)?;
    let two = impact_recursion(&diffuse, &l, 0.1, beta, 2)?;
    let e1 = (two[0] - first_jump_limit(&l, 0.1, beta)).abs();
    let e2 = (two[1] - second_jump_limit(&l, 0.1, beta)).abs();
    if !(e1 < 1e-6 && e2 < 1e-6) {
        fails.push(format!("jump limits {e1:.2e}/{e2:.2e}"));
    }
    let detail = format!(
        "slow residual {:.1e}, slow ratio err {ratio_err:.1e}, fast rel err {fast_err:.4} (<0.05), jumps {e1:.1e}/{e2:.1e} (<1e-6){}",
        slow.residual,
        if fails.is_empty() { String::new() } else { format!("; failing: {}", fails.join(", ")) }
    );
    Ok(CheckOutcome::judge(6, slow.residual, 1e-14, fails.is_empty(), detail))
}

fn fixed_quote_limit_check(opts: &VerifyOptions) -> CheckResult {
    const TOL: f64 = 1e-2;
    const REPLICAS: u64 = 32;
    let l = lam5();
    let beta = 10.0;
    let price = 100.0;
    let q = Quotes::around(100.0, 0.1);
    // A diffuse prior: the limit is a long-time statement and a tight prior
    // would still pull the mode back by a few percent at 100 t1.
    let prior = GaussianPrior::new(100.0, 0.5)?;
    let t1 = l.characteristic_time(0.1);
    let end = 100.0 * t1;
    let spec = GridSpec::centered(100.0, 0.6, 4001)?;
    let hist = QuoteHistory::constant(q);
    let schedule = MetaOrderSchedule::new(beta, None)?;
    let thinning = Thinning::new(l);
    let modes: Vec<Result<f64, String>> = (0..REPLICAS)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream(opts.seed, (7 << 32) | r);
            let mut src = BrownianSource::new(PriceModel::fixed(price));
            let envelope = thinning.local_envelope(&q, price, 0.0);
            let opp: Vec<TradeEvent> = simulate_trades(&mut src, |_| q, &thinning, envelope, end, &mut rng)
                .map_err(|e| e.to_string())?
                .into_iter()
                .map(|e| TradeEvent::new(e.time, e.side, Source::Opportunistic))
                .collect();
            let trades = crate::flow::merge_events(&opp, &schedule.events(end));
            let d = grid_pipeline(spec, &prior, &hist, &trades, &l, end, 0.1 * t1).map_err(|e| e.to_string())?;
            Ok(d.argmax())
        })
        .collect();
    let modes = modes.into_iter().collect::<Result<Vec<_>, _>>()?;
    let mean = modes.iter().sum::<f64>() / modes.len() as f64;
    let limit = fixed_quote_limit(&l, &q, price, beta, None);
    let err = (mean - limit).abs();
    Ok(CheckOutcome::judge(
        7,
        err,
        TOL,
        err < TOL,
        format!("mean argmax at 100 t1 over {REPLICAS} runs {mean:.5} vs limit {limit:.5}"),
    ))
}

fn impact_config(opts: &VerifyOptions, a: f64) -> RunConfig {
    let mut cfg = opts.base.clone();
    cfg.seed = Some(opts.seed);
    cfg.intensity.a = a;
    cfg.filter = Filter("grid".into());
    cfg.quotes.policy = "mid-mean".into();
    cfg.experiment.readout = Readout::Auto;
    cfg.experiment.replicas = opts.replicas;
    cfg.grid.n = opts.impact_grid_n;
    cfg.grid.half_width = None;
    cfg
}

/// Absolute floor for points where every replica agrees (standard error 0).
const STDERR_FLOOR: f64 = 1e-9;

fn max_z(curve: &ImpactCurve) -> f64 {
    curve
        .mean
        .iter()
        .zip(&curve.overlay)
        .zip(&curve.stderr)
        .map(|((m, o), s)| (m - o).abs() / s.max(STDERR_FLOOR))
        .fold(0.0, f64::max)
}

fn impact_overlay(opts: &VerifyOptions) -> CheckResult {
    if opts.sigma() == 0.0 {
        return Ok(CheckOutcome::skipped(8, "needs sigma > 0"));
    }
    let run = |a| -> Result<ImpactCurve, Box<dyn std::error::Error + Send + Sync>> {
        let exp = ImpactExperiment::from_config(&impact_config(opts, a))?;
        Ok(run_experiment(&exp)?)
    };
    let c5 = run(5.0)?;
    let c20 = run(20.0)?;
    let z5 = max_z(&c5);
    let (d5, d20) = (c5.max_deviation(), c20.max_deviation());
    Ok(CheckOutcome::judge(
        8,
        z5,
        3.0,
        z5 <= 3.0 && d20 > d5,
        format!(
            "a=5 max |mean-overlay|/stderr over {} times, {} replicas; max deviation a=5 {d5:.3e} < a=20 {d20:.3e}",
            c5.times.len(),
            c5.replicas
        ),
    ))
}

fn boundedness_linearity(opts: &VerifyOptions) -> CheckResult {
    let sigma = opts.sigma();
    if sigma == 0.0 {
        return Ok(CheckOutcome::skipped(9, "needs sigma > 0"));
    }
    let c = &opts.base;
    let l = ExpIntensity::new(c.intensity.lambda0, c.intensity.a)?;
    let d = c.quotes.half_spread;
    let beta = c.meta.beta.max(1.0);
    let v_inf = gaussian::asymptotic_variance(&l, d, sigma);
    let prior = GaussianPrior::new(c.prior.x0, v_inf.sqrt())?;
    let t1 = l.characteristic_time(d);
    let bound = beta * t1 / l.a();
    let times: Vec<f64> = (0..=400).map(|i| i as f64 * 0.025).collect();
    let b: Vec<f64> = times
        .iter()
        .map(|&t| gaussian::average_impact(&prior, &l, d, sigma, beta, c.price.s0, t, None).impact)
        .collect();
    let scale = bound * 1e-12;
    let increasing = b.windows(2).all(|w| w[1] > w[0] - scale);
    let concave = b.windows(3).all(|w| w[2] - 2.0 * w[1] + w[0] <= scale);
    let bounded = b.iter().all(|&v| v <= bound);
    let mut lin = 0.0f64;
    for &t in &times[1..] {
        for h in [None, c.meta.horizon] {
            let one = impact::analytic_overlays_at(&prior, &l, d, sigma, beta, c.price.s0, t, h);
            let two = impact::analytic_overlays_at(&prior, &l, d, sigma, 2.0 * beta, c.price.s0, t, h);
            for (x, y) in one.iter().zip(&two) {
                if *x != 0.0 {
                    lin = lin.max((y / (2.0 * x) - 1.0).abs());
                }
            }
        }
    }
    let tol = 1e-12;
    Ok(CheckOutcome::judge(
        9,
        lin,
        tol,
        increasing && concave && bounded && lin < tol,
        format!(
            "B_t increasing={increasing} concave={concave} bounded by beta t1/a={bound:.5} ({bounded}); measured = max rel error of 2x linearity"
        ),
    ))
}

fn reproducibility(opts: &VerifyOptions) -> CheckResult {
    let mut cfg = opts.base.clone();
    cfg.seed = Some(opts.seed);
    cfg.experiment.horizon = 1.0;
    cfg.experiment.replicas = 8;
    cfg.meta.horizon = cfg.meta.horizon.map(|h| h.min(1.0));
    cfg.grid.n = 401;
    if cfg.filter.0 == "argmax-root" && cfg.price.sigma != 0.0 {
        cfg.filter = Filter("grid".into());
    }
    let exp = ImpactExperiment::from_config(&cfg)?;
    type Written = (tempfile::TempDir, Vec<(String, Vec<u8>)>);
    let write = || -> Result<Written, Box<dyn std::error::Error + Send + Sync>> {
        let dir = tempfile::tempdir()?;
        let out = OutputDir::create(dir.path())?;
        out.write_curve(&run_experiment(&exp)?)?;
        let trace = run_replica(&exp, 0, Capture { events: true, densities: true })?;
        out.write_events(&trace.events)?;
        out.write_trajectory(&trace.samples, &trace.events)?;
        if let Some(last) = trace.densities.last() {
            out.write_density(0, last)?;
        }
        out.write_manifest(&Manifest::new(&cfg, "verify"))?;
        let mut files = Vec::new();
        for entry in std::fs::read_dir(dir.path())? {
            let p = entry?.path();
            files.push((p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p)?));
        }
        files.sort();
        Ok((dir, files))
    };
    let (_d1, first) = write()?;
    let (_d2, second) = write()?;
    let differing = first
        .iter()
        .zip(&second)
        .filter(|(x, y)| x != y)
        .count()
        + first.len().abs_diff(second.len());
    Ok(CheckOutcome::judge(
        10,
        differing as f64,
        0.0,
        differing == 0 && !first.is_empty(),
        format!("{} files compared byte for byte across two runs", first.len()),
    ))
}
