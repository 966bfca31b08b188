//! Meta-order experiments: Monte-Carlo runs of the full feedback loop
//! (price, order flow, filter, quotes) and the analytic impact formulas
//! they are compared against.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, Readout, RunConfig};
use crate::filter::{FilterError, FilterRegistry, FilterSetup, PosteriorFilter};
use crate::flow::{BrownianSource, EventRecord, FlowError, MetaOrderSchedule, PriceSource, Thinning};
use crate::gaussian;
use crate::grid::{GridDensity, GridError, GridSpec};
use crate::market_maker::{self, PolicyError, PolicyParams, PolicyRegistry, PosteriorView, QuotePolicy};
use crate::model::{ExpIntensity, GaussianPrior, IntensityClip, ModelError, PriceModel, Quotes, Side, Source};
use crate::rng::stream;
use crate::roots::RootError;

#[derive(Debug, Error, PartialEq)]
pub enum ReplicaError {
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("readout `{0}` is not available from a {1} posterior")]
    ReadoutUnavailable(&'static str, &'static str),
}

#[derive(Debug, Error, PartialEq)]
pub enum ExperimentError {
    #[error("replica {index}: {source}")]
    Replica { index: usize, source: ReplicaError },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Root(#[from] RootError),
}

#[derive(Debug, Error, PartialEq)]
pub enum DomainError {
    #[error("slow-regime solution needs 0 < beta t1 < 1, got {0}")]
    OutOfRange(f64),
}

/// A fully validated experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpactExperiment {
    pub intensity: ExpIntensity,
    pub clip: IntensityClip,
    pub price: PriceModel,
    pub prior: GaussianPrior,
    pub half_spread: f64,
    pub fixed_mid: f64,
    pub policy: String,
    pub filter: String,
    pub schedule: MetaOrderSchedule,
    pub horizon: f64,
    pub output_dt: f64,
    pub replicas: usize,
    pub seed: u64,
    pub grid: GridSpec,
    pub readout: Readout,
    pub control_variate: bool,
}

impl ImpactExperiment {
    pub fn from_config(cfg: &RunConfig) -> Result<Self, ExperimentError> {
        cfg.validate()?;
        let intensity = ExpIntensity::new(cfg.intensity.lambda0, cfg.intensity.a)?;
        let clip = IntensityClip::new(
            IntensityClip::DEFAULT_LOWER,
            intensity.lambda0() * cfg.intensity.clip_e_folds.exp(),
        )?;
        let prior = GaussianPrior::new(cfg.prior.x0, cfg.prior.sigma0)?;
        let grid = match cfg.grid.half_width {
            Some(w) => GridSpec::centered(prior.x0, w, cfg.grid.n)?,
            None => GridSpec::default_for(
                prior.x0,
                prior.sigma0,
                cfg.price.sigma,
                cfg.experiment.horizon,
                cfg.grid.n,
            )?,
        };
        Ok(Self {
            intensity,
            clip,
            price: PriceModel::brownian(cfg.price.sigma, cfg.price.s0)?,
            prior,
            half_spread: cfg.quotes.half_spread,
            fixed_mid: cfg.fixed_mid(),
            policy: cfg.quotes.policy.clone(),
            filter: cfg.filter.0.clone(),
            schedule: MetaOrderSchedule::new(cfg.meta.beta, cfg.meta.horizon)?,
            horizon: cfg.experiment.horizon,
            output_dt: cfg.experiment.output_dt,
            replicas: cfg.experiment.replicas,
            seed: cfg.seed.unwrap_or(0),
            grid,
            readout: cfg.experiment.readout,
            control_variate: cfg.experiment.control_variate,
        })
    }

    pub fn filter_setup(&self) -> FilterSetup {
        FilterSetup {
            prior: self.prior,
            intensity: self.intensity,
            sigma: self.price.sigma,
            half_spread: self.half_spread,
            grid: self.grid,
        }
    }

    /// Output times `0, dt, 2 dt, ...` up to the horizon.
    pub fn output_times(&self) -> Vec<f64> {
        let n = (self.horizon / self.output_dt + 1e-9).floor() as usize;
        (0..=n).map(|k| k as f64 * self.output_dt).collect()
    }

    /// The readout actually used once `auto` is resolved.
    pub fn resolved_readout(&self) -> Readout {
        match self.readout {
            Readout::Auto if self.policy == "mid-argmax" => Readout::Mid,
            Readout::Auto => Readout::Mean,
            r => r,
        }
    }

    pub fn readout_label(&self) -> &'static str {
        match self.resolved_readout() {
            Readout::Mean | Readout::Auto => "posterior_mean_minus_s0",
            Readout::Mid => "mid_minus_s0",
            Readout::Argmax => "posterior_mode_minus_s0",
        }
    }

    fn policy(&self) -> Result<Box<dyn QuotePolicy>, PolicyError> {
        PolicyRegistry::default().build(
            &self.policy,
            &PolicyParams {
                half_spread: self.half_spread,
                mid: self.fixed_mid,
            },
        )
    }

    /// Expected impact under the small-spread approximation with the actual
    /// meta-order jumps: `A_t + B_t - S0`.
    pub fn overlay(&self, t: f64) -> f64 {
        let ai = gaussian::average_impact(
            &self.prior,
            &self.intensity,
            self.half_spread,
            self.price.sigma,
            0.0,
            self.price.s0,
            t,
            self.schedule.horizon,
        );
        let b = gaussian::average_impact_jumps(
            &self.prior,
            &self.intensity,
            self.half_spread,
            self.price.sigma,
            &self.schedule,
            t,
        );
        ai.learning + b - self.price.s0
    }
}

/// What a replica records besides the readout.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Capture {
    pub events: bool,
    pub densities: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceSample {
    pub t: f64,
    pub mean: Option<f64>,
    pub variance: Option<f64>,
    pub argmax: f64,
    pub bid: f64,
    pub ask: f64,
    pub efficient_price: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensitySnapshot {
    pub t: f64,
    pub quotes: Quotes,
    pub density: GridDensity,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReplicaTrace {
    /// Readout minus `S0` at each output time, or readout minus
    /// `S_t - mu t` with the control variate.
    pub impact: Vec<f64>,
    pub samples: Vec<TraceSample>,
    pub events: Vec<EventRecord>,
    pub densities: Vec<DensitySnapshot>,
}

fn sample(t: f64, view: &PosteriorView, quotes: &Quotes, price: f64) -> TraceSample {
    let (mean, variance) = match view {
        PosteriorView::Grid(d) => (Some(d.mean), Some(d.variance)),
        PosteriorView::Gaussian(g) => (Some(g.mean), Some(g.variance)),
        PosteriorView::Argmax(_) => (None, None),
    };
    TraceSample {
        t,
        mean,
        variance,
        argmax: view.argmax(),
        bid: quotes.bid,
        ask: quotes.ask,
        efficient_price: price,
    }
}

/// One run of the feedback loop with its own random stream.
pub fn run_replica(exp: &ImpactExperiment, replica: usize, capture: Capture) -> Result<ReplicaTrace, ReplicaError> {
    let mut rng = stream(exp.seed, replica as u64);
    let mut src = BrownianSource::new(exp.price);
    let thinning = Thinning::with_clip(exp.intensity, exp.clip);
    let mut filter: Box<dyn PosteriorFilter> = FilterRegistry::default().build(&exp.filter, &exp.filter_setup())?;
    let policy = exp.policy()?;
    let readout = exp.resolved_readout();
    let times = exp.output_times();
    let meta = exp.schedule.times(exp.horizon);

    let mut trace = ReplicaTrace::default();
    let mut view = filter.view()?;
    let mut quotes = policy.quotes(&view)?;
    let record = |trace: &mut ReplicaTrace,
                      filter: &dyn PosteriorFilter,
                      view: &PosteriorView,
                      quotes: &Quotes,
                      t: f64,
                      price: f64|
     -> Result<(), ReplicaError> {
        let level = match readout {
            Readout::Mean | Readout::Auto => view
                .mean()
                .ok_or(ReplicaError::ReadoutUnavailable("mean", view.kind()))?,
            Readout::Mid => quotes.mid(),
            Readout::Argmax => view.argmax(),
        };
        let reference = if exp.control_variate {
            price - exp.price.mu * t
        } else {
            exp.price.s0
        };
        trace.impact.push(level - reference);
        trace.samples.push(sample(t, view, quotes, price));
        if capture.densities {
            if let Some(d) = filter.density() {
                trace.densities.push(DensitySnapshot {
                    t,
                    quotes: *quotes,
                    density: d.clone(),
                });
            }
        }
        Ok(())
    };
    record(&mut trace, filter.as_ref(), &view, &quotes, 0.0, exp.price.s0)?;

    let (mut t, mut next_out, mut next_meta) = (0.0, 1, 0);
    while next_out < times.len() {
        let t_out = times[next_out];
        let t_meta = meta.get(next_meta).copied().unwrap_or(f64::INFINITY);
        let t_next = (t + filter.max_step(&quotes)).min(t_out).min(t_meta);
        let (_, s_now) = src.current();
        let envelope = thinning.interval_envelope(&quotes, s_now, exp.price.sigma, exp.price.mu, t_next - t);
        match thinning.next_arrival(t, t_next, &quotes, envelope, &mut src, &mut rng)? {
            Some(arrival) => {
                filter.advance(&quotes, arrival.time - t)?;
                filter.observe(&quotes, arrival.side)?;
                t = arrival.time;
                if capture.events {
                    trace.events.push(EventRecord {
                        time: t,
                        side: arrival.side,
                        source: Source::Opportunistic,
                        bid: quotes.bid,
                        ask: quotes.ask,
                        efficient_price: arrival.price,
                    });
                }
            }
            None => {
                filter.advance(&quotes, t_next - t)?;
                t = t_next;
                let price = src.price_at(t, &mut rng)?;
                while next_meta < meta.len() && meta[next_meta] <= t {
                    filter.observe(&quotes, Side::Ask)?;
                    if capture.events {
                        trace.events.push(EventRecord {
                            time: t,
                            side: Side::Ask,
                            source: Source::Meta,
                            bid: quotes.bid,
                            ask: quotes.ask,
                            efficient_price: price,
                        });
                    }
                    next_meta += 1;
                    quotes = policy.quotes(&filter.view()?)?;
                }
                if t == t_out {
                    view = filter.view()?;
                    quotes = policy.quotes(&view)?;
                    record(&mut trace, filter.as_ref(), &view, &quotes, t, price)?;
                    next_out += 1;
                    continue;
                }
            }
        }
        quotes = policy.quotes(&filter.view()?)?;
    }
    Ok(trace)
}

/// Mean impact curve over replicas with the analytic overlay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpactCurve {
    pub readout: String,
    pub replicas: usize,
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    pub overlay: Vec<f64>,
}

impl ImpactCurve {
    /// Largest `|mean - overlay|` over output times.
    pub fn max_deviation(&self) -> f64 {
        self.mean
            .iter()
            .zip(&self.overlay)
            .map(|(m, o)| (m - o).abs())
            .fold(0.0, f64::max)
    }

    /// Largest `|mean - overlay| / stderr`; points with zero standard error
    /// count only if they deviate.
    pub fn max_z(&self) -> f64 {
        self.mean
            .iter()
            .zip(&self.overlay)
            .zip(&self.stderr)
            .map(|((m, o), s)| {
                let d = (m - o).abs();
                if *s > 0.0 {
                    d / s
                } else if d > 0.0 {
                    f64::INFINITY
                } else {
                    0.0
                }
            })
            .fold(0.0, f64::max)
    }
}

pub fn run_experiment(exp: &ImpactExperiment) -> Result<ImpactCurve, ExperimentError> {
    let traces: Vec<Result<Vec<f64>, ReplicaError>> = (0..exp.replicas)
        .into_par_iter()
        .map(|r| run_replica(exp, r, Capture::default()).map(|t| t.impact))
        .collect();
    let times = exp.output_times();
    let n = exp.replicas as f64;
    let mut sum = vec![0.0; times.len()];
    let mut runs = Vec::with_capacity(exp.replicas);
    for (index, tr) in traces.into_iter().enumerate() {
        let tr = tr.map_err(|source| ExperimentError::Replica { index, source })?;
        for (s, v) in sum.iter_mut().zip(&tr) {
            *s += v;
        }
        runs.push(tr);
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let stderr = (0..times.len())
        .map(|k| {
            if exp.replicas < 2 {
                return 0.0;
            }
            let ss: f64 = runs.iter().map(|r| (r[k] - mean[k]).powi(2)).sum();
            (ss / (n - 1.0) / n).sqrt()
        })
        .collect();
    let overlay = times.iter().map(|&t| exp.overlay(t)).collect();
    Ok(ImpactCurve {
        readout: exp.readout_label().to_string(),
        replicas: exp.replicas,
        times,
        mean,
        stderr,
        overlay,
    })
}

/// Residual of the slow-regime system at its constant solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlowLimit {
    pub residual: f64,
    /// `log(1 + beta t1) / a`.
    pub impact_log: f64,
    /// `beta t1 / a`.
    pub impact_linear: f64,
}

/// Substitutes `u = 1 + beta t1`, `v = 1 - beta t1` into the slow-regime
/// system (multiplied through by `t1`) and reports the largest residual.
pub fn slow_limit_residual(beta: f64, t1: f64, a: f64) -> Result<SlowLimit, DomainError> {
    let b = beta * t1;
    if !(b > 0.0 && b < 1.0) {
        return Err(DomainError::OutOfRange(b));
    }
    let (u, v) = (1.0 + b, 1.0 - b);
    let (du, dv) = (0.0, 0.0);
    let t = 1.0;
    let shift = b + 0.5 * (v - u);
    let common = 0.5 * (v + u) + b * (v - u) / (v + u);
    let r1 = (u * v + t * du * v) - (shift + common);
    let r2 = (u * v + t * u * dv) - (-shift + common);
    Ok(SlowLimit {
        residual: r1.abs().max(r2.abs()),
        impact_log: b.ln_1p() / a,
        impact_linear: b / a,
    })
}

/// Long-time mode under fixed quotes and a fixed efficient price `s`:
/// `s` when the meta-order stops, otherwise
/// `mid + asinh(sinh(a (s - mid)) + beta t1) / a`.
pub fn fixed_quote_limit(intensity: &ExpIntensity, quotes: &Quotes, s: f64, beta: f64, horizon: Option<f64>) -> f64 {
    match horizon {
        Some(_) => s,
        None => {
            let a = intensity.a();
            let mid = quotes.mid();
            let t1 = intensity.characteristic_time(quotes.half_spread());
            mid + ((a * (s - mid)).sinh() + beta * t1).asinh() / a
        }
    }
}

/// Mode in the diffuse-prior limit:
/// `mid + asinh((t1 / t)(net + floor(beta (t ^ T)))) / a`.
pub fn diffuse_prior_limit(
    intensity: &ExpIntensity,
    quotes: &Quotes,
    net_opportunistic: i64,
    schedule: &MetaOrderSchedule,
    t: f64,
) -> f64 {
    let t1 = intensity.characteristic_time(quotes.half_spread());
    let n = net_opportunistic as f64 + schedule.count_until(t) as f64;
    quotes.mid() + (t1 / t * n).asinh() / intensity.a()
}

/// The meta-order overlays that scale with `beta`: the no-information
/// impact and the average-impact term `B_t`.
#[allow(clippy::too_many_arguments)]
pub fn analytic_overlays_at(
    prior: &GaussianPrior,
    intensity: &ExpIntensity,
    half_spread: f64,
    sigma: f64,
    beta: f64,
    s0: f64,
    t: f64,
    horizon: Option<f64>,
) -> [f64; 2] {
    [
        gaussian::impact_no_info(prior, intensity, half_spread, sigma, beta, t, horizon),
        gaussian::average_impact(prior, intensity, half_spread, sigma, beta, s0, t, horizon).impact,
    ]
}

/// Analytic impact curves for an experiment's parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticOverlays {
    pub times: Vec<f64>,
    /// Mid tracking the mean, balanced opportunistic flow.
    pub no_info: Vec<f64>,
    pub learning: Vec<f64>,
    pub average_impact: Vec<f64>,
    /// Mode after each meta order (argmax policy, balanced flow), minus `x0`.
    pub recursion: Vec<f64>,
}

pub fn analytic_overlays(exp: &ImpactExperiment, times: &[f64]) -> Result<AnalyticOverlays, ExperimentError> {
    let (p, l, d, s) = (&exp.prior, &exp.intensity, exp.half_spread, exp.price.sigma);
    let beta = exp.schedule.beta;
    let horizon = exp.schedule.horizon;
    let mut no_info = Vec::with_capacity(times.len());
    let mut learning = Vec::with_capacity(times.len());
    let mut average = Vec::with_capacity(times.len());
    for &t in times {
        no_info.push(gaussian::impact_no_info(p, l, d, s, beta, t, horizon));
        let ai = gaussian::average_impact(p, l, d, s, beta, exp.price.s0, t, horizon);
        learning.push(ai.learning);
        average.push(ai.impact);
    }
    let k_max = exp.schedule.count_until(exp.horizon) as usize;
    let recursion = if beta > 0.0 {
        market_maker::impact_recursion(p, l, d, beta, k_max)?
            .into_iter()
            .map(|y| y - p.x0)
            .collect()
    } else {
        Vec::new()
    };
    Ok(AnalyticOverlays {
        times: times.to_vec(),
        no_info,
        learning,
        average_impact: average,
        recursion,
    })
}
