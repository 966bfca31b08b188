//! Efficient-price paths, thinning simulation of the aggressive order flow,
//! and the deterministic meta-order schedule.

use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ExpIntensity, IntensityClip, PriceModel, Quotes, Side, Source, TradeEvent};

#[derive(Debug, Error, PartialEq)]
pub enum FlowError {
    #[error("need dt > 0 and horizon >= dt (dt = {dt}, horizon = {horizon})")]
    InvalidStep { dt: f64, horizon: f64 },
    #[error("intensity {rate} at t = {time} exceeds the thinning envelope {envelope}")]
    EnvelopeViolation { time: f64, rate: f64, envelope: f64 },
    #[error("thinning envelope must be positive and finite, got {0}")]
    InvalidEnvelope(f64),
    #[error("meta-order speed must be non-negative and finite, got {0}")]
    InvalidSpeed(f64),
    #[error("time {0} lies outside the price path")]
    OutsidePath(f64),
    #[error("price path times must be strictly increasing with finite values")]
    InvalidPath,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PricePath {
    times: Vec<f64>,
    values: Vec<f64>,
}

impl PricePath {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self, FlowError> {
        if times.is_empty()
            || times.len() != values.len()
            || times.windows(2).any(|w| !(w[1] > w[0]))
            || values.iter().any(|v| !v.is_finite())
        {
            return Err(FlowError::InvalidPath);
        }
        Ok(Self { times, values })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Euler-Maruyama path on a regular grid; exact for constant coefficients.
pub fn simulate_price<R: Rng + ?Sized>(
    model: &PriceModel,
    dt: f64,
    horizon: f64,
    rng: &mut R,
) -> Result<PricePath, FlowError> {
    if !(dt > 0.0 && horizon >= dt && horizon.is_finite()) {
        return Err(FlowError::InvalidStep { dt, horizon });
    }
    let n = ((horizon / dt) - 1e-9).ceil() as usize;
    let mut times = Vec::with_capacity(n + 1);
    let mut values = Vec::with_capacity(n + 1);
    let mut s = model.s0;
    times.push(0.0);
    values.push(s);
    let mut prev = 0.0;
    for k in 1..=n {
        let t = if k == n { horizon } else { k as f64 * dt };
        let h = t - prev;
        s += model.mu * h;
        if model.sigma > 0.0 {
            let z: f64 = StandardNormal.sample(rng);
            s += model.sigma * h.sqrt() * z;
        }
        times.push(t);
        values.push(s);
        prev = t;
    }
    PricePath::new(times, values)
}

/// Supplies the efficient price at non-decreasing query times.
pub trait PriceSource {
    fn price_at<R: Rng + ?Sized>(&mut self, t: f64, rng: &mut R) -> Result<f64, FlowError>;
    fn volatility(&self) -> f64;
    /// Last queried time and price.
    fn current(&self) -> (f64, f64);
}

/// Brownian price sampled exactly at whatever times are queried.
#[derive(Debug, Clone)]
pub struct BrownianSource {
    model: PriceModel,
    t: f64,
    s: f64,
}

impl BrownianSource {
    pub fn new(model: PriceModel) -> Self {
        Self {
            model,
            t: 0.0,
            s: model.s0,
        }
    }
}

impl PriceSource for BrownianSource {
    fn price_at<R: Rng + ?Sized>(&mut self, t: f64, rng: &mut R) -> Result<f64, FlowError> {
        let h = t - self.t;
        if h < 0.0 {
            return Err(FlowError::OutsidePath(t));
        }
        if h > 0.0 {
            self.s += self.model.mu * h;
            if self.model.sigma > 0.0 {
                let z: f64 = StandardNormal.sample(rng);
                self.s += self.model.sigma * h.sqrt() * z;
            }
            self.t = t;
        }
        Ok(self.s)
    }

    fn volatility(&self) -> f64 {
        self.model.sigma
    }

    fn current(&self) -> (f64, f64) {
        (self.t, self.s)
    }
}

/// A stored path refined between knots by Brownian bridges with volatility `sigma`.
#[derive(Debug, Clone)]
pub struct PathSource<'a> {
    path: &'a PricePath,
    sigma: f64,
    next: usize,
    t: f64,
    s: f64,
}

impl<'a> PathSource<'a> {
    pub fn new(path: &'a PricePath, sigma: f64) -> Self {
        Self {
            path,
            sigma,
            next: 1,
            t: path.times[0],
            s: path.values[0],
        }
    }
}

impl PriceSource for PathSource<'_> {
    fn price_at<R: Rng + ?Sized>(&mut self, t: f64, rng: &mut R) -> Result<f64, FlowError> {
        if t < self.t || t > *self.path.times.last().unwrap() {
            return Err(FlowError::OutsidePath(t));
        }
        while self.next < self.path.times.len() && self.path.times[self.next] <= t {
            self.t = self.path.times[self.next];
            self.s = self.path.values[self.next];
            self.next += 1;
        }
        if t > self.t {
            let (tk, vk) = (self.path.times[self.next], self.path.values[self.next]);
            let w = (t - self.t) / (tk - self.t);
            let mut s = self.s + w * (vk - self.s);
            if self.sigma > 0.0 {
                let var = self.sigma * self.sigma * (t - self.t) * (tk - t) / (tk - self.t);
                let z: f64 = StandardNormal.sample(rng);
                s += var.sqrt() * z;
            }
            self.t = t;
            self.s = s;
        }
        Ok(self.s)
    }

    fn volatility(&self) -> f64 {
        self.sigma
    }

    fn current(&self) -> (f64, f64) {
        (self.t, self.s)
    }
}

/// An accepted thinning proposal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arrival {
    pub time: f64,
    pub side: Side,
    pub price: f64,
}

/// One row of an event log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub time: f64,
    pub side: Side,
    pub source: Source,
    pub bid: f64,
    pub ask: f64,
    pub efficient_price: f64,
}

/// Thinning sampler for the two-sided order flow. Proposals arrive at rate
/// `2 * envelope`; one uniform draw picks the ask side with probability
/// `lambda_ask / (2 envelope)` and the bid side with `lambda_bid / (2 envelope)`.
#[derive(Debug, Clone, Copy)]
pub struct Thinning {
    pub intensity: ExpIntensity,
    pub clip: IntensityClip,
}

impl Thinning {
    pub fn new(intensity: ExpIntensity) -> Self {
        Self {
            intensity,
            clip: IntensityClip::for_intensity(&intensity),
        }
    }

    pub fn with_clip(intensity: ExpIntensity, clip: IntensityClip) -> Self {
        Self { intensity, clip }
    }

    pub fn rates(&self, quotes: &Quotes, price: f64) -> (f64, f64) {
        (
            self.clip.apply(self.intensity.ask_rate(quotes, price)),
            self.clip.apply(self.intensity.bid_rate(quotes, price)),
        )
    }

    /// Per-side bound valid while the price stays within `margin` of `price`.
    pub fn local_envelope(&self, quotes: &Quotes, price: f64, margin: f64) -> f64 {
        let (ask, bid) = self.rates(quotes, price);
        let bump = (self.intensity.a() * margin.max(0.0)).exp();
        self.clip.apply(ask.max(bid) * bump)
    }

    /// Envelope for an interval of length `dt` starting at `price`: ten
    /// standard deviations of the price move (exact when `sigma = 0`).
    pub fn interval_envelope(&self, quotes: &Quotes, price: f64, sigma: f64, mu: f64, dt: f64) -> f64 {
        self.local_envelope(quotes, price, 10.0 * sigma * dt.sqrt() + mu.abs() * dt)
    }

    /// First arrival in `(t0, t1]` with quotes fixed, or `None`.
    pub fn next_arrival<P: PriceSource, R: Rng + ?Sized>(
        &self,
        t0: f64,
        t1: f64,
        quotes: &Quotes,
        envelope: f64,
        source: &mut P,
        rng: &mut R,
    ) -> Result<Option<Arrival>, FlowError> {
        self.next_arrival_with(t0, t1, |_| *quotes, envelope, source, rng)
    }

    pub fn next_arrival_with<P: PriceSource, R: Rng + ?Sized>(
        &self,
        t0: f64,
        t1: f64,
        mut quotes: impl FnMut(f64) -> Quotes,
        envelope: f64,
        source: &mut P,
        rng: &mut R,
    ) -> Result<Option<Arrival>, FlowError> {
        if !(envelope > 0.0 && envelope.is_finite()) {
            return Err(FlowError::InvalidEnvelope(envelope));
        }
        let gaps = Exp::new(2.0 * envelope).map_err(|_| FlowError::InvalidEnvelope(envelope))?;
        let mut t = t0;
        loop {
            t += gaps.sample(rng);
            if t > t1 {
                return Ok(None);
            }
            let price = source.price_at(t, rng)?;
            let q = quotes(t);
            let (ask, bid) = self.rates(&q, price);
            let worst = ask.max(bid);
            if worst > envelope * (1.0 + 1e-12) {
                return Err(FlowError::EnvelopeViolation {
                    time: t,
                    rate: worst,
                    envelope,
                });
            }
            let u = rng.random::<f64>() * 2.0 * envelope;
            let side = if u < ask {
                Some(Side::Ask)
            } else if u >= envelope && u < envelope + bid {
                Some(Side::Bid)
            } else {
                None
            };
            if let Some(side) = side {
                return Ok(Some(Arrival { time: t, side, price }));
            }
        }
    }
}

/// Opportunistic trades on `(0, horizon]` against a quote process given as a
/// function of time. `envelope` bounds the clipped per-side rate.
pub fn simulate_trades<P: PriceSource, R: Rng + ?Sized>(
    source: &mut P,
    mut quotes: impl FnMut(f64) -> Quotes,
    thinning: &Thinning,
    envelope: f64,
    horizon: f64,
    rng: &mut R,
) -> Result<Vec<EventRecord>, FlowError> {
    let mut out = Vec::new();
    let mut t = 0.0;
    while let Some(arr) = thinning.next_arrival_with(t, horizon, &mut quotes, envelope, source, rng)? {
        let q = quotes(arr.time);
        out.push(EventRecord {
            time: arr.time,
            side: arr.side,
            source: Source::Opportunistic,
            bid: q.bid,
            ask: q.ask,
            efficient_price: arr.price,
        });
        t = arr.time;
    }
    Ok(out)
}

/// `beta` buy orders per second on `[0, T]`; `horizon = None` means `T = inf`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetaOrderSchedule {
    pub beta: f64,
    pub horizon: Option<f64>,
}

impl MetaOrderSchedule {
    pub fn new(beta: f64, horizon: Option<f64>) -> Result<Self, FlowError> {
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(FlowError::InvalidSpeed(beta));
        }
        Ok(Self { beta, horizon })
    }

    pub fn none() -> Self {
        Self {
            beta: 0.0,
            horizon: Some(0.0),
        }
    }

    /// Number of orders sent up to time `t` (inclusive), i.e. `floor(beta (t ^ T))`.
    pub fn count_until(&self, t: f64) -> u64 {
        if self.beta == 0.0 {
            return 0;
        }
        let end = self.horizon.map_or(t, |h| h.min(t));
        if end < 0.0 {
            return 0;
        }
        // Tolerate round-off so that e.g. beta = 10, T = 2.5 yields 25.
        (self.beta * end * (1.0 + 1e-12) + 1e-12).floor() as u64
    }

    /// Event times `k / beta` for `k = 1..=count_until(until)`.
    pub fn times(&self, until: f64) -> Vec<f64> {
        (1..=self.count_until(until))
            .map(|k| k as f64 / self.beta)
            .collect()
    }

    pub fn events(&self, until: f64) -> Vec<TradeEvent> {
        self.times(until)
            .into_iter()
            .map(|t| TradeEvent::new(t, Side::Ask, Source::Meta))
            .collect()
    }
}

/// Merges two time-ordered streams; at equal times meta events come first.
pub fn merge_events(opportunistic: &[TradeEvent], meta: &[TradeEvent]) -> Vec<TradeEvent> {
    let mut out = Vec::with_capacity(opportunistic.len() + meta.len());
    let (mut i, mut j) = (0, 0);
    while i < opportunistic.len() || j < meta.len() {
        let take_meta = match (opportunistic.get(i), meta.get(j)) {
            (Some(o), Some(m)) => m.time <= o.time,
            (None, Some(_)) => true,
            _ => false,
        };
        if take_meta {
            out.push(meta[j]);
            j += 1;
        } else {
            out.push(opportunistic[i]);
            i += 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn constant_path_without_volatility() {
        let mut rng = stream(1, 0);
        let p = simulate_price(&PriceModel::fixed(100.0), 0.01, 1.0, &mut rng).unwrap();
        assert!(p.values().iter().all(|&v| v == 100.0));
        assert_eq!(p.times().len(), 101);
        assert_eq!(*p.times().last().unwrap(), 1.0);
    }

    #[test]
    fn drift_only_path_is_linear() {
        let mut rng = stream(1, 0);
        let m = PriceModel::with_drift(0.5, 0.0, 100.0).unwrap();
        let p = simulate_price(&m, 0.01, 2.0, &mut rng).unwrap();
        for (t, v) in p.times().iter().zip(p.values()) {
            assert!((v - (100.0 + 0.5 * t)).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_step_is_rejected() {
        let mut rng = stream(1, 0);
        assert!(simulate_price(&PriceModel::fixed(1.0), 0.0, 1.0, &mut rng).is_err());
        assert!(simulate_price(&PriceModel::fixed(1.0), 0.5, 0.1, &mut rng).is_err());
    }

    #[test]
    fn meta_schedule_enumeration() {
        let s = MetaOrderSchedule::new(2.0, Some(1.6)).unwrap();
        assert_eq!(s.times(10.0), vec![0.5, 1.0, 1.5]);
        let s = MetaOrderSchedule::new(10.0, None).unwrap();
        assert_eq!(s.events(2.5).len(), 25);
        let s = MetaOrderSchedule::new(10.0, Some(2.5)).unwrap();
        assert_eq!(s.events(100.0).len(), 25);
        let s = MetaOrderSchedule::new(1.0, Some(0.5)).unwrap();
        assert!(s.events(10.0).is_empty());
        assert!(MetaOrderSchedule::none().events(10.0).is_empty());
        assert!(MetaOrderSchedule::new(-1.0, None).is_err());
    }

    #[test]
    fn merge_puts_meta_first_on_ties() {
        let o = [
            TradeEvent::new(0.5, Side::Bid, Source::Opportunistic),
            TradeEvent::new(0.7, Side::Ask, Source::Opportunistic),
        ];
        let m = MetaOrderSchedule::new(2.0, None).unwrap().events(1.0);
        let merged = merge_events(&o, &m);
        let sources: Vec<_> = merged.iter().map(|e| (e.time, e.source)).collect();
        assert_eq!(
            sources,
            vec![
                (0.5, Source::Meta),
                (0.5, Source::Opportunistic),
                (0.7, Source::Opportunistic),
                (1.0, Source::Meta)
            ]
        );
    }

    #[test]
    fn envelope_violation_is_reported() {
        let th = Thinning::new(ExpIntensity::new(50.0, 5.0).unwrap());
        let mut src = BrownianSource::new(PriceModel::fixed(100.0));
        let q = Quotes::around(100.0, 0.1);
        let mut rng = stream(3, 0);
        let err = th.next_arrival(0.0, 10.0, &q, 1.0, &mut src, &mut rng).unwrap_err();
        assert!(matches!(err, FlowError::EnvelopeViolation { .. }));
    }

    #[test]
    fn bridge_hits_knots() {
        let path = PricePath::new(vec![0.0, 1.0, 2.0], vec![1.0, 2.0, 0.0]).unwrap();
        let mut src = PathSource::new(&path, 0.3);
        let mut rng = stream(5, 0);
        let mid = src.price_at(0.5, &mut rng).unwrap();
        assert!(mid.is_finite());
        assert_eq!(src.price_at(1.0, &mut rng).unwrap(), 2.0);
        assert_eq!(src.price_at(2.0, &mut rng).unwrap(), 0.0);
        assert!(src.price_at(2.5, &mut rng).is_err());
    }

    #[test]
    fn same_seed_same_events() {
        let th = Thinning::new(ExpIntensity::new(50.0, 5.0).unwrap());
        let run = || {
            let mut rng = stream(11, 2);
            let mut src = BrownianSource::new(PriceModel::brownian(0.06, 100.0).unwrap());
            let q = Quotes::around(100.0, 0.1);
            let env = th.local_envelope(&q, 100.0, 1.0);
            simulate_trades(&mut src, |_| q, &th, env, 5.0, &mut rng).unwrap()
        };
        assert_eq!(run(), run());
    }
}
