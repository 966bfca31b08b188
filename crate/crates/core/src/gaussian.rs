//! Small-spread approximation: the cosh potential is replaced by its
//! quadratic Taylor polynomial, which keeps a Gaussian prior Gaussian.
//!
//! With `k = a^2 / t1` the variance solves the Riccati equation
//! `v' = sigma^2 - k v^2` and the mean relaxes toward the mid at rate `k v`,
//! jumping by `+- a v` at trades. Both are integrated in closed form.

use serde::{Deserialize, Serialize};

use crate::model::{ExpIntensity, GaussianPrior, Quotes, Side};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianState {
    pub mean: f64,
    pub variance: f64,
    pub t: f64,
}

impl GaussianState {
    pub fn from_prior(prior: &GaussianPrior) -> Self {
        Self {
            mean: prior.x0,
            variance: prior.variance(),
            t: 0.0,
        }
    }
}

/// `a^2 / t1`, the learning rate per unit of posterior variance.
pub fn learning_rate(intensity: &ExpIntensity, half_spread: f64) -> f64 {
    let a = intensity.a();
    a * a / intensity.characteristic_time(half_spread)
}

/// Stationary variance `sigma sqrt(t1) / a`.
pub fn asymptotic_variance(intensity: &ExpIntensity, half_spread: f64, sigma: f64) -> f64 {
    sigma * intensity.characteristic_time(half_spread).sqrt() / intensity.a()
}

/// Variance after time `t` starting from `v0`, for learning rate `k`.
pub fn riccati_variance(v0: f64, k: f64, sigma: f64, t: f64) -> f64 {
    if sigma == 0.0 {
        return v0 / (1.0 + k * v0 * t);
    }
    let v_inf = sigma / k.sqrt();
    if v0 == v_inf {
        return v_inf;
    }
    let th = (k.sqrt() * sigma * t).tanh();
    v_inf * (v0 + v_inf * th) / (v_inf + v0 * th)
}

/// `log g(t)` where `g(t) = exp(k int_0^t v)`; the mean's distance to a
/// fixed mid shrinks by `1 / g`.
pub fn log_information(v0: f64, k: f64, sigma: f64, t: f64) -> f64 {
    if sigma == 0.0 {
        return (k * v0 * t).ln_1p();
    }
    let v_inf = sigma / k.sqrt();
    let r = v0 / v_inf;
    let th = k.sqrt() * sigma * t;
    th + (0.5 * (1.0 + r) + 0.5 * (1.0 - r) * (-2.0 * th).exp()).ln()
}

/// Posterior variance at `t` under a constant half-spread.
pub fn variance_at(prior: &GaussianPrior, intensity: &ExpIntensity, half_spread: f64, sigma: f64, t: f64) -> f64 {
    riccati_variance(prior.variance(), learning_rate(intensity, half_spread), sigma, t)
}

/// The closed form `v_inf sqrt(1 +- exp(-(a sigma / (2 sqrt t1)) t + C0))`
/// written with the original constants. It agrees with [`variance_at`] at
/// `t = 0` and as `t -> inf` but is not a solution of the variance equation
/// in between; kept for comparison.
pub fn variance_at_literal(
    prior: &GaussianPrior,
    intensity: &ExpIntensity,
    half_spread: f64,
    sigma: f64,
    t: f64,
) -> f64 {
    if sigma == 0.0 {
        return variance_at(prior, intensity, half_spread, sigma, t);
    }
    let t1 = intensity.characteristic_time(half_spread);
    let a = intensity.a();
    let v_inf = asymptotic_variance(intensity, half_spread, sigma);
    let ratio = prior.sigma0.powi(4) * a * a / (sigma * sigma * t1);
    let decay = -(a * sigma / (2.0 * t1.sqrt())) * t;
    if ratio == 1.0 {
        v_inf
    } else if ratio > 1.0 {
        v_inf * (1.0 + (decay + (ratio - 1.0).ln()).exp()).sqrt()
    } else {
        v_inf * (1.0 - (decay + (1.0 - ratio).ln()).exp()).sqrt()
    }
}

/// Exact evolution of the Gaussian filter over an interval with constant quotes.
pub fn advance(state: &GaussianState, quotes: &Quotes, intensity: &ExpIntensity, sigma: f64, dt: f64) -> GaussianState {
    let k = learning_rate(intensity, quotes.half_spread());
    let mid = quotes.mid();
    let shrink = (-log_information(state.variance, k, sigma, dt)).exp();
    GaussianState {
        mean: mid + (state.mean - mid) * shrink,
        variance: riccati_variance(state.variance, k, sigma, dt),
        t: state.t + dt,
    }
}

/// Mean jump `+- a v` at a trade; the variance is unchanged.
pub fn apply_trade(state: &GaussianState, intensity: &ExpIntensity, side: Side) -> GaussianState {
    GaussianState {
        mean: state.mean + side.sign() as f64 * intensity.a() * state.variance,
        ..*state
    }
}

/// How quotes are set while the mean evolves.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MidRule<'a> {
    /// Quotes given as a function of time, constant between `switch_times`.
    Fixed(&'a crate::grid::QuoteHistory),
    /// Mid follows the posterior mean with constant half-spread.
    TrackMean { half_spread: f64 },
}

/// Evolves the state to `until`, applying `events` (time-ordered) on the way.
/// Events after `until` are ignored.
pub fn evolve_mean(
    state: &GaussianState,
    rule: MidRule<'_>,
    events: &[crate::model::TradeEvent],
    intensity: &ExpIntensity,
    sigma: f64,
    until: f64,
) -> GaussianState {
    let mut s = *state;
    let mut breaks: Vec<f64> = match rule {
        MidRule::Fixed(h) => h.switch_times(until).filter(|&b| b > s.t).collect(),
        MidRule::TrackMean { .. } => Vec::new(),
    };
    breaks.extend(events.iter().map(|e| e.time).filter(|&t| t > s.t && t <= until));
    breaks.push(until);
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let quotes_at = |s: &GaussianState| match rule {
        MidRule::Fixed(h) => h.at(s.t),
        MidRule::TrackMean { half_spread } => Quotes::around(s.mean, half_spread),
    };
    let start = s.t;
    let mut ev = events.iter().filter(|e| e.time >= start && e.time <= until).peekable();
    // Events exactly at the start time fire first.
    while let Some(e) = ev.next_if(|e| e.time == start) {
        s = apply_trade(&s, intensity, e.side);
    }
    for b in breaks {
        if b > s.t {
            s = advance(&s, &quotes_at(&s), intensity, sigma, b - s.t);
            s.t = b;
        }
        while let Some(e) = ev.next_if(|e| e.time <= b) {
            s = apply_trade(&s, intensity, e.side);
        }
    }
    s
}

/// Meta-order impact on the mean when the mid tracks the mean and the
/// opportunistic flow is balanced, in the large-`beta` limit:
/// `(beta t1 / a) log g(t ^ T)`.
pub fn impact_no_info(
    prior: &GaussianPrior,
    intensity: &ExpIntensity,
    half_spread: f64,
    sigma: f64,
    beta: f64,
    t: f64,
    horizon: Option<f64>,
) -> f64 {
    let end = horizon.map_or(t, |h| h.min(t));
    let t1 = intensity.characteristic_time(half_spread);
    let k = learning_rate(intensity, half_spread);
    beta * t1 / intensity.a() * log_information(prior.variance(), k, sigma, end)
}

/// The same impact as the explicit sum `sum_k a v(k / beta)` over meta orders.
pub fn impact_jump_sum(
    prior: &GaussianPrior,
    intensity: &ExpIntensity,
    half_spread: f64,
    sigma: f64,
    schedule: &crate::flow::MetaOrderSchedule,
    t: f64,
) -> f64 {
    let k = learning_rate(intensity, half_spread);
    schedule
        .times(t)
        .into_iter()
        .map(|s| intensity.a() * riccati_variance(prior.variance(), k, sigma, s))
        .sum()
}

/// Expected mean split into learning `A_t` and meta-order impact `B_t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AverageImpact {
    pub learning: f64,
    pub impact: f64,
}

impl AverageImpact {
    pub fn total(&self) -> f64 {
        self.learning + self.impact
    }
}

/// `A_t = x0 + (S0 - x0)(1 - 1/g(t))`, `B_t = (beta t1 / a)(g(t ^ T) - 1)/g(t)`
/// (meta flow replaced by its rate `beta`).
#[allow(clippy::too_many_arguments)]
pub fn average_impact(
    prior: &GaussianPrior,
    intensity: &ExpIntensity,
    half_spread: f64,
    sigma: f64,
    beta: f64,
    s0: f64,
    t: f64,
    horizon: Option<f64>,
) -> AverageImpact {
    let k = learning_rate(intensity, half_spread);
    let t1 = intensity.characteristic_time(half_spread);
    let v0 = prior.variance();
    let log_g = log_information(v0, k, sigma, t);
    let end = horizon.map_or(t, |h| h.min(t));
    let log_g_end = log_information(v0, k, sigma, end);
    let learning = prior.x0 + (s0 - prior.x0) * -(-log_g).exp_m1();
    // (g(end) - 1) / g(t) = exp(log_g_end - log_g) - exp(-log_g)
    let impact = beta * t1 / intensity.a() * ((log_g_end - log_g).exp() - (-log_g).exp());
    AverageImpact { learning, impact }
}

/// `B_t` with the actual meta-order jumps: `sum_{s_k <= t ^ T} a v(s_k) g(s_k) / g(t)`.
pub fn average_impact_jumps(
    prior: &GaussianPrior,
    intensity: &ExpIntensity,
    half_spread: f64,
    sigma: f64,
    schedule: &crate::flow::MetaOrderSchedule,
    t: f64,
) -> f64 {
    let k = learning_rate(intensity, half_spread);
    let v0 = prior.variance();
    let log_g = log_information(v0, k, sigma, t);
    schedule
        .times(t)
        .into_iter()
        .map(|s| {
            intensity.a() * riccati_variance(v0, k, sigma, s) * (log_information(v0, k, sigma, s) - log_g).exp()
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::MetaOrderSchedule;
    use crate::grid::QuoteHistory;
    use crate::model::{Source, TradeEvent};

    fn lam() -> ExpIntensity {
        ExpIntensity::new(50.0, 5.0).unwrap()
    }

    fn prior() -> GaussianPrior {
        GaussianPrior::new(100.0, 0.05).unwrap()
    }

    #[test]
    fn variance_at_zero_is_prior() {
        assert_eq!(variance_at(&prior(), &lam(), 0.1, 0.0, 0.0), prior().variance());
        assert!((variance_at(&prior(), &lam(), 0.1, 0.06, 0.0) - 0.0025).abs() < 1e-18);
    }

    #[test]
    fn fixed_price_variance_formula() {
        let l = lam();
        let t1 = l.characteristic_time(0.1);
        let t = 0.37;
        let expect = 1.0 / (1.0 / 0.0025 + 25.0 * t / t1);
        assert!((variance_at(&prior(), &l, 0.1, 0.0, t) - expect).abs() < 1e-16);
    }

    #[test]
    fn asymptotic_variance_value() {
        let v = asymptotic_variance(&lam(), 0.1, 0.06);
        assert!((v - 1.540_83e-3).abs() < 1e-8, "{v}");
        assert!((variance_at(&prior(), &lam(), 0.1, 0.06, 1e3) - v).abs() < 1e-15);
    }

    #[test]
    fn fixed_point_variance_is_constant() {
        let v_inf = asymptotic_variance(&lam(), 0.1, 0.06);
        let p = GaussianPrior::new(100.0, v_inf.sqrt()).unwrap();
        for t in [0.0, 0.1, 1.0, 10.0] {
            let v = variance_at(&p, &lam(), 0.1, 0.06, t);
            assert!((v - v_inf).abs() < 1e-15 * v_inf.max(1.0));
            let lit = variance_at_literal(&p, &lam(), 0.1, 0.06, t);
            assert!((lit - v_inf).abs() < 1e-12);
        }
    }

    #[test]
    fn literal_variance_agrees_at_ends_only() {
        let (p, l) = (prior(), lam());
        let lit0 = variance_at_literal(&p, &l, 0.1, 0.06, 0.0);
        assert!((lit0 - 0.0025).abs() < 1e-15);
        let v_inf = asymptotic_variance(&l, 0.1, 0.06);
        assert!((variance_at_literal(&p, &l, 0.1, 0.06, 100.0) - v_inf).abs() < 1e-10);
        let mid = (variance_at_literal(&p, &l, 0.1, 0.06, 0.05) - variance_at(&p, &l, 0.1, 0.06, 0.05)).abs();
        assert!(mid > 1e-5, "{mid}");
    }

    #[test]
    fn information_factor_matches_quadrature() {
        let k = learning_rate(&lam(), 0.1);
        for sigma in [0.0, 0.06, 0.5] {
            let t = 0.8;
            let n = 20_000;
            let h = t / n as f64;
            let integral: f64 = (0..n)
                .map(|i| {
                    let (a, b) = (i as f64 * h, (i + 1) as f64 * h);
                    let f = |s: f64| riccati_variance(0.0025, k, sigma, s);
                    h / 6.0 * (f(a) + 4.0 * f(0.5 * (a + b)) + f(b))
                })
                .sum();
            let lg = log_information(0.0025, k, sigma, t);
            assert!((lg - k * integral).abs() < 1e-9 * lg.max(1.0), "{sigma}: {lg} vs {}", k * integral);
        }
    }

    #[test]
    fn tracking_mid_without_events_keeps_mean() {
        let s = GaussianState::from_prior(&prior());
        let out = evolve_mean(&s, MidRule::TrackMean { half_spread: 0.1 }, &[], &lam(), 0.06, 5.0);
        assert_eq!(out.mean, 100.0);
        assert_eq!(out.t, 5.0);
    }

    #[test]
    fn fixed_quotes_pull_mean_to_mid() {
        let s = GaussianState::from_prior(&prior());
        let q = QuoteHistory::constant(Quotes::around(100.03, 0.1));
        let out = evolve_mean(&s, MidRule::Fixed(&q), &[], &lam(), 0.0, 1e4);
        assert!((out.mean - 100.03).abs() < 1e-6);
    }

    #[test]
    fn opposite_events_at_same_time_cancel() {
        let s = GaussianState::from_prior(&prior());
        let ev = [
            TradeEvent::new(0.2, Side::Ask, Source::Opportunistic),
            TradeEvent::new(0.2, Side::Bid, Source::Opportunistic),
        ];
        let rule = MidRule::TrackMean { half_spread: 0.1 };
        let with = evolve_mean(&s, rule, &ev, &lam(), 0.06, 1.0);
        let without = evolve_mean(&s, rule, &[], &lam(), 0.06, 1.0);
        assert!((with.mean - without.mean).abs() < 1e-15);
        assert_eq!(with.variance, without.variance);
    }

    #[test]
    fn tracking_mid_mean_is_jump_sum() {
        let l = lam();
        let s = GaussianState::from_prior(&prior());
        let sched = MetaOrderSchedule::new(10.0, Some(2.5)).unwrap();
        let out = evolve_mean(&s, MidRule::TrackMean { half_spread: 0.1 }, &sched.events(3.0), &l, 0.06, 3.0);
        let sum = impact_jump_sum(&prior(), &l, 0.1, 0.06, &sched, 3.0);
        assert!((out.mean - 100.0 - sum).abs() < 1e-12);
    }

    #[test]
    fn impact_no_info_limits() {
        let (p, l) = (prior(), lam());
        assert_eq!(impact_no_info(&p, &l, 0.1, 0.0, 10.0, 0.0, None), 0.0);
        let t1 = l.characteristic_time(0.1);
        let t = 0.7;
        let v = impact_no_info(&p, &l, 0.1, 0.0, 10.0, t, None);
        let expect = 10.0 * t1 / 5.0 * (1.0 + 25.0 * 0.0025 * t / t1).ln();
        assert!((v - expect).abs() < 1e-14);
        // Horizon freezes the impact.
        let frozen = impact_no_info(&p, &l, 0.1, 0.0, 10.0, 5.0, Some(t));
        assert_eq!(frozen, v);
    }

    #[test]
    fn average_impact_special_cases() {
        let l = lam();
        let v_inf = asymptotic_variance(&l, 0.1, 0.06);
        let p = GaussianPrior::new(100.0, v_inf.sqrt()).unwrap();
        let t1 = l.characteristic_time(0.1);
        let k = learning_rate(&l, 0.1);
        for t in [0.0, 0.3, 2.0, 40.0] {
            let ai = average_impact(&p, &l, 0.1, 0.06, 10.0, 100.0, t, None);
            assert_eq!(ai.learning, 100.0);
            let display = 10.0 * t1 / 5.0 * (-(v_inf * k * t)).exp() * ((v_inf * k * t).exp() - 1.0);
            assert!((ai.impact - display).abs() < 1e-12, "{t}");
        }
        let q = GaussianPrior::new(99.0, 0.05).unwrap();
        let late = average_impact(&q, &l, 0.1, 0.0, 0.0, 100.0, 1e6, None);
        assert!((late.learning - 100.0).abs() < 1e-3);
    }

    #[test]
    fn sigma_zero_learning_weights() {
        let l = lam();
        let p = GaussianPrior::new(99.0, 0.05).unwrap();
        let t1 = l.characteristic_time(0.1);
        let t = 0.2;
        let w0 = t1 / (0.0025 * 25.0);
        let expect = (w0 * 99.0 + t * 100.0) / (w0 + t);
        let ai = average_impact(&p, &l, 0.1, 0.0, 0.0, 100.0, t, None);
        assert!((ai.learning - expect).abs() < 1e-12);
    }
}
