//! Statistical checks of the price path and the thinning sampler.

use pricelearn::flow::{merge_events, simulate_price, simulate_trades, BrownianSource, EventRecord, MetaOrderSchedule, Thinning};
use pricelearn::model::{ExpIntensity, PriceModel, Quotes, Side, Source, TradeEvent};
use pricelearn::rng::stream;

fn trades(l: ExpIntensity, q: Quotes, price: f64, horizon: f64, seed: u64) -> Vec<EventRecord> {
    let thinning = Thinning::new(l);
    let envelope = thinning.local_envelope(&q, price, 0.0);
    let mut src = BrownianSource::new(PriceModel::fixed(price));
    simulate_trades(&mut src, |_| q, &thinning, envelope, horizon, &mut stream(seed, 0)).unwrap()
}

fn counts(events: &[EventRecord]) -> (f64, f64) {
    let asks = events.iter().filter(|e| e.side == Side::Ask).count() as f64;
    (asks, events.len() as f64 - asks)
}

#[test]
fn increment_variance_matches_sigma() {
    let model = PriceModel::brownian(0.06, 100.0).unwrap();
    let dt = 1e-3;
    let path = simulate_price(&model, dt, 10.0, &mut stream(11, 0)).unwrap();
    let inc: Vec<f64> = path.values().windows(2).map(|w| w[1] - w[0]).collect();
    let n = inc.len() as f64;
    let mean = inc.iter().sum::<f64>() / n;
    let var = inc.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let per_time = var / dt;
    let band = 3.0 * 0.0036 * (2.0 / (n - 1.0)).sqrt();
    assert!((per_time - 0.0036).abs() < band, "{per_time} vs 0.0036 +- {band}");
}

#[test]
fn constant_intensity_rate() {
    let l = ExpIntensity::new(50.0, 1e-12).unwrap();
    let ev = trades(l, Quotes::around(100.0, 0.1), 100.0, 1000.0 / 50.0, 12);
    let (a, b) = counts(&ev);
    let band = 3.0 * 1000f64.sqrt();
    assert!((a - 1000.0).abs() < band, "ask count {a}");
    assert!((b - 1000.0).abs() < band, "bid count {b}");
}

#[test]
fn symmetric_quotes_balance_sides() {
    let l = ExpIntensity::new(50.0, 5.0).unwrap();
    let ev = trades(l, Quotes::around(100.0, 0.1), 100.0, 100.0, 13);
    let (a, b) = counts(&ev);
    let p = a / (a + b);
    assert!((p - 0.5).abs() < 3.0 * 0.5 / (a + b).sqrt(), "P(ask) = {p}");
}

#[test]
fn price_at_ask_gives_ratio_e() {
    let l = ExpIntensity::new(50.0, 5.0).unwrap();
    let ev = trades(l, Quotes::around(100.0, 0.1), 100.1, 200.0, 14);
    let (a, b) = counts(&ev);
    let r = a / b;
    let band = 3.0 * r * (1.0 / a + 1.0 / b).sqrt();
    assert!((r - std::f64::consts::E).abs() < band, "ratio {r} +- {band}");
}

/// Kolmogorov-Smirnov distance between a sample and `Exp(rate)`.
fn ks_exponential(mut xs: Vec<f64>, rate: f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = 1.0 - (-rate * x).exp();
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

#[test]
fn inter_arrivals_are_exponential() {
    let l = ExpIntensity::new(50.0, 5.0).unwrap();
    let q = Quotes::around(100.0, 0.1);
    let rate = l.ask_rate(&q, 100.0);
    let ev = trades(l, q, 100.0, 10_500.0 / rate, 15);
    for side in [Side::Ask, Side::Bid] {
        let times: Vec<f64> = ev.iter().filter(|e| e.side == side).map(|e| e.time).collect();
        let mut gaps = vec![times[0]];
        gaps.extend(times.windows(2).map(|w| w[1] - w[0]));
        gaps.truncate(10_000);
        assert_eq!(gaps.len(), 10_000);
        let d = ks_exponential(gaps, rate);
        // 1% critical value of the one-sample KS statistic.
        let crit = 1.628 / 100.0;
        assert!(d < crit, "{side:?}: D = {d}");
    }
}

#[test]
fn meta_schedule_examples() {
    let times = MetaOrderSchedule::new(2.0, Some(1.6)).unwrap().times(10.0);
    assert_eq!(times, vec![0.5, 1.0, 1.5]);
    assert_eq!(MetaOrderSchedule::new(10.0, None).unwrap().times(2.5).len(), 25);
    assert_eq!(MetaOrderSchedule::new(10.0, Some(2.5)).unwrap().times(100.0).len(), 25);
    assert!(MetaOrderSchedule::new(1.0, Some(0.5)).unwrap().times(10.0).is_empty());
    let ev = MetaOrderSchedule::new(10.0, Some(2.5)).unwrap().events(5.0);
    assert!(ev.iter().all(|e| e.side == Side::Ask && e.source == Source::Meta));
}

#[test]
fn merged_stream_is_ordered() {
    let l = ExpIntensity::new(50.0, 5.0).unwrap();
    let opp: Vec<TradeEvent> = trades(l, Quotes::around(100.0, 0.1), 100.02, 3.0, 16)
        .into_iter()
        .map(|e| TradeEvent::new(e.time, e.side, Source::Opportunistic))
        .collect();
    let meta = MetaOrderSchedule::new(10.0, Some(2.5)).unwrap().events(3.0);
    let merged = merge_events(&opp, &meta);
    assert_eq!(merged.len(), opp.len() + meta.len());
    assert!(merged.windows(2).all(|w| w[1].time >= w[0].time));
}

#[test]
fn brownian_trades_are_reproducible() {
    let l = ExpIntensity::new(50.0, 5.0).unwrap();
    let thinning = Thinning::new(l);
    let q = Quotes::around(100.0, 0.1);
    let run = |seed| {
        let mut src = BrownianSource::new(PriceModel::brownian(0.06, 100.0).unwrap());
        let env = thinning.local_envelope(&q, 100.0, 1.0);
        simulate_trades(&mut src, |_| q, &thinning, env, 5.0, &mut stream(seed, 3)).unwrap()
    };
    assert_eq!(run(1), run(1));
    assert_ne!(run(1), run(2));
}
