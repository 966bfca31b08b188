//! Grid filter against the Gaussian approximation and the argmax recursion.

use pricelearn::config::RunConfig;
use pricelearn::filter::{ArgmaxRootFilter, FilterSetup, GaussianFilter, GridFilter, PosteriorFilter};
use pricelearn::flow::{EventRecord, MetaOrderSchedule};
use pricelearn::grid::{GridDensity, GridSpec, ZakaiGrid};
use pricelearn::impact::{run_replica, Capture, ImpactExperiment};
use pricelearn::market_maker::{impact_recursion, MidAtArgmax, MidAtMean, QuotePolicy};
use pricelearn::model::{ExpIntensity, GaussianPrior, Quotes};

/// Replays `events` through `filter` with its own quotes and returns the
/// posterior mean at `times`.
fn replay(filter: &mut dyn PosteriorFilter, policy: &dyn QuotePolicy, events: &[EventRecord], times: &[f64]) -> Vec<f64> {
    let mut out = Vec::new();
    let mut stops: Vec<(f64, Option<&EventRecord>)> = events.iter().map(|e| (e.time, Some(e))).collect();
    stops.extend(times.iter().map(|&t| (t, None)));
    // Samples at a time come after the events at that time.
    stops.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.is_none().cmp(&b.1.is_none())));
    for (t, ev) in stops {
        loop {
            let q = policy.quotes(&filter.view().unwrap()).unwrap();
            let dt = (t - filter.time()).min(filter.max_step(&q));
            if dt <= 1e-15 {
                break;
            }
            filter.advance(&q, dt).unwrap();
        }
        let q = policy.quotes(&filter.view().unwrap()).unwrap();
        match ev {
            Some(e) => filter.observe(&q, e.side).unwrap(),
            None => out.push(filter.view().unwrap().mean().unwrap()),
        }
    }
    out
}

fn max_gap(a: f64) -> f64 {
    let mut cfg = RunConfig {
        seed: Some(8),
        ..RunConfig::default()
    };
    cfg.intensity.a = a;
    cfg.experiment.horizon = 2.5;
    cfg.grid.n = 2001;
    let exp = ImpactExperiment::from_config(&cfg).unwrap();
    let events = run_replica(&exp, 0, Capture { events: true, densities: false }).unwrap().events;
    let setup = exp.filter_setup();
    let times: Vec<f64> = (1..=25).map(|k| k as f64 * 0.1).collect();
    let policy = MidAtMean::new(exp.half_spread).unwrap();
    let grid = replay(&mut GridFilter::new(&setup), &policy, &events, &times);
    let gauss = replay(&mut GaussianFilter::new(&setup), &policy, &events, &times);
    grid.iter().zip(&gauss).map(|(g, h)| (g - h).abs()).fold(0.0, f64::max)
}

#[test]
fn gaussian_approximation_holds_for_small_a_only() {
    let small = max_gap(5.0);
    let large = max_gap(20.0);
    assert!(small < 3e-3, "a = 5: {small}");
    assert!(large > 3e-3, "a = 20: {large}");
}

#[test]
fn gaussian_prior_does_not_stay_gaussian() {
    let l = ExpIntensity::new(50.0, 5.0).unwrap();
    let prior = GaussianPrior::new(100.0, 0.05).unwrap();
    let spec = GridSpec::centered(100.0, 0.6, 4001).unwrap();
    let mut z = ZakaiGrid::new(GridDensity::from_fn(spec, |x| prior.pdf(x)), 0.0, l);
    let q = Quotes::around(100.0, 0.1);
    let t1 = l.characteristic_time(0.1);
    for _ in 0..100 {
        z.step(&q, t1 / 100.0).unwrap();
    }
    let d = z.density().normalize().unwrap();
    let var = d.central_moment(2).unwrap();
    let kurt = d.central_moment(4).unwrap() / (var * var) - 3.0;
    assert!(kurt.abs() > 1e-3, "excess kurtosis {kurt}");
    // The prior itself has none on this grid.
    let p = GridDensity::from_fn(spec, |x| prior.pdf(x)).normalize().unwrap();
    let v0 = p.central_moment(2).unwrap();
    assert!((p.central_moment(4).unwrap() / (v0 * v0) - 3.0).abs() < 1e-6);
}

#[test]
fn grid_argmax_follows_recursion() {
    // sigma = 0, only meta orders: the mode under mid-at-argmax quotes
    // should step through the recursion values and stay put in between.
    let l = ExpIntensity::new(50.0, 5.0).unwrap();
    let prior = GaussianPrior::new(100.0, 0.05).unwrap();
    let beta = 10.0;
    let spec = GridSpec::centered(100.0, 0.6, 4001).unwrap();
    let setup = FilterSetup {
        prior,
        intensity: l,
        sigma: 0.0,
        half_spread: 0.1,
        grid: spec,
    };
    let rec = impact_recursion(&prior, &l, 0.1, beta, 10).unwrap();
    let policy = MidAtArgmax::new(0.1).unwrap();
    let mut grid = GridFilter::new(&setup);
    let mut root = ArgmaxRootFilter::new(&setup).unwrap();
    let tol = (3.0 * spec.dx).max(1e-4);
    for (k, t) in MetaOrderSchedule::new(beta, None).unwrap().times(1.0).into_iter().enumerate() {
        for f in [&mut grid as &mut dyn PosteriorFilter, &mut root] {
            let mut drift = 0.0f64;
            let start = f.view().unwrap().argmax();
            while f.time() < t - 1e-12 {
                let q = policy.quotes(&f.view().unwrap()).unwrap();
                let dt = (t - f.time()).min(f.max_step(&q));
                f.advance(&q, dt).unwrap();
                drift = drift.max((f.view().unwrap().argmax() - start).abs());
            }
            if k > 0 {
                assert!(drift < tol, "{}: mode drifted by {drift} before order {}", f.name(), k + 1);
            }
            let q = policy.quotes(&f.view().unwrap()).unwrap();
            f.observe(&q, pricelearn::model::Side::Ask).unwrap();
        }
        let (g, r) = (grid.view().unwrap().argmax(), root.view().unwrap().argmax());
        assert!((g - rec[k]).abs() < tol, "k={}: grid {g} vs recursion {}", k + 1, rec[k]);
        assert!((r - rec[k]).abs() < 1e-9, "k={}: root {r} vs recursion {}", k + 1, rec[k]);
    }
}
