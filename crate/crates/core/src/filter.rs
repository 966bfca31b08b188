//! Posterior filters behind one interface, selectable by name.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::gaussian::{self, GaussianState};
use crate::grid::{GridDensity, GridError, GridSpec, ZakaiGrid};
use crate::market_maker::{ArgmaxMMState, PosteriorView};
use crate::model::{ExpIntensity, GaussianPrior, Quotes, Side};
use crate::roots::RootError;

#[derive(Debug, Error, PartialEq)]
pub enum FilterError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Root(#[from] RootError),
    #[error("filter `{filter}` does not support this setup: {reason}")]
    Unsupported { filter: &'static str, reason: String },
    #[error("unknown filter `{0}` (known: {1})")]
    UnknownFilter(String, String),
}

/// Everything needed to build a filter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterSetup {
    pub prior: GaussianPrior,
    pub intensity: ExpIntensity,
    /// Volatility the observer assumes for the efficient price.
    pub sigma: f64,
    /// Half-spread the quotes will use (fixed for the run).
    pub half_spread: f64,
    /// Grid for grid-based filters.
    pub grid: GridSpec,
}

pub trait PosteriorFilter: Send {
    fn name(&self) -> &'static str;
    fn time(&self) -> f64;
    /// Longest step `advance` accepts in one call under these quotes.
    fn max_step(&self, quotes: &Quotes) -> f64;
    /// Evolves the posterior between trades with the quotes held fixed.
    fn advance(&mut self, quotes: &Quotes, dt: f64) -> Result<(), FilterError>;
    /// Trade at the current time against `quotes` (the quotes just before it).
    fn observe(&mut self, quotes: &Quotes, side: Side) -> Result<(), FilterError>;
    fn view(&self) -> Result<PosteriorView, FilterError>;
    /// The full posterior density, for filters that carry one.
    fn density(&self) -> Option<&GridDensity> {
        None
    }
}

/// Zakai equation on a grid.
pub struct GridFilter {
    zakai: ZakaiGrid,
    t: f64,
}

impl GridFilter {
    pub fn new(setup: &FilterSetup) -> Self {
        let prior = setup.prior;
        let density = GridDensity::from_fn(setup.grid, |x| prior.pdf(x));
        let mut zakai = ZakaiGrid::new(density, setup.sigma, setup.intensity);
        let typical = Quotes::around(prior.x0, setup.half_spread);
        zakai.prepare(zakai.dt_max(&typical));
        Self { zakai, t: 0.0 }
    }
}

impl PosteriorFilter for GridFilter {
    fn name(&self) -> &'static str {
        "grid"
    }

    fn time(&self) -> f64 {
        self.t
    }

    fn max_step(&self, quotes: &Quotes) -> f64 {
        self.zakai.dt_max(quotes)
    }

    fn advance(&mut self, quotes: &Quotes, dt: f64) -> Result<(), FilterError> {
        if dt <= 0.0 {
            return Ok(());
        }
        let limit = self.zakai.dt_max(quotes);
        let n = (dt / limit * (1.0 - 1e-12)).ceil().max(1.0) as usize;
        let h = dt / n as f64;
        for _ in 0..n {
            self.zakai.step(quotes, h)?;
        }
        self.t += dt;
        Ok(())
    }

    fn observe(&mut self, quotes: &Quotes, side: Side) -> Result<(), FilterError> {
        Ok(self.zakai.apply_trade(quotes, side)?)
    }

    fn view(&self) -> Result<PosteriorView, FilterError> {
        Ok(PosteriorView::Grid(self.zakai.diagnostics()?))
    }

    fn density(&self) -> Option<&GridDensity> {
        Some(self.zakai.density())
    }
}

/// Small-spread Gaussian approximation, integrated exactly.
pub struct GaussianFilter {
    state: GaussianState,
    intensity: ExpIntensity,
    sigma: f64,
}

impl GaussianFilter {
    pub fn new(setup: &FilterSetup) -> Self {
        Self {
            state: GaussianState::from_prior(&setup.prior),
            intensity: setup.intensity,
            sigma: setup.sigma,
        }
    }
}

impl PosteriorFilter for GaussianFilter {
    fn name(&self) -> &'static str {
        "gaussian"
    }

    fn time(&self) -> f64 {
        self.state.t
    }

    fn max_step(&self, _: &Quotes) -> f64 {
        f64::INFINITY
    }

    fn advance(&mut self, quotes: &Quotes, dt: f64) -> Result<(), FilterError> {
        if dt > 0.0 {
            self.state = gaussian::advance(&self.state, quotes, &self.intensity, self.sigma, dt);
        }
        Ok(())
    }

    fn observe(&mut self, _: &Quotes, side: Side) -> Result<(), FilterError> {
        self.state = gaussian::apply_trade(&self.state, &self.intensity, side);
        Ok(())
    }

    fn view(&self) -> Result<PosteriorView, FilterError> {
        Ok(PosteriorView::Gaussian(self.state))
    }
}

/// Exact posterior mode for a fixed efficient price, tracked through the
/// first-order condition of the log posterior. Requires `sigma = 0` and a
/// constant half-spread.
pub struct ArgmaxRootFilter {
    state: ArgmaxMMState,
    prior: GaussianPrior,
    intensity: ExpIntensity,
    half_spread: f64,
    t1: f64,
}

impl ArgmaxRootFilter {
    pub fn new(setup: &FilterSetup) -> Result<Self, FilterError> {
        if setup.sigma != 0.0 {
            return Err(FilterError::Unsupported {
                filter: "argmax-root",
                reason: format!("needs sigma = 0, got {}", setup.sigma),
            });
        }
        Ok(Self {
            state: ArgmaxMMState::new(&setup.prior),
            prior: setup.prior,
            intensity: setup.intensity,
            half_spread: setup.half_spread,
            t1: setup.intensity.characteristic_time(setup.half_spread),
        })
    }

    fn check_spread(&self, quotes: &Quotes) -> Result<(), FilterError> {
        if (quotes.half_spread() - self.half_spread).abs() > 1e-12 * (1.0 + self.half_spread) {
            return Err(FilterError::Unsupported {
                filter: "argmax-root",
                reason: format!(
                    "half-spread changed from {} to {}",
                    self.half_spread,
                    quotes.half_spread()
                ),
            });
        }
        Ok(())
    }
}

impl PosteriorFilter for ArgmaxRootFilter {
    fn name(&self) -> &'static str {
        "argmax-root"
    }

    fn time(&self) -> f64 {
        self.state.t
    }

    fn max_step(&self, _: &Quotes) -> f64 {
        f64::INFINITY
    }

    fn advance(&mut self, quotes: &Quotes, dt: f64) -> Result<(), FilterError> {
        self.check_spread(quotes)?;
        if dt > 0.0 {
            let t = self.state.t + dt;
            self.state.advance(quotes.mid(), self.intensity.a(), t);
            // With quotes away from the mode the mode drifts between trades.
            self.state.xhat = self.state.solve(&self.prior, &self.intensity, self.t1, self.state.net_jumps)?;
        }
        Ok(())
    }

    fn observe(&mut self, quotes: &Quotes, side: Side) -> Result<(), FilterError> {
        self.check_spread(quotes)?;
        self.state.net_jumps += side.sign();
        self.state.xhat = self.state.solve(&self.prior, &self.intensity, self.t1, self.state.net_jumps)?;
        Ok(())
    }

    fn view(&self) -> Result<PosteriorView, FilterError> {
        Ok(PosteriorView::Argmax(self.state))
    }
}

type FilterCtor = fn(&FilterSetup) -> Result<Box<dyn PosteriorFilter>, FilterError>;

/// Filters by name.
pub struct FilterRegistry {
    entries: BTreeMap<&'static str, FilterCtor>,
}

impl Default for FilterRegistry {
    fn default() -> Self {
        let mut r = Self { entries: BTreeMap::new() };
        r.register("grid", |s| Ok(Box::new(GridFilter::new(s))));
        r.register("gaussian", |s| Ok(Box::new(GaussianFilter::new(s))));
        r.register("argmax-root", |s| Ok(Box::new(ArgmaxRootFilter::new(s)?)));
        r
    }
}

impl FilterRegistry {
    pub fn register(&mut self, name: &'static str, ctor: FilterCtor) {
        self.entries.insert(name, ctor);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.keys().copied().collect()
    }

    pub fn build(&self, name: &str, setup: &FilterSetup) -> Result<Box<dyn PosteriorFilter>, FilterError> {
        let ctor = self
            .entries
            .get(name)
            .ok_or_else(|| FilterError::UnknownFilter(name.to_string(), self.names().join(", ")))?;
        ctor(setup)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(sigma: f64) -> FilterSetup {
        let prior = GaussianPrior::new(100.0, 0.05).unwrap();
        FilterSetup {
            prior,
            intensity: ExpIntensity::new(50.0, 5.0).unwrap(),
            sigma,
            half_spread: 0.1,
            grid: GridSpec::default_for(100.0, 0.05, sigma, 1.0, 2001).unwrap(),
        }
    }

    #[test]
    fn registry_knows_all_filters() {
        let reg = FilterRegistry::default();
        assert_eq!(reg.names(), vec!["argmax-root", "gaussian", "grid"]);
        assert!(reg.build("grid", &setup(0.06)).is_ok());
        assert!(matches!(
            reg.build("argmax-root", &setup(0.06)),
            Err(FilterError::Unsupported { .. })
        ));
        assert!(matches!(reg.build("kalman", &setup(0.0)), Err(FilterError::UnknownFilter(..))));
    }

    #[test]
    fn filters_agree_on_first_trade() {
        let reg = FilterRegistry::default();
        let q = Quotes::around(100.0, 0.1);
        let mut modes = Vec::new();
        for name in reg.names() {
            let mut f = reg.build(name, &setup(0.0)).unwrap();
            f.observe(&q, Side::Ask).unwrap();
            modes.push(f.view().unwrap().argmax());
        }
        for m in &modes {
            assert!((m - 100.0125).abs() < 1e-5, "{modes:?}");
        }
    }

    #[test]
    fn argmax_root_tracks_grid_mode_between_trades() {
        let s = setup(0.0);
        let q = Quotes::around(100.02, 0.1);
        let mut g = GridFilter::new(&s);
        let mut r = ArgmaxRootFilter::new(&s).unwrap();
        for side in [Side::Ask, Side::Ask, Side::Bid] {
            g.advance(&q, 0.05).unwrap();
            r.advance(&q, 0.05).unwrap();
            g.observe(&q, side).unwrap();
            r.observe(&q, side).unwrap();
        }
        g.advance(&q, 0.05).unwrap();
        r.advance(&q, 0.05).unwrap();
        let dx = s.grid.dx;
        let (gm, rm) = (g.view().unwrap().argmax(), r.view().unwrap().argmax());
        assert!((gm - rm).abs() < dx, "{gm} vs {rm}");
    }
}
