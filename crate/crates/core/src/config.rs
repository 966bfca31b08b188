//! Run configuration: JSON file, defaults, validation and flag overrides.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::filter::FilterRegistry;
use crate::market_maker::PolicyRegistry;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("{field} {reason}")]
    Invalid { field: String, reason: String },
    #[error("config parse error at `{path}`: {message}")]
    Parse { path: String, message: String },
}

impl ConfigError {
    fn invalid(field: &str, reason: impl Into<String>) -> Self {
        ConfigError::Invalid {
            field: field.to_string(),
            reason: reason.into(),
        }
    }

    pub fn field(&self) -> &str {
        match self {
            ConfigError::Invalid { field, .. } => field,
            ConfigError::Parse { path, .. } => path,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Simulate,
    Impact,
    FilterDemo,
    #[default]
    Verify,
}

impl Command {
    pub fn as_str(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Impact => "impact",
            Command::FilterDemo => "filter-demo",
            Command::Verify => "verify",
        }
    }
}

/// What an experiment reports as the price level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Readout {
    /// Posterior mean, or the mid under the argmax policy.
    #[default]
    Auto,
    Mean,
    Mid,
    Argmax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntensityConfig {
    pub lambda0: f64,
    pub a: f64,
    /// Upper clip of the simulated intensity, in e-folds above `lambda0`.
    pub clip_e_folds: f64,
}

impl Default for IntensityConfig {
    fn default() -> Self {
        Self {
            lambda0: 50.0,
            a: 5.0,
            clip_e_folds: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriceConfig {
    pub s0: f64,
    pub sigma: f64,
}

impl Default for PriceConfig {
    fn default() -> Self {
        Self { s0: 100.0, sigma: 0.06 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorConfig {
    pub x0: f64,
    pub sigma0: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self { x0: 100.0, sigma0: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuotesConfig {
    pub policy: String,
    pub half_spread: f64,
    /// Mid of the fixed policy; defaults to the prior mean.
    pub mid: Option<f64>,
}

impl Default for QuotesConfig {
    fn default() -> Self {
        Self {
            policy: "mid-mean".to_string(),
            half_spread: 0.1,
            mid: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetaConfig {
    /// Orders per second; 0 disables the meta-order.
    pub beta: f64,
    /// Meta-order duration; `null` means it never stops.
    pub horizon: Option<f64>,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self {
            beta: 10.0,
            horizon: Some(2.5),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub n: usize,
    /// Half-width of the grid around `x0`; `null` picks a span from the
    /// prior and volatility.
    pub half_width: Option<f64>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            n: 4001,
            half_width: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub horizon: f64,
    pub output_dt: f64,
    pub replicas: usize,
    pub readout: Readout,
    /// Estimate `E[readout - S_t] + E[S_t] - S0` instead of
    /// `E[readout] - S0`; same expectation, far less noise from the price path.
    pub control_variate: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            horizon: 5.0,
            output_dt: 0.1,
            replicas: 200,
            readout: Readout::Auto,
            control_variate: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub command: Command,
    pub seed: Option<u64>,
    pub output_dir: Option<String>,
    pub intensity: IntensityConfig,
    pub price: PriceConfig,
    pub prior: PriorConfig,
    pub quotes: QuotesConfig,
    pub meta: MetaConfig,
    pub grid: GridConfig,
    pub filter: Filter,
    pub experiment: ExperimentConfig,
}

/// Filter name, validated against the registry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Filter(pub String);

impl Default for Filter {
    fn default() -> Self {
        Filter("grid".to_string())
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| ConfigError::Parse {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Checks every documented range.
    pub fn validate(&self) -> Result<(), ConfigError> {
        fn positive(field: &str, v: f64) -> Result<(), ConfigError> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(ConfigError::invalid(field, "must be > 0"))
            }
        }
        fn non_negative(field: &str, v: f64) -> Result<(), ConfigError> {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(ConfigError::invalid(field, "must be ≥ 0"))
            }
        }
        fn finite(field: &str, v: f64) -> Result<(), ConfigError> {
            if v.is_finite() {
                Ok(())
            } else {
                Err(ConfigError::invalid(field, "must be finite"))
            }
        }
        positive("intensity.lambda0", self.intensity.lambda0)?;
        positive("intensity.a", self.intensity.a)?;
        positive("intensity.clip_e_folds", self.intensity.clip_e_folds)?;
        finite("price.s0", self.price.s0)?;
        non_negative("price.sigma", self.price.sigma)?;
        finite("prior.x0", self.prior.x0)?;
        positive("prior.sigma0", self.prior.sigma0)?;
        non_negative("quotes.half_spread", self.quotes.half_spread)?;
        if let Some(mid) = self.quotes.mid {
            finite("quotes.mid", mid)?;
        }
        let policies = PolicyRegistry::default().names();
        if !policies.contains(&self.quotes.policy.as_str()) {
            return Err(ConfigError::invalid(
                "quotes.policy",
                format!("`{}` is unknown; must be one of {}", self.quotes.policy, policies.join(", ")),
            ));
        }
        non_negative("meta.beta", self.meta.beta)?;
        if let Some(h) = self.meta.horizon {
            non_negative("meta.horizon", h)?;
        }
        if self.grid.n < 3 {
            return Err(ConfigError::invalid("grid.n", "must be ≥ 3"));
        }
        if let Some(w) = self.grid.half_width {
            positive("grid.half_width", w)?;
        }
        let filters = FilterRegistry::default().names();
        if !filters.contains(&self.filter.0.as_str()) {
            return Err(ConfigError::invalid("filter", format!("`{}` is unknown; must be one of {}", self.filter.0, filters.join(", "))));
        }
        if self.filter.0 == "argmax-root" && self.price.sigma != 0.0 {
            return Err(ConfigError::invalid("filter", "argmax-root requires price.sigma = 0"));
        }
        positive("experiment.horizon", self.experiment.horizon)?;
        positive("experiment.output_dt", self.experiment.output_dt)?;
        if self.experiment.replicas == 0 {
            return Err(ConfigError::invalid("experiment.replicas", "must be ≥ 1"));
        }
        if let Some(h) = self.meta.horizon {
            if self.meta.beta > 0.0 && self.experiment.horizon < h {
                return Err(ConfigError::invalid(
                    "experiment.horizon",
                    "must be ≥ meta.horizon when the meta-order is finite",
                ));
            }
        }
        if matches!(self.command, Command::Simulate | Command::FilterDemo | Command::Impact) && self.seed.is_none() {
            return Err(ConfigError::invalid("seed", format!("is required for `{}`", self.command.as_str())));
        }
        Ok(())
    }

    pub fn fixed_mid(&self) -> f64 {
        self.quotes.mid.unwrap_or(self.prior.x0)
    }
}

/// Per-field overrides, applied over a file or the defaults.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigOverrides {
    pub command: Option<Command>,
    pub seed: Option<u64>,
    pub output_dir: Option<String>,
    pub lambda0: Option<f64>,
    pub a: Option<f64>,
    pub sigma: Option<f64>,
    pub s0: Option<f64>,
    pub x0: Option<f64>,
    pub sigma0: Option<f64>,
    pub half_spread: Option<f64>,
    pub policy: Option<String>,
    pub beta: Option<f64>,
    /// `Some(None)` sets an infinite meta-order.
    pub meta_horizon: Option<Option<f64>>,
    pub horizon: Option<f64>,
    pub output_dt: Option<f64>,
    pub replicas: Option<usize>,
    pub grid_n: Option<usize>,
    pub filter: Option<String>,
    pub readout: Option<Readout>,
    pub control_variate: Option<bool>,
}

impl ConfigOverrides {
    pub fn apply(&self, cfg: &mut RunConfig) {
        macro_rules! set {
            ($src:ident => $($dst:tt)+) => {
                if let Some(v) = self.$src.clone() {
                    cfg.$($dst)+ = v;
                }
            };
        }
        set!(command => command);
        if let Some(s) = self.seed {
            cfg.seed = Some(s);
        }
        if let Some(o) = &self.output_dir {
            cfg.output_dir = Some(o.clone());
        }
        set!(lambda0 => intensity.lambda0);
        set!(a => intensity.a);
        set!(sigma => price.sigma);
        set!(s0 => price.s0);
        set!(x0 => prior.x0);
        set!(sigma0 => prior.sigma0);
        set!(half_spread => quotes.half_spread);
        set!(policy => quotes.policy);
        set!(beta => meta.beta);
        set!(meta_horizon => meta.horizon);
        set!(horizon => experiment.horizon);
        set!(output_dt => experiment.output_dt);
        set!(replicas => experiment.replicas);
        set!(grid_n => grid.n);
        if let Some(f) = &self.filter {
            cfg.filter = Filter(f.clone());
        }
        set!(readout => experiment.readout);
        set!(control_variate => experiment.control_variate);
    }
}
