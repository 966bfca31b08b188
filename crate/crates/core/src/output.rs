//! Files written by runs: CSV tables, density sidecars and the manifest.
//! Every file goes through a temporary file in the target directory and is
//! renamed into place.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, RunConfig};
use crate::flow::EventRecord;
use crate::impact::{AnalyticOverlays, DensitySnapshot, ImpactCurve, TraceSample};
use crate::model::{Quotes, Source};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("cannot write {}: {source}", path.display())]
    Write { path: PathBuf, source: std::io::Error },
    #[error("cannot read {}: {source}", path.display())]
    Read { path: PathBuf, source: std::io::Error },
    #[error("malformed manifest {}: {message}", path.display())]
    Manifest { path: PathBuf, message: String },
}

impl IoError {
    pub fn path(&self) -> &Path {
        match self {
            IoError::Write { path, .. } | IoError::Read { path, .. } | IoError::Manifest { path, .. } => path,
        }
    }
}

/// Writes `contents` to `path` atomically.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), IoError> {
    let err = |source| IoError::Write { path: path.to_path_buf(), source };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(err)?;
    tmp.write_all(contents).map_err(err)?;
    tmp.as_file().sync_all().map_err(err)?;
    tmp.persist(path).map_err(|e| err(e.error))?;
    Ok(())
}

fn csv(header: &str, rows: impl Iterator<Item = String>) -> String {
    let mut out = String::from(header);
    out.push('\n');
    for r in rows {
        out.push_str(&r);
        out.push('\n');
    }
    out
}

pub fn curve_csv(curve: &ImpactCurve) -> String {
    let rows = (0..curve.times.len()).map(|k| {
        format!(
            "{},{},{},{}",
            curve.times[k], curve.mean[k], curve.stderr[k], curve.overlay[k]
        )
    });
    csv("t,mean_impact,stderr,overlay", rows)
}

pub fn overlays_csv(o: &AnalyticOverlays) -> String {
    let rows = (0..o.times.len())
        .map(|k| format!("{},{},{},{}", o.times[k], o.no_info[k], o.learning[k], o.average_impact[k]));
    csv("t,impact_no_info,learning_level,average_impact", rows)
}

/// Mode after the `k`-th meta order, `k = 1, 2, ...`, at time `k / beta`.
pub fn recursion_csv(o: &AnalyticOverlays, beta: f64) -> String {
    let rows = o
        .recursion
        .iter()
        .enumerate()
        .map(|(k, y)| format!("{},{},{}", k + 1, (k + 1) as f64 / beta, y));
    csv("k,t,mode_minus_x0", rows)
}

pub fn events_csv(events: &[EventRecord]) -> String {
    let rows = events.iter().map(|e| {
        format!(
            "{},{},{},{},{},{}",
            e.time,
            e.side.as_str(),
            e.source.as_str(),
            e.bid,
            e.ask,
            e.efficient_price
        )
    });
    csv("time,side,source,bid,ask,efficient_price", rows)
}

pub fn density_csv(snapshot: &DensitySnapshot) -> String {
    let d = &snapshot.density;
    let rows = d.xs().zip(d.values()).map(|(x, v)| format!("{x},{v}"));
    csv("x,value", rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensitySidecar {
    pub t: f64,
    pub quotes: Quotes,
    pub normalized: bool,
    pub mass: f64,
}

impl DensitySidecar {
    pub fn of(snapshot: &DensitySnapshot) -> Self {
        Self {
            t: snapshot.t,
            quotes: snapshot.quotes,
            normalized: snapshot.density.is_normalized(),
            mass: snapshot.density.mass(),
        }
    }
}

/// Posterior path with trade markers. The marker column lists the trades in
/// `(previous t, t]`: `a`/`b` for opportunistic asks and bids, `M` for
/// meta-order trades.
pub fn trajectory_csv(samples: &[TraceSample], events: &[EventRecord]) -> String {
    let mut next = 0;
    let mut rows = Vec::with_capacity(samples.len());
    for s in samples {
        let mut markers = String::new();
        while next < events.len() && events[next].time <= s.t {
            let e = &events[next];
            markers.push(match (e.source, e.side.sign() > 0) {
                (Source::Meta, _) => 'M',
                (_, true) => 'a',
                (_, false) => 'b',
            });
            next += 1;
        }
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut row = String::new();
        let _ = write!(row, "{},{},{},{}", s.t, opt(s.mean), opt(s.variance), markers);
        rows.push(row);
    }
    csv("t,x_t,sigma_t2,markers", rows.into_iter())
}

/// Everything needed to rerun a result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub config: RunConfig,
    pub seed: Option<u64>,
    pub git_describe: String,
}

impl Manifest {
    pub fn new(config: &RunConfig, git_describe: &str) -> Self {
        Self {
            config: config.clone(),
            seed: config.seed,
            git_describe: git_describe.to_string(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn read(path: &Path) -> Result<Self, IoError> {
        let text = std::fs::read_to_string(path).map_err(|source| IoError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| IoError::Manifest {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

/// Reads a run configuration, accepting a manifest in its place.
pub fn parse_config_or_manifest(text: &str) -> Result<RunConfig, ConfigError> {
    let is_manifest = serde_json::from_str::<serde_json::Value>(text)
        .map(|v| v.get("git_describe").is_some() && v.get("config").is_some())
        .unwrap_or(false);
    if is_manifest {
        let m: Manifest = serde_json::from_str(text).map_err(|e| ConfigError::Parse {
            path: ".".into(),
            message: e.to_string(),
        })?;
        m.config.validate()?;
        return Ok(m.config);
    }
    RunConfig::from_json(text)
}

/// Output directory with the file names used by the CLI.
#[derive(Debug, Clone)]
pub struct OutputDir {
    root: PathBuf,
}

impl OutputDir {
    pub fn create(root: impl Into<PathBuf>) -> Result<Self, IoError> {
        let root = root.into();
        std::fs::create_dir_all(&root).map_err(|source| IoError::Write {
            path: root.clone(),
            source,
        })?;
        Ok(Self { root })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write(&self, name: &str, contents: &str) -> Result<PathBuf, IoError> {
        let p = self.path(name);
        write_atomic(&p, contents.as_bytes())?;
        Ok(p)
    }

    pub fn write_curve(&self, curve: &ImpactCurve) -> Result<PathBuf, IoError> {
        self.write("impact.csv", &curve_csv(curve))
    }

    pub fn write_events(&self, events: &[EventRecord]) -> Result<PathBuf, IoError> {
        self.write("events.csv", &events_csv(events))
    }

    pub fn write_trajectory(&self, samples: &[TraceSample], events: &[EventRecord]) -> Result<PathBuf, IoError> {
        self.write("trajectory.csv", &trajectory_csv(samples, events))
    }

    /// Writes `density_{index:04}.csv` and its `.json` sidecar.
    pub fn write_density(&self, index: usize, snapshot: &DensitySnapshot) -> Result<PathBuf, IoError> {
        let stem = format!("density_{index:04}");
        let sidecar = serde_json::to_string_pretty(&DensitySidecar::of(snapshot)).expect("sidecar serializes");
        self.write(&format!("{stem}.json"), &(sidecar + "\n"))?;
        self.write(&format!("{stem}.csv"), &density_csv(snapshot))
    }

    pub fn write_manifest(&self, manifest: &Manifest) -> Result<PathBuf, IoError> {
        self.write("manifest.json", &manifest.to_json())
    }
}
