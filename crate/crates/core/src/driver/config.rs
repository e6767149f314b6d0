use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::Replacement;
use crate::dynamics::TimeGrid;
use crate::error::{Error, Result};
use crate::model::MODEL_NAMES;

/// Which base point an expert steps from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpdateMode {
    /// From its own previous estimate.
    PerExpert,
    /// From the mixing-weighted consensus of all experts.
    #[default]
    Consensus,
}

impl FromStr for UpdateMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim() {
            "per-expert" => Ok(UpdateMode::PerExpert),
            "consensus" => Ok(UpdateMode::Consensus),
            other => Err(format!("mode must be `per-expert` or `consensus`, got {other:?}")),
        }
    }
}

impl fmt::Display for UpdateMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UpdateMode::PerExpert => "per-expert",
            UpdateMode::Consensus => "consensus",
        })
    }
}

/// Every scalar a run needs.
///
/// The text form is one `key = value` per line with keys named after the
/// CLI flags; `#` starts a comment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub x_cols: String,
    pub y_col: String,
    pub model: String,
    /// Number of experts `K`; `K + 1` subsamples are drawn.
    pub experts: usize,
    /// Subsample size `m`; the dataset size when unset.
    pub subsample_size: Option<usize>,
    pub replacement: Replacement,
    pub seed: u64,
    pub horizon: f64,
    pub steps: usize,
    /// Fixed step size; when set the horizon becomes `delta * steps`.
    pub delta: Option<f64>,
    pub epsilon: f64,
    pub gamma: f64,
    pub beta: f64,
    pub tol: f64,
    pub mode: UpdateMode,
    pub theta0: Option<Vec<f64>>,
    /// File holding `K` initial weights.
    pub omega0: Option<PathBuf>,
    pub trajectory: Option<PathBuf>,
    pub summary: Option<PathBuf>,
    pub plot: Option<PathBuf>,
    pub record_experts: bool,
    pub parallel: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: None,
            x_cols: "t".into(),
            y_col: "N".into(),
            model: "logistic".into(),
            experts: 25,
            subsample_size: None,
            replacement: Replacement::With,
            seed: 1,
            horizon: 1.0,
            steps: 100_000,
            delta: None,
            epsilon: 0.001,
            gamma: 0.01,
            beta: 0.5,
            tol: 1e-9,
            mode: UpdateMode::Consensus,
            theta0: None,
            omega0: None,
            trajectory: None,
            summary: None,
            plot: None,
            record_experts: false,
            parallel: false,
        }
    }
}

pub const CONFIG_KEYS: &[&str] = &[
    "data",
    "x-cols",
    "y-col",
    "model",
    "experts",
    "subsample-size",
    "replacement",
    "seed",
    "horizon",
    "steps",
    "delta",
    "epsilon",
    "gamma",
    "beta",
    "tol",
    "mode",
    "theta0",
    "omega0",
    "trajectory",
    "summary",
    "plot",
    "record-experts",
    "parallel",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| Error::Config(format!("{key} = {value:?}: {e}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>> {
    value
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn join(values: &[f64]) -> String {
    values.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Sets one field from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let path = || PathBuf::from(value.trim());
        match key {
            "data" => self.data = Some(path()),
            "x-cols" => self.x_cols = value.trim().to_string(),
            "y-col" => self.y_col = value.trim().to_string(),
            "model" => self.model = value.trim().to_string(),
            "experts" => self.experts = parse(key, value)?,
            "subsample-size" => self.subsample_size = Some(parse(key, value)?),
            "replacement" => self.replacement = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "horizon" => self.horizon = parse(key, value)?,
            "steps" => self.steps = parse(key, value)?,
            "delta" => self.delta = Some(parse(key, value)?),
            "epsilon" => self.epsilon = parse(key, value)?,
            "gamma" => self.gamma = parse(key, value)?,
            "beta" => self.beta = parse(key, value)?,
            "tol" => self.tol = parse(key, value)?,
            "mode" => self.mode = parse(key, value)?,
            "theta0" => self.theta0 = Some(parse_list(key, value)?),
            "omega0" => self.omega0 = Some(path()),
            "trajectory" => self.trajectory = Some(path()),
            "summary" => self.summary = Some(path()),
            "plot" => self.plot = Some(path()),
            "record-experts" => self.record_experts = parse(key, value)?,
            "parallel" => self.parallel = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    pub fn parse_text(text: &str) -> Result<Self> {
        let mut config = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`, got {raw:?}", i + 1))
            })?;
            config
                .set(key.trim(), value)
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_text(&text)
    }

    /// Text form accepted by [`parse_text`](Self::parse_text).
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        let show = |p: &Path| p.display().to_string();
        if let Some(p) = &self.data {
            put("data", show(p));
        }
        put("x-cols", self.x_cols.clone());
        put("y-col", self.y_col.clone());
        put("model", self.model.clone());
        put("experts", self.experts.to_string());
        if let Some(m) = self.subsample_size {
            put("subsample-size", m.to_string());
        }
        put("replacement", self.replacement.to_string());
        put("seed", self.seed.to_string());
        put("horizon", self.horizon.to_string());
        put("steps", self.steps.to_string());
        if let Some(d) = self.delta {
            put("delta", d.to_string());
        }
        put("epsilon", self.epsilon.to_string());
        put("gamma", self.gamma.to_string());
        put("beta", self.beta.to_string());
        put("tol", self.tol.to_string());
        put("mode", self.mode.to_string());
        if let Some(t) = &self.theta0 {
            put("theta0", join(t));
        }
        if let Some(p) = &self.omega0 {
            put("omega0", show(p));
        }
        if let Some(p) = &self.trajectory {
            put("trajectory", show(p));
        }
        if let Some(p) = &self.summary {
            put("summary", show(p));
        }
        if let Some(p) = &self.plot {
            put("plot", show(p));
        }
        put("record-experts", self.record_experts.to_string());
        put("parallel", self.parallel.to_string());
        out
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.experts == 0 {
            return bad("experts must be at least 1".into());
        }
        if self.subsample_size == Some(0) {
            return bad("subsample-size must be at least 1".into());
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma must be positive, got {}", self.gamma));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return bad(format!("beta must lie in (0, 1), got {}", self.beta));
        }
        if self.tol.is_nan() || self.tol <= 0.0 {
            return bad(format!("tol must be positive, got {}", self.tol));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return bad(format!("epsilon must be nonnegative, got {}", self.epsilon));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return bad(format!("horizon must be positive, got {}", self.horizon));
        }
        if let Some(d) = self.delta {
            if !(d > 0.0 && d.is_finite()) {
                return bad(format!("delta must be positive, got {d}"));
            }
        }
        if !MODEL_NAMES.contains(&self.model.as_str()) {
            return bad(format!(
                "unknown model {:?}; known models: {}",
                self.model,
                MODEL_NAMES.join(", ")
            ));
        }
        if let Some(t) = &self.theta0 {
            if t.is_empty() || t.iter().any(|v| !v.is_finite()) {
                return bad(format!("theta0 must be finite and non-empty, got {t:?}"));
            }
        }
        Ok(())
    }

    /// Time grid of the run, `None` for a zero-step run.
    pub fn time_grid(&self) -> Result<Option<TimeGrid>> {
        if self.steps == 0 {
            return Ok(None);
        }
        let grid = match self.delta {
            Some(d) => TimeGrid::from_delta(d, self.steps)?,
            None => TimeGrid::new(self.horizon, self.steps)?,
        };
        Ok(Some(grid))
    }
}

/// Reads whitespace- or comma-separated numbers.
pub fn load_vector(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_list(&path.display().to_string(), &text)
}
