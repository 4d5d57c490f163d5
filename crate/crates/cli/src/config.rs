//! Run configuration: a JSON file overlaid by flags, then resolved with
//! field-path diagnostics before any computation starts.

use std::fmt;
use std::path::{Path, PathBuf};

use ou_fpt::moments::X0Rule;
use ou_fpt::{BoundaryKind, FptProblem};
use serde::{Deserialize, Serialize};

/// A config problem, reported as `path: message`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

pub type ConfigResult<T> = std::result::Result<T, ConfigError>;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub start: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stop: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sim {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub paths: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_time: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bridge: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Target {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cv: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shape: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rate: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fit {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta_lo: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta_hi: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigmas: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_lo: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_hi: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tail_cut: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rel_tol: Option<f64>,
}

/// Every subcommand reads the fields it needs and ignores the rest.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub boundary: Option<BoundaryKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Not echoed: outputs of identical runs stay byte-identical wherever
    /// they are written.
    #[serde(skip_serializing)]
    pub out: Option<PathBuf>,
    /// charfun: linear alpha grid.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<Grid>,
    /// sweep-sigma / sweep-threshold: log grid of the swept value.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Grid>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x0_rule: Option<X0Rule>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sim: Option<Sim>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target: Option<Target>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit: Option<Fit>,
}

impl RunConfig {
    pub fn load(path: &Path) -> ConfigResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new("config", format!("cannot read {}: {e}", path.display())))?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let path = if path == "." { "config".to_string() } else { path };
            ConfigError::new(path, e.into_inner().to_string())
        })
    }
}

/// Overwrite `slot` when the flag was given.
pub fn overlay<T>(slot: &mut Option<T>, flag: Option<T>) {
    if flag.is_some() {
        *slot = flag;
    }
}

pub fn required<T: Clone>(v: &Option<T>, path: &str) -> ConfigResult<T> {
    v.clone().ok_or_else(|| ConfigError::new(path, "required"))
}

pub fn finite(v: f64, path: &str) -> ConfigResult<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(ConfigError::new(path, format!("must be finite, got {v}")))
    }
}

pub fn positive(v: f64, path: &str) -> ConfigResult<f64> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(ConfigError::new(path, format!("must be finite and > 0, got {v}")))
    }
}

/// Resolved `(lo, hi)` pair with `0 < lo < hi`.
pub fn bracket(lo: f64, hi: f64, lo_path: &str, hi_path: &str) -> ConfigResult<(f64, f64)> {
    positive(lo, lo_path)?;
    positive(hi, hi_path)?;
    if hi <= lo {
        return Err(ConfigError::new(hi_path, format!("must exceed {lo_path} = {lo}, got {hi}")));
    }
    Ok((lo, hi))
}

/// Resolved `(start, stop, n)` of a grid section.
pub fn grid(g: &Option<Grid>, section: &str, log: bool) -> ConfigResult<(f64, f64, usize)> {
    let g = g.clone().unwrap_or_default();
    let path = |f: &str| format!("{section}.{f}");
    let start = required(&g.start, &path("start"))?;
    let stop = required(&g.stop, &path("stop"))?;
    let n = required(&g.n, &path("n"))?;
    if log {
        positive(start, &path("start"))?;
        positive(stop, &path("stop"))?;
    } else {
        finite(start, &path("start"))?;
        finite(stop, &path("stop"))?;
    }
    if stop <= start {
        return Err(ConfigError::new(path("stop"), format!("must exceed start = {start}, got {stop}")));
    }
    if n < 2 {
        return Err(ConfigError::new(path("n"), format!("must be >= 2, got {n}")));
    }
    Ok((start, stop, n))
}

/// The process and boundary fields.
pub struct ProblemFields {
    pub theta: Option<f64>,
    pub sigma: Option<f64>,
    pub a: f64,
    pub b: f64,
    pub x0: f64,
    pub kind: BoundaryKind,
}

impl RunConfig {
    pub fn kind(&self) -> BoundaryKind {
        self.boundary.unwrap_or(BoundaryKind::BothAbsorbing)
    }

    /// Thresholds and start, with theta and sigma checked only when present.
    pub fn problem_fields(&self) -> ConfigResult<ProblemFields> {
        let theta = self.theta.map(|t| positive(t, "theta")).transpose()?;
        let sigma = self.sigma.map(|s| positive(s, "sigma")).transpose()?;
        let a = finite(required(&self.a, "a")?, "a")?;
        let b = finite(required(&self.b, "b")?, "b")?;
        if b <= a {
            return Err(ConfigError::new("b", format!("must exceed a = {a}, got {b}")));
        }
        let x0 = finite(required(&self.x0, "x0")?, "x0")?;
        if !(a..=b).contains(&x0) {
            return Err(ConfigError::new("x0", format!("must lie in [a, b] = [{a}, {b}], got {x0}")));
        }
        Ok(ProblemFields {
            theta,
            sigma,
            a,
            b,
            x0,
            kind: self.kind(),
        })
    }

    /// Fully specified problem; theta or sigma may be supplied by the caller
    /// when the command searches over them.
    pub fn problem_with(&self, theta: Option<f64>, sigma: Option<f64>) -> ConfigResult<FptProblem> {
        let f = self.problem_fields()?;
        let theta = match theta {
            Some(t) => t,
            None => required(&f.theta, "theta")?,
        };
        let sigma = match sigma {
            Some(s) => s,
            None => required(&f.sigma, "sigma")?,
        };
        FptProblem::build(theta, sigma, f.a, f.b, f.x0, f.kind)
            .map_err(|e| ConfigError::new("config", e.to_string()))
    }

    pub fn problem(&self) -> ConfigResult<FptProblem> {
        self.problem_with(None, None)
    }

    pub fn out(&self) -> ConfigResult<PathBuf> {
        let out = required(&self.out, "out")?;
        if out.as_os_str().is_empty() {
            return Err(ConfigError::new("out", "must not be empty"));
        }
        Ok(out)
    }
}
