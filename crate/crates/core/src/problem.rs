use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Drift `theta` (1/time) and relative noise strength `sigma` (state units) of
/// `dx = -theta x dt + sigma sqrt(theta) dW`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProcessParams {
    pub theta: f64,
    pub sigma: f64,
}

impl ProcessParams {
    pub fn new(theta: f64, sigma: f64) -> Result<Self> {
        let p = ProcessParams { theta, sigma };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.theta.is_finite() && self.theta > 0.0) {
            return Err(Error::invalid(format!("theta = {} must be > 0", self.theta)));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::invalid(format!("sigma = {} must be > 0", self.sigma)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BoundaryKind {
    /// Absorbing at both `a` and `b`.
    #[serde(rename = "absorb-absorb")]
    BothAbsorbing,
    /// Reflecting at `a`, absorbing at `b`.
    #[serde(rename = "reflect-absorb")]
    ReflectLowerAbsorbUpper,
}

impl BoundaryKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            BoundaryKind::BothAbsorbing => "absorb-absorb",
            BoundaryKind::ReflectLowerAbsorbUpper => "reflect-absorb",
        }
    }
}

impl std::str::FromStr for BoundaryKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "absorb-absorb" => Ok(BoundaryKind::BothAbsorbing),
            "reflect-absorb" => Ok(BoundaryKind::ReflectLowerAbsorbUpper),
            other => Err(Error::invalid(format!(
                "unknown boundary kind {other:?} (expected absorb-absorb or reflect-absorb)"
            ))),
        }
    }
}

impl std::fmt::Display for BoundaryKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryConfig {
    pub a: f64,
    pub b: f64,
    pub kind: BoundaryKind,
}

impl BoundaryConfig {
    pub fn new(a: f64, b: f64, kind: BoundaryKind) -> Result<Self> {
        let c = BoundaryConfig { a, b, kind };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a.is_finite() && self.b.is_finite()) {
            return Err(Error::invalid("thresholds must be finite"));
        }
        if self.a >= self.b {
            return Err(Error::invalid(format!(
                "thresholds must satisfy a < b (a = {}, b = {})",
                self.a, self.b
            )));
        }
        Ok(())
    }
}

/// A fully specified first-passage problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FptProblem {
    pub params: ProcessParams,
    pub boundaries: BoundaryConfig,
    pub x0: f64,
}

impl FptProblem {
    pub fn new(params: ProcessParams, boundaries: BoundaryConfig, x0: f64) -> Result<Self> {
        let p = FptProblem {
            params,
            boundaries,
            x0,
        };
        p.validate()?;
        Ok(p)
    }

    /// Shorthand constructor used heavily in tests and sweeps.
    pub fn build(
        theta: f64,
        sigma: f64,
        a: f64,
        b: f64,
        x0: f64,
        kind: BoundaryKind,
    ) -> Result<Self> {
        Self::new(
            ProcessParams::new(theta, sigma)?,
            BoundaryConfig::new(a, b, kind)?,
            x0,
        )
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.boundaries.validate()?;
        let BoundaryConfig { a, b, .. } = self.boundaries;
        if !self.x0.is_finite() || self.x0 < a || self.x0 > b {
            return Err(Error::invalid(format!(
                "x0 = {} must lie in [a, b] = [{a}, {b}]",
                self.x0
            )));
        }
        Ok(())
    }

    pub fn theta(&self) -> f64 {
        self.params.theta
    }

    pub fn sigma(&self) -> f64 {
        self.params.sigma
    }

    pub fn kind(&self) -> BoundaryKind {
        self.boundaries.kind
    }

    pub fn with_theta(mut self, theta: f64) -> Self {
        self.params.theta = theta;
        self
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.params.sigma = sigma;
        self
    }

    pub fn with_x0(mut self, x0: f64) -> Self {
        self.x0 = x0;
        self
    }

    /// `tau = 0` almost surely: started on an absorbing threshold.
    pub fn starts_absorbed(&self) -> bool {
        let BoundaryConfig { a, b, kind } = self.boundaries;
        self.x0 == b || (kind == BoundaryKind::BothAbsorbing && self.x0 == a)
    }
}
