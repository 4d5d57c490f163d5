//! FPT moments from derivatives of the characteristic function at zero,
//! closed-form zero-drift CV limits, and parameter sweeps.
//!
//! `E[tau^m] = i^-m psi^(m)(0)`. Derivatives use central differences with one
//! Richardson step. The step is chosen relative to the mean FPT: a pilot
//! evaluation at `alpha = 1e-3 theta` (shrunk while `psi` is far from 1)
//! estimates `E[tau]`, and order `m` then uses `h_m = c_m / E[tau]`. Because
//! `psi` depends on `alpha / theta` only, the pilot and all derived steps scale
//! exactly with `theta`.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::charfun::charfun;
use crate::error::{Error, Result};
use crate::problem::{BoundaryConfig, BoundaryKind, FptProblem, ProcessParams};

const PILOT_STEP: f64 = 1.0e-3;
const PILOT_ACCEPT: f64 = 1.0e-2;
const PILOT_MAX_SHRINKS: usize = 400;
const RICHARDSON_TOL: f64 = 1.0e-5;
const IMAG_RESIDUE_TOL: f64 = 1.0e-6;
const VARIANCE_CLAMP: f64 = 1.0e-10;

fn step_constant(order: u32) -> f64 {
    match order {
        1 | 2 => 1.0e-3,
        3 => 4.0e-3,
        _ => 8.0e-3,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentSummary {
    pub mean: f64,
    pub std: f64,
    pub cv: f64,
    pub skewness: f64,
    /// Set when a slightly negative variance (rounding) was clamped to zero.
    #[serde(default)]
    pub variance_clamped: bool,
}

impl MomentSummary {
    /// Build from the first three raw moments.
    pub fn from_raw(m1: f64, m2: f64, m3: f64) -> Result<Self> {
        let mut var = m2 - m1 * m1;
        let mut clamped = false;
        if var < 0.0 {
            if var >= -VARIANCE_CLAMP * m2.abs() {
                var = 0.0;
                clamped = true;
            } else {
                return Err(Error::NegativeVariance { variance: var });
            }
        }
        let std = var.sqrt();
        let skewness = if std > 0.0 {
            (m3 - 3.0 * m1 * var - m1 * m1 * m1) / (std * std * std)
        } else {
            0.0
        };
        Ok(MomentSummary {
            mean: m1,
            std,
            cv: std / m1,
            skewness,
            variance_clamped: clamped,
        })
    }
}

/// Central-difference derivative of order `m` with step `h`.
fn central_difference(psi: &impl Fn(f64) -> Result<Complex64>, order: u32, h: f64) -> Result<Complex64> {
    let one = Complex64::new(1.0, 0.0);
    Ok(match order {
        1 => (psi(h)? - psi(-h)?) / (2.0 * h),
        2 => (psi(h)? - 2.0 * one + psi(-h)?) / (h * h),
        3 => (psi(2.0 * h)? - 2.0 * psi(h)? + 2.0 * psi(-h)? - psi(-2.0 * h)?) / (2.0 * h * h * h),
        4 => {
            (psi(2.0 * h)? - 4.0 * psi(h)? + 6.0 * one - 4.0 * psi(-h)? + psi(-2.0 * h)?)
                / (h * h * h * h)
        }
        _ => unreachable!(),
    })
}

/// `i^-m z`
fn rotate(order: u32, z: Complex64) -> Complex64 {
    match order % 4 {
        0 => z,
        1 => Complex64::new(z.im, -z.re),
        2 => -z,
        _ => Complex64::new(-z.im, z.re),
    }
}

/// Mean estimate used to scale the finite-difference steps.
fn pilot_mean(problem: &FptProblem) -> Result<f64> {
    let mut h = PILOT_STEP * problem.theta();
    for _ in 0..PILOT_MAX_SHRINKS {
        let p = charfun(problem, h)?;
        let dev = (p - Complex64::new(1.0, 0.0)).norm();
        if dev <= PILOT_ACCEPT {
            let mean = p.im / h;
            if !(mean.is_finite() && mean > 0.0) {
                return Err(Error::StepCollapse {
                    order: 1,
                    reason: format!("pilot mean estimate {mean} is not positive"),
                });
            }
            return Ok(mean);
        }
        h /= 100.0;
        if h == 0.0 {
            break;
        }
    }
    Err(Error::StepCollapse {
        order: 1,
        reason: "could not find a step where psi is close to 1".into(),
    })
}

/// `E[(tau / pilot)^m]`, differentiating `psi(s / pilot)` in `s` so that every
/// intermediate stays O(1) even when the mean itself is astronomically large.
fn normalized_moment(problem: &FptProblem, order: u32, pilot: f64) -> Result<f64> {
    let psi = |s: f64| charfun(problem, s / pilot);
    let h = step_constant(order);
    // higher orders need a wider base step and a second extrapolation level to
    // stay clear of the rounding floor
    let levels = if order >= 3 { 3 } else { 2 };
    let mut table: Vec<Vec<Complex64>> = Vec::with_capacity(levels);
    for k in 0..levels {
        let mut row = vec![central_difference(&psi, order, h / f64::powi(2.0, k as i32))?];
        for j in 1..=k {
            let f = f64::powi(4.0, j as i32);
            let r = (f * row[j - 1] - table[k - 1][j - 1]) / (f - 1.0);
            row.push(r);
        }
        table.push(row);
    }
    let last = &table[levels - 1];
    let extrapolated = rotate(order, last[levels - 1]);
    let previous = rotate(order, last[levels - 2]);
    let value = extrapolated.re;
    if !(value.is_finite() && value > 0.0) {
        return Err(Error::StepCollapse {
            order,
            reason: format!("moment estimate {value} is not positive"),
        });
    }
    let disagreement = (extrapolated - previous).norm() / extrapolated.norm();
    if disagreement > RICHARDSON_TOL {
        return Err(Error::StepCollapse {
            order,
            reason: format!("Richardson levels disagree by {disagreement:e}"),
        });
    }
    let residue = extrapolated.im.abs() / value;
    if residue > IMAG_RESIDUE_TOL {
        return Err(Error::StepCollapse {
            order,
            reason: format!("imaginary residue {residue:e}"),
        });
    }
    Ok(value)
}

/// Raw moment `E[tau^m]`, `m` in `1..=4`.
pub fn fpt_moment(problem: &FptProblem, m: u32) -> Result<f64> {
    problem.validate()?;
    if !(1..=4).contains(&m) {
        return Err(Error::invalid(format!("moment order {m} must be in 1..=4")));
    }
    if problem.starts_absorbed() {
        return Ok(0.0);
    }
    let pilot = pilot_mean(problem)?;
    Ok(normalized_moment(problem, m, pilot)? * pilot.powi(m as i32))
}

/// Raw moments `E[tau], ..., E[tau^max_order]` sharing one pilot.
pub fn raw_moments(problem: &FptProblem, max_order: u32) -> Result<Vec<f64>> {
    problem.validate()?;
    if !(1..=4).contains(&max_order) {
        return Err(Error::invalid(format!("moment order {max_order} must be in 1..=4")));
    }
    if problem.starts_absorbed() {
        return Ok(vec![0.0; max_order as usize]);
    }
    let pilot = pilot_mean(problem)?;
    (1..=max_order)
        .map(|m| Ok(normalized_moment(problem, m, pilot)? * pilot.powi(m as i32)))
        .collect()
}

pub fn moment_summary(problem: &FptProblem) -> Result<MomentSummary> {
    problem.validate()?;
    if problem.starts_absorbed() {
        return Err(Error::invalid("x0 on an absorbing threshold: tau = 0, CV undefined"));
    }
    let pilot = pilot_mean(problem)?;
    let nu = (1..=3)
        .map(|m| normalized_moment(problem, m, pilot))
        .collect::<Result<Vec<f64>>>()?;
    let unit = MomentSummary::from_raw(nu[0], nu[1], nu[2])?;
    Ok(MomentSummary {
        mean: unit.mean * pilot,
        std: unit.std * pilot,
        ..unit
    })
}

/// Zero-drift CV limit with both thresholds absorbing.
pub fn limiting_cv_both_absorbing(a: f64, b: f64, x0: f64) -> Result<f64> {
    if !(a < b) {
        return Err(Error::invalid("need a < b"));
    }
    if x0 == a || x0 == b {
        return Err(Error::DegenerateInterval { x0 });
    }
    if !(a < x0 && x0 < b) {
        return Err(Error::invalid(format!("x0 = {x0} must lie in (a, b)")));
    }
    let (l, r) = (x0 - a, b - x0);
    Ok(((l * l + r * r) / (3.0 * l * r)).sqrt())
}

/// Zero-drift CV limit, reflecting at `a`, absorbing at `b`.
pub fn limiting_cv_reflect_lower(a: f64, b: f64, x0: f64) -> Result<f64> {
    if !(a < b) {
        return Err(Error::invalid("need a < b"));
    }
    if x0 == b {
        return Err(Error::DegenerateInterval { x0 });
    }
    if !(a <= x0 && x0 < b) {
        return Err(Error::invalid(format!("x0 = {x0} must lie in [a, b)")));
    }
    let (l, w) = (x0 - a, b - a);
    Ok((2.0 * (l * l + w * w) / (3.0 * (b - x0) * (l + w))).sqrt())
}

/// Large-sigma CV limit for the problem's boundary kind.
pub fn limiting_cv(problem: &FptProblem) -> Result<f64> {
    let BoundaryConfig { a, b, kind } = problem.boundaries;
    match kind {
        BoundaryKind::BothAbsorbing => limiting_cv_both_absorbing(a, b, problem.x0),
        BoundaryKind::ReflectLowerAbsorbUpper => limiting_cv_reflect_lower(a, b, problem.x0),
    }
}

/// `n` log-spaced points from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi > lo && n >= 2, "log_grid needs 0 < lo < hi and n >= 2");
    let (l0, l1) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| {
            if i == 0 {
                lo
            } else if i == n - 1 {
                hi
            } else {
                (l0 + (l1 - l0) * i as f64 / (n - 1) as f64).exp()
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Trend {
    Increasing,
    Decreasing,
    InteriorMinimum,
    InteriorMaximum,
    Flat,
    Irregular,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrendSummary {
    pub trend: Trend,
    /// Last relative step change below 1e-3.
    pub plateau: bool,
    /// Swept value at the smallest entry.
    pub argmin: Option<f64>,
    pub min: Option<f64>,
}

/// Relative step size below which [`classify_trend`] treats neighbours as equal.
pub const TREND_RESOLUTION: f64 = 1e-8;

/// Shape of a sequence sampled on an increasing grid.
pub fn classify_trend(xs: &[f64], ys: &[f64]) -> TrendSummary {
    // steps below the moments' rounding floor (~2e-9 relative) count as ties
    let scale = ys.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let tol = TREND_RESOLUTION * scale;
    let signs: Vec<i8> = ys
        .windows(2)
        .map(|w| {
            let d = w[1] - w[0];
            if d > tol {
                1
            } else if d < -tol {
                -1
            } else {
                0
            }
        })
        .filter(|&s| s != 0)
        .collect();
    let mut changes = signs.windows(2).filter(|w| w[0] != w[1]);
    let trend = match (signs.first(), changes.next(), changes.next()) {
        (None, _, _) => Trend::Flat,
        (Some(1), None, _) => Trend::Increasing,
        (Some(-1), None, _) => Trend::Decreasing,
        (Some(-1), Some(_), None) => Trend::InteriorMinimum,
        (Some(1), Some(_), None) => Trend::InteriorMaximum,
        _ => Trend::Irregular,
    };
    let plateau = match ys {
        [.., p, q] => ((q - p) / q).abs() < 1e-3,
        _ => false,
    };
    let best = ys
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, &v)| (xs[i], v));
    TrendSummary {
        trend,
        plateau,
        argmin: best.map(|b| b.0),
        min: best.map(|b| b.1),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub summary: Option<MomentSummary>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    /// Name of the swept parameter.
    pub parameter: String,
    pub rows: Vec<SweepRow>,
    /// Zero-drift CV limit for reference, when defined.
    pub limiting_cv: Option<f64>,
    pub cv_trend: TrendSummary,
    pub mean_trend: TrendSummary,
}

impl SweepTable {
    fn assemble(parameter: &str, rows: Vec<SweepRow>, limiting_cv: Option<f64>) -> Self {
        let ok: Vec<(f64, MomentSummary)> = rows
            .iter()
            .filter_map(|r| r.summary.map(|s| (r.value, s)))
            .collect();
        let xs: Vec<f64> = ok.iter().map(|r| r.0).collect();
        let cvs: Vec<f64> = ok.iter().map(|r| r.1.cv).collect();
        let means: Vec<f64> = ok.iter().map(|r| r.1.mean).collect();
        SweepTable {
            parameter: parameter.to_string(),
            cv_trend: classify_trend(&xs, &cvs),
            mean_trend: classify_trend(&xs, &means),
            rows,
            limiting_cv,
        }
    }

    pub fn succeeded(&self) -> usize {
        self.rows.iter().filter(|r| r.summary.is_some()).count()
    }

    pub fn cvs(&self) -> Vec<f64> {
        self.rows.iter().filter_map(|r| r.summary.map(|s| s.cv)).collect()
    }

    pub fn means(&self) -> Vec<f64> {
        self.rows.iter().filter_map(|r| r.summary.map(|s| s.mean)).collect()
    }
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::invalid("grid is empty"));
    }
    if grid.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::invalid("grid values must be finite and > 0"));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("grid must be strictly increasing"));
    }
    Ok(())
}

fn row(value: f64, problem: Result<FptProblem>) -> SweepRow {
    match problem.and_then(|p| moment_summary(&p)) {
        Ok(s) => SweepRow {
            value,
            summary: Some(s),
            error: None,
        },
        Err(e) => SweepRow {
            value,
            summary: None,
            error: Some(e.to_string()),
        },
    }
}

/// Moments across a `sigma` grid with everything else fixed.
pub fn sweep_sigma(template: &FptProblem, sigma_grid: &[f64]) -> Result<SweepTable> {
    template.validate()?;
    check_grid(sigma_grid)?;
    let rows = sigma_grid
        .par_iter()
        .map(|&s| row(s, Ok(template.with_sigma(s))))
        .collect();
    Ok(SweepTable::assemble("sigma", rows, limiting_cv(template).ok()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum X0Rule {
    /// `x0 = 0`
    Center,
    /// `x0 = -b / 2`
    MinusHalfB,
    /// `x0 = b / 2`
    PlusHalfB,
}

impl X0Rule {
    pub fn x0(&self, b: f64) -> f64 {
        match self {
            X0Rule::Center => 0.0,
            X0Rule::MinusHalfB => -0.5 * b,
            X0Rule::PlusHalfB => 0.5 * b,
        }
    }
}

/// Moments across symmetric thresholds `a = -b` with `x0` tied to `b`.
pub fn sweep_threshold(
    kind: BoundaryKind,
    rule: X0Rule,
    b_grid: &[f64],
    params: ProcessParams,
) -> Result<SweepTable> {
    params.validate()?;
    check_grid(b_grid)?;
    let rows = b_grid
        .par_iter()
        .map(|&b| {
            row(
                b,
                FptProblem::build(params.theta, params.sigma, -b, b, rule.x0(b), kind),
            )
        })
        .collect();
    // the zero-drift limit only depends on x0 / b, so any grid point gives it
    let limit = FptProblem::build(params.theta, params.sigma, -1.0, 1.0, rule.x0(1.0), kind)
        .and_then(|p| limiting_cv(&p))
        .ok();
    Ok(SweepTable::assemble("b", rows, limit))
}
