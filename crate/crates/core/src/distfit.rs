//! Distance between the FPT law and a Gamma target through their
//! characteristic functions, and the parameter searches built on it.
//!
//! The distance is `(1 / 2 pi) int |psi_tau - psi_d|^2 d alpha`, which by
//! Parseval equals the squared L2 distance between the two densities. The
//! integrand is conjugate-symmetric, so only `[0, inf)` is integrated. The
//! half-line is covered by octaves `[0, A], [A, 2A], [2A, 4A], ...` until the
//! remaining tail is provably (or, without a closed form, empirically) below
//! `rel_tol` of `int |psi_tau|^2 + |psi_d|^2`.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::beta::{beta, beta_reg};

use crate::charfun::charfun_with_bound;
use crate::error::{Error, Result};
use crate::moments::{limiting_cv, log_grid, moment_summary};
use crate::optimize::{brent_minimize, brent_root};
use crate::problem::{BoundaryKind, FptProblem};
use crate::quadrature::integrate;

const MAX_PANELS: usize = 400;
/// Brent tolerance in `ln theta`; the final bracket is below 1e-4 relative.
const LOG_THETA_TOL: f64 = 2.5e-5;
const MAX_SEARCH_ITER: usize = 200;
/// A fit closer than this (in `ln theta`) to a bracket edge has no interior minimum.
const EDGE_MARGIN: f64 = 1e-3;
const CV_SWEEP_POINTS: usize = 48;
const MOMENT_TOL: f64 = 1e-3;

/// Anything with a characteristic function the distance can consume.
pub trait CharFn: Sync {
    /// `psi(alpha)` and an absolute error bound on it.
    fn eval(&self, alpha: f64) -> Result<(Complex64, f64)>;

    /// `int_cut^inf |psi|^2 d alpha` when known in closed form.
    fn tail_sq(&self, _cut: f64) -> Option<f64> {
        None
    }
}

impl CharFn for FptProblem {
    fn eval(&self, alpha: f64) -> Result<(Complex64, f64)> {
        charfun_with_bound(self, alpha)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaTarget {
    pub shape: f64,
    pub rate: f64,
}

impl GammaTarget {
    pub fn new(shape: f64, rate: f64) -> Result<Self> {
        let g = GammaTarget { shape, rate };
        g.validate()?;
        Ok(g)
    }

    /// Gamma law with the given mean and CV: `k = 1 / cv^2`, `beta = k / mean`.
    pub fn from_mean_cv(mean: f64, cv: f64) -> Result<Self> {
        if !(mean.is_finite() && mean > 0.0 && cv.is_finite() && cv > 0.0) {
            return Err(Error::invalid("mean and cv must be finite and > 0"));
        }
        let shape = 1.0 / (cv * cv);
        Self::new(shape, shape / mean)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.shape.is_finite() && self.shape > 0.0) {
            return Err(Error::invalid(format!("gamma shape = {} must be > 0", self.shape)));
        }
        if !(self.rate.is_finite() && self.rate > 0.0) {
            return Err(Error::invalid(format!("gamma rate = {} must be > 0", self.rate)));
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        self.shape / self.rate
    }

    pub fn cv(&self) -> f64 {
        1.0 / self.shape.sqrt()
    }
}

pub fn gamma_charfun(target: &GammaTarget, alpha: f64) -> Complex64 {
    Complex64::new(1.0, -alpha / target.rate).powf(-target.shape)
}

impl CharFn for GammaTarget {
    fn eval(&self, alpha: f64) -> Result<(Complex64, f64)> {
        let v = gamma_charfun(self, alpha);
        Ok((v, 4.0 * f64::EPSILON * v.norm()))
    }

    /// `int_A^inf (1 + t^2 / beta^2)^-k dt = beta / 2 B(k - 1/2, 1/2) I_x(k - 1/2, 1/2)`
    /// with `x = 1 / (1 + (A / beta)^2)`; infinite for `k <= 1/2`.
    fn tail_sq(&self, cut: f64) -> Option<f64> {
        let k = self.shape;
        if k <= 0.5 {
            return Some(f64::INFINITY);
        }
        let r = cut / self.rate;
        let x = 1.0 / (1.0 + r * r);
        Some(0.5 * self.rate * beta(k - 0.5, 0.5) * beta_reg(k - 0.5, 0.5, x))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadConfig {
    /// Width of the first octave in `alpha`.
    pub tail_cut: f64,
    pub rel_tol: f64,
    /// Number of times the cut may double.
    pub max_refinements: usize,
}

impl Default for QuadConfig {
    fn default() -> Self {
        QuadConfig {
            tail_cut: 8.0,
            rel_tol: 1e-8,
            max_refinements: 40,
        }
    }
}

impl QuadConfig {
    /// First octave spanning a few inverse target means.
    pub fn for_target(target: &GammaTarget) -> Self {
        QuadConfig {
            tail_cut: 4.0 / target.mean(),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tail_cut.is_finite() && self.tail_cut > 0.0) {
            return Err(Error::invalid("tail_cut must be > 0"));
        }
        if !(self.rel_tol > 0.0 && self.rel_tol < 1.0) {
            return Err(Error::invalid("rel_tol must lie in (0, 1)"));
        }
        if self.max_refinements == 0 {
            return Err(Error::invalid("max_refinements must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceReport {
    pub distance: f64,
    /// Final integration cut `A`.
    pub cut: f64,
    /// Tail bound or estimate at acceptance, in distance units.
    pub tail: f64,
    /// Propagated rounding error of the characteristic functions, in distance units.
    pub rounding: f64,
    pub evaluations: usize,
}

/// Distance between two characteristic functions.
pub fn distance_between(f: &dyn CharFn, g: &dyn CharFn, quad: &QuadConfig) -> Result<DistanceReport> {
    quad.validate()?;
    for side in [f, g] {
        if side.tail_sq(quad.tail_cut) == Some(f64::INFINITY) {
            return Err(Error::TailNotConverged {
                bound: f64::INFINITY,
                cut: quad.tail_cut,
            });
        }
    }
    let integrand = |alpha: f64| -> Result<[f64; 6]> {
        let (fv, fb) = f.eval(alpha)?;
        let (gv, gb) = g.eval(alpha)?;
        let diff = (fv - gv).norm();
        let (fa, ga) = (fv.norm(), gv.norm());
        let err = fb + gb;
        Ok([diff * diff, fa * fa + ga * ga, fa * fa, ga * ga, fa * ga, err * (2.0 * diff + err)])
    };
    // components: 0 |f-g|^2, 1 |f|^2 + |g|^2, 2 |f|^2, 3 |g|^2, 4 |f||g|, 5 rounding
    let mut total = [0.0; 6];
    let mut evaluations = 0;
    let (mut lo, mut hi) = (0.0, quad.tail_cut);
    let mut relative_tail = f64::NAN;
    for _ in 0..=quad.max_refinements {
        let abs_tol = 0.1 * quad.rel_tol * total[1];
        let octave = integrate(integrand, lo, hi, abs_tol, 0.1 * quad.rel_tol, 1, MAX_PANELS)?;
        evaluations += octave.evaluations;
        for i in 0..6 {
            total[i] += octave.values[i];
        }
        let last = octave.values;
        let (tail, added) = match (f.tail_sq(hi), g.tail_sq(hi)) {
            (Some(tf), Some(tg)) => ((tf.sqrt() + tg.sqrt()).powi(2), 0.0),
            (None, Some(tg)) => (last[2] + 2.0 * last[4], tg),
            (Some(tf), None) => (last[3] + 2.0 * last[4], tf),
            (None, None) => (last[0], 0.0),
        };
        let scale = total[1] + added;
        relative_tail = tail / scale;
        if relative_tail <= quad.rel_tol {
            if total[5] > quad.rel_tol * scale {
                return Err(Error::PrecisionLoss {
                    alpha: hi,
                    bound: total[5] / scale,
                });
            }
            let pi = std::f64::consts::PI;
            return Ok(DistanceReport {
                distance: (total[0] + added) / pi,
                cut: hi,
                tail: tail / pi,
                rounding: total[5] / pi,
                evaluations,
            });
        }
        lo = hi;
        hi *= 2.0;
    }
    Err(Error::TailNotConverged {
        bound: relative_tail,
        cut: lo,
    })
}

/// Distance between the FPT law of `problem` and `target`.
pub fn parseval_distance(problem: &FptProblem, target: &GammaTarget, quad: &QuadConfig) -> Result<f64> {
    problem.validate()?;
    target.validate()?;
    Ok(distance_between(problem, target, quad)?.distance)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    Converged,
    /// Objective monotone over the bracket; the better endpoint is returned.
    NoInteriorMinimum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub theta_opt: f64,
    /// The template's sigma unless sigma was searched.
    pub sigma_opt: f64,
    /// Parseval distance, or for moment targeting the largest relative
    /// moment residual.
    pub distance: f64,
    pub evaluations: usize,
    pub converged: bool,
    pub termination: Termination,
    /// `(parameter, objective)` in evaluation order.
    pub bracket_history: Vec<(f64, f64)>,
    pub achieved_mean: Option<f64>,
    pub achieved_cv: Option<f64>,
}

fn check_bracket(lo: f64, hi: f64) -> Result<()> {
    if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo < hi) {
        return Err(Error::invalid(format!("bracket ({lo}, {hi}) needs 0 < lo < hi")));
    }
    Ok(())
}

/// Minimize the distance over `theta` in `bracket` at the template's sigma.
pub fn fit_theta(
    template: &FptProblem,
    target: &GammaTarget,
    bracket: (f64, f64),
    quad: &QuadConfig,
) -> Result<FitResult> {
    template.validate()?;
    target.validate()?;
    quad.validate()?;
    let (lo, hi) = bracket;
    check_bracket(lo, hi)?;
    let objective = |t: f64| parseval_distance(&template.with_theta(t), target, quad);
    let mid = (lo * hi).sqrt();
    let f_mid = objective(mid)?;
    if !f_mid.is_finite() {
        return Err(Error::SearchFailed("objective at the bracket midpoint is not finite".into()));
    }
    let m = brent_minimize(
        |lt: f64| objective(lt.exp()),
        lo.ln(),
        hi.ln(),
        0.0,
        LOG_THETA_TOL,
        MAX_SEARCH_ITER,
    )?;
    let mut history: Vec<(f64, f64)> = vec![(mid, f_mid)];
    history.extend(m.history.iter().map(|&(lt, v)| (lt.exp(), v)));
    let mut evaluations = m.evaluations + 1;
    let at_edge = m.x - lo.ln() < EDGE_MARGIN || hi.ln() - m.x < EDGE_MARGIN;
    if at_edge {
        let f_lo = objective(lo)?;
        let f_hi = objective(hi)?;
        history.push((lo, f_lo));
        history.push((hi, f_hi));
        evaluations += 2;
        let (theta, d) = if f_lo <= f_hi { (lo, f_lo) } else { (hi, f_hi) };
        return Ok(FitResult {
            theta_opt: theta,
            sigma_opt: template.sigma(),
            distance: d,
            evaluations,
            converged: false,
            termination: Termination::NoInteriorMinimum,
            bracket_history: history,
            achieved_mean: None,
            achieved_cv: None,
        });
    }
    Ok(FitResult {
        theta_opt: m.x.exp(),
        sigma_opt: template.sigma(),
        distance: m.fx,
        evaluations,
        converged: true,
        termination: Termination::Converged,
        bracket_history: history,
        achieved_mean: None,
        achieved_cv: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridScan {
    pub thetas: Vec<f64>,
    pub distances: Vec<f64>,
    /// Grid minimizer refined by the parabola through it and its neighbours
    /// in `ln theta`.
    pub theta_best: f64,
    pub interior: bool,
}

/// Exhaustive log-grid evaluation of the distance, the oracle for [`fit_theta`].
pub fn grid_scan_theta(
    template: &FptProblem,
    target: &GammaTarget,
    bracket: (f64, f64),
    n: usize,
    quad: &QuadConfig,
) -> Result<GridScan> {
    check_bracket(bracket.0, bracket.1)?;
    if n < 3 {
        return Err(Error::invalid("grid scan needs at least 3 points"));
    }
    let thetas = log_grid(bracket.0, bracket.1, n);
    let distances = thetas
        .par_iter()
        .map(|&t| parseval_distance(&template.with_theta(t), target, quad))
        .collect::<Result<Vec<f64>>>()?;
    let i = distances
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap();
    let interior = i > 0 && i + 1 < n;
    let theta_best = if interior {
        let (x0, x1, x2) = (thetas[i - 1].ln(), thetas[i].ln(), thetas[i + 1].ln());
        let (y0, y1, y2) = (distances[i - 1], distances[i], distances[i + 1]);
        let num = (x1 - x0).powi(2) * (y1 - y2) - (x1 - x2).powi(2) * (y1 - y0);
        let den = (x1 - x0) * (y1 - y2) - (x1 - x2) * (y1 - y0);
        if den != 0.0 {
            (x1 - 0.5 * num / den).exp()
        } else {
            thetas[i]
        }
    } else {
        thetas[i]
    };
    Ok(GridScan {
        thetas,
        distances,
        theta_best,
        interior,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaFit {
    pub sigma: f64,
    pub fit: Option<FitResult>,
    pub error: Option<String>,
}

/// [`fit_theta`] at every sigma of the grid; failures are recorded per point.
pub fn fit_theta_sigma(
    template: &FptProblem,
    target: &GammaTarget,
    sigma_grid: &[f64],
    bracket: (f64, f64),
    quad: &QuadConfig,
) -> Result<Vec<SigmaFit>> {
    template.validate()?;
    if sigma_grid.is_empty() || sigma_grid.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(Error::invalid("sigma grid must be non-empty with values > 0"));
    }
    if sigma_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("sigma grid must be strictly increasing"));
    }
    Ok(sigma_grid
        .par_iter()
        .map(|&sigma| match fit_theta(&template.with_sigma(sigma), target, bracket, quad) {
            Ok(fit) => SigmaFit {
                sigma,
                fit: Some(fit),
                error: None,
            },
            Err(e) => SigmaFit {
                sigma,
                fit: None,
                error: Some(e.to_string()),
            },
        })
        .collect())
}

/// Pick sigma so the CV matches, then theta so the mean matches.
///
/// CV does not depend on theta, so the sigma search runs at theta = 1. When
/// several sigmas hit the target CV (around the reflecting dip), the smallest
/// one is returned.
pub fn solve_for_moments(
    target_mean: f64,
    target_cv: f64,
    template: &FptProblem,
    sigma_bracket: (f64, f64),
) -> Result<FitResult> {
    template.validate()?;
    if !(target_mean.is_finite() && target_mean > 0.0 && target_cv.is_finite() && target_cv > 0.0) {
        return Err(Error::invalid("target mean and cv must be finite and > 0"));
    }
    let (lo, hi) = sigma_bracket;
    check_bracket(lo, hi)?;
    let unit = template.with_theta(1.0);
    let cv_at = |sigma: f64| moment_summary(&unit.with_sigma(sigma)).map(|s| s.cv);
    let sigmas = log_grid(lo, hi, CV_SWEEP_POINTS);
    // points where the moments cannot be evaluated are dropped from the sweep
    let (sigmas, cvs): (Vec<f64>, Vec<f64>) = sigmas
        .par_iter()
        .map(|&s| (s, cv_at(s)))
        .collect::<Vec<_>>()
        .into_iter()
        .filter_map(|(s, c)| c.ok().map(|c| (s, c)))
        .unzip();
    if sigmas.len() < 2 {
        return Err(Error::SearchFailed("CV could not be evaluated across the sigma bracket".into()));
    }
    let mut history: Vec<(f64, f64)> = sigmas.iter().copied().zip(cvs.iter().copied()).collect();
    let crossing = (0..sigmas.len() - 1).find(|&i| (cvs[i] - target_cv) * (cvs[i + 1] - target_cv) <= 0.0);
    let Some(i) = crossing else {
        return Err(unreachable_cv(target_cv, &unit, &sigmas, &cvs));
    };
    let log_sigma = brent_root(
        |ls: f64| {
            let c = cv_at(ls.exp())?;
            history.push((ls.exp(), c));
            Ok(c - target_cv)
        },
        sigmas[i].ln(),
        sigmas[i + 1].ln(),
        1e-12,
        MAX_SEARCH_ITER,
    )?;
    let sigma = log_sigma.exp();
    let at_unit = moment_summary(&unit.with_sigma(sigma))?;
    // mean scales as 1 / theta
    let theta = at_unit.mean / target_mean;
    let check = moment_summary(&template.with_theta(theta).with_sigma(sigma))?;
    let residual = ((check.mean - target_mean) / target_mean)
        .abs()
        .max(((check.cv - target_cv) / target_cv).abs());
    if residual > MOMENT_TOL {
        return Err(Error::SearchFailed(format!(
            "moment targeting missed by {residual:e} relative"
        )));
    }
    Ok(FitResult {
        theta_opt: theta,
        sigma_opt: sigma,
        distance: residual,
        evaluations: history.len() + 2,
        converged: true,
        termination: Termination::Converged,
        bracket_history: history,
        achieved_mean: Some(check.mean),
        achieved_cv: Some(check.cv),
    })
}

/// `CvUnreachable` with the achievable range over the bracket. Below the
/// zero-drift limit of a both-absorbing problem the infimum over all sigma is
/// reported instead; for the reflecting kind the dip minimum is refined.
fn unreachable_cv(target: f64, unit: &FptProblem, sigmas: &[f64], cvs: &[f64]) -> Error {
    let upper = cvs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (imin, mut lower) = cvs
        .iter()
        .copied()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    match unit.kind() {
        BoundaryKind::BothAbsorbing => {
            if let Ok(limit) = limiting_cv(unit) {
                if target < limit {
                    lower = limit;
                }
            }
        }
        BoundaryKind::ReflectLowerAbsorbUpper => {
            if imin > 0 && imin + 1 < sigmas.len() {
                let refined = brent_minimize(
                    |ls: f64| moment_summary(&unit.with_sigma(ls.exp())).map(|s| s.cv),
                    sigmas[imin - 1].ln(),
                    sigmas[imin + 1].ln(),
                    0.0,
                    1e-6,
                    MAX_SEARCH_ITER,
                );
                if let Ok(m) = refined {
                    lower = lower.min(m.fx);
                }
            }
        }
    }
    Error::CvUnreachable { target, lower, upper }
}
