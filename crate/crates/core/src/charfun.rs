//! Characteristic function `psi(alpha) = E[exp(i alpha tau)]` of the first
//! passage time.
//!
//! `g(y) = E[exp(i alpha tau(y))]` solves the backward equation
//! `sigma^2 theta / 2 g'' - theta y g' + i alpha g = 0`, whose general solution
//! is `c0 E(y) + c1 y F(y)` with
//!
//! ```text
//! E(y) = 1F1(-i u / 2, 1/2, y^2 / sigma^2)
//! F(y) = 1F1((1 - i u) / 2, 3/2, y^2 / sigma^2),     u = alpha / theta
//! ```
//!
//! The boundary conditions fix `c0, c1` and `psi = g(x0)`. `theta` only ever
//! enters through `u`, which is the scale invariance of the FPT law.
//!
//! All hypergeometric values stay in scaled form until the final ratio, and
//! every quantity carries the magnitude of the terms that were summed to
//! produce it. That magnitude gives a cancellation bound for the final `psi`;
//! results whose bound exceeds [`PSI_ERROR_LIMIT`] are rejected.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{BoundaryConfig, BoundaryKind, FptProblem, ProcessParams};
use crate::specialfn::{kummer_sum, ComplexValue, KummerSum, ScaledComplex};

/// Largest accepted absolute error bound on a returned `psi`.
pub const PSI_ERROR_LIMIT: f64 = 1.0e-7;

const ROUNDING_FACTOR: f64 = 4.0 * f64::EPSILON;
const SINGULAR_REL: f64 = 1.0e-300;
const SINGLE_THRESHOLD_TOL: f64 = 1.0e-8;

#[derive(Debug, Clone, Copy)]
struct Tracked {
    v: ScaledComplex,
    mag: ScaledComplex,
}

impl Tracked {
    fn from_sum(s: KummerSum) -> Self {
        Tracked {
            v: s.value,
            mag: s.magnitude,
        }
    }

    fn scale(self, c: Complex64) -> Self {
        Tracked {
            v: self.v.scale(c),
            mag: self.mag.scale(Complex64::new(c.norm(), 0.0)),
        }
    }

    fn mul(self, o: Tracked) -> Self {
        Tracked {
            v: self.v * o.v,
            mag: self.mag * o.mag,
        }
    }

    fn add(self, o: Tracked) -> Self {
        Tracked {
            v: self.v + o.v,
            mag: self.mag + o.mag,
        }
    }
}

fn i_times(x: f64) -> Complex64 {
    Complex64::new(0.0, x)
}

/// The two independent solutions of the backward equation at fixed `alpha`.
#[derive(Debug, Clone, Copy)]
pub struct BasisPair {
    params: ProcessParams,
    alpha: f64,
}

impl BasisPair {
    pub fn new(params: ProcessParams, alpha: f64) -> Result<Self> {
        params.validate()?;
        if !alpha.is_finite() {
            return Err(Error::invalid("alpha must be finite"));
        }
        Ok(BasisPair { params, alpha })
    }

    fn u(&self) -> f64 {
        self.alpha / self.params.theta
    }

    fn z(&self, y: f64) -> f64 {
        let r = y / self.params.sigma;
        r * r
    }

    fn even_tracked(&self, y: f64) -> Result<Tracked> {
        let a = Complex64::new(0.0, -0.5 * self.u());
        kummer_sum(a, 0.5, self.z(y)).map(Tracked::from_sum)
    }

    /// `F(y)`; the odd solution is `y F(y)`.
    fn odd_factor_tracked(&self, y: f64) -> Result<Tracked> {
        let a = Complex64::new(0.5, -0.5 * self.u());
        kummer_sum(a, 1.5, self.z(y)).map(Tracked::from_sum)
    }

    /// `1F1(1 - i u / 2, 3/2, y^2 / sigma^2)`, from `E'(y)`.
    fn even_derivative_factor(&self, y: f64) -> Result<Tracked> {
        let a = Complex64::new(1.0, -0.5 * self.u());
        kummer_sum(a, 1.5, self.z(y)).map(Tracked::from_sum)
    }

    /// `1F1(3/2 - i u / 2, 5/2, y^2 / sigma^2)`, from `(y F(y))'`.
    fn odd_derivative_factor(&self, y: f64) -> Result<Tracked> {
        let a = Complex64::new(1.5, -0.5 * self.u());
        kummer_sum(a, 2.5, self.z(y)).map(Tracked::from_sum)
    }

    pub fn even(&self, y: f64) -> Result<ComplexValue> {
        finite(self.even_tracked(y)?.v.to_complex(), "even basis")
    }

    pub fn odd(&self, y: f64) -> Result<ComplexValue> {
        finite(self.odd_factor_tracked(y)?.v.to_complex() * y, "odd basis")
    }

    /// `E'(y) = -2 i u y / sigma^2 * 1F1(1 - i u/2, 3/2, z)`
    pub fn even_derivative(&self, y: f64) -> Result<ComplexValue> {
        let s2 = self.params.sigma * self.params.sigma;
        let g = self.even_derivative_factor(y)?.v.to_complex();
        finite(g * i_times(-2.0 * self.u() * y / s2), "even derivative")
    }

    /// `(y F)'(y) = F(y) + 2 y^2 (1 - i u) / (3 sigma^2) * 1F1(3/2 - i u/2, 5/2, z)`
    pub fn odd_derivative(&self, y: f64) -> Result<ComplexValue> {
        let s2 = self.params.sigma * self.params.sigma;
        let f = self.odd_factor_tracked(y)?.v.to_complex();
        let h = self.odd_derivative_factor(y)?.v.to_complex();
        finite(
            f + h * Complex64::new(1.0, -self.u()) * (2.0 * y * y / (3.0 * s2)),
            "odd derivative",
        )
    }

    /// `3 sigma^2 (y F)'(y)` and `-3 sigma^2 E'(y)`, tracked.
    fn wall_terms(&self, y: f64) -> Result<(Tracked, Tracked)> {
        let s2 = self.params.sigma * self.params.sigma;
        let u = self.u();
        let f = self.odd_factor_tracked(y)?;
        let h = self.odd_derivative_factor(y)?;
        let g = self.even_derivative_factor(y)?;
        let p = f
            .scale(Complex64::new(3.0 * s2, 0.0))
            .add(h.scale(Complex64::new(1.0, -u) * (2.0 * y * y)));
        let q = g.scale(i_times(6.0 * u * y));
        Ok((p, q))
    }
}

fn finite(z: Complex64, what: &str) -> Result<Complex64> {
    if z.re.is_finite() && z.im.is_finite() {
        Ok(z)
    } else {
        Err(Error::Overflow(what.to_string()))
    }
}

fn log2_ratio(num: &ScaledComplex, den: &ScaledComplex) -> f64 {
    num.log2_norm() - den.log2_norm()
}

/// `num / den` with its absolute rounding bound.
fn bounded_ratio(num: Tracked, den: Tracked) -> Result<(Complex64, f64)> {
    if den.v.is_zero() || log2_ratio(&den.v, &den.mag) < SINGULAR_REL.log2() {
        let det = if den.v.is_zero() {
            0.0
        } else {
            log2_ratio(&den.v, &den.mag).exp2()
        };
        return Err(Error::SingularSystem { det });
    }
    let psi = finite(num.v.ratio(&den.v), "psi ratio")?;
    let bound = ROUNDING_FACTOR
        * (log2_ratio(&num.mag, &den.v).exp2() + psi.norm() * log2_ratio(&den.mag, &den.v).exp2());
    Ok((psi, bound))
}

fn checked_ratio(num: Tracked, den: Tracked, alpha: f64) -> Result<Complex64> {
    let (psi, bound) = bounded_ratio(num, den)?;
    if !(bound <= PSI_ERROR_LIMIT) {
        return Err(Error::PrecisionLoss { alpha, bound });
    }
    Ok(psi)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid("alpha must be finite"))
    }
}

/// `(N, D)` of the both-absorbing ratio, `psi = N / D`.
fn both_absorbing_parts(problem: &FptProblem, alpha: f64) -> Result<(Tracked, Tracked)> {
    let BoundaryConfig { a, b, .. } = problem.boundaries;
    let x0 = problem.x0;
    let basis = BasisPair::new(problem.params, alpha)?;
    let (ea, fa) = (basis.even_tracked(a)?, basis.odd_factor_tracked(a)?);
    let (eb, fb) = (basis.even_tracked(b)?, basis.odd_factor_tracked(b)?);
    let (ex, fx) = (basis.even_tracked(x0)?, basis.odd_factor_tracked(x0)?);
    let re = |x: f64| Complex64::new(x, 0.0);
    let n = ea
        .mul(fx)
        .scale(re(-x0))
        .add(fa.mul(ex).scale(re(a)))
        .add(fb.mul(ex).scale(re(-b)))
        .add(eb.mul(fx).scale(re(x0)));
    let d = fa.mul(eb).scale(re(a)).add(ea.mul(fb).scale(re(-b)));
    Ok((n, d))
}

/// `(N, D)` of the reflect-lower ratio after imposing `g'(a) = 0`, `g(b) = 1`.
fn reflect_lower_parts(problem: &FptProblem, alpha: f64) -> Result<(Tracked, Tracked)> {
    let BoundaryConfig { a, b, .. } = problem.boundaries;
    let x0 = problem.x0;
    let basis = BasisPair::new(problem.params, alpha)?;
    let (p, q) = basis.wall_terms(a)?;
    let (eb, fb) = (basis.even_tracked(b)?, basis.odd_factor_tracked(b)?);
    let (ex, fx) = (basis.even_tracked(x0)?, basis.odd_factor_tracked(x0)?);
    let re = |x: f64| Complex64::new(x, 0.0);
    let n = p.mul(ex).add(q.mul(fx).scale(re(x0)));
    let d = p.mul(eb).add(q.mul(fb).scale(re(b)));
    Ok((n, d))
}

/// Coefficients `(c0, c1)` of `g(y) = c0 E(y) + c1 y F(y)` satisfying the
/// boundary conditions of `problem`.
pub fn solve_boundary_coeffs(
    problem: &FptProblem,
    alpha: f64,
) -> Result<(ComplexValue, ComplexValue)> {
    problem.validate()?;
    check_alpha(alpha)?;
    let BoundaryConfig { a, b, kind } = problem.boundaries;
    let basis = BasisPair::new(problem.params, alpha)?;
    let re = |x: f64| Complex64::new(x, 0.0);
    let (eb, fb) = (basis.even_tracked(b)?, basis.odd_factor_tracked(b)?);
    // Both kinds reduce to c0 = n0 / D, c1 = n1 / D with D from the parts above.
    let (n0, n1, d) = match kind {
        BoundaryKind::BothAbsorbing => {
            let (ea, fa) = (basis.even_tracked(a)?, basis.odd_factor_tracked(a)?);
            let d = fa.mul(eb).scale(re(a)).add(ea.mul(fb).scale(re(-b)));
            // det = E(a) O(b) - O(a) E(b) = -D
            let n0 = fa.scale(re(a)).add(fb.scale(re(-b)));
            let n1 = eb.add(ea.scale(re(-1.0)));
            (n0, n1, d)
        }
        BoundaryKind::ReflectLowerAbsorbUpper => {
            let (p, q) = basis.wall_terms(a)?;
            let d = p.mul(eb).add(q.mul(fb).scale(re(b)));
            (p, q, d)
        }
    };
    if d.v.is_zero() || log2_ratio(&d.v, &d.mag) < SINGULAR_REL.log2() {
        return Err(Error::SingularSystem {
            det: log2_ratio(&d.v, &d.mag).exp2(),
        });
    }
    let c0 = finite(n0.v.ratio(&d.v), "c0")?;
    let c1 = finite(n1.v.ratio(&d.v), "c1")?;
    Ok((c0, c1))
}

/// Both thresholds absorbing.
pub fn charfun_both_absorbing(problem: &FptProblem, alpha: f64) -> Result<ComplexValue> {
    problem.validate()?;
    check_alpha(alpha)?;
    if problem.kind() != BoundaryKind::BothAbsorbing {
        return Err(Error::invalid("charfun_both_absorbing needs absorb-absorb boundaries"));
    }
    if alpha == 0.0 || problem.starts_absorbed() {
        return Ok(Complex64::new(1.0, 0.0));
    }
    let (n, d) = both_absorbing_parts(problem, alpha)?;
    checked_ratio(n, d, alpha)
}

/// Reflecting at `a`, absorbing at `b`.
pub fn charfun_reflect_lower(problem: &FptProblem, alpha: f64) -> Result<ComplexValue> {
    problem.validate()?;
    check_alpha(alpha)?;
    if problem.kind() != BoundaryKind::ReflectLowerAbsorbUpper {
        return Err(Error::invalid("charfun_reflect_lower needs reflect-absorb boundaries"));
    }
    if alpha == 0.0 || problem.starts_absorbed() {
        return Ok(Complex64::new(1.0, 0.0));
    }
    let (n, d) = reflect_lower_parts(problem, alpha)?;
    checked_ratio(n, d, alpha)
}

/// Dispatch on the boundary kind.
pub fn charfun(problem: &FptProblem, alpha: f64) -> Result<ComplexValue> {
    match problem.kind() {
        BoundaryKind::BothAbsorbing => charfun_both_absorbing(problem, alpha),
        BoundaryKind::ReflectLowerAbsorbUpper => charfun_reflect_lower(problem, alpha),
    }
}

/// `psi` with its absolute error bound, without applying [`PSI_ERROR_LIMIT`].
///
/// For callers that can decide themselves whether an inaccurate value still
/// matters, e.g. deep in an integrand tail where `|psi|` is negligible.
pub fn charfun_with_bound(problem: &FptProblem, alpha: f64) -> Result<(ComplexValue, f64)> {
    problem.validate()?;
    check_alpha(alpha)?;
    if alpha == 0.0 || problem.starts_absorbed() {
        return Ok((Complex64::new(1.0, 0.0), 0.0));
    }
    let (n, d) = match problem.kind() {
        BoundaryKind::BothAbsorbing => both_absorbing_parts(problem, alpha)?,
        BoundaryKind::ReflectLowerAbsorbUpper => reflect_lower_parts(problem, alpha)?,
    };
    bounded_ratio(n, d)
}

/// Pointwise evaluation on a grid; every point is independent.
pub fn charfun_grid(problem: &FptProblem, alphas: &[f64]) -> Vec<Result<ComplexValue>> {
    alphas.par_iter().map(|&al| charfun(problem, al)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Approach {
    /// Start above the threshold; the process must fall to it.
    FromAbove,
    /// Start below the threshold; the process must rise to it.
    FromBelow,
}

fn far_boundary_problem(
    x0: f64,
    threshold: f64,
    approach: Approach,
    params: ProcessParams,
    distance: f64,
) -> Result<FptProblem> {
    let (a, b) = match approach {
        Approach::FromAbove => (threshold, x0 + distance),
        Approach::FromBelow => (x0 - distance, threshold),
    };
    FptProblem::build(params.theta, params.sigma, a, b, x0, BoundaryKind::BothAbsorbing)
}

/// One absorbing threshold; the opposite threshold is pushed out until
/// doubling its distance no longer changes `psi`.
pub fn charfun_single_threshold(
    x0: f64,
    threshold: f64,
    approach: Approach,
    params: ProcessParams,
    alpha: f64,
) -> Result<ComplexValue> {
    params.validate()?;
    check_alpha(alpha)?;
    if !(x0.is_finite() && threshold.is_finite()) {
        return Err(Error::invalid("x0 and threshold must be finite"));
    }
    match approach {
        Approach::FromAbove if x0 <= threshold => {
            return Err(Error::invalid("FromAbove needs x0 > threshold"))
        }
        Approach::FromBelow if x0 >= threshold => {
            return Err(Error::invalid("FromBelow needs x0 < threshold"))
        }
        _ => {}
    }
    if alpha == 0.0 {
        return Ok(Complex64::new(1.0, 0.0));
    }
    let distance = (40.0 * params.sigma).max(40.0 * (x0 - threshold).abs());
    let near = charfun(&far_boundary_problem(x0, threshold, approach, params, distance)?, alpha)?;
    let far = charfun(
        &far_boundary_problem(x0, threshold, approach, params, 2.0 * distance)?,
        alpha,
    )?;
    let change = (far - near).norm();
    if change > SINGLE_THRESHOLD_TOL {
        return Err(Error::LimitNotConverged { change });
    }
    Ok(far)
}

/// Two absorbing thresholds with an arbitrary start. Outside `(a, b)` the
/// nearer threshold is always hit first, so the problem reduces to a single
/// threshold.
pub fn charfun_from_any_start(
    x0: f64,
    a: f64,
    b: f64,
    params: ProcessParams,
    alpha: f64,
) -> Result<ComplexValue> {
    BoundaryConfig::new(a, b, BoundaryKind::BothAbsorbing)?;
    if x0 < a {
        charfun_single_threshold(x0, a, Approach::FromBelow, params, alpha)
    } else if x0 > b {
        charfun_single_threshold(x0, b, Approach::FromAbove, params, alpha)
    } else {
        let problem = FptProblem::build(
            params.theta,
            params.sigma,
            a,
            b,
            x0,
            BoundaryKind::BothAbsorbing,
        )?;
        charfun_both_absorbing(&problem, alpha)
    }
}
