//! Kummer's confluent hypergeometric function `1F1(a; b; z)` with a complex
//! first parameter and real `b > 0`, `z >= 0`.
//!
//! Every call site in this crate has `z = y^2 / sigma^2 >= 0`, so the defining
//! series is summed directly. Intermediate values are carried in a
//! `(mantissa, power-of-two exponent)` form so that `z` in the thousands does
//! not overflow; see [`ScaledComplex`].

use std::ops::{Add, Mul, Neg, Sub};

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Complex scalar used throughout the crate.
pub type ComplexValue = Complex64;

/// Term cap for the hypergeometric series.
pub const MAX_TERMS: usize = 20_000;

/// Largest `z` accepted by the unscaled [`kummer_1f1`].
pub const UNSCALED_Z_LIMIT: f64 = 700.0;

const RESCALE_ABOVE: f64 = 1.0e180; // ~2^598
const RESCALE_BITS: i64 = 598;
const STOP_REL: f64 = 1.0e-16;
const STOP_RUN: usize = 3;

/// Multiply `x` by `2^k` without forming an out-of-range power.
pub fn ldexp(mut x: f64, mut k: i64) -> f64 {
    while k > 1000 {
        x *= f64::from_bits(((1000 + 1023) as u64) << 52);
        k -= 1000;
        if x.is_infinite() {
            return x;
        }
    }
    while k < -1000 {
        x *= f64::from_bits(((-1000i64 + 1023) as u64) << 52);
        k += 1000;
        if x == 0.0 {
            return x;
        }
    }
    x * f64::from_bits(((k + 1023) as u64) << 52)
}

/// `mantissa * 2^exponent2`. After [`ScaledComplex::normalized`], `|mantissa|`
/// lies in `[0.5, 2)` unless the value is zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaledComplex {
    pub mantissa: Complex64,
    pub exponent2: i64,
}

impl ScaledComplex {
    pub const ZERO: ScaledComplex = ScaledComplex {
        mantissa: Complex64::new(0.0, 0.0),
        exponent2: 0,
    };
    pub const ONE: ScaledComplex = ScaledComplex {
        mantissa: Complex64::new(1.0, 0.0),
        exponent2: 0,
    };

    pub fn new(mantissa: Complex64, exponent2: i64) -> Self {
        ScaledComplex {
            mantissa,
            exponent2,
        }
        .normalized()
    }

    pub fn from_complex(z: Complex64) -> Self {
        Self::new(z, 0)
    }

    pub fn from_real(x: f64) -> Self {
        Self::new(Complex64::new(x, 0.0), 0)
    }

    pub fn is_zero(&self) -> bool {
        self.mantissa.re == 0.0 && self.mantissa.im == 0.0
    }

    pub fn normalized(self) -> Self {
        if self.is_zero() {
            return Self::ZERO;
        }
        let mag = self.mantissa.norm();
        let shift = mag.log2().floor() as i64;
        ScaledComplex {
            mantissa: Complex64::new(
                ldexp(self.mantissa.re, -shift),
                ldexp(self.mantissa.im, -shift),
            ),
            exponent2: self.exponent2 + shift,
        }
    }

    /// Plain complex value; may overflow to infinity or underflow to zero.
    pub fn to_complex(&self) -> Complex64 {
        Complex64::new(
            ldexp(self.mantissa.re, self.exponent2),
            ldexp(self.mantissa.im, self.exponent2),
        )
    }

    pub fn norm(&self) -> ScaledComplex {
        ScaledComplex::new(Complex64::new(self.mantissa.norm(), 0.0), self.exponent2)
    }

    /// `log2 |value|`, `-inf` for zero.
    pub fn log2_norm(&self) -> f64 {
        if self.is_zero() {
            f64::NEG_INFINITY
        } else {
            self.mantissa.norm().log2() + self.exponent2 as f64
        }
    }

    pub fn conj(&self) -> Self {
        ScaledComplex {
            mantissa: self.mantissa.conj(),
            exponent2: self.exponent2,
        }
    }

    pub fn scale(self, c: Complex64) -> Self {
        ScaledComplex::new(self.mantissa * c, self.exponent2)
    }

    /// Ratio of two scaled values as a plain complex number; exponents cancel
    /// before conversion.
    pub fn ratio(&self, den: &ScaledComplex) -> Complex64 {
        let m = self.mantissa / den.mantissa;
        Complex64::new(
            ldexp(m.re, self.exponent2 - den.exponent2),
            ldexp(m.im, self.exponent2 - den.exponent2),
        )
    }
}

impl Mul for ScaledComplex {
    type Output = ScaledComplex;
    fn mul(self, rhs: Self) -> Self {
        ScaledComplex::new(self.mantissa * rhs.mantissa, self.exponent2 + rhs.exponent2)
    }
}

impl Add for ScaledComplex {
    type Output = ScaledComplex;
    fn add(self, rhs: Self) -> Self {
        if self.is_zero() {
            return rhs;
        }
        if rhs.is_zero() {
            return self;
        }
        let (hi, lo) = if self.exponent2 >= rhs.exponent2 {
            (self, rhs)
        } else {
            (rhs, self)
        };
        let shift = lo.exponent2 - hi.exponent2;
        let lo_m = Complex64::new(ldexp(lo.mantissa.re, shift), ldexp(lo.mantissa.im, shift));
        ScaledComplex::new(hi.mantissa + lo_m, hi.exponent2)
    }
}

impl Neg for ScaledComplex {
    type Output = ScaledComplex;
    fn neg(self) -> Self {
        ScaledComplex {
            mantissa: -self.mantissa,
            exponent2: self.exponent2,
        }
    }
}

impl Sub for ScaledComplex {
    type Output = ScaledComplex;
    fn sub(self, rhs: Self) -> Self {
        self + (-rhs)
    }
}

/// A summed series together with the sum of the magnitudes of its terms.
/// `magnitude / |value|` bounds the cancellation the sum went through.
#[derive(Debug, Clone, Copy)]
pub struct KummerSum {
    pub value: ScaledComplex,
    pub magnitude: ScaledComplex,
    pub terms: usize,
}

fn check_args(a: Complex64, b: f64, z: f64) -> Result<()> {
    if !(a.re.is_finite() && a.im.is_finite()) {
        return Err(Error::invalid(format!("1F1 parameter a = {a} is not finite")));
    }
    if !(b.is_finite() && b > 0.0) {
        return Err(Error::invalid(format!("1F1 parameter b = {b} must be > 0")));
    }
    if !(z.is_finite() && z >= 0.0) {
        return Err(Error::invalid(format!("1F1 argument z = {z} must be >= 0")));
    }
    Ok(())
}

/// Sum of `(a)_n / (b)_n z^n / n!` with magnitude tracking.
pub fn kummer_sum(a: Complex64, b: f64, z: f64) -> Result<KummerSum> {
    check_args(a, b, z)?;
    let mut term = Complex64::new(1.0, 0.0);
    let mut sum = term;
    let mut abs_sum = 1.0_f64;
    let mut exponent2: i64 = 0;
    let mut run = 0;
    for n in 0..MAX_TERMS {
        let nf = n as f64;
        let ratio = (a + nf) * (z / ((b + nf) * (nf + 1.0)));
        term *= ratio;
        sum += term;
        let t = term.norm();
        abs_sum += t;
        if abs_sum > RESCALE_ABOVE {
            let s = ldexp(1.0, -RESCALE_BITS);
            term *= s;
            sum *= s;
            abs_sum *= s;
            exponent2 += RESCALE_BITS;
        }
        // Terms only count as "small" once they are shrinking; a complex `a`
        // close to a non-positive integer can make a few terms tiny early on.
        if ratio.norm() < 1.0 && t <= STOP_REL * sum.norm() {
            run += 1;
            if run == STOP_RUN {
                return Ok(KummerSum {
                    value: ScaledComplex::new(sum, exponent2),
                    magnitude: ScaledComplex::new(Complex64::new(abs_sum, 0.0), exponent2),
                    terms: n + 1,
                });
            }
        } else {
            run = 0;
        }
    }
    Err(Error::NonConvergent { terms: MAX_TERMS })
}

/// `1F1(a; b; z)` as a scaled pair. Safe for any `z` the term cap can reach.
pub fn kummer_1f1_scaled(a: Complex64, b: f64, z: f64) -> Result<ScaledComplex> {
    kummer_sum(a, b, z).map(|s| s.value)
}

/// `1F1(a; b; z)` as a plain complex number, for `z <= 700`.
pub fn kummer_1f1(a: Complex64, b: f64, z: f64) -> Result<Complex64> {
    check_args(a, b, z)?;
    if z > UNSCALED_Z_LIMIT {
        return Err(Error::Overflow(format!(
            "z = {z} exceeds {UNSCALED_Z_LIMIT}; use kummer_1f1_scaled"
        )));
    }
    let v = kummer_1f1_scaled(a, b, z)?.to_complex();
    if v.re.is_finite() && v.im.is_finite() {
        Ok(v)
    } else {
        Err(Error::Overflow(format!("1F1({a}; {b}; {z})")))
    }
}

/// Power-series coefficients of the backward equation's solution,
/// generated two steps at a time from `c0` and `c1`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesCoefficients {
    pub c0: ComplexValue,
    pub c1: ComplexValue,
    /// `c_0, c_1, ..., c_{n}`
    pub terms: Vec<ComplexValue>,
}

fn recursion_factor(n: usize, alpha: f64, theta: f64, sigma: f64) -> Complex64 {
    let nf = n as f64;
    Complex64::new(nf * theta, -alpha) * 2.0
        / (sigma * sigma * theta * (nf + 2.0) * (nf + 1.0))
}

fn check_series_args(alpha: f64, theta: f64, sigma: f64) -> Result<()> {
    if !alpha.is_finite() {
        return Err(Error::invalid("alpha must be finite"));
    }
    if !(theta.is_finite() && theta > 0.0) {
        return Err(Error::invalid("theta must be > 0"));
    }
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::invalid("sigma must be > 0"));
    }
    Ok(())
}

/// Coefficients `c_0 ..= c_{n_max}` from `c_{n+2} = 2(-i alpha + n theta) c_n / (sigma^2 theta (n+2)(n+1))`.
pub fn series_coefficients(
    alpha: f64,
    theta: f64,
    sigma: f64,
    c0: ComplexValue,
    c1: ComplexValue,
    n_max: usize,
) -> Result<SeriesCoefficients> {
    check_series_args(alpha, theta, sigma)?;
    let mut terms = Vec::with_capacity(n_max + 1);
    terms.push(c0);
    if n_max >= 1 {
        terms.push(c1);
    }
    for n in 0..n_max.saturating_sub(1) {
        let next = terms[n] * recursion_factor(n, alpha, theta, sigma);
        terms.push(next);
    }
    Ok(SeriesCoefficients { c0, c1, terms })
}

/// `g(y) = sum_{n <= n_max} c_n y^n` with the coefficient recursion above.
///
/// Summation runs on `c_n y^n` directly so that large `|y|` does not overflow
/// intermediate powers.
pub fn series_solution_g(
    y: f64,
    alpha: f64,
    theta: f64,
    sigma: f64,
    c0: ComplexValue,
    c1: ComplexValue,
    n_max: usize,
) -> Result<ComplexValue> {
    check_series_args(alpha, theta, sigma)?;
    if n_max < 2 {
        return Err(Error::invalid("n_max must be >= 2"));
    }
    if !y.is_finite() {
        return Err(Error::invalid("y must be finite"));
    }
    let y2 = y * y;
    let mut even = c0;
    let mut odd = c1 * y;
    let mut sum = even + odd;
    let mut last = [even.norm(), odd.norm()];
    let mut n = 0;
    while n + 2 <= n_max {
        even *= recursion_factor(n, alpha, theta, sigma) * y2;
        sum += even;
        last[0] = even.norm();
        if n + 3 <= n_max {
            odd *= recursion_factor(n + 1, alpha, theta, sigma) * y2;
            sum += odd;
            last[1] = odd.norm();
        }
        n += 2;
    }
    if !(sum.re.is_finite() && sum.im.is_finite()) {
        return Err(Error::Overflow(format!("series at y = {y}")));
    }
    let tail = last[0].max(last[1]);
    if tail > 1.0e-12 * sum.norm() {
        return Err(Error::NonConvergent { terms: n_max + 1 });
    }
    Ok(sum)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn rel(a: Complex64, b: Complex64) -> f64 {
        (a - b).norm() / b.norm()
    }

    #[test]
    fn zero_parameter_is_exactly_one() {
        assert_eq!(kummer_1f1(c(0.0, 0.0), 0.5, 2.3).unwrap(), c(1.0, 0.0));
        let s = kummer_1f1_scaled(c(0.0, 0.0), 0.5, 5000.0).unwrap();
        assert_eq!(s.mantissa, c(1.0, 0.0));
        assert_eq!(s.exponent2, 0);
    }

    #[test]
    fn zero_argument_is_exactly_one() {
        for a in [c(0.3, -2.0), c(5.0, 1.0), c(-0.5, 0.25)] {
            for b in [0.5, 1.5, 2.5, 7.0] {
                assert_eq!(kummer_1f1(a, b, 0.0).unwrap(), c(1.0, 0.0));
            }
        }
    }

    #[test]
    fn equal_parameters_give_exponential() {
        let v = kummer_1f1(c(0.5, 0.0), 0.5, 1.0).unwrap();
        assert!((v.re - std::f64::consts::E).abs() < 1e-15);
        assert_eq!(v.im, 0.0);
        for z in [0.0, 0.1, 1.0, 7.5, 20.0, 50.0] {
            let v = kummer_1f1(c(1.5, 0.0), 1.5, z).unwrap();
            assert!((v.re - z.exp()).abs() / z.exp() < 1e-12, "z = {z}");
        }
    }

    #[test]
    fn scaled_exponential_at_large_argument() {
        let s = kummer_1f1_scaled(c(0.5, 0.0), 0.5, 800.0).unwrap();
        let m = s.mantissa.norm();
        assert!((0.5..2.0).contains(&m));
        assert_eq!(s.exponent2, (800.0 / std::f64::consts::LN_2).floor() as i64);
        // log2 value must equal 800 / ln 2
        let log2 = m.log2() + s.exponent2 as f64;
        assert!((log2 - 800.0 / std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn contiguous_closed_form() {
        for z in [1e-3, 0.5, 1.0, 3.0, 10.0, 25.0, 50.0] {
            let v = kummer_1f1(c(1.0, 0.0), 2.0, z).unwrap();
            let want = z.exp_m1() / z;
            assert!((v.re - want).abs() / want < 1e-12, "z = {z}");
        }
    }

    #[test]
    fn unscaled_rejects_large_argument() {
        assert!(matches!(
            kummer_1f1(c(0.0, -1.0), 0.5, 701.0),
            Err(Error::Overflow(_))
        ));
        assert!(kummer_1f1_scaled(c(0.0, -1.0), 0.5, 701.0).is_ok());
    }

    #[test]
    fn invalid_arguments() {
        assert!(matches!(
            kummer_1f1(c(0.0, 1.0), 0.0, 1.0),
            Err(Error::InvalidInput(_))
        ));
        assert!(matches!(
            kummer_1f1(c(0.0, 1.0), 0.5, -1.0),
            Err(Error::InvalidInput(_))
        ));
        assert!(matches!(
            kummer_1f1(c(f64::NAN, 1.0), 0.5, 1.0),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn term_cap_reports_nonconvergence() {
        assert!(matches!(
            kummer_1f1_scaled(c(0.5, 0.0), 0.5, 30_000.0),
            Err(Error::NonConvergent { .. })
        ));
    }

    #[test]
    fn scaled_arithmetic() {
        let x = ScaledComplex::new(c(3.0, -4.0), 1000);
        let y = ScaledComplex::new(c(0.5, 0.25), -990);
        let p = x * y;
        assert!((p.mantissa.norm() - 0.5).abs() < 1.5);
        assert_eq!(rel((p).to_complex(), (c(3.0, -4.0) * c(0.5, 0.25)) * 1024.0), 0.0);
        let r = x.ratio(&ScaledComplex::new(c(1.5, 2.0), 1000));
        assert!(rel(r, c(3.0, -4.0) / c(1.5, 2.0)) < 1e-15);
        let s = ScaledComplex::from_real(1.0) + ScaledComplex::new(c(1.0, 0.0), -2000);
        assert_eq!(s.to_complex(), c(1.0, 0.0));
        assert!((ScaledComplex::from_real(8.0) - ScaledComplex::from_real(3.0))
            .to_complex()
            .re
            .eq(&5.0));
    }

    #[test]
    fn series_with_zero_alpha_is_constant() {
        for (y, th, s) in [(0.3, 1.0, 1.0), (-2.0, 0.2, 3.0), (1.7, 5.0, 0.5)] {
            let g = series_solution_g(y, 0.0, th, s, c(1.0, 0.0), c(0.0, 0.0), 60).unwrap();
            assert_eq!(g, c(1.0, 0.0));
        }
    }

    #[test]
    fn series_needs_two_terms() {
        assert!(series_solution_g(0.1, 1.0, 1.0, 1.0, c(1.0, 0.0), c(0.0, 0.0), 1).is_err());
    }

    #[test]
    fn series_tail_check() {
        // large y with too few terms
        let r = series_solution_g(3.0, 0.5, 1.0, 0.5, c(1.0, 0.0), c(0.0, 0.0), 10);
        assert!(matches!(r, Err(Error::NonConvergent { .. })));
    }

    #[test]
    fn coefficient_recursion_holds() {
        let sc = series_coefficients(0.7, 1.3, 0.9, c(1.0, 0.5), c(-0.2, 1.0), 40).unwrap();
        assert_eq!(sc.terms.len(), 41);
        for n in 0..39 {
            let nf = n as f64;
            let want = sc.terms[n] * c(nf * 1.3, -0.7) * 2.0
                / (0.81 * 1.3 * (nf + 2.0) * (nf + 1.0));
            let got = sc.terms[n + 2];
            assert!((got - want).norm() <= 1e-12 * want.norm().max(f64::MIN_POSITIVE));
        }
    }
}
