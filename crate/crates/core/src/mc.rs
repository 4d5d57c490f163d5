//! Euler-Maruyama Monte Carlo for the FPT, used as an independent oracle.
//!
//! Every path owns a ChaCha8 stream keyed by `(seed, path index)`, and samples
//! are kept in path order, so ensembles do not depend on the worker count.

use std::io::Write;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::moments::{fpt_moment, MomentSummary};
use crate::problem::{BoundaryKind, FptProblem};

/// Bridge crossings with `2 d d' / (sigma^2 theta dt)` above this are skipped
/// (probability below 1e-17).
const BRIDGE_EXPONENT_CUTOFF: f64 = 40.0;
const MIN_SAMPLES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub bridge_correction: bool,
    pub max_time: f64,
}

impl SimConfig {
    /// `max_time` = 50 x the analytic mean, or `1e6 dt` if that fails.
    pub fn for_problem(problem: &FptProblem, dt: f64, n_paths: usize, seed: u64) -> Self {
        let max_time = match fpt_moment(problem, 1) {
            Ok(m) if m > 0.0 => (50.0 * m).max(100.0 * dt),
            _ => 1.0e6 * dt,
        };
        SimConfig {
            dt,
            n_paths,
            seed,
            bridge_correction: true,
            max_time,
        }
    }

    pub fn with_max_time(mut self, max_time: f64) -> Self {
        self.max_time = max_time;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::invalid(format!("dt = {} must be > 0", self.dt)));
        }
        if self.n_paths == 0 {
            return Err(Error::invalid("n_paths must be > 0"));
        }
        if !(self.max_time.is_finite() && self.max_time > 0.0) {
            return Err(Error::invalid(format!("max_time = {} must be > 0", self.max_time)));
        }
        if self.dt > self.max_time / 100.0 {
            return Err(Error::invalid(format!(
                "dt = {} exceeds max_time / 100 = {}",
                self.dt,
                self.max_time / 100.0
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FptEnsemble {
    /// Exit times in path order, censored paths omitted.
    pub samples: Vec<f64>,
    pub n_censored: usize,
    pub config_echo: SimConfig,
}

impl FptEnsemble {
    pub fn censored_fraction(&self) -> f64 {
        self.n_censored as f64 / (self.n_censored + self.samples.len()) as f64
    }
}

/// Pairwise summation in a fixed order; error grows as `O(log n eps)`.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 64 {
        return xs.iter().sum();
    }
    let (l, r) = xs.split_at(xs.len() / 2);
    pairwise_sum(l) + pairwise_sum(r)
}

struct Stepper {
    kind: BoundaryKind,
    a: f64,
    b: f64,
    x0: f64,
    dt: f64,
    decay: f64,
    noise: f64,
    bridge: Option<f64>,
    max_steps: u64,
}

impl Stepper {
    fn new(problem: &FptProblem, config: &SimConfig) -> Self {
        let theta = problem.theta();
        let noise = problem.sigma() * (theta * config.dt).sqrt();
        Stepper {
            kind: problem.kind(),
            a: problem.boundaries.a,
            b: problem.boundaries.b,
            x0: problem.x0,
            dt: config.dt,
            decay: 1.0 - theta * config.dt,
            noise,
            bridge: config.bridge_correction.then(|| 2.0 / (noise * noise)),
            max_steps: (config.max_time / config.dt).floor() as u64,
        }
    }

    /// Probability that the bridge between `x` and `y` touched `level`.
    fn bridge_hit(&self, rng: &mut ChaCha8Rng, x: f64, y: f64, level: f64) -> bool {
        let Some(k) = self.bridge else { return false };
        let e = k * (x - level) * (y - level);
        e < BRIDGE_EXPONENT_CUTOFF && rng.random::<f64>() < (-e).exp()
    }

    fn run(&self, seed: u64, path: u64) -> Option<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(path);
        let reflecting = self.kind == BoundaryKind::ReflectLowerAbsorbUpper;
        let mut x = self.x0;
        for n in 0..self.max_steps {
            let t = n as f64 * self.dt;
            let z: f64 = rng.sample(StandardNormal);
            let mut y = self.decay * x + self.noise * z;
            if y >= self.b {
                return Some(t + self.dt * (self.b - x) / (y - x));
            }
            if y <= self.a {
                if !reflecting {
                    return Some(t + self.dt * (x - self.a) / (x - y));
                }
                y = 2.0 * self.a - y;
                if y >= self.b {
                    // only reachable when the step is comparable to b - a
                    return Some(t + self.dt);
                }
            }
            if self.bridge_hit(&mut rng, x, y, self.b)
                || (!reflecting && self.bridge_hit(&mut rng, x, y, self.a))
            {
                return Some(t + 0.5 * self.dt);
            }
            x = y;
        }
        None
    }
}

pub fn simulate_fpt(problem: &FptProblem, config: &SimConfig) -> Result<FptEnsemble> {
    problem.validate()?;
    config.validate()?;
    if problem.starts_absorbed() {
        return Err(Error::invalid("x0 lies on an absorbing threshold; tau = 0"));
    }
    let stepper = Stepper::new(problem, config);
    if problem.kind() == BoundaryKind::ReflectLowerAbsorbUpper {
        let width = problem.boundaries.b - problem.boundaries.a;
        if stepper.noise >= width / 10.0 {
            return Err(Error::invalid(format!(
                "step noise sigma sqrt(theta dt) = {} must be below (b - a) / 10",
                stepper.noise
            )));
        }
    }
    let times: Vec<Option<f64>> = (0..config.n_paths as u64)
        .into_par_iter()
        .map(|i| stepper.run(config.seed, i))
        .collect();
    let samples: Vec<f64> = times.iter().flatten().copied().collect();
    let n_censored = times.len() - samples.len();
    if samples.is_empty() {
        return Err(Error::AllCensored { n_censored });
    }
    Ok(FptEnsemble {
        samples,
        n_censored,
        config_echo: *config,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalPoint {
    pub alpha: f64,
    pub value: Complex64,
    pub stderr_re: f64,
    pub stderr_im: f64,
}

fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = pairwise_sum(xs) / n;
    let dev: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    let var = if xs.len() > 1 { pairwise_sum(&dev) / (n - 1.0) } else { 0.0 };
    (mean, (var / n).sqrt())
}

/// Sample mean of `exp(i alpha tau)` with componentwise standard errors.
pub fn empirical_charfun(ensemble: &FptEnsemble, alphas: &[f64]) -> Result<Vec<EmpiricalPoint>> {
    if ensemble.samples.is_empty() {
        return Err(Error::TooFewSamples { n: 0, required: 1 });
    }
    Ok(alphas
        .par_iter()
        .map(|&alpha| {
            if alpha == 0.0 {
                return EmpiricalPoint {
                    alpha,
                    value: Complex64::new(1.0, 0.0),
                    stderr_re: 0.0,
                    stderr_im: 0.0,
                };
            }
            let (s, c): (Vec<f64>, Vec<f64>) =
                ensemble.samples.iter().map(|t| (alpha * t).sin_cos()).unzip();
            let (re, se_re) = mean_and_stderr(&c);
            let (im, se_im) = mean_and_stderr(&s);
            EmpiricalPoint {
                alpha,
                value: Complex64::new(re, im),
                stderr_re: se_re,
                stderr_im: se_im,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleMoments {
    pub summary: MomentSummary,
    pub n: usize,
    pub mean_stderr: f64,
    /// Delta-method standard error of the CV.
    pub cv_stderr: f64,
}

pub fn ensemble_moments(ensemble: &FptEnsemble) -> Result<EnsembleMoments> {
    sample_moments(&ensemble.samples)
}

/// Moments of raw samples; exposed so synthetic ensembles can be checked.
pub fn sample_moments(xs: &[f64]) -> Result<EnsembleMoments> {
    let n = xs.len();
    if n < MIN_SAMPLES {
        return Err(Error::TooFewSamples {
            n,
            required: MIN_SAMPLES,
        });
    }
    let nf = n as f64;
    let mean = pairwise_sum(xs) / nf;
    let central = |p: i32| pairwise_sum(&xs.iter().map(|x| (x - mean).powi(p)).collect::<Vec<_>>()) / nf;
    let (m2, m3, m4) = (central(2), central(3), central(4));
    let var = m2 * nf / (nf - 1.0);
    let std = var.sqrt();
    let cv = std / mean;
    let skewness = if m2 > 0.0 { m3 / m2.powf(1.5) } else { 0.0 };
    let cv_stderr = if std > 0.0 {
        let g1 = -std / (mean * mean);
        let g2 = 1.0 / (2.0 * std * mean);
        let v = g1 * g1 * m2 + g2 * g2 * (m4 - m2 * m2) + 2.0 * g1 * g2 * m3;
        (v.max(0.0) / nf).sqrt()
    } else {
        0.0
    };
    Ok(EnsembleMoments {
        summary: MomentSummary {
            mean,
            std,
            cv,
            skewness,
            variance_clamped: false,
        },
        n,
        mean_stderr: std / nf.sqrt(),
        cv_stderr,
    })
}

/// One FPT per line under a `#` header echoing the problem and config.
pub fn write_ensemble_csv<W: Write>(
    mut w: W,
    problem: &FptProblem,
    ensemble: &FptEnsemble,
) -> std::io::Result<()> {
    let c = &ensemble.config_echo;
    writeln!(
        w,
        "# theta={} sigma={} a={} b={} x0={} boundary={}",
        problem.theta(),
        problem.sigma(),
        problem.boundaries.a,
        problem.boundaries.b,
        problem.x0,
        problem.kind()
    )?;
    writeln!(
        w,
        "# dt={} n_paths={} seed={} bridge_correction={} max_time={} n_censored={}",
        c.dt, c.n_paths, c.seed, c.bridge_correction, c.max_time, ensemble.n_censored
    )?;
    writeln!(w, "fpt")?;
    for t in &ensemble.samples {
        writeln!(w, "{t:e}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Exp};

    fn sym() -> FptProblem {
        FptProblem::build(1.0, 1.0, -1.0, 1.0, 0.0, BoundaryKind::BothAbsorbing).unwrap()
    }

    fn cfg(n: usize, dt: f64) -> SimConfig {
        SimConfig {
            dt,
            n_paths: n,
            seed: 7,
            bridge_correction: true,
            max_time: 50.0,
        }
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let a = simulate_fpt(&sym(), &cfg(500, 1e-3)).unwrap();
        let b = simulate_fpt(&sym(), &cfg(500, 1e-3)).unwrap();
        assert_eq!(a, b);
        let mut other = cfg(500, 1e-3);
        other.seed = 8;
        assert_ne!(simulate_fpt(&sym(), &other).unwrap().samples, a.samples);
    }

    #[test]
    fn streams_are_per_path() {
        // a prefix of the path set gives a prefix of the samples
        let a = simulate_fpt(&sym(), &cfg(300, 1e-3)).unwrap();
        let b = simulate_fpt(&sym(), &cfg(100, 1e-3)).unwrap();
        assert_eq!(a.n_censored, 0);
        assert_eq!(&a.samples[..100], &b.samples[..]);
    }

    #[test]
    fn samples_positive_and_bounded() {
        let e = simulate_fpt(&sym(), &cfg(2000, 1e-3)).unwrap();
        assert!(e.samples.iter().all(|&t| t > 0.0 && t <= 50.0));
    }

    #[test]
    fn censoring_is_counted() {
        let mut c = cfg(400, 1e-3);
        c.max_time = 0.5;
        let e = simulate_fpt(&sym(), &c).unwrap();
        assert!(e.n_censored > 0);
        assert_eq!(e.n_censored + e.samples.len(), 400);
        let f = e.censored_fraction();
        assert_eq!(f, e.n_censored as f64 / 400.0);
        c.max_time = 0.1;
        c.dt = 1e-3;
        let far = FptProblem::build(1.0, 0.05, -1.0, 1.0, 0.0, BoundaryKind::BothAbsorbing).unwrap();
        assert!(matches!(simulate_fpt(&far, &c), Err(Error::AllCensored { n_censored: 400 })));
    }

    #[test]
    fn config_validation() {
        let mut c = cfg(10, 1.0);
        assert!(c.validate().is_err());
        c.dt = 1e-3;
        assert!(c.validate().is_ok());
        c.n_paths = 0;
        assert!(c.validate().is_err());
        let p = FptProblem::build(1.0, 1.0, -1.0, 1.0, 1.0, BoundaryKind::BothAbsorbing).unwrap();
        assert!(simulate_fpt(&p, &cfg(10, 1e-3)).is_err());
        // reflecting dt guard
        let r = FptProblem::build(1.0, 10.0, -0.1, 0.1, 0.0, BoundaryKind::ReflectLowerAbsorbUpper).unwrap();
        assert!(simulate_fpt(&r, &cfg(10, 1e-3)).is_err());
    }

    #[test]
    fn empirical_charfun_basics() {
        let e = simulate_fpt(&sym(), &cfg(1000, 1e-3)).unwrap();
        let pts = empirical_charfun(&e, &[-1.5, 0.0, 1.5]).unwrap();
        assert_eq!(pts[1].value, Complex64::new(1.0, 0.0));
        assert_eq!(pts[1].stderr_re, 0.0);
        assert_eq!(pts[0].value, pts[2].value.conj());
        assert!(pts[2].value.norm() <= 1.0);
    }

    #[test]
    fn constant_ensemble() {
        let m = sample_moments(&[5.0; 200]).unwrap();
        assert_eq!(m.summary.mean, 5.0);
        assert_eq!(m.summary.cv, 0.0);
        assert!(matches!(sample_moments(&[1.0; 99]), Err(Error::TooFewSamples { n: 99, .. })));
    }

    #[test]
    fn exponential_ensemble_has_unit_cv() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let exp = Exp::new(1.0).unwrap();
        let xs: Vec<f64> = (0..1_000_000).map(|_| exp.sample(&mut rng)).collect();
        let m = sample_moments(&xs).unwrap();
        assert!((m.summary.cv - 1.0).abs() < 3.0 * m.cv_stderr, "{m:?}");
        assert!((m.summary.mean - 1.0).abs() < 3.0 * m.mean_stderr);
        // delta-method error for an exponential is 1/sqrt(N)
        assert!((m.cv_stderr * 1000.0 - 1.0).abs() < 0.05);
    }

    #[test]
    fn reflecting_paths_outlast_absorbing() {
        let r = FptProblem::build(1.0, 1.0, -1.0, 1.0, 0.0, BoundaryKind::ReflectLowerAbsorbUpper).unwrap();
        let e = simulate_fpt(&r, &cfg(2000, 1e-3)).unwrap();
        let ea = simulate_fpt(&sym(), &cfg(2000, 1e-3)).unwrap();
        assert!(pairwise_sum(&e.samples) > pairwise_sum(&ea.samples));
    }

    #[test]
    fn csv_has_header_and_rows() {
        let e = simulate_fpt(&sym(), &cfg(20, 1e-3)).unwrap();
        let mut out = Vec::new();
        write_ensemble_csv(&mut out, &sym(), &e).unwrap();
        let s = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = s.lines().collect();
        assert!(lines[0].starts_with("# theta=1"));
        assert!(lines[1].contains("seed=7"));
        assert_eq!(lines[2], "fpt");
        assert_eq!(lines.len(), 23);
    }

    #[test]
    fn pairwise_matches_naive() {
        let xs: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&xs), 499500.0);
    }
}
