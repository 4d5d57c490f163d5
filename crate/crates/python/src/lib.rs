//! Python bindings: the `ou_fpt` extension module.

use num_complex::Complex64;
use ou_fpt::distfit::{fit_theta, solve_for_moments, GammaTarget, QuadConfig};
use ou_fpt::mc::{simulate_fpt, SimConfig};
use ou_fpt::moments::{limiting_cv as core_limiting_cv, moment_summary};
use ou_fpt::{BoundaryKind, Error, FptProblem};
use pyo3::create_exception;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(ou_fpt, FptError, PyRuntimeError, "Computation failed.");

fn to_py(e: Error) -> PyErr {
    match e {
        Error::InvalidInput(msg) => PyValueError::new_err(msg),
        other => FptError::new_err(other.to_string()),
    }
}

fn build(theta: f64, sigma: f64, a: f64, b: f64, x0: f64, boundary: &str) -> Result<FptProblem, Error> {
    let kind: BoundaryKind = boundary.parse()?;
    FptProblem::build(theta, sigma, a, b, x0, kind)
}

/// Characteristic function of the first-passage time at each alpha.
#[pyfunction]
#[pyo3(signature = (alphas, theta, sigma, a, b, x0, boundary = "absorb-absorb"))]
fn charfun(
    alphas: Vec<f64>,
    theta: f64,
    sigma: f64,
    a: f64,
    b: f64,
    x0: f64,
    boundary: &str,
) -> PyResult<Vec<Complex64>> {
    let p = build(theta, sigma, a, b, x0, boundary).map_err(to_py)?;
    alphas
        .iter()
        .map(|&al| ou_fpt::charfun::charfun(&p, al).map_err(to_py))
        .collect()
}

/// Mean, std, CV and skewness of the first-passage time.
#[pyfunction]
#[pyo3(signature = (theta, sigma, a, b, x0, boundary = "absorb-absorb"))]
fn moments<'py>(
    py: Python<'py>,
    theta: f64,
    sigma: f64,
    a: f64,
    b: f64,
    x0: f64,
    boundary: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let p = build(theta, sigma, a, b, x0, boundary).map_err(to_py)?;
    let s = moment_summary(&p).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("mean", s.mean)?;
    d.set_item("std", s.std)?;
    d.set_item("cv", s.cv)?;
    d.set_item("skewness", s.skewness)?;
    Ok(d)
}

/// CV in the zero-drift (large sigma) limit.
#[pyfunction]
#[pyo3(signature = (a, b, x0, boundary = "absorb-absorb"))]
fn limiting_cv(a: f64, b: f64, x0: f64, boundary: &str) -> PyResult<f64> {
    let p = build(1.0, 1.0, a, b, x0, boundary).map_err(to_py)?;
    core_limiting_cv(&p).map_err(to_py)
}

/// Simulated first-passage times and the number of censored paths.
#[pyfunction]
#[pyo3(signature = (theta, sigma, a, b, x0, dt, n_paths, seed, boundary = "absorb-absorb", bridge = true))]
#[allow(clippy::too_many_arguments)]
fn simulate(
    py: Python<'_>,
    theta: f64,
    sigma: f64,
    a: f64,
    b: f64,
    x0: f64,
    dt: f64,
    n_paths: usize,
    seed: u64,
    boundary: &str,
    bridge: bool,
) -> PyResult<(Vec<f64>, usize)> {
    let p = build(theta, sigma, a, b, x0, boundary).map_err(to_py)?;
    let mut config = SimConfig::for_problem(&p, dt, n_paths, seed);
    config.bridge_correction = bridge;
    let ens = py.detach(|| simulate_fpt(&p, &config)).map_err(to_py)?;
    Ok((ens.samples, ens.n_censored))
}

/// `(theta, sigma)` giving the target mean and CV for the threshold setup.
#[pyfunction]
#[pyo3(signature = (mean, cv, a, b, x0, boundary = "absorb-absorb", sigma_lo = None, sigma_hi = None))]
#[allow(clippy::too_many_arguments)]
fn fit_moments(
    py: Python<'_>,
    mean: f64,
    cv: f64,
    a: f64,
    b: f64,
    x0: f64,
    boundary: &str,
    sigma_lo: Option<f64>,
    sigma_hi: Option<f64>,
) -> PyResult<(f64, f64)> {
    let template = build(1.0, 1.0, a, b, x0, boundary).map_err(to_py)?;
    let width = b - a;
    let bracket = (sigma_lo.unwrap_or(0.025 * width), sigma_hi.unwrap_or(100.0 * width));
    let fit = py
        .detach(|| solve_for_moments(mean, cv, &template, bracket))
        .map_err(to_py)?;
    Ok((fit.theta_opt, fit.sigma_opt))
}

/// Theta minimizing the distance to a Gamma(mean, CV) target at fixed sigma;
/// returns `(theta, distance, converged)`.
#[pyfunction]
#[pyo3(signature = (target_mean, target_cv, sigma, a, b, x0, boundary = "absorb-absorb", theta_lo = 1e-3, theta_hi = 1e3))]
#[allow(clippy::too_many_arguments)]
fn fit_dist(
    py: Python<'_>,
    target_mean: f64,
    target_cv: f64,
    sigma: f64,
    a: f64,
    b: f64,
    x0: f64,
    boundary: &str,
    theta_lo: f64,
    theta_hi: f64,
) -> PyResult<(f64, f64, bool)> {
    let template = build(1.0, sigma, a, b, x0, boundary).map_err(to_py)?;
    let target = GammaTarget::from_mean_cv(target_mean, target_cv).map_err(to_py)?;
    let quad = QuadConfig::for_target(&target);
    let fit = py
        .detach(|| fit_theta(&template, &target, (theta_lo, theta_hi), &quad))
        .map_err(to_py)?;
    Ok((fit.theta_opt, fit.distance, fit.converged))
}

#[pymodule]
#[pyo3(name = "ou_fpt")]
fn ou_fpt_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("FptError", m.py().get_type::<FptError>())?;
    m.add_function(wrap_pyfunction!(charfun, m)?)?;
    m.add_function(wrap_pyfunction!(moments, m)?)?;
    m.add_function(wrap_pyfunction!(limiting_cv, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(fit_moments, m)?)?;
    m.add_function(wrap_pyfunction!(fit_dist, m)?)?;
    Ok(())
}
