//! Subcommand implementations. Each resolves its config, computes everything
//! in memory, then writes its outputs atomically.

use std::fmt::Write as _;

use ou_fpt::charfun::charfun_grid;
use ou_fpt::distfit::{fit_theta_sigma, solve_for_moments, GammaTarget, QuadConfig};
use ou_fpt::mc::{ensemble_moments, simulate_fpt, write_ensemble_csv, SimConfig};
use ou_fpt::moments::{
    limiting_cv, log_grid, moment_summary, sweep_sigma, sweep_threshold, SweepTable, X0Rule,
};
use ou_fpt::ProcessParams;
use serde_json::json;

use crate::config::{bracket, grid, positive, required, ConfigError, RunConfig};
use crate::output::{csv_field, csv_header, report, sidecar_path, write_all};

/// Fraction of sweep rows that must succeed for exit code 0.
pub const SWEEP_MIN_SUCCESS: f64 = 0.9;

#[derive(Debug)]
pub enum CliError {
    Config(ConfigError),
    Compute(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Compute(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "config error: {e}"),
            CliError::Compute(e) => write!(f, "computation error: {e}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

fn compute(e: ou_fpt::Error) -> CliError {
    CliError::Compute(e.to_string())
}

type CmdResult = Result<(), CliError>;

fn linear_grid(start: f64, stop: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            if i + 1 == n {
                stop
            } else {
                start + (stop - start) * (i as f64 / (n - 1) as f64)
            }
        })
        .collect()
}

pub fn charfun(cfg: RunConfig) -> CmdResult {
    let problem = cfg.problem()?;
    let (start, stop, n) = grid(&cfg.alpha, "alpha", false)?;
    let out = cfg.out()?;
    let alphas = linear_grid(start, stop, n);
    let mut csv = csv_header("charfun", &cfg);
    csv.push_str("alpha,psi_re,psi_im\n");
    for (alpha, psi) in alphas.iter().zip(charfun_grid(&problem, &alphas)) {
        let psi = psi.map_err(|e| CliError::Compute(format!("alpha = {alpha}: {e}")))?;
        writeln!(csv, "{alpha:e},{:e},{:e}", psi.re, psi.im).unwrap();
    }
    write_all(&[(out, csv.into_bytes())]).map_err(CliError::Compute)
}

pub fn moments(cfg: RunConfig) -> CmdResult {
    let problem = cfg.problem()?;
    let out = cfg.out()?;
    let summary = moment_summary(&problem).map_err(compute)?;
    let body = json!({
        "summary": summary,
        "limiting_cv": limiting_cv(&problem).ok(),
    });
    write_all(&[(out, report("moments", &cfg, &body))]).map_err(CliError::Compute)
}

fn write_sweep(command: &str, cfg: &RunConfig, table: &SweepTable) -> CmdResult {
    let out = cfg.out()?;
    let side = sidecar_path(&out)?;
    let total = table.rows.len();
    let ok = table.succeeded();
    if (ok as f64) < SWEEP_MIN_SUCCESS * total as f64 {
        let first = table.rows.iter().find_map(|r| r.error.clone()).unwrap_or_default();
        return Err(CliError::Compute(format!(
            "only {ok} of {total} sweep rows succeeded (first error: {first})"
        )));
    }
    let mut csv = csv_header(command, cfg);
    csv.push_str("swept_value,mean,cv,error\n");
    for r in &table.rows {
        match (&r.summary, &r.error) {
            (Some(s), _) => writeln!(csv, "{:e},{:e},{:e},", r.value, s.mean, s.cv),
            (None, e) => writeln!(csv, "{:e},NaN,NaN,{}", r.value, csv_field(e.as_deref().unwrap_or("failed"))),
        }
        .unwrap();
    }
    let body = json!({
        "parameter": table.parameter,
        "rows_total": total,
        "rows_succeeded": ok,
        "limiting_cv": table.limiting_cv,
        "cv_trend": table.cv_trend,
        "mean_trend": table.mean_trend,
    });
    write_all(&[(out, csv.into_bytes()), (side, report(command, cfg, &body))]).map_err(CliError::Compute)
}

pub fn sweep_sigma_cmd(cfg: RunConfig) -> CmdResult {
    // the swept sigma replaces any configured value
    let template = cfg.problem_with(None, Some(1.0))?;
    let (start, stop, n) = grid(&cfg.sweep, "sweep", true)?;
    let table = sweep_sigma(&template, &log_grid(start, stop, n)).map_err(compute)?;
    write_sweep("sweep-sigma", &cfg, &table)
}

pub fn sweep_threshold_cmd(mut cfg: RunConfig) -> CmdResult {
    let theta = positive(required(&cfg.theta, "theta")?, "theta")?;
    let sigma = positive(required(&cfg.sigma, "sigma")?, "sigma")?;
    let params = ProcessParams::new(theta, sigma).map_err(|e| ConfigError::new("config", e.to_string()))?;
    let (start, stop, n) = grid(&cfg.sweep, "sweep", true)?;
    let rule = *cfg.x0_rule.get_or_insert(X0Rule::Center);
    let kind = *cfg.boundary.get_or_insert(cfg.kind());
    let table = sweep_threshold(kind, rule, &log_grid(start, stop, n), params).map_err(compute)?;
    write_sweep("sweep-threshold", &cfg, &table)
}

pub fn simulate(mut cfg: RunConfig) -> CmdResult {
    let problem = cfg.problem()?;
    let out = cfg.out()?;
    let side = sidecar_path(&out)?;
    let seed = *cfg.seed.get_or_insert(0);
    let sim = cfg.sim.get_or_insert_with(Default::default);
    let dt = positive(required(&sim.dt, "sim.dt")?, "sim.dt")?;
    let paths = required(&sim.paths, "sim.paths")?;
    if paths == 0 {
        return Err(ConfigError::new("sim.paths", "must be >= 1").into());
    }
    let bridge = *sim.bridge.get_or_insert(true);
    let mut config = SimConfig::for_problem(&problem, dt, paths, seed);
    config.bridge_correction = bridge;
    if let Some(t) = sim.max_time {
        config = config.with_max_time(positive(t, "sim.max_time")?);
    }
    sim.max_time = Some(config.max_time);
    config.validate().map_err(|e| ConfigError::new("sim", e.to_string()))?;
    let ensemble = simulate_fpt(&problem, &config).map_err(compute)?;
    let moments = ensemble_moments(&ensemble).map_err(compute)?;
    let mut csv = csv_header("simulate", &cfg).into_bytes();
    write_ensemble_csv(&mut csv, &problem, &ensemble).expect("writing to memory");
    let body = json!({
        "sim": config,
        "n_censored": ensemble.n_censored,
        "censored_fraction": ensemble.censored_fraction(),
        "moments": moments,
    });
    write_all(&[(out, csv), (side, report("simulate", &cfg, &body))]).map_err(CliError::Compute)
}

fn gamma_target(cfg: &RunConfig) -> Result<GammaTarget, ConfigError> {
    let t = cfg.target.clone().unwrap_or_default();
    let target = match (t.mean, t.cv, t.shape, t.rate) {
        (Some(mean), Some(cv), None, None) => {
            GammaTarget::from_mean_cv(positive(mean, "target.mean")?, positive(cv, "target.cv")?)
        }
        (None, None, Some(shape), Some(rate)) => {
            GammaTarget::new(positive(shape, "target.shape")?, positive(rate, "target.rate")?)
        }
        _ => return Err(ConfigError::new("target", "give either mean and cv, or shape and rate")),
    };
    target.map_err(|e| ConfigError::new("target", e.to_string()))
}

pub fn fit_dist(mut cfg: RunConfig) -> CmdResult {
    let target = gamma_target(&cfg)?;
    let fields = cfg.problem_fields()?;
    let out = cfg.out()?;
    let fit = cfg.fit.get_or_insert_with(Default::default);
    let sigmas = match &fit.sigmas {
        Some(s) => {
            if s.is_empty() {
                return Err(ConfigError::new("fit.sigmas", "must not be empty").into());
            }
            for (i, &v) in s.iter().enumerate() {
                positive(v, &format!("fit.sigmas[{i}]"))?;
                if i > 0 && v <= s[i - 1] {
                    return Err(ConfigError::new(format!("fit.sigmas[{i}]"), "must be strictly increasing").into());
                }
            }
            s.clone()
        }
        None => vec![required(&fields.sigma, "sigma")?],
    };
    let lo = *fit.theta_lo.get_or_insert(1e-3 / target.mean());
    let hi = *fit.theta_hi.get_or_insert(1e3 / target.mean());
    let theta_bracket = bracket(lo, hi, "fit.theta_lo", "fit.theta_hi")?;
    let mut quad = QuadConfig::for_target(&target);
    quad.tail_cut = *fit.tail_cut.get_or_insert(quad.tail_cut);
    quad.rel_tol = *fit.rel_tol.get_or_insert(quad.rel_tol);
    quad.validate().map_err(|e| ConfigError::new("fit", e.to_string()))?;
    let template = cfg.problem_with(Some(1.0), Some(sigmas[0]))?;
    let fits = fit_theta_sigma(&template, &target, &sigmas, theta_bracket, &quad).map_err(compute)?;
    if fits.iter().all(|f| f.fit.is_none()) {
        let first = fits[0].error.clone().unwrap_or_default();
        return Err(CliError::Compute(format!("no sigma produced a fit (sigma = {}: {first})", fits[0].sigma)));
    }
    let body = json!({
        "target": {
            "shape": target.shape,
            "rate": target.rate,
            "mean": target.mean(),
            "cv": target.cv(),
        },
        "theta_bracket": [theta_bracket.0, theta_bracket.1],
        "quad": quad,
        "fits": fits,
    });
    write_all(&[(out, report("fit-dist", &cfg, &body))]).map_err(CliError::Compute)
}

pub fn fit_moments(mut cfg: RunConfig) -> CmdResult {
    let t = cfg.target.clone().unwrap_or_default();
    let mean = positive(required(&t.mean, "target.mean")?, "target.mean")?;
    let cv = positive(required(&t.cv, "target.cv")?, "target.cv")?;
    let fields = cfg.problem_fields()?;
    let out = cfg.out()?;
    let width = fields.b - fields.a;
    let fit = cfg.fit.get_or_insert_with(Default::default);
    let lo = *fit.sigma_lo.get_or_insert(0.025 * width);
    let hi = *fit.sigma_hi.get_or_insert(100.0 * width);
    let sigma_bracket = bracket(lo, hi, "fit.sigma_lo", "fit.sigma_hi")?;
    let template = cfg.problem_with(Some(1.0), Some(1.0))?;
    let result = solve_for_moments(mean, cv, &template, sigma_bracket).map_err(compute)?;
    let body = json!({
        "target": { "mean": mean, "cv": cv },
        "sigma_bracket": [sigma_bracket.0, sigma_bracket.1],
        "fit": result,
    });
    write_all(&[(out, report("fit-moments", &cfg, &body))]).map_err(CliError::Compute)
}
