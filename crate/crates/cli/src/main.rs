//! `ou-fpt`: first-passage-time statistics of the Ornstein-Uhlenbeck process
//! from the command line.
//!
//! Exit codes: 0 success, 2 config error, 3 computation error.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ou_fpt::moments::X0Rule;
use ou_fpt::BoundaryKind;

use commands::CliError;
use config::{overlay, ConfigError, Fit, Grid, RunConfig, Sim, Target};

/// Caps the rayon thread pool.
const THREADS_ENV: &str = "OU_FPT_THREADS";

#[derive(Parser, Debug)]
#[command(name = "ou-fpt", version, about = "First-passage times of the Ornstein-Uhlenbeck process")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand; each overrides the config file field of
/// the same name.
#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// JSON config file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output file (CSV or JSON depending on the command)
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, allow_hyphen_values = true)]
    theta: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    sigma: Option<f64>,
    /// Lower threshold
    #[arg(long, allow_hyphen_values = true)]
    a: Option<f64>,
    /// Upper threshold
    #[arg(long, allow_hyphen_values = true)]
    b: Option<f64>,
    /// Start position
    #[arg(long, allow_hyphen_values = true)]
    x0: Option<f64>,
    /// absorb-absorb or reflect-absorb
    #[arg(long)]
    boundary: Option<BoundaryKind>,
    #[arg(long)]
    seed: Option<u64>,
}

/// Log grid of the swept value (`sweep.*` in the config).
#[derive(Args, Debug, Clone, Default)]
struct SweepFlags {
    #[arg(long)]
    from: Option<f64>,
    #[arg(long)]
    to: Option<f64>,
    #[arg(long)]
    points: Option<usize>,
}

/// `target.*` in the config.
#[derive(Args, Debug, Clone, Default)]
struct TargetFlags {
    #[arg(long)]
    target_mean: Option<f64>,
    #[arg(long)]
    target_cv: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Characteristic function on a linear alpha grid (CSV: alpha, psi_re, psi_im)
    Charfun {
        #[command(flatten)]
        common: Common,
        #[arg(long, allow_hyphen_values = true)]
        alpha_start: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        alpha_stop: Option<f64>,
        #[arg(long)]
        alpha_n: Option<usize>,
    },
    /// Mean, std, CV and skewness (JSON)
    Moments {
        #[command(flatten)]
        common: Common,
    },
    /// Moments across a log grid of sigma (CSV plus JSON trend sidecar)
    SweepSigma {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sweep: SweepFlags,
    },
    /// Moments across symmetric thresholds a = -b on a log grid of b
    SweepThreshold {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sweep: SweepFlags,
        /// center, minus-half-b or plus-half-b
        #[arg(long, value_parser = parse_x0_rule)]
        x0_rule: Option<X0Rule>,
    },
    /// Euler-Maruyama first-passage samples (CSV plus JSON summary)
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        paths: Option<usize>,
        #[arg(long)]
        max_time: Option<f64>,
        /// Disable the Brownian-bridge crossing correction
        #[arg(long)]
        no_bridge: bool,
    },
    /// Fit theta (per sigma) to a Gamma target by characteristic-function distance
    FitDist {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        target: TargetFlags,
        #[arg(long)]
        target_shape: Option<f64>,
        #[arg(long)]
        target_rate: Option<f64>,
        #[arg(long)]
        theta_lo: Option<f64>,
        #[arg(long)]
        theta_hi: Option<f64>,
        /// Comma-separated, strictly increasing
        #[arg(long, value_delimiter = ',')]
        sigmas: Option<Vec<f64>>,
    },
    /// Choose sigma and theta so the FPT has a given mean and CV
    FitMoments {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        target: TargetFlags,
        #[arg(long)]
        sigma_lo: Option<f64>,
        #[arg(long)]
        sigma_hi: Option<f64>,
    },
}

fn parse_x0_rule(s: &str) -> Result<X0Rule, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| format!("unknown x0 rule {s:?} (expected center, minus-half-b or plus-half-b)"))
}

fn section<T: Default>(slot: &mut Option<T>, any: bool) -> Option<&mut T> {
    if any {
        Some(slot.get_or_insert_with(T::default))
    } else {
        None
    }
}

fn merge_common(common: &Common) -> Result<RunConfig, ConfigError> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    overlay(&mut cfg.out, common.out.clone());
    overlay(&mut cfg.theta, common.theta);
    overlay(&mut cfg.sigma, common.sigma);
    overlay(&mut cfg.a, common.a);
    overlay(&mut cfg.b, common.b);
    overlay(&mut cfg.x0, common.x0);
    overlay(&mut cfg.boundary, common.boundary);
    overlay(&mut cfg.seed, common.seed);
    Ok(cfg)
}

fn merge_grid(slot: &mut Option<Grid>, start: Option<f64>, stop: Option<f64>, n: Option<usize>) {
    if let Some(g) = section(slot, start.is_some() || stop.is_some() || n.is_some()) {
        overlay(&mut g.start, start);
        overlay(&mut g.stop, stop);
        overlay(&mut g.n, n);
    }
}

fn merge_target(slot: &mut Option<Target>, t: &TargetFlags, shape: Option<f64>, rate: Option<f64>) {
    let any = t.target_mean.is_some() || t.target_cv.is_some() || shape.is_some() || rate.is_some();
    if let Some(target) = section(slot, any) {
        overlay(&mut target.mean, t.target_mean);
        overlay(&mut target.cv, t.target_cv);
        overlay(&mut target.shape, shape);
        overlay(&mut target.rate, rate);
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Charfun {
            common,
            alpha_start,
            alpha_stop,
            alpha_n,
        } => {
            let mut cfg = merge_common(&common)?;
            merge_grid(&mut cfg.alpha, alpha_start, alpha_stop, alpha_n);
            commands::charfun(cfg)
        }
        Command::Moments { common } => commands::moments(merge_common(&common)?),
        Command::SweepSigma { common, sweep } => {
            let mut cfg = merge_common(&common)?;
            merge_grid(&mut cfg.sweep, sweep.from, sweep.to, sweep.points);
            commands::sweep_sigma_cmd(cfg)
        }
        Command::SweepThreshold { common, sweep, x0_rule } => {
            let mut cfg = merge_common(&common)?;
            merge_grid(&mut cfg.sweep, sweep.from, sweep.to, sweep.points);
            overlay(&mut cfg.x0_rule, x0_rule);
            commands::sweep_threshold_cmd(cfg)
        }
        Command::Simulate {
            common,
            dt,
            paths,
            max_time,
            no_bridge,
        } => {
            let mut cfg = merge_common(&common)?;
            let bridge = no_bridge.then_some(false);
            let any = dt.is_some() || paths.is_some() || max_time.is_some() || bridge.is_some();
            if let Some(sim) = section::<Sim>(&mut cfg.sim, any) {
                overlay(&mut sim.dt, dt);
                overlay(&mut sim.paths, paths);
                overlay(&mut sim.max_time, max_time);
                overlay(&mut sim.bridge, bridge);
            }
            commands::simulate(cfg)
        }
        Command::FitDist {
            common,
            target,
            target_shape,
            target_rate,
            theta_lo,
            theta_hi,
            sigmas,
        } => {
            let mut cfg = merge_common(&common)?;
            merge_target(&mut cfg.target, &target, target_shape, target_rate);
            let any = theta_lo.is_some() || theta_hi.is_some() || sigmas.is_some();
            if let Some(fit) = section::<Fit>(&mut cfg.fit, any) {
                overlay(&mut fit.theta_lo, theta_lo);
                overlay(&mut fit.theta_hi, theta_hi);
                overlay(&mut fit.sigmas, sigmas);
            }
            commands::fit_dist(cfg)
        }
        Command::FitMoments {
            common,
            target,
            sigma_lo,
            sigma_hi,
        } => {
            let mut cfg = merge_common(&common)?;
            merge_target(&mut cfg.target, &target, None, None);
            if let Some(fit) = section::<Fit>(&mut cfg.fit, sigma_lo.is_some() || sigma_hi.is_some()) {
                overlay(&mut fit.sigma_lo, sigma_lo);
                overlay(&mut fit.sigma_hi, sigma_hi);
            }
            commands::fit_moments(cfg)
        }
    }
}

fn configure_threads() -> Result<(), ConfigError> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| ConfigError::new(THREADS_ENV, format!("expected a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| ConfigError::new(THREADS_ENV, e.to_string()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads()
        .map_err(CliError::from)
        .and_then(|()| run(cli.command));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ou-fpt: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
