//! Monte Carlo harness: error statistics against mean step count for the
//! fixed and adaptive controllers, convergence slopes and matched
//! comparisons between methods.

mod output;
mod svg;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use rayon::prelude::*;

pub use output::{emit_outputs, read_stats_csv, write_trajectory_csv, StatsRow};

use crate::brownian::RngStream;
use crate::error::{Result, SdeError};
use crate::model::{problem_by_key, SdeProblem};
use crate::stats::{self, Estimate, BOOTSTRAP_LEVEL, BOOTSTRAP_RESAMPLES};
use crate::stepper::{integrate, StepController, Stepper, Trajectory, DEFAULT_CLAMP};

pub const DEFAULT_ALPHA_I: f64 = 0.5;
pub const DEFAULT_ALPHA_II: f64 = 0.9;
pub const DEFAULT_BETA: f64 = 0.1;
pub const DEFAULT_SAMPLES: usize = 5000;
pub const DEFAULT_N_LIST: [usize; 7] = [16, 32, 64, 128, 256, 512, 1024];
/// Largest tolerated fraction of failed samples.
pub const MAX_FAILURE_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Fixed,
    AdaptiveI,
    AdaptiveII,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Fixed, Method::AdaptiveI, Method::AdaptiveII];

    pub fn name(self) -> &'static str {
        match self {
            Method::Fixed => "fixed",
            Method::AdaptiveI => "adaptive1",
            Method::AdaptiveII => "adaptive2",
        }
    }

    pub fn default_alpha(self) -> f64 {
        match self {
            Method::AdaptiveII => DEFAULT_ALPHA_II,
            _ => DEFAULT_ALPHA_I,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = SdeError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| SdeError::Configuration(format!("unknown method `{s}` (fixed, adaptive1, adaptive2)")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub problem: String,
    pub method: Method,
    pub stepper: Stepper,
    pub alpha: f64,
    pub beta: f64,
    pub clamp: f64,
    pub n_list: Vec<usize>,
    pub samples: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Defaults for `method`: `alpha` 0.5 or 0.9, `beta` 0.1, clamp 100,
    /// 5000 samples over `N = 16..1024`.
    pub fn new(problem: impl Into<String>, method: Method) -> Self {
        Self {
            problem: problem.into(),
            method,
            stepper: Stepper::Explicit,
            alpha: method.default_alpha(),
            beta: DEFAULT_BETA,
            clamp: DEFAULT_CLAMP,
            n_list: DEFAULT_N_LIST.to_vec(),
            samples: DEFAULT_SAMPLES,
            seed: 0,
            out: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(SdeError::Configuration("need at least one sample".into()));
        }
        if self.n_list.is_empty() {
            return Err(SdeError::Configuration("the N list is empty".into()));
        }
        if self.n_list[0] == 0 || self.n_list.windows(2).any(|w| w[0] >= w[1]) {
            return Err(SdeError::Configuration(format!(
                "the N list must be positive and strictly increasing, got {:?}",
                self.n_list
            )));
        }
        Ok(())
    }

    pub fn controller(&self, h: f64) -> Result<StepController<f64>> {
        match self.method {
            Method::Fixed => StepController::fixed(h),
            Method::AdaptiveI => StepController::adaptive_i(self.alpha, h, self.clamp),
            Method::AdaptiveII => StepController::adaptive_ii(self.alpha, h, self.beta, self.clamp),
        }
    }
}

/// Per-sample errors and step counts for one `(method, N)`; failed samples
/// are left out of every field except `failures`.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorStats {
    pub method: Method,
    pub n: usize,
    pub sample_ids: Vec<u64>,
    pub e_values: Vec<f64>,
    pub steps: Vec<usize>,
    pub e2: f64,
    pub sigma: f64,
    pub mean_steps: f64,
    pub sigma_steps: f64,
    pub failures: usize,
}

impl ErrorStats {
    pub fn from_samples(method: Method, n: usize, sample_ids: Vec<u64>, e_values: Vec<f64>, steps: Vec<usize>, failures: usize) -> Self {
        let counts: Vec<f64> = steps.iter().map(|&s| s as f64).collect();
        Self {
            method,
            n,
            e2: e_values.iter().map(|e| e * e).sum::<f64>().sqrt(),
            sigma: stats::sample_std(&e_values),
            mean_steps: stats::mean(&counts),
            sigma_steps: stats::sample_std(&counts),
            sample_ids,
            e_values,
            steps,
            failures,
        }
    }

    pub fn samples(&self) -> usize {
        self.e_values.len()
    }
}

/// `max_n |y_n - y(tau_n)| / max_n |y(tau_n)|`, exact values taken on the
/// trajectory's own Brownian path. Vector states use the Euclidean norm.
pub fn relative_error(traj: &Trajectory<f64>, problem: &SdeProblem<f64>) -> Result<f64> {
    if problem.exact().is_none() {
        return Err(SdeError::Configuration("the problem has no exact solution".into()));
    }
    let record = traj.record();
    let (mut num, mut z) = (0.0f64, 0.0f64);
    for ((t, w), y) in record.times().iter().zip(record.cumulative()).zip(traj.states()) {
        let exact = problem.exact_solution(*t, w).expect("exact solution present");
        let diff: f64 = exact.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let size: f64 = exact.iter().map(|a| a * a).sum::<f64>().sqrt();
        num = num.max(diff);
        z = z.max(size);
    }
    if z == 0.0 {
        return Err(SdeError::DegenerateNormalizer);
    }
    Ok(num / z)
}

fn run_sample(problem: &SdeProblem<f64>, controller: &StepController<f64>, stepper: Stepper, seed: u64, id: u64) -> Result<(f64, usize)> {
    let mut stream = RngStream::new(seed, id);
    let traj = integrate(problem, controller, stepper, &mut stream)?;
    let e = relative_error(&traj, problem)?;
    if !e.is_finite() {
        return Err(SdeError::Overflow { step: None });
    }
    Ok((e, traj.steps()))
}

/// One `ErrorStats` per `N`. Sample `j` uses stream `j` under the config
/// seed for every `N` and every method, so results are reproducible and
/// methods see common random numbers.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<ErrorStats>> {
    config.validate()?;
    let problem = problem_by_key::<f64>(&config.problem)?;
    let mut table = Vec::with_capacity(config.n_list.len());
    for &n in &config.n_list {
        let h = problem.horizon() / n as f64;
        let controller = config.controller(h)?;
        let outcomes: Vec<Result<(f64, usize)>> = (0..config.samples as u64)
            .into_par_iter()
            .map(|id| run_sample(&problem, &controller, config.stepper, config.seed, id))
            .collect();
        let (mut ids, mut es, mut steps) = (Vec::new(), Vec::new(), Vec::new());
        let mut failures = 0;
        for (id, out) in outcomes.into_iter().enumerate() {
            match out {
                Ok((e, s)) => {
                    ids.push(id as u64);
                    es.push(e);
                    steps.push(s);
                }
                Err(SdeError::Overflow { .. }) | Err(SdeError::SolverDiverged { .. }) | Err(SdeError::Runaway { .. }) => {
                    failures += 1
                }
                Err(other) => return Err(other),
            }
        }
        if failures as f64 > MAX_FAILURE_FRACTION * config.samples as f64 {
            return Err(SdeError::TooManyFailures {
                failures,
                samples: config.samples,
            });
        }
        table.push(ErrorStats::from_samples(config.method, n, ids, es, steps, failures));
    }
    Ok(table)
}

/// Least-squares slope of log `E2` against log mean step count, with a
/// bootstrap interval from resampling trajectories within each `N`.
pub fn convergence_slope(table: &[ErrorStats]) -> Result<Estimate> {
    if table.len() < 4 {
        return Err(SdeError::Configuration(format!("need at least 4 values of N, got {}", table.len())));
    }
    let lo = table.iter().map(|s| s.mean_steps).fold(f64::INFINITY, f64::min);
    let hi = table.iter().map(|s| s.mean_steps).fold(0.0, f64::max);
    if !(lo > 0.0) || (hi / lo).log10() < 1.5 {
        return Err(SdeError::Configuration(format!(
            "mean step counts {lo}..{hi} span less than 1.5 decades"
        )));
    }
    let fit = |rows: &[(f64, f64)]| -> f64 {
        let x: Vec<f64> = rows.iter().map(|r| r.0.ln()).collect();
        let y: Vec<f64> = rows.iter().map(|r| r.1.ln()).collect();
        stats::ols(&x, &y).map_or(f64::NAN, |f| f.slope)
    };
    let point: Vec<(f64, f64)> = table.iter().map(|s| (s.mean_steps, s.e2)).collect();
    let value = fit(&point);
    let mut rng = RngStream::new(0x5eed, 3);
    let reps: Vec<f64> = (0..BOOTSTRAP_RESAMPLES)
        .map(|_| {
            let rows: Vec<(f64, f64)> = table
                .iter()
                .map(|s| {
                    let n = s.samples();
                    let (mut steps, mut sq) = (0.0, 0.0);
                    for _ in 0..n {
                        let k = rand::Rng::random_range(&mut rng, 0..n);
                        steps += s.steps[k] as f64;
                        sq += s.e_values[k] * s.e_values[k];
                    }
                    (steps / n as f64, sq.sqrt())
                })
                .collect();
            fit(&rows)
        })
        .collect();
    let (lo, hi) = stats::percentile_interval(&reps, BOOTSTRAP_LEVEL);
    Ok(Estimate { value, lo, hi })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    E2,
    Sigma,
}

impl Metric {
    fn of(self, s: &ErrorStats) -> f64 {
        match self {
            Metric::E2 => s.e2,
            Metric::Sigma => s.sigma,
        }
    }
}

/// An adaptive result next to the baseline interpolated to the same mean step count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchedPoint {
    pub mean_steps: f64,
    pub baseline: f64,
    pub candidate: f64,
}

impl MatchedPoint {
    /// `candidate / baseline`.
    pub fn ratio(&self) -> f64 {
        self.candidate / self.baseline
    }
}

/// Interpolates `metric` of `baseline` linearly in log-log coordinates at
/// each mean step count of `candidate` inside the baseline's range.
pub fn matched_comparison(baseline: &[ErrorStats], candidate: &[ErrorStats], metric: Metric) -> Vec<MatchedPoint> {
    let mut base: Vec<(f64, f64)> = baseline
        .iter()
        .map(|s| (s.mean_steps.ln(), metric.of(s).ln()))
        .collect();
    base.sort_by(|a, b| a.0.total_cmp(&b.0));
    candidate
        .iter()
        .filter_map(|c| {
            let x = c.mean_steps.ln();
            let k = base.windows(2).position(|w| w[0].0 <= x && x <= w[1].0)?;
            let (a, b) = (base[k], base[k + 1]);
            let y = if b.0 > a.0 {
                a.1 + (b.1 - a.1) * (x - a.0) / (b.0 - a.0)
            } else {
                a.1
            };
            Some(MatchedPoint {
                mean_steps: c.mean_steps,
                baseline: y.exp(),
                candidate: metric.of(c),
            })
        })
        .collect()
}
