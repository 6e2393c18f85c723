use std::path::PathBuf;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use pathsde::diagnostics::{
    check_adaptive_constraints, flow_probe, local_order_fit, local_truncation, step_lower_bound_constant,
    truncation_sum_scaling, write_truncation_csv, Reference,
};
use pathsde::experiments::{
    convergence_slope, emit_outputs, matched_comparison, run_experiment, ErrorStats, ExperimentConfig, Method, Metric,
    DEFAULT_BETA, DEFAULT_SAMPLES,
};
use pathsde::stepper::DEFAULT_CLAMP;
use pathsde::{integrate, problem_by_key, RngStream, Stepper};

#[derive(Parser)]
#[command(name = "pathsde", version, about = "Fixed and adaptive Euler-Maruyama experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Error and step-count statistics over a list of N
    Run(RunArgs),
    /// Truncation errors, flow continuity and constraint checks
    Diagnose(DiagnoseArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum StepperArg {
    Explicit,
    Implicit,
}

impl From<StepperArg> for Stepper {
    fn from(s: StepperArg) -> Self {
        match s {
            StepperArg::Explicit => Stepper::Explicit,
            StepperArg::Implicit => Stepper::Implicit,
        }
    }
}

#[derive(Args)]
struct Common {
    /// Problem key, e.g. gbm-0.1-1.2
    #[arg(long, default_value = "gbm-0.1-1.2")]
    problem: String,
    /// Comma-separated: fixed, adaptive1, adaptive2
    #[arg(long, value_delimiter = ',', default_value = "fixed")]
    method: Vec<String>,
    #[arg(long, value_enum, default_value = "explicit")]
    stepper: StepperArg,
    /// Defaults to 0.5 for adaptive1 and 0.9 for adaptive2
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_BETA)]
    beta: f64,
    #[arg(long, default_value_t = DEFAULT_CLAMP)]
    clamp: f64,
    /// Comma-separated list of N, with h = T/N
    #[arg(long = "N", value_delimiter = ',', default_value = "16,32,64,128,256,512,1024")]
    n_list: Vec<usize>,
    #[arg(long, default_value_t = DEFAULT_SAMPLES)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

impl Common {
    fn configs(&self) -> Result<Vec<ExperimentConfig>> {
        let mut out = Vec::new();
        for name in &self.method {
            let method: Method = name.trim().parse()?;
            let mut c = ExperimentConfig::new(&self.problem, method);
            c.stepper = self.stepper.into();
            c.alpha = self.alpha.unwrap_or(method.default_alpha());
            c.beta = self.beta;
            c.clamp = self.clamp;
            c.n_list = self.n_list.clone();
            c.samples = self.samples;
            c.seed = self.seed;
            c.out = Some(self.out.clone());
            c.validate()?;
            out.push(c);
        }
        Ok(out)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// Skip the SVG charts
    #[arg(long)]
    no_charts: bool,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[command(flatten)]
    common: Common,
    /// Sub-steps per step for the fine-grid reference; 0 uses the exact solution
    #[arg(long, default_value_t = 0)]
    refine: usize,
    /// Number of random initial-state pairs for the flow probe
    #[arg(long, default_value_t = 200)]
    pairs: usize,
}

fn run(args: &RunArgs) -> Result<()> {
    let mut all: Vec<ErrorStats> = Vec::new();
    for cfg in args.common.configs()? {
        let start = Instant::now();
        let table = run_experiment(&cfg).with_context(|| format!("method {}", cfg.method))?;
        eprintln!("{}: {:.1}s", cfg.method, start.elapsed().as_secs_f64());
        for s in &table {
            println!(
                "{:<10} N={:<6} mean_steps={:<10.2} E2={:<12.6e} sigma_E={:<12.6e} failures={}",
                s.method, s.n, s.mean_steps, s.e2, s.sigma, s.failures
            );
        }
        match convergence_slope(&table) {
            Ok(e) => println!("{} slope {:.3} [{:.3}, {:.3}]", cfg.method, e.value, e.lo, e.hi),
            Err(e) => println!("{} slope unavailable: {e}", cfg.method),
        }
        all.extend(table);
    }
    let fixed: Vec<ErrorStats> = all.iter().filter(|s| s.method == Method::Fixed).cloned().collect();
    if !fixed.is_empty() {
        for method in [Method::AdaptiveI, Method::AdaptiveII] {
            let cand: Vec<ErrorStats> = all.iter().filter(|s| s.method == method).cloned().collect();
            for (metric, label) in [(Metric::E2, "E2"), (Metric::Sigma, "sigma_E")] {
                for p in matched_comparison(&fixed, &cand, metric) {
                    println!(
                        "{method} vs fixed at {:.1} steps: {label} ratio {:.3}",
                        p.mean_steps,
                        p.ratio()
                    );
                }
            }
        }
    }
    let written = emit_outputs(&all, &args.common.out, !args.no_charts)?;
    for p in written {
        eprintln!("wrote {}", p.display());
    }
    Ok(())
}

fn diagnose(args: &DiagnoseArgs) -> Result<()> {
    let common = &args.common;
    let problem = problem_by_key::<f64>(&common.problem)?;
    let mut rows = Vec::new();
    for cfg in common.configs()? {
        let mut reports = Vec::new();
        for &n in &cfg.n_list {
            let h = problem.horizon() / n as f64;
            let controller = cfg.controller(h)?;
            let per_sample: Vec<_> = (0..cfg.samples as u64)
                .into_par_iter()
                .map(|id| -> pathsde::Result<_> {
                    let traj = integrate(&problem, &controller, cfg.stepper, &mut RngStream::new(cfg.seed, id))?;
                    let reference = if args.refine == 0 {
                        Reference::Exact
                    } else {
                        Reference::FineGrid {
                            refine_factor: args.refine,
                            seed: cfg.seed ^ 0x9e37_79b9_7f4a_7c15,
                            stream_id: id,
                        }
                    };
                    let report = local_truncation(&problem, &traj, reference, h)?;
                    let constraints = check_adaptive_constraints(&problem, &traj, &controller)?;
                    let k = step_lower_bound_constant(&traj, h, 1.0 / 7.0);
                    Ok((id, report, constraints, k))
                })
                .collect::<pathsde::Result<_>>()?;
            let (mut violations, mut steps, mut kmax) = (0, 0, 0.0f64);
            for (id, report, c, k) in per_sample {
                violations += c.violations;
                steps += c.steps;
                kmax = kmax.max(k.unwrap_or(0.0));
                reports.push((id, report));
            }
            println!(
                "{} N={n}: {steps} steps, {violations} constraint violations, max h/dt^(6/7) = {kmax:.3}",
                cfg.method
            );
        }
        let plain: Vec<_> = reports.iter().map(|(_, r)| r.clone()).collect();
        match local_order_fit(&plain) {
            Ok(e) => println!("{} per-step error exponent in h: {:.3} [{:.3}, {:.3}]", cfg.method, e.value, e.lo, e.hi),
            Err(e) => println!("{} per-step error exponent unavailable: {e}", cfg.method),
        }
        match truncation_sum_scaling(&plain) {
            Ok(f) => println!(
                "{} X_kn exponents: time {:.3} [{:.3}, {:.3}], h {:.3} [{:.3}, {:.3}]",
                cfg.method,
                f.time_exponent.value,
                f.time_exponent.lo,
                f.time_exponent.hi,
                f.h_exponent.value,
                f.h_exponent.lo,
                f.h_exponent.hi
            ),
            Err(e) => println!("{} X_kn scaling unavailable: {e}", cfg.method),
        }
        rows.extend(reports);
    }
    std::fs::create_dir_all(&common.out).with_context(|| format!("creating {}", common.out.display()))?;
    let path = common.out.join("truncation.csv");
    write_truncation_csv(&path, &rows)?;
    eprintln!("wrote {}", path.display());

    let probe = flow_probe(&problem, args.pairs, &mut RngStream::new(common.seed, u64::MAX))?;
    println!(
        "flow probe over {} pairs: max Lipschitz ratio {:.4}, max scaled increment ratio {:.4}, exponent {}",
        probe.samples.len(),
        probe.max_lipschitz_ratio,
        probe.max_scaled_increment_ratio,
        probe.holder_exponent.map_or("n/a".to_string(), |v| format!("{v:.3}"))
    );
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Run(a) => run(a),
        Command::Diagnose(a) => {
            if a.refine != 0 && a.refine < 10 {
                bail!("--refine must be 0 or at least 10");
            }
            diagnose(a)
        }
    }
}
