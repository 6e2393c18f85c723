//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits non-zero if any fails.

mod common;

use std::time::Instant;

use pathsde::diagnostics::{
    check_adaptive_constraints, local_truncation, local_truncation_errors, truncation_sum_scaling, Reference,
    TruncationSums,
};
use pathsde::experiments::{
    convergence_slope, emit_outputs, matched_comparison, run_experiment, ErrorStats, ExperimentConfig, Method, Metric,
};
use pathsde::model::{gbm_exact, DEFAULT_FD_STEP};
use pathsde::stats::ks_two_sample;
use pathsde::stepper::DEFAULT_CLAMP;
use pathsde::{integrate, sample_exit_single, survival_single, ExitFace, RngStream, StepController, Stepper};

use common::{euler_exit, nonlinear_problem, q_discrepancy, test3};

const TEST3: &str = "gbm-0.1-1.2";
const TEST5: &str = "gbm-1.5-2.4";
const SLOPE_BAND: (f64, f64) = (-0.65, -0.35);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn pow2(lo: u32, hi: u32) -> Vec<usize> {
    (lo..=hi).map(|k| 1usize << k).collect()
}

fn experiment(problem: &str, method: Method, n_list: Vec<usize>, samples: usize) -> Vec<ErrorStats> {
    let mut c = ExperimentConfig::new(problem, method);
    c.n_list = n_list;
    c.samples = samples;
    c.seed = 2024;
    run_experiment(&c).expect("experiment runs")
}

fn slope_check(problem: &str, method: Method, samples: usize) -> (bool, String) {
    let table = experiment(problem, method, pow2(4, 10), samples);
    let s = convergence_slope(&table).expect("slope fit");
    let ok = (SLOPE_BAND.0..=SLOPE_BAND.1).contains(&s.value);
    (ok, format!("{method} slope {:.3} [{:.3}, {:.3}]", s.value, s.lo, s.hi))
}

fn criterion_1() -> Outcome {
    let (ok, d) = slope_check(TEST3, Method::Fixed, 2000);
    outcome(ok, format!("{d}, band {SLOPE_BAND:?}"))
}

fn criterion_2() -> Outcome {
    let (ok1, d1) = slope_check(TEST3, Method::AdaptiveI, 2000);
    let (ok2, d2) = slope_check(TEST3, Method::AdaptiveII, 2000);
    outcome(ok1 && ok2, format!("{d1}; {d2}"))
}

/// Matched points where `candidate / baseline <= threshold`, and how many were matched.
fn matched_wins(fixed: &[ErrorStats], cand: &[ErrorStats], metric: Metric, threshold: f64) -> (usize, usize, String) {
    let pts = matched_comparison(fixed, cand, metric);
    let wins = pts.iter().filter(|p| p.ratio() <= threshold).count();
    let ratios: Vec<String> = pts.iter().map(|p| format!("{:.0}:{:.3}", p.mean_steps, p.ratio())).collect();
    (wins, pts.len(), ratios.join(" "))
}

struct Test5Runs {
    fixed: Vec<ErrorStats>,
    adaptive_i: Vec<ErrorStats>,
    adaptive_ii: Vec<ErrorStats>,
}

fn test5_runs() -> Test5Runs {
    Test5Runs {
        fixed: experiment(TEST5, Method::Fixed, pow2(3, 13), 5000),
        adaptive_i: experiment(TEST5, Method::AdaptiveI, pow2(2, 6), 5000),
        adaptive_ii: experiment(TEST5, Method::AdaptiveII, pow2(2, 7), 5000),
    }
}

fn criterion_3(runs: &Test5Runs) -> Outcome {
    let mut pass = true;
    let mut detail = Vec::new();
    for (name, cand) in [("adaptive1", &runs.adaptive_i), ("adaptive2", &runs.adaptive_ii)] {
        let (wins, total, ratios) = matched_wins(&runs.fixed, cand, Metric::E2, 0.9);
        pass &= total > 0 && 2 * wins >= total;
        detail.push(format!("{name} E2 ratio <= 0.9 at {wins}/{total} [{ratios}]"));
    }
    outcome(pass, detail.join("; "))
}

fn criterion_4(runs: &Test5Runs) -> Outcome {
    let fixed3 = experiment(TEST3, Method::Fixed, pow2(4, 12), 5000);
    let adaptive3 = experiment(TEST3, Method::AdaptiveII, pow2(3, 10), 5000);
    let mut pass = true;
    let mut detail = Vec::new();
    for (name, fixed, cand) in [(TEST3, &fixed3, &adaptive3), (TEST5, &runs.fixed, &runs.adaptive_ii)] {
        let pts = matched_comparison(fixed, cand, Metric::Sigma);
        let wins = pts.iter().filter(|p| p.candidate < p.baseline).count();
        let ratios: Vec<String> = pts.iter().map(|p| format!("{:.0}:{:.3}", p.mean_steps, p.ratio())).collect();
        pass &= !pts.is_empty() && 2 * wins >= pts.len();
        detail.push(format!("{name} adaptive2 sigma below fixed at {wins}/{} [{}]", pts.len(), ratios.join(" ")));
    }
    outcome(pass, detail.join("; "))
}

fn criterion_5() -> Outcome {
    let n = 100_000;
    let mut pass = true;
    let mut detail = Vec::new();
    for (k, &(a0, a1)) in [(0.1, 0.05), (0.1, 0.5), (1.0, 1.0)].iter().enumerate() {
        let mut stream = RngStream::new(55, k as u64);
        let mut hits = 0usize;
        let sampled: Vec<f64> = (0..n)
            .map(|_| {
                let s = sample_exit_single(&mut stream, a0, a1).unwrap();
                hits += usize::from(matches!(s.face, ExitFace::Space { .. }));
                s.tau
            })
            .collect();
        let mut oracle_stream = RngStream::new(56, k as u64);
        let oracle: Vec<f64> = (0..n).map(|_| euler_exit(&mut oracle_stream, a0, a1, a0 * 1e-4).0).collect();
        let ks = ks_two_sample(&sampled, &oracle);
        let p = 1.0 - survival_single(a1, a0).unwrap();
        let se = (p * (1.0 - p) / n as f64).sqrt();
        let freq = hits as f64 / n as f64;
        let ok = ks.p_value > 0.001 && (freq - p).abs() <= 3.0 * se;
        pass &= ok;
        detail.push(format!(
            "({a0}, {a1}): KS p={:.3}, P(space) {freq:.5} vs {p:.5} ({:.1} se)",
            ks.p_value,
            (freq - p).abs() / se.max(f64::MIN_POSITIVE)
        ));
    }
    outcome(pass, detail.join("; "))
}

fn criterion_6() -> Outcome {
    let p = test3();
    let h = 1.0 / 64.0;
    let mut pass = true;
    let mut detail = Vec::new();
    for c in [
        StepController::adaptive_i(0.5, h, DEFAULT_CLAMP).unwrap(),
        StepController::adaptive_ii(0.9, h, 0.1, DEFAULT_CLAMP).unwrap(),
    ] {
        let (mut steps, mut violations, mut unexplained) = (0, 0, 0);
        for id in 0..10_000 {
            let tr = integrate(&p, &c, Stepper::Explicit, &mut RngStream::new(66, id)).unwrap();
            let rep = check_adaptive_constraints(&p, &tr, &c).unwrap();
            steps += rep.steps;
            violations += rep.violations;
            unexplained += rep.unexplained;
        }
        pass &= violations == 0 && unexplained == 0;
        detail.push(format!("{:?}: {violations} violations, {unexplained} unexplained in {steps} steps", c.tag()));
    }
    outcome(pass, detail.join("; "))
}

fn criterion_7() -> Outcome {
    let p = test3();
    let mut reports = Vec::new();
    for n in pow2(4, 10) {
        let h = 1.0 / n as f64;
        let c = StepController::fixed(h).unwrap();
        for id in 0..200 {
            let tr = integrate(&p, &c, Stepper::Explicit, &mut RngStream::new(77, id)).unwrap();
            reports.push(local_truncation(&p, &tr, Reference::Exact, h).unwrap());
        }
    }
    let fit = truncation_sum_scaling(&reports).unwrap();
    let band = 0.35..=0.65;
    let (t, hx) = (fit.time_exponent, fit.h_exponent);
    let pass = band.contains(&t.value) && band.contains(&hx.value) && t.contains(0.5) && hx.contains(0.5);
    outcome(
        pass,
        format!(
            "time exponent {:.3} [{:.3}, {:.3}], h exponent {:.3} [{:.3}, {:.3}]",
            t.value, t.lo, t.hi, hx.value, hx.lo, hx.hi
        ),
    )
}

fn criterion_8() -> Outcome {
    let mut stream = RngStream::new(88, 0);
    let mut detail = Vec::new();

    let worst_q = (0..100)
        .map(|_| {
            let y = [3.0 * stream.uniform::<f64>() - 1.5, 3.0 * stream.uniform::<f64>() - 1.5];
            q_discrepancy(&nonlinear_problem(), &y, DEFAULT_FD_STEP)
        })
        .fold(0.0, f64::max);
    let q_ok = worst_q < 1e-5;
    detail.push(format!("q fd {worst_q:.1e}"));

    let worst_flow = (0..1000)
        .map(|_| {
            let u = |s: &mut RngStream, lo: f64, hi: f64| lo + (hi - lo) * s.uniform::<f64>();
            let (mu, sigma, y0) = (u(&mut stream, -2.0, 2.0), u(&mut stream, 0.0, 3.0), u(&mut stream, 0.1, 10.0));
            let (t, s) = (u(&mut stream, 0.0, 1.0), u(&mut stream, 0.0, 1.0));
            let (w1, w2) = (stream.standard_normal::<f64>(), stream.standard_normal::<f64>());
            let whole = gbm_exact(mu, sigma, y0, t + s, w1 + w2);
            let split = gbm_exact(mu, sigma, gbm_exact(mu, sigma, y0, t, w1), s, w2);
            ((whole - split) / whole).abs()
        })
        .fold(0.0, f64::max);
    let flow_ok = worst_flow <= 1e-12;
    detail.push(format!("flow {worst_flow:.1e}"));

    let p = test3();
    let mut worst_add = 0.0f64;
    for id in 0..20 {
        let n = 50 + 37 * id as usize;
        let c = StepController::fixed(1.0 / n as f64).unwrap();
        let tr = integrate(&p, &c, Stepper::Explicit, &mut RngStream::new(8, id)).unwrap();
        let sums = TruncationSums::new(local_truncation_errors(&p, &tr, Reference::Exact).unwrap());
        for _ in 0..50 {
            let mut idx: Vec<usize> = (0..3).map(|_| (stream.uniform::<f64>() * (n + 1) as f64) as usize).collect();
            idx.sort_unstable();
            let (a, b, whole) = (sums.x(idx[0], idx[1]), sums.x(idx[1], idx[2]), sums.x(idx[0], idx[2]));
            worst_add = worst_add.max((a[0] + b[0] - whole[0]).abs());
        }
    }
    let add_ok = worst_add <= 1e-12;
    detail.push(format!("additivity {worst_add:.1e}"));

    let mut repro_ok = true;
    for c in [
        StepController::fixed(1.0 / 64.0).unwrap(),
        StepController::adaptive_i(0.5, 1.0 / 64.0, DEFAULT_CLAMP).unwrap(),
        StepController::adaptive_ii(0.9, 1.0 / 64.0, 0.1, DEFAULT_CLAMP).unwrap(),
    ] {
        for id in 0..20 {
            let a = integrate(&p, &c, Stepper::Explicit, &mut RngStream::new(9, id)).unwrap();
            let b = integrate(&p, &c, Stepper::Explicit, &mut RngStream::new(9, id)).unwrap();
            repro_ok &= a == b;
        }
    }
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut bytes = Vec::new();
    for d in &dirs {
        let mut all = Vec::new();
        for m in Method::ALL {
            all.extend(experiment(TEST3, m, vec![8, 16, 32], 100));
        }
        emit_outputs(&all, d.path(), true).unwrap();
        let files: Vec<Vec<u8>> = ["stats.csv", "scatter.csv", "steps.csv", "e2.svg", "sigma.svg"]
            .iter()
            .map(|f| std::fs::read(d.path().join(f)).unwrap())
            .collect();
        bytes.push(files);
    }
    repro_ok &= bytes[0] == bytes[1];
    detail.push(format!("reproducible {repro_ok}"));

    outcome(q_ok && flow_ok && add_ok && repro_ok, detail.join(", "))
}

fn main() {
    // numeric arguments select criteria, e.g. `cargo test --test acceptance -- 3 7`
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let selected = |k: usize| only.is_empty() || only.contains(&k);
    let mut all_pass = true;
    let mut report = |k: usize, f: &dyn Fn() -> Outcome| {
        if !selected(k) {
            return;
        }
        let start = Instant::now();
        let o = f();
        all_pass &= o.pass;
        println!(
            "criterion {k}: {} ({:.1}s) {}",
            if o.pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            o.detail
        );
    };
    report(1, &criterion_1);
    report(2, &criterion_2);
    let runs = if selected(3) || selected(4) { Some(test5_runs()) } else { None };
    if let Some(runs) = &runs {
        report(3, &|| criterion_3(runs));
        report(4, &|| criterion_4(runs));
    }
    report(5, &criterion_5);
    report(6, &criterion_6);
    report(7, &criterion_7);
    report(8, &criterion_8);
    if !all_pass {
        println!("acceptance: FAILED");
        std::process::exit(1);
    }
    println!("acceptance: all criteria passed");
}
