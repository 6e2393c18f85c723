mod common;

use pathsde::diagnostics::{
    flow_probe, flow_probe_at, local_order_fit, local_truncation, local_truncation_errors, truncation_sum_scaling,
    write_truncation_csv, FlowReference, Reference, TruncationSums,
};
use pathsde::stats::median;
use pathsde::{integrate, RngStream, SdeError, SdeProblem, StepController, Stepper};
use proptest::prelude::*;

use common::test3;

fn fixed_reports(p: &SdeProblem<f64>, ns: &[usize], samples: u64, reference: Reference) -> Vec<pathsde::Report> {
    let mut out = Vec::new();
    for &n in ns {
        let h = 1.0 / n as f64;
        let c = StepController::fixed(h).unwrap();
        for id in 0..samples {
            let tr = integrate(p, &c, Stepper::Explicit, &mut RngStream::new(31, id)).unwrap();
            out.push(local_truncation(p, &tr, reference, h).unwrap());
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn partial_sums_are_additive(seed in any::<u64>(), n in 2usize..200, k in 0usize..1000, l in 0usize..1000, m in 0usize..1000) {
        let p = test3();
        let tr = integrate(&p, &StepController::fixed(1.0 / n as f64).unwrap(), Stepper::Explicit, &mut RngStream::new(seed, 0)).unwrap();
        let sums = TruncationSums::new(local_truncation_errors(&p, &tr, Reference::Exact).unwrap());
        let mut idx = [k % (n + 1), l % (n + 1), m % (n + 1)];
        idx.sort_unstable();
        let [k, l, m] = idx;
        let (a, b, whole) = (sums.x(k, l), sums.x(l, m), sums.x(k, m));
        for i in 0..whole.len() {
            prop_assert!((a[i] + b[i] - whole[i]).abs() <= 1e-12, "{} + {} vs {}", a[i], b[i], whole[i]);
        }
    }

    #[test]
    fn report_invariants(seed in any::<u64>(), n in 1usize..300) {
        let p = test3();
        let tr = integrate(&p, &StepController::fixed(1.0 / n as f64).unwrap(), Stepper::Explicit, &mut RngStream::new(seed, 0)).unwrap();
        let r = local_truncation(&p, &tr, Reference::Exact, 1.0 / n as f64).unwrap();
        prop_assert!(r.per_step_errors.iter().all(|e| *e >= 0.0));
        let ps = &r.partial_sums;
        prop_assert!(ps.pairs.len() <= 32);
        for pair in &ps.pairs {
            prop_assert!(pair.k < pair.n && pair.n <= n);
            prop_assert!(pair.norm >= 0.0);
        }
        let (nodes, m) = ps.matrix();
        prop_assert_eq!(m.len(), nodes.len());
        for (a, row) in m.iter().enumerate() {
            prop_assert_eq!(row[a], 0.0);
        }
    }
}

#[test]
fn deterministic_local_error_is_second_order() {
    let p = SdeProblem::gbm(1.0, 0.0, 1.0, 1.0).unwrap();
    let reports = fixed_reports(&p, &[8, 16, 32, 64, 128], 1, Reference::Exact);
    let fit = local_order_fit(&reports).unwrap();
    assert!((fit.value - 2.0).abs() <= 0.1, "{fit:?}");
}

#[test]
fn gbm_local_error_is_first_order_in_h() {
    let reports = fixed_reports(&test3(), &[16, 32, 64, 128, 256], 40, Reference::Exact);
    let fit = local_order_fit(&reports).unwrap();
    assert!((fit.value - 1.0).abs() <= 0.15, "{fit:?}");
    assert!(fit.lo <= 1.15 && fit.hi >= 0.85, "{fit:?}");
}

#[test]
fn fine_grid_reference_converges() {
    let p = test3();
    let h = 1.0 / 32.0;
    let c = StepController::fixed(h).unwrap();
    let mut coarse = Vec::new();
    let mut fine = Vec::new();
    let mut exact = Vec::new();
    for id in 0..50 {
        let tr = integrate(&p, &c, Stepper::Explicit, &mut RngStream::new(2, id)).unwrap();
        let run = |refine| {
            let r = Reference::FineGrid { refine_factor: refine, seed: 99, stream_id: id };
            local_truncation(&p, &tr, r, h).unwrap().per_step_errors
        };
        coarse.extend(run(64));
        fine.extend(run(128));
        exact.extend(local_truncation(&p, &tr, Reference::Exact, h).unwrap().per_step_errors);
    }
    let (m64, m128, mex) = (median(&coarse), median(&fine), median(&exact));
    assert!((m128 / m64 - 1.0).abs() < 0.2, "{m64} vs {m128}");
    assert!((m128 / mex - 1.0).abs() < 0.2, "{m128} vs exact {mex}");
}

#[test]
fn scaling_fit_needs_enough_data() {
    let p = test3();
    let two = fixed_reports(&p, &[16, 32], 100, Reference::Exact);
    assert!(matches!(truncation_sum_scaling(&two), Err(SdeError::Configuration(_))));
    let thin = fixed_reports(&p, &[16, 32, 64], 20, Reference::Exact);
    assert!(matches!(truncation_sum_scaling(&thin), Err(SdeError::Configuration(_))));
}

#[test]
fn deterministic_sums_scale_linearly_in_h() {
    let p = SdeProblem::gbm(1.0, 0.0, 1.0, 1.0).unwrap();
    let reports = fixed_reports(&p, &[16, 32, 64, 128], 100, Reference::Exact);
    let fit = truncation_sum_scaling(&reports).unwrap();
    assert!((fit.h_exponent.value - 1.0).abs() < 0.1, "{fit:?}");
}

#[test]
fn gbm_flow_ratios() {
    let p = test3();
    let pts = vec![(vec![1.0], vec![2.0], 0.2, 0.6), (vec![-3.0], vec![0.5], 0.2, 0.6)];
    let mut ratios = Vec::new();
    for pt in pts {
        let probe = flow_probe_at(&p, FlowReference::Exact, &[pt], &mut RngStream::new(1, 1)).unwrap();
        let s = &probe.samples[0];
        // linear flow: y(z) = G z, so the increment ratio is |G - 1|
        assert!(((s.lipschitz_ratio - 1.0).abs() - s.increment_ratio).abs() < 1e-12);
        ratios.push(s.lipschitz_ratio);
    }
    assert!((ratios[0] - ratios[1]).abs() < 1e-12 * ratios[0]);
}

#[test]
fn gbm_flow_holder_exponent() {
    let probe = flow_probe(&test3(), 4000, &mut RngStream::new(6, 0)).unwrap();
    let e = probe.holder_exponent.unwrap();
    assert!((0.3..=0.6).contains(&e), "{e}");
    assert!(probe.samples.iter().all(|s| s.lipschitz_ratio >= 0.0 && s.increment_ratio >= 0.0));
}

#[test]
fn truncation_csv_layout() {
    let p = test3();
    let reports: Vec<(u64, pathsde::Report)> =
        fixed_reports(&p, &[16], 3, Reference::Exact).into_iter().enumerate().map(|(i, r)| (i as u64, r)).collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("truncation.csv");
    write_truncation_csv(&path, &reports).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("k,n,tau_k,tau_n,norm_X,h,sample_id"));
    let per_sample = pathsde::diagnostics::subsample_pairs(16).len();
    assert_eq!(lines.count(), 3 * per_sample);
    write_truncation_csv::<f64>(&path, &[]).unwrap();
    assert_eq!(std::fs::read_to_string(&path).unwrap(), "k,n,tau_k,tau_n,norm_X,h,sample_id\n");
}
