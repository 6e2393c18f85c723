#![allow(dead_code)]

use std::sync::Arc;

use pathsde::{AnalyticField, RngStream, SdeProblem, VectorField};

/// First exit of `W` from `[-a1, a1]` before `a0`, simulated on a grid of
/// width `dt`. Between grid points a Brownian bridge may still cross a
/// boundary; that happens with probability `exp(-2 (a - x)(a - y) / dt)`
/// per side and is sampled, so the grid adds no monitoring bias.
/// Returns `(tau, hit_space_face)`; a crossing is placed mid-step.
pub fn euler_exit(stream: &mut RngStream, a0: f64, a1: f64, dt: f64) -> (f64, bool) {
    let steps = (a0 / dt).round() as usize;
    let sd = dt.sqrt();
    let near = 6.0 * sd;
    let mut x = 0.0f64;
    for k in 0..steps {
        let y = x + sd * stream.standard_normal::<f64>();
        let t_mid = (k as f64 + 0.5) * dt;
        if y.abs() >= a1 {
            return (t_mid, true);
        }
        let (up_x, up_y) = (a1 - x, a1 - y);
        let (lo_x, lo_y) = (a1 + x, a1 + y);
        if up_x.min(up_y) < near || lo_x.min(lo_y) < near {
            let p_up = (-2.0 * up_x * up_y / dt).exp();
            let p_lo = (-2.0 * lo_x * lo_y / dt).exp();
            let p = 1.0 - (1.0 - p_up) * (1.0 - p_lo);
            if stream.uniform::<f64>() < p {
                return (t_mid, true);
            }
        }
        x = y;
    }
    (a0, false)
}

/// A nonlinear problem with `d = 2`, `m = 2` and hand-written derivatives:
/// `g0 = (sin y2, -y1 y2)`, `g1 = (cos y1, y1^2 / 2)`, `g2 = (y1 y2, exp(-y2^2))`.
pub fn nonlinear_problem() -> SdeProblem<f64> {
    let g0 = AnalyticField::new(
        2,
        |y: &[f64], o: &mut [f64]| {
            o[0] = y[1].sin();
            o[1] = -y[0] * y[1];
        },
        |y: &[f64], v: &[f64], o: &mut [f64]| {
            o[0] = y[1].cos() * v[1];
            o[1] = -y[1] * v[0] - y[0] * v[1];
        },
        |y: &[f64], v: &[f64], w: &[f64], o: &mut [f64]| {
            o[0] = -y[1].sin() * v[1] * w[1];
            o[1] = -(v[0] * w[1] + v[1] * w[0]);
        },
    );
    let g1 = AnalyticField::new(
        2,
        |y: &[f64], o: &mut [f64]| {
            o[0] = y[0].cos();
            o[1] = 0.5 * y[0] * y[0];
        },
        |y: &[f64], v: &[f64], o: &mut [f64]| {
            o[0] = -y[0].sin() * v[0];
            o[1] = y[0] * v[0];
        },
        |y: &[f64], v: &[f64], w: &[f64], o: &mut [f64]| {
            o[0] = -y[0].cos() * v[0] * w[0];
            o[1] = v[0] * w[0];
        },
    );
    let g2 = AnalyticField::new(
        2,
        |y: &[f64], o: &mut [f64]| {
            o[0] = y[0] * y[1];
            o[1] = (-y[1] * y[1]).exp();
        },
        |y: &[f64], v: &[f64], o: &mut [f64]| {
            o[0] = y[1] * v[0] + y[0] * v[1];
            o[1] = -2.0 * y[1] * (-y[1] * y[1]).exp() * v[1];
        },
        |y: &[f64], v: &[f64], w: &[f64], o: &mut [f64]| {
            o[0] = v[0] * w[1] + v[1] * w[0];
            o[1] = (4.0 * y[1] * y[1] - 2.0) * (-y[1] * y[1]).exp() * v[1] * w[1];
        },
    );
    let fields: Vec<Arc<dyn VectorField<f64>>> = vec![Arc::new(g0), Arc::new(g1), Arc::new(g2)];
    SdeProblem::new(fields, 1.0, vec![0.3, -0.2]).unwrap()
}

pub fn test3() -> SdeProblem<f64> {
    SdeProblem::gbm(0.1, 1.2, 1.0, 1.0).unwrap()
}

pub fn test5() -> SdeProblem<f64> {
    SdeProblem::gbm(1.5, 2.4, 1.0, 1.0).unwrap()
}

/// Largest `|a - b|` relative to `max(|b|, 1)` across two q matrices.
pub fn q_discrepancy(problem: &SdeProblem<f64>, y: &[f64], step: f64) -> f64 {
    let exact = pathsde::eval_q(problem, y).unwrap();
    let fd = pathsde::eval_q(&problem.with_finite_differences(step).unwrap(), y).unwrap();
    let m = problem.m();
    let mut worst = 0.0f64;
    for i in 0..=m {
        for j in 0..=m {
            let diff: Vec<f64> = fd.get(i, j).iter().zip(exact.get(i, j)).map(|(a, b)| a - b).collect();
            let d = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
            worst = worst.max(d / exact.norm(i, j).max(1.0));
        }
    }
    worst
}
