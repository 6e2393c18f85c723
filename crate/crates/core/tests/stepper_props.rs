mod common;

use pathsde::diagnostics::{check_adaptive_constraints, step_lower_bound_constant};
use pathsde::stats::{median, sample_std};
use pathsde::stepper::DEFAULT_CLAMP;
use pathsde::{integrate, RngStream, SdeError, StepController, Stepper};
use proptest::prelude::*;

use common::{nonlinear_problem, test3, test5};

fn controllers(h: f64) -> [StepController<f64>; 3] {
    [
        StepController::fixed(h).unwrap(),
        StepController::adaptive_i(0.5, h, DEFAULT_CLAMP).unwrap(),
        StepController::adaptive_ii(0.9, h, 0.1, DEFAULT_CLAMP).unwrap(),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn integration_is_bit_reproducible(seed in any::<u64>(), id in any::<u64>(), n in 1usize..64) {
        let p = test3();
        for c in controllers(1.0 / n as f64) {
            let a = integrate(&p, &c, Stepper::Explicit, &mut RngStream::new(seed, id)).unwrap();
            let b = integrate(&p, &c, Stepper::Explicit, &mut RngStream::new(seed, id)).unwrap();
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn partition_is_well_formed(seed in any::<u64>(), n in 1usize..128, implicit in any::<bool>()) {
        let p = test3();
        let stepper = if implicit { Stepper::Implicit } else { Stepper::Explicit };
        for c in controllers(1.0 / n as f64) {
            let tr = integrate(&p, &c, stepper, &mut RngStream::new(seed, 0)).unwrap();
            let rec = tr.record();
            prop_assert_eq!(*tr.times().last().unwrap(), 1.0);
            prop_assert!(tr.times().windows(2).all(|w| w[1] > w[0]));
            prop_assert!(rec.durations().iter().all(|d| *d > 0.0 && *d <= c.h() * (1.0 + 1e-9)));
            prop_assert_eq!(tr.states().len(), tr.steps() + 1);
            let mut w = 0.0;
            for (k, inc) in rec.increments().iter().enumerate() {
                w += inc[0];
                prop_assert_eq!(rec.cumulative()[k + 1][0], w);
            }
        }
    }
}

#[test]
fn fixed_grid_terminal_variance() {
    let p = test3();
    let c = StepController::fixed(0.25).unwrap();
    let w: Vec<f64> = (0..100_000)
        .map(|id| {
            let tr = integrate(&p, &c, Stepper::Explicit, &mut RngStream::new(17, id)).unwrap();
            assert_eq!(tr.steps(), 4);
            tr.record().last_cumulative()[0]
        })
        .collect();
    let var = sample_std(&w).powi(2);
    assert!((var - 1.0).abs() < 0.05, "{var}");
}

#[test]
fn adaptive_steps_respect_the_constraint_structure() {
    for (p, n) in [(test3(), 32usize), (test5(), 64), (nonlinear_problem(), 16)] {
        let h = 1.0 / n as f64;
        for c in controllers(h) {
            if p.m() != 1 && matches!(c, StepController::AdaptiveII { .. }) {
                continue;
            }
            for id in 0..300 {
                let tr = integrate(&p, &c, Stepper::Explicit, &mut RngStream::new(5, id)).unwrap();
                let rep = check_adaptive_constraints(&p, &tr, &c).unwrap();
                assert_eq!(rep.violations, 0, "{c:?} sample {id}: {rep:?}");
                assert_eq!(rep.unexplained, 0, "{c:?} sample {id}: {rep:?}");
            }
        }
    }
}

#[test]
fn adaptive_ii_needs_scalar_noise() {
    let c = StepController::adaptive_ii(0.9, 0.1, 0.1, DEFAULT_CLAMP).unwrap();
    let r = integrate(&nonlinear_problem(), &c, Stepper::Explicit, &mut RngStream::new(0, 0));
    assert!(matches!(r, Err(SdeError::Unsupported(_))));
}

#[test]
fn adaptive_i_never_takes_fewer_steps_than_fixed() {
    let p = test3();
    for n in [8usize, 32] {
        let c = StepController::adaptive_i(0.5, 1.0 / n as f64, DEFAULT_CLAMP).unwrap();
        for id in 0..200 {
            let tr = integrate(&p, &c, Stepper::Explicit, &mut RngStream::new(8, id)).unwrap();
            assert!(tr.steps() >= n);
        }
    }
}

#[test]
fn step_lower_bound_constant_is_finite_and_stable() {
    // h <= K dt^(1 - delta) with delta = 1/7, K random; medians across
    // paths should not drift by orders of magnitude under refinement
    let p = test3();
    let delta = 1.0 / 7.0;
    let mut medians = Vec::new();
    for n in [16usize, 32, 64, 128] {
        let h = 1.0 / n as f64;
        let c = StepController::adaptive_i(0.5, h, DEFAULT_CLAMP).unwrap();
        let ks: Vec<f64> = (0..200)
            .filter_map(|id| {
                let tr = integrate(&p, &c, Stepper::Explicit, &mut RngStream::new(4, id)).unwrap();
                step_lower_bound_constant(&tr, h, delta)
            })
            .collect();
        assert!(ks.iter().all(|k| k.is_finite() && *k > 0.0));
        medians.push(median(&ks));
    }
    eprintln!("median K by N: {medians:?}");
    for w in medians.windows(2) {
        assert!(w[1] / w[0] < 10.0 && w[0] / w[1] < 10.0, "{medians:?}");
    }
}
