//! Euler-Maruyama steps and the integration driver.

use crate::brownian::{gaussian_increment, BrownianRecord, RngStream};
use crate::error::{Result, SdeError};
use crate::exit::{sample_exit_cuboid, sample_region_ii, Cuboid, RegionII};
use crate::model::{eval_q, SdeProblem};
use crate::real::{all_finite, norm, Real};

/// Norm cap applied to `|q_ij|` by the adaptive controllers unless overridden.
pub const DEFAULT_CLAMP: f64 = 100.0;
pub const DEFAULT_MAX_STEPS: usize = 100_000_000;

const IMPLICIT_MAX_ITER: usize = 100;
const IMPLICIT_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stepper {
    Explicit,
    Implicit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ControllerTag {
    Fixed,
    AdaptiveI,
    AdaptiveII,
}

/// Time-step policy with maximum step `h`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepController<S> {
    Fixed { h: S },
    AdaptiveI { alpha: S, h: S, clamp: S },
    AdaptiveII { alpha: S, h: S, beta: S, clamp: S },
}

fn positive<S: Real>(name: &'static str, v: S) -> Result<S> {
    if v > S::zero() && v.is_finite() {
        Ok(v)
    } else {
        Err(SdeError::param(name, format!("must be finite and positive, got {v}")))
    }
}

impl<S: Real> StepController<S> {
    pub fn fixed(h: S) -> Result<Self> {
        Ok(Self::Fixed { h: positive("h", h)? })
    }

    pub fn adaptive_i(alpha: S, h: S, clamp: S) -> Result<Self> {
        Ok(Self::AdaptiveI {
            alpha: positive("alpha", alpha)?,
            h: positive("h", h)?,
            clamp: positive("clamp", clamp)?,
        })
    }

    pub fn adaptive_ii(alpha: S, h: S, beta: S, clamp: S) -> Result<Self> {
        if !(beta > S::zero() && beta < S::one()) {
            return Err(SdeError::param("beta", format!("must lie in (0, 1), got {beta}")));
        }
        Ok(Self::AdaptiveII {
            alpha: positive("alpha", alpha)?,
            h: positive("h", h)?,
            beta,
            clamp: positive("clamp", clamp)?,
        })
    }

    pub fn h(&self) -> S {
        match *self {
            Self::Fixed { h } | Self::AdaptiveI { h, .. } | Self::AdaptiveII { h, .. } => h,
        }
    }

    pub fn tag(&self) -> ControllerTag {
        match self {
            Self::Fixed { .. } => ControllerTag::Fixed,
            Self::AdaptiveI { .. } => ControllerTag::AdaptiveI,
            Self::AdaptiveII { .. } => ControllerTag::AdaptiveII,
        }
    }
}

/// `y + g_0(y) dt + sum_j g_j(y) dW^j`.
pub fn em_step<S: Real>(problem: &SdeProblem<S>, y: &[S], dt: S, dw: &[S]) -> Result<Vec<S>> {
    check_step_args(problem, y, dt, dw)?;
    let mut out = y.to_vec();
    let mut g = vec![S::zero(); problem.d()];
    let weights = std::iter::once(dt).chain(dw.iter().copied());
    for (field, w) in problem.fields().iter().zip(weights) {
        field.eval_into(y, &mut g);
        for (o, gi) in out.iter_mut().zip(&g) {
            *o = *o + *gi * w;
        }
    }
    if !all_finite(&out) {
        return Err(SdeError::Overflow { step: None });
    }
    Ok(out)
}

/// Drift-implicit step: solves `z = y + g_0(z) dt + sum_j g_j(y) dW^j`
/// by fixed-point iteration, halving the relaxation factor whenever the
/// residual grows.
pub fn implicit_em_step<S: Real>(problem: &SdeProblem<S>, y: &[S], dt: S, dw: &[S]) -> Result<Vec<S>> {
    check_step_args(problem, y, dt, dw)?;
    let d = problem.d();
    let mut base = y.to_vec();
    let mut g = vec![S::zero(); d];
    for (field, w) in problem.fields()[1..].iter().zip(dw) {
        field.eval_into(y, &mut g);
        for (b, gi) in base.iter_mut().zip(&g) {
            *b = *b + *gi * *w;
        }
    }
    let drift = problem.field(0);
    let tol = S::lit(IMPLICIT_RTOL) * (S::one() + norm(y));
    let mut z = base.clone();
    drift.eval_into(y, &mut g);
    for (zi, gi) in z.iter_mut().zip(&g) {
        *zi = *zi + *gi * dt;
    }
    let mut relax = S::one();
    let mut last_resid = S::infinity();
    let mut delta = vec![S::zero(); d];
    for _ in 0..IMPLICIT_MAX_ITER {
        drift.eval_into(&z, &mut g);
        for ((dl, b), (gi, zi)) in delta.iter_mut().zip(&base).zip(g.iter().zip(&z)) {
            *dl = *b + *gi * dt - *zi;
        }
        let resid = norm(&delta);
        if !resid.is_finite() {
            break;
        }
        if resid <= tol {
            return Ok(z);
        }
        if resid > last_resid {
            relax = relax / S::lit(2.0);
        }
        last_resid = resid;
        for (zi, dl) in z.iter_mut().zip(&delta) {
            *zi = *zi + relax * *dl;
        }
    }
    Err(SdeError::SolverDiverged {
        iterations: IMPLICIT_MAX_ITER,
    })
}

fn check_step_args<S: Real>(problem: &SdeProblem<S>, y: &[S], dt: S, dw: &[S]) -> Result<()> {
    if y.len() != problem.d() {
        return Err(SdeError::param("y", "dimension mismatch"));
    }
    if dw.len() != problem.m() {
        return Err(SdeError::param("dw", format!("expected {} components", problem.m())));
    }
    if !(dt > S::zero()) {
        return Err(SdeError::param("dt", format!("must be positive, got {dt}")));
    }
    Ok(())
}

/// `min(|q_ij(y)|, clamp)` for `i, j = 1..=m`, row-major `m x m`.
pub fn clamped_q_norms<S: Real>(problem: &SdeProblem<S>, y: &[S], clamp: S) -> Result<Vec<S>> {
    let q = eval_q(problem, y)?;
    let m = problem.m();
    let mut out = Vec::with_capacity(m * m);
    for i in 1..=m {
        for j in 1..=m {
            out.push(q.norm(i, j).min(clamp));
        }
    }
    Ok(out)
}

/// Box whose first exit realises the Adaptive-I rule at state `y`:
/// `a0 = min(h, remaining)`, `a_i = min_j sqrt(h) alpha / |q_ij|^(1/2)`.
pub fn adaptive_i_cuboid<S: Real>(
    problem: &SdeProblem<S>,
    y: &[S],
    remaining: S,
    alpha: S,
    h: S,
    clamp: S,
) -> Result<Cuboid<S>> {
    let m = problem.m();
    let norms = clamped_q_norms(problem, y, clamp)?;
    let scale = h.sqrt() * alpha;
    let widths = (0..m)
        .map(|i| {
            let qmax = norms[i * m..(i + 1) * m]
                .iter()
                .fold(S::zero(), |acc, q| acc.max(*q));
            if qmax > S::zero() {
                scale / qmax.sqrt()
            } else {
                S::infinity()
            }
        })
        .collect();
    Cuboid::new(h.min(remaining), widths)
}

/// Adaptive-II region at state `y`; scalar noise only.
pub fn adaptive_ii_region<S: Real>(
    problem: &SdeProblem<S>,
    y: &[S],
    remaining: S,
    alpha: S,
    h: S,
    clamp: S,
) -> Result<RegionII<S>> {
    if problem.m() != 1 {
        return Err(SdeError::Unsupported(format!(
            "Adaptive-II needs exactly one Brownian motion, the problem has {}",
            problem.m()
        )));
    }
    let qnorm = clamped_q_norms(problem, y, clamp)?[0];
    RegionII::new(qnorm, alpha, h, remaining)
}

/// Next step length and Brownian increment from state `y` at time `t_now`.
pub fn propose_step<S: Real>(
    controller: &StepController<S>,
    problem: &SdeProblem<S>,
    y: &[S],
    t_now: S,
    stream: &mut RngStream,
) -> Result<(S, Vec<S>)> {
    let remaining = problem.horizon() - t_now;
    if !(remaining > S::zero()) {
        return Err(SdeError::ZeroStep {
            remaining: remaining.to_f64_lossy(),
        });
    }
    match *controller {
        StepController::Fixed { h } => {
            // merge a sliver left over from accumulated rounding into the last step
            let dt = if remaining - h <= S::lit(1e-9) * h { remaining } else { h };
            Ok((dt, gaussian_increment(stream, dt, problem.m())?))
        }
        StepController::AdaptiveI { alpha, h, clamp } => {
            let cuboid = adaptive_i_cuboid(problem, y, remaining, alpha, h, clamp)?;
            let s = sample_exit_cuboid(stream, &cuboid);
            Ok((s.tau, s.dw))
        }
        StepController::AdaptiveII { alpha, h, beta, clamp } => {
            let region = adaptive_ii_region(problem, y, remaining, alpha, h, clamp)?;
            let (tau, dw) = sample_region_ii(stream, &region, beta)?;
            Ok((tau, vec![dw]))
        }
    }
}

/// Numerical solution on a partition of stopping times.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<S> {
    record: BrownianRecord<S>,
    states: Vec<Vec<S>>,
    controller: ControllerTag,
}

impl<S: Real> Trajectory<S> {
    pub fn new(record: BrownianRecord<S>, states: Vec<Vec<S>>, controller: ControllerTag) -> Result<Self> {
        if states.len() != record.times().len() {
            return Err(SdeError::param("states", "one state per partition time is required"));
        }
        Ok(Self {
            record,
            states,
            controller,
        })
    }

    pub fn record(&self) -> &BrownianRecord<S> {
        &self.record
    }

    pub fn times(&self) -> &[S] {
        self.record.times()
    }

    pub fn states(&self) -> &[Vec<S>] {
        &self.states
    }

    pub fn controller(&self) -> ControllerTag {
        self.controller
    }

    pub fn steps(&self) -> usize {
        self.record.steps()
    }

    /// Largest step length.
    pub fn max_step(&self) -> S {
        (0..self.steps())
            .map(|n| self.record.step_length(n))
            .fold(S::zero(), |a, b| a.max(b))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct IntegrateOptions {
    pub max_steps: usize,
}

impl Default for IntegrateOptions {
    fn default() -> Self {
        Self {
            max_steps: DEFAULT_MAX_STEPS,
        }
    }
}

pub fn integrate<S: Real>(
    problem: &SdeProblem<S>,
    controller: &StepController<S>,
    stepper: Stepper,
    stream: &mut RngStream,
) -> Result<Trajectory<S>> {
    integrate_with(problem, controller, stepper, stream, IntegrateOptions::default())
}

/// Steps from `0` to the horizon, which the last partition time equals exactly.
pub fn integrate_with<S: Real>(
    problem: &SdeProblem<S>,
    controller: &StepController<S>,
    stepper: Stepper,
    stream: &mut RngStream,
    options: IntegrateOptions,
) -> Result<Trajectory<S>> {
    let horizon = problem.horizon();
    let h = controller.h();
    if h > horizon * (S::one() + S::lit(crate::brownian::HORIZON_RTOL)) {
        return Err(SdeError::param("h", format!("maximum step {h} exceeds horizon {horizon}")));
    }
    let estimate = (horizon / h).ceil().to_usize().unwrap_or(0).saturating_add(1);
    let mut record = BrownianRecord::with_capacity(problem.m(), horizon, estimate);
    let mut states = Vec::with_capacity(estimate + 1);
    states.push(problem.y0().to_vec());
    while !record.is_complete() {
        let n = record.steps();
        if n >= options.max_steps {
            return Err(SdeError::Runaway { cap: options.max_steps });
        }
        let y = states.last().expect("initial state present");
        let (dt, dw) = propose_step(controller, problem, y, record.last_time(), stream)?;
        let next = match stepper {
            Stepper::Explicit => em_step(problem, y, dt, &dw),
            Stepper::Implicit => implicit_em_step(problem, y, dt, &dw),
        }
        .map_err(|e| match e {
            SdeError::Overflow { .. } => SdeError::Overflow { step: Some(n) },
            other => other,
        })?;
        record.record_step(dt, &dw)?;
        states.push(next);
    }
    Trajectory::new(record, states, controller.tag())
}
