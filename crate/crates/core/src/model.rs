//! SDE problem definitions.
//!
//! An autonomous Itô SDE in `R^d` driven by `m` independent Brownian motions
//!
//! ```text
//! dy = g_0(y) dt + sum_{j=1..m} g_j(y) dW^j
//! ```
//!
//! is described by `m + 1` [`VectorField`]s. Adaptive controllers need the
//! second-order coefficient fields `q_ij` built from first and second
//! derivative actions of the `g_j`, so every field exposes `Dg(y)v` and
//! `D^2g(y)(v, w)` either analytically or through central differences.

use std::sync::Arc;

use crate::error::{Result, SdeError};
use crate::real::{all_finite, norm, Real};

/// Base relative step of the central-difference fallback.
pub const DEFAULT_FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DerivativeMode {
    Analytic,
    FiniteDifference,
}

/// A smooth map `R^d -> R^d` with first and second derivative actions.
///
/// The `*_into` methods write into a caller-provided buffer of length
/// [`dim`](VectorField::dim); the allocating variants are conveniences.
pub trait VectorField<S: Real>: Send + Sync {
    fn dim(&self) -> usize;

    fn eval_into(&self, y: &[S], out: &mut [S]);

    /// `Dg(y) v`.
    fn jacobian_action_into(&self, y: &[S], v: &[S], out: &mut [S]);

    /// `D^2 g(y)(v, w)`.
    fn hessian_action_into(&self, y: &[S], v: &[S], w: &[S], out: &mut [S]);

    fn derivative_mode(&self) -> DerivativeMode;

    fn eval(&self, y: &[S]) -> Vec<S> {
        let mut out = vec![S::zero(); self.dim()];
        self.eval_into(y, &mut out);
        out
    }

    fn jacobian_action(&self, y: &[S], v: &[S]) -> Vec<S> {
        let mut out = vec![S::zero(); self.dim()];
        self.jacobian_action_into(y, v, &mut out);
        out
    }

    fn hessian_action(&self, y: &[S], v: &[S], w: &[S]) -> Vec<S> {
        let mut out = vec![S::zero(); self.dim()];
        self.hessian_action_into(y, v, w, &mut out);
        out
    }
}

/// Affine field `g(y) = A y + b` with `A` stored row-major.
#[derive(Debug, Clone)]
pub struct LinearField<S> {
    dim: usize,
    matrix: Vec<S>,
    offset: Vec<S>,
}

impl<S: Real> LinearField<S> {
    pub fn new(dim: usize, matrix: Vec<S>, offset: Vec<S>) -> Result<Self> {
        if dim == 0 {
            return Err(SdeError::param("dim", "must be positive"));
        }
        if matrix.len() != dim * dim || offset.len() != dim {
            return Err(SdeError::param("matrix", "shape does not match dim"));
        }
        Ok(Self { dim, matrix, offset })
    }

    /// `g(y) = c y` in one dimension.
    pub fn scalar(coefficient: S) -> Self {
        Self {
            dim: 1,
            matrix: vec![coefficient],
            offset: vec![S::zero()],
        }
    }

    /// Constant field `g(y) = b`.
    pub fn constant(offset: Vec<S>) -> Self {
        let dim = offset.len();
        Self {
            dim,
            matrix: vec![S::zero(); dim * dim],
            offset,
        }
    }

    fn apply(&self, v: &[S], out: &mut [S]) {
        for (row, o) in self.matrix.chunks_exact(self.dim).zip(out.iter_mut()) {
            *o = row.iter().zip(v).map(|(a, x)| *a * *x).sum();
        }
    }
}

impl<S: Real> VectorField<S> for LinearField<S> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval_into(&self, y: &[S], out: &mut [S]) {
        self.apply(y, out);
        for (o, b) in out.iter_mut().zip(&self.offset) {
            *o = *o + *b;
        }
    }

    fn jacobian_action_into(&self, _y: &[S], v: &[S], out: &mut [S]) {
        self.apply(v, out);
    }

    fn hessian_action_into(&self, _y: &[S], _v: &[S], _w: &[S], out: &mut [S]) {
        out.fill(S::zero());
    }

    fn derivative_mode(&self) -> DerivativeMode {
        DerivativeMode::Analytic
    }
}

type EvalFn<S> = dyn Fn(&[S], &mut [S]) + Send + Sync;
type JacFn<S> = dyn Fn(&[S], &[S], &mut [S]) + Send + Sync;
type HessFn<S> = dyn Fn(&[S], &[S], &[S], &mut [S]) + Send + Sync;

/// Field given by user closures for the value and both derivative actions.
#[derive(Clone)]
pub struct AnalyticField<S> {
    dim: usize,
    eval: Arc<EvalFn<S>>,
    jacobian: Arc<JacFn<S>>,
    hessian: Arc<HessFn<S>>,
}

impl<S: Real> AnalyticField<S> {
    pub fn new(
        dim: usize,
        eval: impl Fn(&[S], &mut [S]) + Send + Sync + 'static,
        jacobian: impl Fn(&[S], &[S], &mut [S]) + Send + Sync + 'static,
        hessian: impl Fn(&[S], &[S], &[S], &mut [S]) + Send + Sync + 'static,
    ) -> Self {
        Self {
            dim,
            eval: Arc::new(eval),
            jacobian: Arc::new(jacobian),
            hessian: Arc::new(hessian),
        }
    }
}

impl<S: Real> VectorField<S> for AnalyticField<S> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval_into(&self, y: &[S], out: &mut [S]) {
        (self.eval)(y, out)
    }
    fn jacobian_action_into(&self, y: &[S], v: &[S], out: &mut [S]) {
        (self.jacobian)(y, v, out)
    }
    fn hessian_action_into(&self, y: &[S], v: &[S], w: &[S], out: &mut [S]) {
        (self.hessian)(y, v, w, out)
    }
    fn derivative_mode(&self) -> DerivativeMode {
        DerivativeMode::Analytic
    }
}

/// Eval-only field whose derivative actions come from central differences.
///
/// The perturbation along a direction `v` has length
/// `step * max(1, |y|)`. Second differences use `step^(3/4)` instead, which
/// maps the balanced first-difference step `eps^(1/3)` onto the balanced
/// second-difference step `eps^(1/4)`.
#[derive(Clone)]
pub struct FiniteDifferenceField<S> {
    dim: usize,
    eval: Arc<EvalFn<S>>,
    step: S,
}

/// Wraps an eval-only map with central-difference derivative actions.
pub fn finite_difference_derivatives<S: Real>(
    dim: usize,
    g: impl Fn(&[S], &mut [S]) + Send + Sync + 'static,
    step: S,
) -> Result<FiniteDifferenceField<S>> {
    if !(step > S::zero()) || !step.is_finite() {
        return Err(SdeError::param("step", format!("must be positive, got {step}")));
    }
    if dim == 0 {
        return Err(SdeError::param("dim", "must be positive"));
    }
    Ok(FiniteDifferenceField {
        dim,
        eval: Arc::new(g),
        step,
    })
}

impl<S: Real> FiniteDifferenceField<S> {
    /// Discards the derivative actions of `field` and differentiates its
    /// values numerically instead.
    pub fn from_field(field: Arc<dyn VectorField<S>>, step: S) -> Result<Self> {
        let dim = field.dim();
        finite_difference_derivatives(dim, move |y, out| field.eval_into(y, out), step)
    }

    fn scale(&self, y: &[S]) -> S {
        self.step * norm(y).max(S::one())
    }
}

fn axpy_into<S: Real>(y: &[S], terms: &[(S, &[S])], out: &mut [S]) {
    out.copy_from_slice(y);
    for (c, v) in terms {
        for (o, x) in out.iter_mut().zip(v.iter()) {
            *o = *o + *c * *x;
        }
    }
}

impl<S: Real> VectorField<S> for FiniteDifferenceField<S> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval_into(&self, y: &[S], out: &mut [S]) {
        (self.eval)(y, out)
    }

    fn jacobian_action_into(&self, y: &[S], v: &[S], out: &mut [S]) {
        let vn = norm(v);
        if vn == S::zero() {
            out.fill(S::zero());
            return;
        }
        let eps = self.scale(y) / vn;
        let mut yp = vec![S::zero(); y.len()];
        let mut gp = vec![S::zero(); self.dim];
        axpy_into(y, &[(eps, v)], &mut yp);
        (self.eval)(&yp, &mut gp);
        axpy_into(y, &[(-eps, v)], &mut yp);
        (self.eval)(&yp, out);
        let two_eps = eps + eps;
        for (o, p) in out.iter_mut().zip(&gp) {
            *o = (*p - *o) / two_eps;
        }
    }

    fn hessian_action_into(&self, y: &[S], v: &[S], w: &[S], out: &mut [S]) {
        let (vn, wn) = (norm(v), norm(w));
        if vn == S::zero() || wn == S::zero() {
            out.fill(S::zero());
            return;
        }
        let base = self.step.powf(S::lit(0.75)) * norm(y).max(S::one());
        let (ev, ew) = (base / vn, base / wn);
        let mut yp = vec![S::zero(); y.len()];
        let mut g = vec![S::zero(); self.dim];
        out.fill(S::zero());
        for (sv, sw, sign) in [
            (S::one(), S::one(), S::one()),
            (S::one(), -S::one(), -S::one()),
            (-S::one(), S::one(), -S::one()),
            (-S::one(), -S::one(), S::one()),
        ] {
            axpy_into(y, &[(sv * ev, v), (sw * ew, w)], &mut yp);
            (self.eval)(&yp, &mut g);
            for (o, gi) in out.iter_mut().zip(&g) {
                *o = *o + sign * *gi;
            }
        }
        let denom = S::lit(4.0) * ev * ew;
        for o in out.iter_mut() {
            *o = *o / denom;
        }
    }

    fn derivative_mode(&self) -> DerivativeMode {
        DerivativeMode::FiniteDifference
    }
}

/// Exact pathwise flow `y(s + dt; s, z)` expressed through the Brownian
/// increment over `[s, s + dt]`.
///
/// Only problems whose solution is a function of `(dt, W(s+dt) - W(s))`
/// (commutative noise, e.g. geometric Brownian motion) admit one.
pub trait ExactFlow<S: Real>: Send + Sync {
    fn flow(&self, z: &[S], dt: S, dw: &[S]) -> Vec<S>;
}

/// Closed-form flow of `dy = mu y dt + sigma y dW`.
#[derive(Debug, Clone, Copy)]
pub struct GbmFlow<S> {
    pub mu: S,
    pub sigma: S,
}

impl<S: Real> ExactFlow<S> for GbmFlow<S> {
    fn flow(&self, z: &[S], dt: S, dw: &[S]) -> Vec<S> {
        let w = dw.first().copied().unwrap_or_else(S::zero);
        vec![gbm_exact(self.mu, self.sigma, z[0], dt, w)]
    }
}

/// `y0 exp((mu - sigma^2/2) t + sigma w)`.
pub fn gbm_exact<S: Real>(mu: S, sigma: S, y0: S, t: S, w: S) -> S {
    y0 * ((mu - sigma * sigma / S::lit(2.0)) * t + sigma * w).exp()
}

/// An autonomous SDE on `[0, horizon]`.
#[derive(Clone)]
pub struct SdeProblem<S: Real> {
    fields: Vec<Arc<dyn VectorField<S>>>,
    horizon: S,
    y0: Vec<S>,
    exact: Option<Arc<dyn ExactFlow<S>>>,
}

impl<S: Real> std::fmt::Debug for SdeProblem<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SdeProblem")
            .field("d", &self.d())
            .field("m", &self.m())
            .field("horizon", &self.horizon)
            .field("y0", &self.y0)
            .field("has_exact", &self.exact.is_some())
            .finish()
    }
}

impl<S: Real> SdeProblem<S> {
    /// `fields[0]` is the drift, `fields[1..]` the diffusion fields.
    pub fn new(fields: Vec<Arc<dyn VectorField<S>>>, horizon: S, y0: Vec<S>) -> Result<Self> {
        let d = y0.len();
        if fields.is_empty() {
            return Err(SdeError::param("fields", "a drift field is required"));
        }
        if d == 0 {
            return Err(SdeError::param("y0", "state dimension must be positive"));
        }
        if let Some(j) = fields.iter().position(|g| g.dim() != d) {
            return Err(SdeError::param(
                "fields",
                format!("field {j} has dim {} but the state has dim {d}", fields[j].dim()),
            ));
        }
        if !(horizon > S::zero()) || !horizon.is_finite() {
            return Err(SdeError::param("horizon", format!("must be positive, got {horizon}")));
        }
        if !all_finite(&y0) {
            return Err(SdeError::NonFiniteInput("y0"));
        }
        Ok(Self {
            fields,
            horizon,
            y0,
            exact: None,
        })
    }

    /// Attaches an exact flow. Rejected unless it reproduces `y0` at `t = 0`.
    pub fn with_exact(mut self, exact: Arc<dyn ExactFlow<S>>) -> Result<Self> {
        let start = exact.flow(&self.y0, S::zero(), &vec![S::zero(); self.m()]);
        let tol = S::lit(1e3) * S::epsilon() * norm(&self.y0).max(S::one());
        let mismatch = start.len() != self.d()
            || start.iter().zip(&self.y0).any(|(a, b)| (*a - *b).abs() > tol);
        if mismatch {
            return Err(SdeError::param("exact", "exact(0, 0) must equal y0"));
        }
        self.exact = Some(exact);
        Ok(self)
    }

    /// `dy = mu y dt + sigma y dW`, `y(0) = y0`, with its closed-form solution.
    pub fn gbm(mu: S, sigma: S, y0: S, horizon: S) -> Result<Self> {
        let fields: Vec<Arc<dyn VectorField<S>>> = vec![
            Arc::new(LinearField::scalar(mu)),
            Arc::new(LinearField::scalar(sigma)),
        ];
        Self::new(fields, horizon, vec![y0])?.with_exact(Arc::new(GbmFlow { mu, sigma }))
    }

    pub fn d(&self) -> usize {
        self.y0.len()
    }

    pub fn m(&self) -> usize {
        self.fields.len() - 1
    }

    pub fn horizon(&self) -> S {
        self.horizon
    }

    pub fn y0(&self) -> &[S] {
        &self.y0
    }

    pub fn field(&self, j: usize) -> &dyn VectorField<S> {
        self.fields[j].as_ref()
    }

    pub fn fields(&self) -> &[Arc<dyn VectorField<S>>] {
        &self.fields
    }

    pub fn exact(&self) -> Option<&dyn ExactFlow<S>> {
        self.exact.as_deref()
    }

    /// `y(t)` on the path with `W(t) = w`, if a closed form is attached.
    pub fn exact_solution(&self, t: S, w: &[S]) -> Option<Vec<S>> {
        self.exact.as_ref().map(|e| e.flow(&self.y0, t, w))
    }

    /// Replaces every field by its finite-difference counterpart.
    pub fn with_finite_differences(&self, step: S) -> Result<Self> {
        let fields = self
            .fields
            .iter()
            .map(|g| {
                FiniteDifferenceField::from_field(g.clone(), step)
                    .map(|f| Arc::new(f) as Arc<dyn VectorField<S>>)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            fields,
            horizon: self.horizon,
            y0: self.y0.clone(),
            exact: self.exact.clone(),
        })
    }

    /// Same vector fields, different initial state.
    pub fn with_initial_state(&self, y0: Vec<S>) -> Result<Self> {
        if y0.len() != self.d() {
            return Err(SdeError::param("y0", "dimension mismatch"));
        }
        Ok(Self {
            y0,
            ..self.clone()
        })
    }
}

/// Built-in problems.
///
/// `gbm-<mu>-<sigma>` builds `dy = mu y dt + sigma y dW` on `[0, 1]` with
/// `y(0) = 1`; the two keys used by the experiments are `gbm-0.1-1.2` and
/// `gbm-1.5-2.4`.
pub fn problem_by_key<S: Real>(key: &str) -> Result<SdeProblem<S>> {
    let unknown = || SdeError::Configuration(format!("unknown problem key `{key}`"));
    let mut parts = key.splitn(3, '-');
    if parts.next() != Some("gbm") {
        return Err(unknown());
    }
    let mut coef = || -> Result<S> {
        parts
            .next()
            .and_then(|p| p.parse::<f64>().ok())
            .filter(|v| v.is_finite())
            .map(S::lit)
            .ok_or_else(unknown)
    };
    let (mu, sigma) = (coef()?, coef()?);
    SdeProblem::gbm(mu, sigma, S::one(), S::one())
}

pub const BUILTIN_PROBLEMS: [&str; 2] = ["gbm-0.1-1.2", "gbm-1.5-2.4"];

/// The second-order coefficient fields `q_ij(y)`, `i, j = 0..=m`.
#[derive(Debug, Clone, PartialEq)]
pub struct QMatrix<S> {
    m: usize,
    d: usize,
    entries: Vec<S>,
}

impl<S: Real> QMatrix<S> {
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn get(&self, i: usize, j: usize) -> &[S] {
        let k = (i * (self.m + 1) + j) * self.d;
        &self.entries[k..k + self.d]
    }

    pub fn norm(&self, i: usize, j: usize) -> S {
        norm(self.get(i, j))
    }

    fn get_mut(&mut self, i: usize, j: usize) -> &mut [S] {
        let k = (i * (self.m + 1) + j) * self.d;
        &mut self.entries[k..k + self.d]
    }
}

/// Evaluates `q_ij(y)`:
///
/// ```text
/// q_0j = Dg_j g_0 + 1/2 sum_k D^2 g_j (g_k, g_k)
/// q_ij = Dg_j g_i              (i != 0)
/// ```
pub fn eval_q<S: Real>(problem: &SdeProblem<S>, y: &[S]) -> Result<QMatrix<S>> {
    let (d, m) = (problem.d(), problem.m());
    if y.len() != d {
        return Err(SdeError::param("y", format!("expected length {d}, got {}", y.len())));
    }
    if !all_finite(y) {
        return Err(SdeError::NonFiniteInput("state"));
    }
    let g: Vec<Vec<S>> = problem.fields().iter().map(|f| f.eval(y)).collect();
    let mut q = QMatrix {
        m,
        d,
        entries: vec![S::zero(); (m + 1) * (m + 1) * d],
    };
    let mut buf = vec![S::zero(); d];
    let half = S::lit(0.5);
    for (j, field) in problem.fields().iter().enumerate() {
        for (i, gi) in g.iter().enumerate() {
            field.jacobian_action_into(y, gi, q.get_mut(i, j));
        }
        for gk in &g[1..] {
            field.hessian_action_into(y, gk, gk, &mut buf);
            for (e, b) in q.get_mut(0, j).iter_mut().zip(&buf) {
                *e = *e + half * *b;
            }
        }
    }
    Ok(q)
}
