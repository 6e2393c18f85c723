//! Exit sampling for bounded-diffusion time-stepping.
//!
//! A step ends at the first exit of `(t, W^1(t), .., W^m(t))` from the box
//! `[0, a0] x [-a1, a1] x .. x [-am, am]`. One coordinate is handled with
//! two series for the survival function `S(t; a) = P(sup_{s<=t} |W(s)| < a)`:
//!
//! ```text
//! large t/a^2:  S = 4/pi sum_k (-1)^k/(2k+1) exp(-(2k+1)^2 pi^2 t / (8 a^2))
//! small t/a^2:  1 - S = 4 sum_k (-1)^k Phi_c((2k+1) a / sqrt(t))
//! ```
//!
//! Exit times come from inverting `1 - S` on `(0, a0]`; positions of
//! coordinates that did not exit are drawn by rejection from the
//! absorbed heat kernel.

use crate::brownian::RngStream;
use crate::error::{Result, SdeError};
use crate::real::Real;

/// `t / a^2` at which the survival series switch from images to eigenfunctions.
pub const SERIES_CROSSOVER: f64 = 0.5;
const SERIES_TOL: f64 = 1e-14;
const QUANTILE_RTOL: f64 = 1e-12;
const QUANTILE_MAX_ITER: usize = 300;

#[inline]
fn series_tol<S: Real>() -> S {
    S::lit(SERIES_TOL).max(S::epsilon())
}

#[inline]
fn lambda<S: Real>() -> S {
    S::PI() * S::PI() / S::lit(8.0)
}

fn check_half_width<S: Real>(a: S) -> Result<()> {
    if !(a > S::zero()) {
        return Err(SdeError::param("a", format!("half-width must be positive, got {a}")));
    }
    Ok(())
}

fn check_time<S: Real>(name: &'static str, t: S) -> Result<()> {
    if !(t >= S::zero()) || !t.is_finite() {
        return Err(SdeError::param(name, format!("must be finite and non-negative, got {t}")));
    }
    Ok(())
}

/// Eigenfunction series for `S`, valid for any `r = t/a^2 > 0`, fast for large `r`.
fn eigen_survival<S: Real>(r: S) -> S {
    let lam = lambda::<S>() * r;
    let tol = series_tol::<S>();
    let mut sum = S::zero();
    let mut k = 0u32;
    loop {
        let n = S::lit(f64::from(2 * k + 1));
        let term = (-n * n * lam).exp() / n;
        sum = if k.is_multiple_of(2) { sum + term } else { sum - term };
        if term <= tol * sum.abs() || term == S::zero() {
            break;
        }
        k += 1;
    }
    S::lit(4.0) / S::PI() * sum
}

/// Image series for the exit probability `1 - S`, with `u = a / sqrt(t)`.
fn image_exit<S: Real>(u: S) -> S {
    let tol = series_tol::<S>();
    let rs2 = S::SQRT_2().recip();
    let mut sum = S::zero();
    let mut k = 0u32;
    loop {
        let n = S::lit(f64::from(2 * k + 1));
        let term = S::lit(2.0) * (n * u * rs2).erfc();
        sum = if k.is_multiple_of(2) { sum + term } else { sum - term };
        if term <= tol * sum.abs() || term == S::zero() {
            break;
        }
        k += 1;
    }
    sum
}

/// `(1 - S(t; a), -dS/dt)` for finite `a > 0`, `t > 0`.
fn exit_cdf_and_density<S: Real>(a: S, t: S) -> (S, S) {
    let a2 = a * a;
    let r = t / a2;
    let tol = series_tol::<S>();
    if r >= S::lit(SERIES_CROSSOVER) {
        let lam = lambda::<S>() * r;
        let (mut surv, mut dens) = (S::zero(), S::zero());
        let mut k = 0u32;
        loop {
            let n = S::lit(f64::from(2 * k + 1));
            let e = (-n * n * lam).exp();
            let (st, dt) = (e / n, e * n);
            if k.is_multiple_of(2) {
                surv = surv + st;
                dens = dens + dt;
            } else {
                surv = surv - st;
                dens = dens - dt;
            }
            if e == S::zero() || (st <= tol * surv.abs() && dt <= tol * dens.abs()) {
                break;
            }
            k += 1;
        }
        let surv = S::lit(4.0) / S::PI() * surv;
        let dens = S::PI() / (S::lit(2.0) * a2) * dens;
        (S::one() - surv, dens)
    } else {
        let u = a / t.sqrt();
        let rs2 = S::SQRT_2().recip();
        let inv_sqrt_2pi = (S::lit(2.0) * S::PI()).sqrt().recip();
        let (mut exit, mut dens) = (S::zero(), S::zero());
        let mut k = 0u32;
        loop {
            let n = S::lit(f64::from(2 * k + 1));
            let x = n * u;
            let et = S::lit(2.0) * (x * rs2).erfc();
            let dt = n * (-x * x / S::lit(2.0)).exp() * inv_sqrt_2pi;
            if k.is_multiple_of(2) {
                exit = exit + et;
                dens = dens + dt;
            } else {
                exit = exit - et;
                dens = dens - dt;
            }
            if (et <= tol * exit.abs() || et == S::zero()) && (dt <= tol * dens.abs() || dt == S::zero()) {
                break;
            }
            k += 1;
        }
        let dens = S::lit(2.0) * a / (t * t.sqrt()) * dens;
        (exit, dens)
    }
}

/// `(S(t; a), 1 - S(t; a))`, each computed on the side where it is accurate.
fn survival_pair<S: Real>(a: S, t: S) -> (S, S) {
    if t == S::zero() || a.is_infinite() {
        return (S::one(), S::zero());
    }
    let r = t / (a * a);
    if r >= S::lit(SERIES_CROSSOVER) {
        let s = eigen_survival(r);
        (s, S::one() - s)
    } else {
        let e = image_exit(a / t.sqrt());
        (S::one() - e, e)
    }
}

/// `P(sup_{s <= t} |W(s)| < a)` for a standard Brownian motion.
pub fn survival_single<S: Real>(a: S, t: S) -> Result<S> {
    check_half_width(a)?;
    check_time("t", t)?;
    Ok(survival_pair(a, t).0)
}

/// `1 - survival_single(a, t)`, without cancellation when it is small.
pub fn exit_probability<S: Real>(a: S, t: S) -> Result<S> {
    check_half_width(a)?;
    check_time("t", t)?;
    Ok(survival_pair(a, t).1)
}

/// Density of the first exit time of `|W|` from `[0, a)`, evaluated at `t`.
pub fn exit_time_density<S: Real>(a: S, t: S) -> Result<S> {
    check_half_width(a)?;
    check_time("t", t)?;
    if t == S::zero() || a.is_infinite() {
        return Ok(S::zero());
    }
    Ok(exit_cdf_and_density(a, t).1)
}

/// The `u`-quantile of the exit time conditioned on exit before `a0`:
/// solves `(1 - S(tau; a)) / (1 - S(a0; a)) = u` for `tau` in `(0, a0]`.
pub fn exit_time_quantile<S: Real>(a: S, a0: S, u: S) -> Result<S> {
    check_half_width(a)?;
    if a.is_infinite() {
        return Err(SdeError::param("a", "no exit through an infinite half-width"));
    }
    check_time("a0", a0)?;
    if !(u > S::zero() && u < S::one()) {
        return Err(SdeError::param("u", format!("must lie in (0, 1), got {u}")));
    }
    let total = survival_pair(a, a0).1;
    if total == S::zero() {
        return Err(SdeError::param("a0", "exit before a0 has zero probability"));
    }
    Ok(quantile_unchecked(a, a0, total, u))
}

/// Safeguarded Newton iteration on the increasing map `tau -> 1 - S(tau)`.
fn quantile_unchecked<S: Real>(a: S, a0: S, total: S, u: S) -> S {
    let target = u * total;
    let rtol = S::lit(QUANTILE_RTOL).max(S::lit(4.0) * S::epsilon());
    let (mut lo, mut hi) = (S::zero(), a0);
    let mut tau = a0 / S::lit(2.0);
    for _ in 0..QUANTILE_MAX_ITER {
        let (e, f) = exit_cdf_and_density(a, tau);
        let resid = e - target;
        if resid == S::zero() {
            return tau;
        }
        if resid < S::zero() {
            lo = tau;
        } else {
            hi = tau;
        }
        let newton = tau - resid / f;
        let next = if f > S::zero() && newton > lo && newton < hi {
            newton
        } else {
            (lo + hi) / S::lit(2.0)
        };
        let converged = (next - tau).abs() <= rtol * next || hi - lo <= rtol * hi;
        tau = next;
        if converged {
            break;
        }
    }
    tau
}

/// Unnormalised density of `W(t)` on `(-a, a)` killed at `+-a`, eigenfunction form.
fn killed_density_eigen<S: Real>(a: S, t: S, x: S) -> S {
    let lam = lambda::<S>() * t / (a * a);
    let tol = series_tol::<S>();
    let w = S::PI() * x / (S::lit(2.0) * a);
    let mut sum = S::zero();
    let mut first = S::zero();
    let mut k = 0u32;
    loop {
        let n = S::lit(f64::from(2 * k + 1));
        let e = (-n * n * lam).exp();
        if k == 0 {
            first = e;
        }
        sum = sum + e * (n * w).cos();
        if e <= tol * first || e == S::zero() {
            break;
        }
        k += 1;
    }
    sum / a
}

/// Ratio of the killed density to the free Gaussian density at `x`, by images.
fn killed_to_free_ratio<S: Real>(a: S, t: S, x: S) -> S {
    let tol = series_tol::<S>();
    let two = S::lit(2.0);
    let mut sum = S::one();
    let mut k = 1u32;
    loop {
        let kk = S::lit(f64::from(k));
        let base = two * kk * kk * a * a;
        let shift = two * kk * a * x;
        let pair = (-(base - shift) / t).exp() + (-(base + shift) / t).exp();
        sum = if !k.is_multiple_of(2) { sum - pair } else { sum + pair };
        if pair <= tol {
            break;
        }
        k += 1;
    }
    sum.max(S::zero()).min(S::one())
}

/// Density of `W(t)` conditioned on `sup_{s<=t} |W(s)| < a`.
pub fn conditional_density<S: Real>(a: S, t: S, x: S) -> Result<S> {
    check_half_width(a)?;
    check_time("t", t)?;
    if t == S::zero() {
        return Err(SdeError::param("t", "the conditional law at t = 0 is a point mass"));
    }
    if a.is_infinite() {
        let z = x / t.sqrt();
        return Ok((-z * z / S::lit(2.0)).exp() / (S::lit(2.0) * S::PI() * t).sqrt());
    }
    if x.abs() >= a {
        return Ok(S::zero());
    }
    let (surv, _) = survival_pair(a, t);
    let p = if t / (a * a) >= S::lit(SERIES_CROSSOVER) {
        killed_density_eigen(a, t, x)
    } else {
        let z = x / t.sqrt();
        killed_to_free_ratio(a, t, x) * (-z * z / S::lit(2.0)).exp() / (S::lit(2.0) * S::PI() * t).sqrt()
    };
    Ok(p / surv)
}

/// Draws `W(t)` given that `|W|` stayed below `a` on `[0, t]`.
///
/// Large `t/a^2`: uniform proposal on `[-a, a]` under the bound `p(t, 0)`.
/// Small `t/a^2`: Gaussian proposal, accepted with the killed/free ratio.
pub fn sample_conditional_position<S: Real>(stream: &mut RngStream, a: S, t: S) -> Result<S> {
    check_half_width(a)?;
    check_time("t", t)?;
    if t == S::zero() {
        return Ok(S::zero());
    }
    Ok(conditional_position_unchecked(stream, a, t))
}

fn conditional_position_unchecked<S: Real>(stream: &mut RngStream, a: S, t: S) -> S {
    let sd = t.sqrt();
    if a.is_infinite() {
        return sd * stream.standard_normal::<S>();
    }
    if t / (a * a) >= S::lit(SERIES_CROSSOVER) {
        let bound = killed_density_eigen(a, t, S::zero());
        loop {
            let x = a * (S::lit(2.0) * stream.uniform::<S>() - S::one());
            if stream.uniform::<S>() * bound <= killed_density_eigen(a, t, x) {
                return x;
            }
        }
    } else {
        loop {
            let x = sd * stream.standard_normal::<S>();
            if x.abs() >= a {
                continue;
            }
            if stream.uniform::<S>() < killed_to_free_ratio(a, t, x) {
                return x;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitFace {
    /// The time bound `a0` was reached first.
    Time,
    /// `W^coordinate` hit `+a` (`positive`) or `-a`.
    Space { coordinate: usize, positive: bool },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CuboidExitSample<S> {
    pub tau: S,
    pub dw: Vec<S>,
    pub face: ExitFace,
}

/// `[0, a0] x [-a_1, a_1] x .. x [-a_m, a_m]`; half-widths may be infinite.
#[derive(Debug, Clone, PartialEq)]
pub struct Cuboid<S> {
    a0: S,
    half_widths: Vec<S>,
}

impl<S: Real> Cuboid<S> {
    pub fn new(a0: S, half_widths: Vec<S>) -> Result<Self> {
        if !(a0 > S::zero()) || !a0.is_finite() {
            return Err(SdeError::param("a0", format!("must be finite and positive, got {a0}")));
        }
        for a in &half_widths {
            check_half_width(*a)?;
        }
        Ok(Self { a0, half_widths })
    }

    pub fn a0(&self) -> S {
        self.a0
    }

    pub fn half_widths(&self) -> &[S] {
        &self.half_widths
    }
}

/// Exact first exit of `(t, W)` from `[0, a0] x [-a1, a1]`.
pub fn sample_exit_single<S: Real>(stream: &mut RngStream, a0: S, a1: S) -> Result<CuboidExitSample<S>> {
    let c = Cuboid::new(a0, vec![a1])?;
    Ok(exit_single_unchecked(stream, c.a0, a1))
}

fn exit_single_unchecked<S: Real>(stream: &mut RngStream, a0: S, a1: S) -> CuboidExitSample<S> {
    if a1.is_infinite() {
        return CuboidExitSample {
            tau: a0,
            dw: vec![a0.sqrt() * stream.standard_normal::<S>()],
            face: ExitFace::Time,
        };
    }
    let (_, p_exit) = survival_pair(a1, a0);
    if stream.uniform::<S>() < p_exit {
        let u = stream.uniform_open::<S>();
        let tau = quantile_unchecked(a1, a0, p_exit, u);
        let positive = stream.coin();
        CuboidExitSample {
            tau,
            dw: vec![if positive { a1 } else { -a1 }],
            face: ExitFace::Space {
                coordinate: 0,
                positive,
            },
        }
    } else {
        CuboidExitSample {
            tau: a0,
            dw: vec![conditional_position_unchecked(stream, a1, a0)],
            face: ExitFace::Time,
        }
    }
}

/// First exit of `(t, W^1, .., W^m)` from a cuboid.
///
/// Coordinates are independent, so each gets its own exit time restricted
/// to `(0, a0]`; the earliest one wins and every other coordinate is drawn
/// from its survival-conditioned law at the winning time.
pub fn sample_exit_cuboid<S: Real>(stream: &mut RngStream, cuboid: &Cuboid<S>) -> CuboidExitSample<S> {
    let a0 = cuboid.a0;
    let widths = &cuboid.half_widths;
    if widths.len() == 1 {
        return exit_single_unchecked(stream, a0, widths[0]);
    }
    let mut tau = a0;
    let mut winner: Option<usize> = None;
    for (i, &a) in widths.iter().enumerate() {
        if a.is_infinite() {
            continue;
        }
        let (_, p_exit) = survival_pair(a, a0);
        if stream.uniform::<S>() < p_exit {
            let ti = quantile_unchecked(a, a0, p_exit, stream.uniform_open::<S>());
            if ti < tau {
                tau = ti;
                winner = Some(i);
            }
        }
    }
    let positive = winner.is_some() && stream.coin();
    let dw = widths
        .iter()
        .enumerate()
        .map(|(i, &a)| {
            if Some(i) == winner {
                if positive {
                    a
                } else {
                    -a
                }
            } else {
                conditional_position_unchecked(stream, a, tau)
            }
        })
        .collect();
    let face = match winner {
        Some(coordinate) => ExitFace::Space { coordinate, positive },
        None => ExitFace::Time,
    };
    CuboidExitSample { tau, dw, face }
}

/// The Adaptive-II admissible set for scalar noise:
/// `{(t, x) : 0 <= t <= min(h, remaining), qnorm |x^2 - t| <= alpha^2 h}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionII<S> {
    qnorm: S,
    alpha: S,
    h: S,
    remaining: S,
}

/// Box `[t0, t0 + a0] x [x0 - a1, x0 + a1]` used by one pass of the sampler.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubRectangle<S> {
    pub t0: S,
    pub x0: S,
    pub a0: S,
    pub a1: S,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionIITrace<S> {
    pub tau: S,
    pub dw: S,
    pub rectangles: Vec<SubRectangle<S>>,
}

#[inline]
fn shrink<S: Real>(v: S) -> S {
    v * (S::one() - S::lit(4.0) * S::epsilon())
}

impl<S: Real> RegionII<S> {
    pub fn new(qnorm: S, alpha: S, h: S, remaining: S) -> Result<Self> {
        if !(qnorm >= S::zero()) || !qnorm.is_finite() {
            return Err(SdeError::param("qnorm", format!("must be finite and non-negative, got {qnorm}")));
        }
        if !(alpha > S::zero()) || !alpha.is_finite() {
            return Err(SdeError::param("alpha", format!("must be positive, got {alpha}")));
        }
        if !(h > S::zero()) || !h.is_finite() {
            return Err(SdeError::param("h", format!("must be positive, got {h}")));
        }
        check_time("remaining", remaining)?;
        Ok(Self {
            qnorm,
            alpha,
            h,
            remaining,
        })
    }

    pub fn qnorm(&self) -> S {
        self.qnorm
    }
    pub fn alpha(&self) -> S {
        self.alpha
    }
    pub fn h(&self) -> S {
        self.h
    }
    pub fn remaining(&self) -> S {
        self.remaining
    }

    /// Half-width `alpha^2 h / qnorm` of the band around `x^2 = t`.
    pub fn band(&self) -> S {
        if self.qnorm == S::zero() {
            S::infinity()
        } else {
            self.alpha * self.alpha * self.h / self.qnorm
        }
    }

    pub fn time_limit(&self) -> S {
        self.h.min(self.remaining)
    }

    pub fn contains(&self, t: S, x: S) -> bool {
        t >= S::zero() && t <= self.time_limit() && self.qnorm * (x * x - t).abs() <= self.alpha * self.alpha * self.h
    }

    /// Largest centred segment at `(t, x)`, then the longest box over it,
    /// both inside the region.
    ///
    /// At time `t` the admissible `|x|` is `[sqrt(max(t - c, 0)), sqrt(t + c)]`
    /// with `c` the band. The outer bound grows with time, so only the inner
    /// one limits how long the box may last: a segment whose smallest
    /// `|x|` is `l` stays admissible until `c + max(l, 0)^2`.
    pub fn largest_rectangle(&self, t: S, x: S) -> SubRectangle<S> {
        let c = self.band();
        let ax = x.abs();
        let outer = (t + c).sqrt() - ax;
        let a1 = if t <= c { outer } else { outer.min(ax - (t - c).sqrt()) };
        let a1 = shrink(a1.max(S::zero()));
        let low = ax - a1;
        let t_max = if low > S::zero() { c + low * low } else { c };
        let a0 = shrink((self.time_limit().min(t_max) - t).max(S::zero()));
        SubRectangle { t0: t, x0: x, a0, a1 }
    }
}

/// Approximate Adaptive-II step for `m = 1`.
///
/// From `(0, 0)`, repeatedly exit the largest admissible box around the
/// current point and move there; stop once a sub-step lasts less than
/// `beta h`. The result always lies in the region.
pub fn sample_region_ii<S: Real>(stream: &mut RngStream, region: &RegionII<S>, beta: S) -> Result<(S, S)> {
    region_ii_impl(stream, region, beta, None)
}

/// [`sample_region_ii`] also returning every box it used.
pub fn trace_region_ii<S: Real>(stream: &mut RngStream, region: &RegionII<S>, beta: S) -> Result<RegionIITrace<S>> {
    let mut rectangles = Vec::new();
    let (tau, dw) = region_ii_impl(stream, region, beta, Some(&mut rectangles))?;
    Ok(RegionIITrace { tau, dw, rectangles })
}

fn region_ii_impl<S: Real>(
    stream: &mut RngStream,
    region: &RegionII<S>,
    beta: S,
    mut trace: Option<&mut Vec<SubRectangle<S>>>,
) -> Result<(S, S)> {
    if !(beta > S::zero()) || !beta.is_finite() {
        return Err(SdeError::param("beta", format!("must be positive, got {beta}")));
    }
    if region.remaining <= S::epsilon() * region.h {
        return Err(SdeError::ZeroStep {
            remaining: region.remaining.to_f64_lossy(),
        });
    }
    let threshold = beta * region.h;
    let (mut t, mut x) = (S::zero(), S::zero());
    loop {
        let rect = region.largest_rectangle(t, x);
        if let Some(tr) = trace.as_deref_mut() {
            tr.push(rect);
        }
        let (sub_tau, sub_w) = if rect.a0 > S::zero() && rect.a1 > S::zero() {
            let s = exit_single_unchecked(stream, rect.a0, rect.a1);
            (s.tau, s.dw[0])
        } else {
            (S::zero(), S::zero())
        };
        t = t + sub_tau;
        x = x + sub_w;
        if sub_tau < threshold {
            return Ok((t, x));
        }
    }
}
