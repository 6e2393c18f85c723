//! Empirical probes of the convergence assumptions: local truncation
//! errors, their partial sums `X_kn`, continuity of the flow in the
//! initial state, adaptivity constraints and step-size lower bounds.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use crate::brownian::RngStream;
use crate::error::{Result, SdeError};
use crate::model::SdeProblem;
use crate::real::{norm, Real};
use crate::stats::{self, Estimate, BOOTSTRAP_LEVEL, BOOTSTRAP_RESAMPLES};
use crate::stepper::{adaptive_i_cuboid, adaptive_ii_region, clamped_q_norms, em_step, StepController, Trajectory};

/// Quantile of `|X_kn|` across samples used by the scaling fit.
pub const SCALING_QUANTILE: f64 = 0.9;
/// Geometric levels `N / 2^j`, `j < NODE_LEVELS`, kept as partial-sum nodes.
const NODE_LEVELS: u32 = 7;

/// How the exact one-step flow `y(tau_{k+1}; tau_k, y_k)` is obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Reference {
    /// Closed form attached to the problem.
    Exact,
    /// Euler-Maruyama on `refine_factor` sub-steps per step, with
    /// sub-increments drawn as a Gaussian bridge pinned to the recorded
    /// increment.
    FineGrid { refine_factor: usize, seed: u64, stream_id: u64 },
}

/// Euler-Maruyama from `z` over `dt` on a bridge through `dw`.
fn fine_flow<S: Real>(
    problem: &SdeProblem<S>,
    z: &[S],
    dt: S,
    dw: &[S],
    refine: usize,
    stream: &mut RngStream,
) -> Result<Vec<S>> {
    let sub = dt / S::lit(refine as f64);
    let mut left_w = dw.to_vec();
    let mut left_t = dt;
    let mut y = z.to_vec();
    let mut inc = vec![S::zero(); dw.len()];
    for i in 0..refine {
        if i + 1 == refine {
            inc.copy_from_slice(&left_w);
        } else {
            let frac = sub / left_t;
            let sd = (sub * (S::one() - frac)).max(S::zero()).sqrt();
            for (c, w) in inc.iter_mut().zip(&left_w) {
                *c = *w * frac + sd * stream.standard_normal::<S>();
            }
        }
        y = em_step(problem, &y, sub, &inc)?;
        for (w, c) in left_w.iter_mut().zip(&inc) {
            *w = *w - *c;
        }
        left_t = left_t - sub;
    }
    Ok(y)
}

/// Local truncation errors `delta_k = y(tau_{k+1}; tau_k, y_k) - y_{k+1}`
/// along a computed trajectory.
pub fn local_truncation_errors<S: Real>(
    problem: &SdeProblem<S>,
    traj: &Trajectory<S>,
    reference: Reference,
) -> Result<Vec<Vec<S>>> {
    let record = traj.record();
    let states = traj.states();
    match reference {
        Reference::Exact => {
            let exact = problem
                .exact()
                .ok_or_else(|| SdeError::Configuration("the problem has no exact solution".into()))?;
            Ok((0..traj.steps())
                .map(|k| {
                    let y = exact.flow(&states[k], record.step_length(k), &record.increments()[k]);
                    y.iter().zip(&states[k + 1]).map(|(a, b)| *a - *b).collect()
                })
                .collect())
        }
        Reference::FineGrid {
            refine_factor,
            seed,
            stream_id,
        } => {
            if refine_factor < 10 {
                return Err(SdeError::Configuration(format!(
                    "refine factor must be at least 10, got {refine_factor}"
                )));
            }
            let mut stream = RngStream::new(seed, stream_id);
            (0..traj.steps())
                .map(|k| {
                    let y = fine_flow(
                        problem,
                        &states[k],
                        record.step_length(k),
                        &record.increments()[k],
                        refine_factor,
                        &mut stream,
                    )?;
                    Ok(y.iter().zip(&states[k + 1]).map(|(a, b)| *a - *b).collect())
                })
                .collect()
        }
    }
}

/// Partial sums `X_kn = sum_{j=k}^{n-1} delta_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncationSums<S> {
    deltas: Vec<Vec<S>>,
}

impl<S: Real> TruncationSums<S> {
    pub fn new(deltas: Vec<Vec<S>>) -> Self {
        Self { deltas }
    }

    pub fn steps(&self) -> usize {
        self.deltas.len()
    }

    pub fn delta(&self, k: usize) -> &[S] {
        &self.deltas[k]
    }

    /// `X_kn` by direct summation; zero when `k == n`.
    pub fn x(&self, k: usize, n: usize) -> Vec<S> {
        assert!(k <= n && n <= self.deltas.len(), "need k <= n <= steps");
        let d = self.deltas.first().map_or(0, Vec::len);
        let mut out = vec![S::zero(); d];
        for delta in &self.deltas[k..n] {
            for (o, v) in out.iter_mut().zip(delta) {
                *o = *o + *v;
            }
        }
        out
    }
}

/// `|X_kn|` on a subset of index pairs with geometric spans `n - k`.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialSums<S> {
    pub pairs: Vec<SpanPair<S>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpanPair<S> {
    pub k: usize,
    pub n: usize,
    pub tau_k: S,
    pub tau_n: S,
    pub norm: S,
    /// `level * SPAN_POSITIONS + position`; equal slots on different
    /// trajectories refer to the same span level and relative start.
    pub slot: usize,
}

impl<S: Real> PartialSums<S> {
    /// Dense view on the sorted pair endpoints, zero outside the stored pairs.
    pub fn matrix(&self) -> (Vec<usize>, Vec<Vec<S>>) {
        let mut nodes: Vec<usize> = self.pairs.iter().flat_map(|p| [p.k, p.n]).collect();
        nodes.sort_unstable();
        nodes.dedup();
        let mut m = vec![vec![S::zero(); nodes.len()]; nodes.len()];
        for p in &self.pairs {
            let a = nodes.binary_search(&p.k).unwrap_or_default();
            let b = nodes.binary_search(&p.n).unwrap_or_default();
            m[a][b] = p.norm;
        }
        (nodes, m)
    }
}

/// Start positions per span level below the full horizon.
pub const SPAN_POSITIONS: usize = 4;

/// Spans `round(N / 2^j)` for `j < NODE_LEVELS`, each at `SPAN_POSITIONS`
/// evenly spread starts, as `(k, n, slot)` without duplicates.
pub fn subsample_pairs(steps: usize) -> Vec<(usize, usize, usize)> {
    let mut out: Vec<(usize, usize, usize)> = Vec::new();
    for j in 0..NODE_LEVELS {
        let len = ((steps as f64) / f64::from(1u32 << j)).round() as usize;
        if len == 0 {
            break;
        }
        let room = steps - len;
        let positions = if room == 0 { 1 } else { SPAN_POSITIONS };
        for i in 0..positions {
            let k = if positions == 1 {
                0
            } else {
                ((room * i) as f64 / (positions - 1) as f64).round() as usize
            };
            if !out.iter().any(|&(a, b, _)| a == k && b == k + len) {
                out.push((k, k + len, j as usize * SPAN_POSITIONS + i));
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruncationReport<S> {
    pub per_step_errors: Vec<S>,
    pub step_lengths: Vec<S>,
    pub partial_sums: PartialSums<S>,
    /// Slope of log median `|delta|` against log step length, when step lengths vary.
    pub gamma_fit: Option<f64>,
    /// Slope of log `|X_kn|` against log `(tau_n - tau_k)` on this path.
    pub time_exponent_fit: Option<f64>,
    pub h: S,
}

/// Measures truncation errors and their partial sums along one trajectory.
pub fn local_truncation<S: Real>(
    problem: &SdeProblem<S>,
    traj: &Trajectory<S>,
    reference: Reference,
    h: S,
) -> Result<TruncationReport<S>> {
    let deltas = local_truncation_errors(problem, traj, reference)?;
    let per_step_errors: Vec<S> = deltas.iter().map(|d| norm(d)).collect();
    let step_lengths: Vec<S> = (0..traj.steps()).map(|k| traj.record().step_length(k)).collect();
    let sums = TruncationSums::new(deltas);
    let times = traj.times();
    let pairs: Vec<SpanPair<S>> = subsample_pairs(traj.steps())
        .into_iter()
        .map(|(k, n, slot)| SpanPair {
            k,
            n,
            tau_k: times[k],
            tau_n: times[n],
            norm: norm(&sums.x(k, n)),
            slot,
        })
        .collect();
    let gamma_fit = fit_gamma(&per_step_errors, &step_lengths);
    let (mut lx, mut ly) = (Vec::new(), Vec::new());
    for p in &pairs {
        let v = p.norm.to_f64_lossy();
        if v > 0.0 {
            lx.push((p.tau_n - p.tau_k).to_f64_lossy().ln());
            ly.push(v.ln());
        }
    }
    let time_exponent_fit = stats::ols(&lx, &ly).map(|f| f.slope);
    Ok(TruncationReport {
        per_step_errors,
        step_lengths,
        partial_sums: PartialSums { pairs },
        gamma_fit,
        time_exponent_fit,
        h,
    })
}

/// Median error in log-spaced step-length bins, regressed on the bin centre.
fn fit_gamma<S: Real>(errors: &[S], lengths: &[S]) -> Option<f64> {
    let pairs: Vec<(f64, f64)> = errors
        .iter()
        .zip(lengths)
        .map(|(e, l)| (l.to_f64_lossy(), e.to_f64_lossy()))
        .filter(|(l, e)| *l > 0.0 && *e > 0.0)
        .collect();
    let lo = pairs.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let hi = pairs.iter().map(|p| p.0).fold(0.0, f64::max);
    if pairs.len() < 8 || hi < 1.5 * lo {
        return None;
    }
    const BINS: usize = 8;
    let width = (hi / lo).ln() / BINS as f64;
    let mut bins: Vec<Vec<f64>> = vec![Vec::new(); BINS];
    for (l, e) in &pairs {
        let b = (((l / lo).ln() / width) as usize).min(BINS - 1);
        bins[b].push(*e);
    }
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for (b, es) in bins.iter().enumerate() {
        if es.len() >= 3 {
            x.push(lo.ln() + (b as f64 + 0.5) * width);
            y.push(stats::median(es).ln());
        }
    }
    stats::ols(&x, &y).map(|f| f.slope)
}

fn group_by_h<S: Real>(reports: &[TruncationReport<S>]) -> BTreeMap<u64, Vec<&TruncationReport<S>>> {
    let mut groups: BTreeMap<u64, Vec<&TruncationReport<S>>> = BTreeMap::new();
    for r in reports {
        groups.entry(r.h.to_f64_lossy().to_bits()).or_default().push(r);
    }
    groups
}

/// Exponent of the median per-step error in `h`, over reports for several `h`.
pub fn local_order_fit<S: Real>(reports: &[TruncationReport<S>]) -> Result<Estimate> {
    let groups = group_by_h(reports);
    if groups.len() < 3 {
        return Err(SdeError::Configuration("need reports for at least 3 distinct h".into()));
    }
    let pooled: Vec<(f64, Vec<Vec<f64>>)> = groups
        .iter()
        .map(|(bits, rs)| {
            let per_sample = rs
                .iter()
                .map(|r| r.per_step_errors.iter().map(|e| e.to_f64_lossy()).collect())
                .collect();
            (f64::from_bits(*bits), per_sample)
        })
        .collect();
    let fit = |sel: &dyn Fn(usize, usize) -> usize| -> f64 {
        let (mut x, mut y) = (Vec::new(), Vec::new());
        for (g, (h, samples)) in pooled.iter().enumerate() {
            let mut all: Vec<f64> = Vec::new();
            for s in 0..samples.len() {
                all.extend_from_slice(&samples[sel(g, s)]);
            }
            x.push(h.ln());
            y.push(stats::quantile_in_place(&mut all, 0.5).ln());
        }
        stats::ols(&x, &y).map_or(f64::NAN, |f| f.slope)
    };
    let value = fit(&|_, s| s);
    let mut rng = RngStream::new(0x5eed, 1);
    let reps: Vec<f64> = (0..BOOTSTRAP_RESAMPLES / 4)
        .map(|_| {
            let picks: Vec<Vec<usize>> = pooled
                .iter()
                .map(|(_, s)| (0..s.len()).map(|_| rand::Rng::random_range(&mut rng, 0..s.len())).collect())
                .collect();
            fit(&|g, s| picks[g][s])
        })
        .collect();
    let (lo, hi) = stats::percentile_interval(&reps, BOOTSTRAP_LEVEL);
    Ok(Estimate { value, lo, hi })
}

/// Exponents of the scaling `q_0.9 |X_kn| ~ (tau_n - tau_k)^a h^b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingFit {
    pub time_exponent: Estimate,
    pub h_exponent: Estimate,
}

/// Two-way log-log regression of the 0.9-quantile of `|X_kn|` over samples
/// against `tau_n - tau_k` and `h`, with bootstrap intervals from
/// resampling trajectories within each `h`.
pub fn truncation_sum_scaling<S: Real>(reports: &[TruncationReport<S>]) -> Result<ScalingFit> {
    let groups = group_by_h(reports);
    if groups.len() < 3 {
        return Err(SdeError::Configuration("need reports for at least 3 distinct h".into()));
    }
    if let Some(small) = groups.values().map(Vec::len).find(|&n| n < 100) {
        return Err(SdeError::Configuration(format!(
            "need at least 100 samples per h, one group has {small}"
        )));
    }
    // cell = (group, slot): per-sample norms (absent when a path lacks the slot) and mean span
    struct Cell {
        group: usize,
        slot: usize,
        log_h: f64,
        log_span: f64,
        values: Vec<Option<f64>>,
    }
    let mut cells: Vec<Cell> = Vec::new();
    let mut group_sizes = Vec::new();
    for (g, (bits, rs)) in groups.iter().enumerate() {
        group_sizes.push(rs.len());
        let h = f64::from_bits(*bits);
        let mut by_slot: BTreeMap<usize, (Vec<Option<f64>>, Vec<f64>)> = BTreeMap::new();
        for (i, r) in rs.iter().enumerate() {
            for p in &r.partial_sums.pairs {
                let entry = by_slot.entry(p.slot).or_insert_with(|| (vec![None; rs.len()], Vec::new()));
                entry.0[i] = Some(p.norm.to_f64_lossy());
                entry.1.push((p.tau_n - p.tau_k).to_f64_lossy());
            }
        }
        for (slot, (values, spans)) in by_slot {
            cells.push(Cell {
                group: g,
                slot,
                log_h: h.ln(),
                log_span: stats::mean(&spans).ln(),
                values,
            });
        }
    }
    // keep slots measured at every h so span and h are not confounded
    let mut count: BTreeMap<usize, usize> = BTreeMap::new();
    for c in &cells {
        *count.entry(c.slot).or_default() += 1;
    }
    cells.retain(|c| count[&c.slot] == group_sizes.len());
    let fit = |pick: Option<&Vec<Vec<usize>>>| -> Option<stats::PlaneFit> {
        let (mut x1, mut x2, mut y) = (Vec::new(), Vec::new(), Vec::new());
        let mut buf = Vec::new();
        for c in &cells {
            buf.clear();
            match pick {
                None => buf.extend(c.values.iter().flatten()),
                Some(p) => buf.extend(p[c.group].iter().filter_map(|&s| c.values[s])),
            }
            if buf.is_empty() {
                continue;
            }
            let q = stats::quantile_in_place(&mut buf, SCALING_QUANTILE);
            if q > 0.0 {
                x1.push(c.log_span);
                x2.push(c.log_h);
                y.push(q.ln());
            }
        }
        stats::ols2(&x1, &x2, &y)
    };
    let point = fit(None).ok_or_else(|| SdeError::Configuration("degenerate scaling data".into()))?;
    let mut rng = RngStream::new(0x5eed, 2);
    let (mut t_reps, mut h_reps) = (Vec::new(), Vec::new());
    for _ in 0..BOOTSTRAP_RESAMPLES {
        let picks: Vec<Vec<usize>> = group_sizes
            .iter()
            .map(|&n| (0..n).map(|_| rand::Rng::random_range(&mut rng, 0..n)).collect())
            .collect();
        if let Some(f) = fit(Some(&picks)) {
            t_reps.push(f.slope1);
            h_reps.push(f.slope2);
        }
    }
    let (tlo, thi) = stats::percentile_interval(&t_reps, BOOTSTRAP_LEVEL);
    let (hlo, hhi) = stats::percentile_interval(&h_reps, BOOTSTRAP_LEVEL);
    Ok(ScalingFit {
        time_exponent: Estimate {
            value: point.slope1,
            lo: tlo,
            hi: thi,
        },
        h_exponent: Estimate {
            value: point.slope2,
            lo: hlo,
            hi: hhi,
        },
    })
}

#[derive(Debug, Serialize)]
struct TruncationRow {
    k: usize,
    n: usize,
    tau_k: f64,
    tau_n: f64,
    #[serde(rename = "norm_X")]
    norm_x: f64,
    h: f64,
    sample_id: u64,
}

/// Writes `k,n,tau_k,tau_n,norm_X,h,sample_id`, one row per stored pair.
pub fn write_truncation_csv<S: Real>(path: &Path, reports: &[(u64, TruncationReport<S>)]) -> Result<()> {
    let csv_err = |source| SdeError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    if reports.is_empty() {
        w.write_record(["k", "n", "tau_k", "tau_n", "norm_X", "h", "sample_id"])
            .map_err(csv_err)?;
    }
    for (sample_id, r) in reports {
        for p in &r.partial_sums.pairs {
            w.serialize(TruncationRow {
                k: p.k,
                n: p.n,
                tau_k: p.tau_k.to_f64_lossy(),
                tau_n: p.tau_n.to_f64_lossy(),
                norm_x: p.norm.to_f64_lossy(),
                h: r.h.to_f64_lossy(),
                sample_id: *sample_id,
            })
            .map_err(csv_err)?;
        }
    }
    w.flush().map_err(|source| SdeError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// One probe of the flow at `(z1, z2)` over `[s, t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowSample<S> {
    pub z1: Vec<S>,
    pub z2: Vec<S>,
    pub s: S,
    pub t: S,
    /// `|y(t; s, z1) - y(t; s, z2)| / |z1 - z2|`.
    pub lipschitz_ratio: S,
    /// `|(y(t; s, z1) - z1) - (y(t; s, z2) - z2)| / |z1 - z2|`.
    pub increment_ratio: S,
}

impl<S: Real> FlowSample<S> {
    /// `increment_ratio / (t - s)^(1/2)`.
    pub fn scaled_increment_ratio(&self) -> S {
        self.increment_ratio / (self.t - self.s).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowProbe<S> {
    pub samples: Vec<FlowSample<S>>,
    pub max_lipschitz_ratio: S,
    pub max_scaled_increment_ratio: S,
    /// Slope of log `increment_ratio` against log `(t - s)`.
    pub holder_exponent: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowReference {
    Exact,
    FineGrid { steps: usize },
}

/// A requested probe point `(z1, z2, s, t)`.
pub type FlowPoint<S> = (Vec<S>, Vec<S>, S, S);

/// Probes at random points: `z = y0 + N(0, I)`, `0 <= s < t <= T` uniform.
pub fn flow_probe<S: Real>(problem: &SdeProblem<S>, pairs: usize, stream: &mut RngStream) -> Result<FlowProbe<S>> {
    let reference = if problem.exact().is_some() {
        FlowReference::Exact
    } else {
        FlowReference::FineGrid { steps: 1024 }
    };
    let horizon = problem.horizon();
    let points: Vec<FlowPoint<S>> = (0..pairs)
        .map(|_| {
            let mut z = || -> Vec<S> {
                problem
                    .y0()
                    .iter()
                    .map(|y| *y + stream.standard_normal::<S>())
                    .collect()
            };
            let (z1, z2) = (z(), z());
            let (u, v) = (stream.uniform_open::<S>() * horizon, stream.uniform_open::<S>() * horizon);
            (z1, z2, u.min(v), u.max(v))
        })
        .collect();
    flow_probe_at(problem, reference, &points, stream)
}

/// Probes at caller-chosen points; both initial states share one Brownian path.
pub fn flow_probe_at<S: Real>(
    problem: &SdeProblem<S>,
    reference: FlowReference,
    points: &[FlowPoint<S>],
    stream: &mut RngStream,
) -> Result<FlowProbe<S>> {
    let m = problem.m();
    let mut samples = Vec::with_capacity(points.len());
    for (z1, z2, s, t) in points {
        if !(*t > *s) || *s < S::zero() || *t > problem.horizon() {
            return Err(SdeError::param("points", "need 0 <= s < t <= T"));
        }
        let dt = *t - *s;
        let (y1, y2) = match reference {
            FlowReference::Exact => {
                let exact = problem
                    .exact()
                    .ok_or_else(|| SdeError::Configuration("the problem has no exact solution".into()))?;
                let dw: Vec<S> = (0..m).map(|_| dt.sqrt() * stream.standard_normal::<S>()).collect();
                (exact.flow(z1, dt, &dw), exact.flow(z2, dt, &dw))
            }
            FlowReference::FineGrid { steps } => {
                if steps == 0 {
                    return Err(SdeError::param("steps", "must be positive"));
                }
                let sub = dt / S::lit(steps as f64);
                let (mut y1, mut y2) = (z1.clone(), z2.clone());
                for _ in 0..steps {
                    let dw: Vec<S> = (0..m).map(|_| sub.sqrt() * stream.standard_normal::<S>()).collect();
                    y1 = em_step(problem, &y1, sub, &dw)?;
                    y2 = em_step(problem, &y2, sub, &dw)?;
                }
                (y1, y2)
            }
        };
        let dz = norm(&z1.iter().zip(z2).map(|(a, b)| *a - *b).collect::<Vec<_>>());
        let (lipschitz_ratio, increment_ratio) = if dz == S::zero() {
            (S::zero(), S::zero())
        } else {
            let dy = norm(&y1.iter().zip(&y2).map(|(a, b)| *a - *b).collect::<Vec<_>>());
            let dinc: Vec<S> = y1
                .iter()
                .zip(z1)
                .zip(y2.iter().zip(z2))
                .map(|((a, za), (b, zb))| (*a - *za) - (*b - *zb))
                .collect();
            (dy / dz, norm(&dinc) / dz)
        };
        samples.push(FlowSample {
            z1: z1.clone(),
            z2: z2.clone(),
            s: *s,
            t: *t,
            lipschitz_ratio,
            increment_ratio,
        });
    }
    let max_lipschitz_ratio = samples.iter().map(|s| s.lipschitz_ratio).fold(S::zero(), S::max);
    let max_scaled_increment_ratio = samples
        .iter()
        .map(|s| s.scaled_increment_ratio())
        .fold(S::zero(), S::max);
    let (lx, ly): (Vec<f64>, Vec<f64>) = samples
        .iter()
        .filter(|s| s.increment_ratio > S::zero())
        .map(|s| ((s.t - s.s).to_f64_lossy().ln(), s.increment_ratio.to_f64_lossy().ln()))
        .unzip();
    Ok(FlowProbe {
        samples,
        max_lipschitz_ratio,
        max_scaled_increment_ratio,
        holder_exponent: stats::ols(&lx, &ly).map(|f| f.slope),
    })
}

/// Replay check of the adaptivity constraint on every step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConstraintReport {
    pub steps: usize,
    /// Steps whose increment breaks the inequality beyond the slack.
    pub violations: usize,
    /// Adaptive-I steps matching none of: a space face hit, `dt = h`, landing on `T`.
    pub unexplained: usize,
    pub space_bound: usize,
    pub time_bound: usize,
    pub horizon_bound: usize,
}

/// Relative slack, in units of machine epsilon, allowed in the replayed inequality.
pub const CONSTRAINT_ULPS: f64 = 4.0;

/// Recomputes the controller's bound at every `y_n` and checks the recorded
/// `(dt, dW)` against it: `max_j |q_ij|^(1/2) |dW^i| <= alpha h^(1/2)` for
/// Adaptive-I and `|q_11| |dW^2 - dt| <= alpha^2 h` for Adaptive-II, with
/// clamped norms.
pub fn check_adaptive_constraints<S: Real>(
    problem: &SdeProblem<S>,
    traj: &Trajectory<S>,
    controller: &StepController<S>,
) -> Result<ConstraintReport> {
    let record = traj.record();
    let horizon = problem.horizon();
    let slack = S::one() + S::lit(CONSTRAINT_ULPS) * S::epsilon();
    let mut rep = ConstraintReport {
        steps: traj.steps(),
        ..Default::default()
    };
    for n in 0..traj.steps() {
        let y = &traj.states()[n];
        let dt = record.durations()[n];
        let dw = &record.increments()[n];
        let remaining = horizon - record.times()[n];
        let lands_on_horizon = record.times()[n + 1] == horizon;
        match *controller {
            StepController::Fixed { .. } => {}
            StepController::AdaptiveI { alpha, h, clamp } => {
                let c = adaptive_i_cuboid(problem, y, remaining, alpha, h, clamp)?;
                let q = clamped_q_norms(problem, y, clamp)?;
                let m = problem.m();
                let bound = alpha * h.sqrt();
                let mut hit = false;
                for (i, (w, a)) in dw.iter().zip(c.half_widths()).enumerate() {
                    let qmax = q[i * m..(i + 1) * m].iter().fold(S::zero(), |acc, v| acc.max(*v));
                    if qmax.sqrt() * w.abs() > bound * slack {
                        rep.violations += 1;
                    }
                    hit |= w.abs() == *a;
                }
                let full = dt == c.a0() && c.a0() == h;
                if hit {
                    rep.space_bound += 1;
                } else if full {
                    rep.time_bound += 1;
                } else if lands_on_horizon {
                    rep.horizon_bound += 1;
                } else {
                    rep.unexplained += 1;
                }
            }
            StepController::AdaptiveII { alpha, h, clamp, .. } => {
                let region = adaptive_ii_region(problem, y, remaining, alpha, h, clamp)?;
                let lhs = region.qnorm() * (dw[0] * dw[0] - dt).abs();
                if lhs > alpha * alpha * h * slack || dt > region.time_limit() * slack {
                    rep.violations += 1;
                }
            }
        }
    }
    Ok(rep)
}

/// `max_n h / (tau_{n+1} - tau_n)^(1 - delta)` over all steps but the last:
/// the smallest constant making the step-size lower bound hold on this path.
pub fn step_lower_bound_constant<S: Real>(traj: &Trajectory<S>, h: S, delta: S) -> Option<S> {
    if traj.steps() < 2 {
        return None;
    }
    let exponent = S::one() - delta;
    (0..traj.steps() - 1)
        .map(|n| h / traj.record().step_length(n).powf(exponent))
        .reduce(S::max)
}
