//! Seedable random streams and bookkeeping of the Brownian path on a
//! random partition.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, SdeError};
use crate::real::Real;

/// Relative tolerance used to decide that a partition time has reached the
/// horizon.
pub const HORIZON_RTOL: f64 = 1e-12;

/// One independent random stream, addressed by `(seed, stream_id)`.
///
/// Backed by ChaCha8: the seed selects the key and `stream_id` the nonce,
/// so different ids never share keystream blocks.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self { seed, stream_id, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Uniform on `[0, 1)`.
    #[inline]
    pub fn uniform<S: Real>(&mut self) -> S {
        S::lit(self.rng.random::<f64>())
    }

    /// Uniform on `(0, 1)`.
    #[inline]
    pub fn uniform_open<S: Real>(&mut self) -> S {
        loop {
            let u: f64 = self.rng.random();
            if u > 0.0 {
                return S::lit(u);
            }
        }
    }

    #[inline]
    pub fn standard_normal<S: Real>(&mut self) -> S {
        S::lit(self.rng.sample::<f64, _>(StandardNormal))
    }

    #[inline]
    pub fn coin(&mut self) -> bool {
        self.rng.random::<bool>()
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }
    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// `m` independent `Normal(0, dt)` draws.
pub fn gaussian_increment<S: Real>(stream: &mut RngStream, dt: S, m: usize) -> Result<Vec<S>> {
    if !(dt > S::zero()) || !dt.is_finite() {
        return Err(SdeError::param("dt", format!("must be positive, got {dt}")));
    }
    let sd = dt.sqrt();
    Ok((0..m).map(|_| sd * stream.standard_normal::<S>()).collect())
}

/// Partition times together with the Brownian increments over each step
/// and their running sums `W(tau_n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianRecord<S> {
    m: usize,
    horizon: S,
    times: Vec<S>,
    durations: Vec<S>,
    increments: Vec<Vec<S>>,
    cumulative: Vec<Vec<S>>,
}

impl<S: Real> BrownianRecord<S> {
    pub fn new(m: usize, horizon: S) -> Self {
        Self {
            m,
            horizon,
            times: vec![S::zero()],
            durations: Vec::new(),
            increments: Vec::new(),
            cumulative: vec![vec![S::zero(); m]],
        }
    }

    pub fn with_capacity(m: usize, horizon: S, steps: usize) -> Self {
        let mut r = Self::new(m, horizon);
        r.times.reserve(steps);
        r.durations.reserve(steps);
        r.increments.reserve(steps);
        r.cumulative.reserve(steps);
        r
    }

    fn tolerance(&self) -> S {
        S::lit(HORIZON_RTOL) * self.horizon
    }

    /// Appends a step of length `dt` with increment `dw`.
    ///
    /// A step ending within the horizon tolerance of `T` is snapped onto
    /// `T` exactly. Returns the new partition time.
    pub fn record_step(&mut self, dt: S, dw: &[S]) -> Result<S> {
        if dw.len() != self.m {
            return Err(SdeError::param("dw", format!("expected {} components", self.m)));
        }
        let last = self.last_time();
        if !(dt > S::zero()) {
            return Err(SdeError::Ordering(format!("step of length {dt} after time {last}")));
        }
        let mut next = last + dt;
        let tol = self.tolerance();
        if next > self.horizon + tol {
            return Err(SdeError::Ordering(format!(
                "step to {next} overshoots horizon {}",
                self.horizon
            )));
        }
        if (self.horizon - next).abs() <= tol {
            next = self.horizon;
        }
        if !(next > last) {
            return Err(SdeError::Ordering(format!("time {next} does not advance past {last}")));
        }
        let cum = self
            .last_cumulative()
            .iter()
            .zip(dw)
            .map(|(c, w)| *c + *w)
            .collect();
        self.times.push(next);
        self.durations.push(dt);
        self.increments.push(dw.to_vec());
        self.cumulative.push(cum);
        Ok(next)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn horizon(&self) -> S {
        self.horizon
    }

    pub fn times(&self) -> &[S] {
        &self.times
    }

    /// Step lengths exactly as proposed. They differ from consecutive time
    /// differences by rounding, and on the last step by the horizon snap.
    pub fn durations(&self) -> &[S] {
        &self.durations
    }

    pub fn increments(&self) -> &[Vec<S>] {
        &self.increments
    }

    pub fn cumulative(&self) -> &[Vec<S>] {
        &self.cumulative
    }

    pub fn steps(&self) -> usize {
        self.increments.len()
    }

    pub fn last_time(&self) -> S {
        *self.times.last().expect("record always holds t = 0")
    }

    pub fn last_cumulative(&self) -> &[S] {
        self.cumulative.last().expect("record always holds W(0)")
    }

    pub fn step_length(&self, n: usize) -> S {
        self.times[n + 1] - self.times[n]
    }

    pub fn remaining(&self) -> S {
        self.horizon - self.last_time()
    }

    pub fn is_complete(&self) -> bool {
        self.last_time() == self.horizon
    }
}
