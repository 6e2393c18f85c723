//! Pathwise Euler-Maruyama integration of Ito SDEs on fixed and adaptive
//! random partitions.
//!
//! The adaptive controllers bound the Brownian increment over each step by
//! the local size of the second-order coefficients `q_ij`, and draw the step
//! as the exact first exit of `(t, W)` from a box (Adaptive-I) or a region
//! built from boxes (Adaptive-II). Numerics are generic over [`Real`]
//! (`f32`, `f64`); the aliases below fix `f64`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod brownian;
pub mod diagnostics;
pub mod error;
pub mod exit;
pub mod experiments;
pub mod model;
pub mod real;
pub mod stats;
pub mod stepper;

pub use brownian::{gaussian_increment, BrownianRecord, RngStream};
pub use error::{Result, SdeError};
pub use exit::{
    exit_probability, exit_time_density, exit_time_quantile, sample_exit_cuboid, sample_exit_single,
    sample_region_ii, survival_single, Cuboid, CuboidExitSample, ExitFace, RegionII,
};
pub use model::{
    eval_q, gbm_exact, problem_by_key, AnalyticField, DerivativeMode, ExactFlow, LinearField, QMatrix, SdeProblem,
    VectorField,
};
pub use real::Real;
pub use stepper::{em_step, implicit_em_step, integrate, ControllerTag, StepController, Stepper, Trajectory};

pub type Problem = SdeProblem<f64>;
pub type Controller = StepController<f64>;
pub type Traj = Trajectory<f64>;
pub type Record = BrownianRecord<f64>;
pub type QMat = QMatrix<f64>;
pub type Region = RegionII<f64>;
pub type ExitBox = Cuboid<f64>;
pub type Report = diagnostics::TruncationReport<f64>;
