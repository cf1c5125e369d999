//! Rectified-flow sampling laboratory with exact oracles for finite-support
//! targets.
//!
//! For a target that is a weighted set of points, the velocity field of the
//! linear interpolation `X_t = (1 - t) Z + t X_1`, its score, Jacobian and
//! time derivative are finite sums over posterior weights. This crate builds
//! on those oracles:
//!
//! * [`moments`] evaluates the oracles;
//! * [`velocity`] wraps them as exact, perturbed or Lipschitz-clipped models;
//! * [`predictor`] and [`corrector`] implement the Euler flow stage and the
//!   underdamped Langevin corrector, combined by [`sampler`];
//! * [`onestep`] covers power-law time grids and the consistency map;
//! * [`metrics`] measures `W_2` and energy distances exactly.
//!
//! Everything is generic over [`Scalar`] (`f32` or `f64`); the aliases at the
//! crate root fix the precision to `f64`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod benchmarks;
pub mod cloud;
pub mod corrector;
pub mod error;
pub mod fit;
pub mod linalg;
pub mod metrics;
pub mod moments;
pub mod ode;
pub mod onestep;
pub mod predictor;
pub mod rng;
pub mod sampler;
mod scalar;
pub mod target;
pub mod velocity;

pub use cloud::SampleCloud;
pub use corrector::{run_corrector, ulmc_step, CorrectorConfig, OuTransition, PhaseCloud};
pub use error::{Error, Result};
pub use metrics::{
    energy_distance, energy_distance_unbiased, moment_report, w2_cloud_cloud, w2_cloud_target,
    MomentReport,
};
pub use moments::{
    dt_v_star, jac_v_star, moments, posterior_weights, score, total_dt_v_star, v_star,
    MomentBundle, TimePoint,
};
pub use onestep::{
    build_grid, cd_residual, consistency_map, e2_chain, grid_sum, onestep_flow,
    onestep_generation_error, ConsistencyOracle, EdmGrid, OneStepReport,
};
pub use predictor::{flow_model, flow_reference, predict_step, run_stage, PredictorConfig};
pub use rng::StreamKey;
pub use sampler::{
    endpoint_error_budget, error_budget, sample, sample_traced, Predictor, SamplerOptions,
    SchedulePlan,
};
pub use scalar::Scalar;
pub use target::{DiscreteTarget, TargetDocument};
pub use velocity::{ModelKind, PerturbMode, VelocityField, VelocityModel};

/// Double-precision target.
pub type Target = DiscreteTarget<f64>;
/// Double-precision particle cloud.
pub type Cloud = SampleCloud<f64>;
/// Double-precision velocity model.
pub type Model<'a> = VelocityModel<'a, f64>;
/// Double-precision sampler plan.
pub type Plan = SchedulePlan<f64>;
/// Double-precision power-law grid.
pub type Grid = EdmGrid<f64>;
