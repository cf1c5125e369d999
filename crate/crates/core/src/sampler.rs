//! The predictor-corrector sampler: alternating flow stages and Langevin
//! corrections from `N(0, I)` up to time `1 - delta`.

use serde::Serialize;

use crate::cloud::SampleCloud;
use crate::corrector::{run_corrector, CorrectorConfig};
use crate::error::{Error, Result};
use crate::predictor::{aligned_steps, flow_model, run_stage, PredictorConfig};
use crate::rng::{tags, StreamKey};
use crate::velocity::VelocityField;
use crate::Scalar;

/// Lipschitz constants, stage budgets and step sizes for one run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SchedulePlan<T> {
    pub delta: T,
    pub r: T,
    pub d: usize,
    pub l_vx: T,
    pub l_vt: T,
    pub l_sx: T,
    pub t_pred: T,
    pub t_corr: T,
    pub n_stages: usize,
    pub h_pred: T,
    pub h_corr: T,
    /// Friction relative to `sqrt(L_SX)`.
    pub c_rho: T,
}

/// `R^2 / delta^3`.
pub fn lipschitz_vx<T: Scalar>(delta: T, r: T) -> T {
    r * r / delta.powi(3)
}

/// `R^2 sqrt(max(R^2, d)) / delta^4`.
pub fn lipschitz_vt<T: Scalar>(delta: T, r: T, d: usize) -> T {
    r * r * (r * r).max(T::from_usize_lossy(d)).sqrt() / delta.powi(4)
}

/// `R^2 / delta^4`.
pub fn lipschitz_sx<T: Scalar>(delta: T, r: T) -> T {
    r * r / delta.powi(4)
}

/// `ceil(x)` that ignores representation error just above an integer.
fn robust_ceil(x: f64, rel_tol: f64) -> usize {
    let r = x.round();
    if (x - r).abs() <= rel_tol * x.abs().max(1.0) {
        r as usize
    } else {
        x.ceil() as usize
    }
}

impl<T: Scalar> SchedulePlan<T> {
    /// Plan with friction `rho = sqrt(L_SX)`.
    pub fn new(delta: T, r: T, d: usize, h_pred_requested: T, h_corr_requested: T) -> Result<Self> {
        Self::with_friction_scale(delta, r, d, h_pred_requested, h_corr_requested, T::one())
    }

    pub fn with_friction_scale(
        delta: T,
        r: T,
        d: usize,
        h_pred_requested: T,
        h_corr_requested: T,
        c_rho: T,
    ) -> Result<Self> {
        if !(delta > T::zero() && delta < T::one()) {
            return Err(Error::InvalidParameter(format!("delta = {delta} outside (0, 1)")));
        }
        if !(r >= T::one()) || !r.is_finite() {
            return Err(Error::InvalidParameter(format!("R = {r} must be >= 1")));
        }
        if d == 0 {
            return Err(Error::InvalidParameter("dimension must be positive".into()));
        }
        let l_vx = lipschitz_vx(delta, r);
        let l_vt = lipschitz_vt(delta, r, d);
        let l_sx = lipschitz_sx(delta, r);
        let t_pred = T::one() / l_vx;
        let t_corr = T::one() / l_sx.sqrt();
        let slack = T::one() + T::lit(1e-12);
        for (name, h, budget) in [
            ("predictor", h_pred_requested, t_pred),
            ("corrector", h_corr_requested, t_corr),
        ] {
            if !(h > T::zero()) {
                return Err(Error::InvalidParameter(format!("{name} step {h} must be positive")));
            }
            if h > budget * slack {
                return Err(Error::InvalidParameter(format!(
                    "{name} step {h} exceeds its stage budget {budget}"
                )));
            }
        }
        let h_pred = t_pred / T::from_usize_lossy(aligned_steps(t_pred, h_pred_requested));
        let h_corr = t_corr / T::from_usize_lossy(aligned_steps(t_corr, h_corr_requested));
        let n_stages = robust_ceil(
            ((T::one() - delta) * l_vx).as_f64(),
            (64.0 * T::epsilon().as_f64()).max(1e-9),
        ).max(1);
        let plan = Self {
            delta,
            r,
            d,
            l_vx,
            l_vt,
            l_sx,
            t_pred,
            t_corr,
            n_stages,
            h_pred,
            h_corr,
            c_rho,
        };
        // validates the friction scale once, up front
        plan.corrector_config(T::zero())?;
        Ok(plan)
    }

    /// Friction `c_rho sqrt(L_SX)`.
    pub fn rho(&self) -> T {
        self.c_rho * self.l_sx.sqrt()
    }

    /// Time interval of stage `n`; the last stage is truncated at `1 - delta`.
    pub fn stage_bounds(&self, n: usize) -> (T, T) {
        let end_time = T::one() - self.delta;
        let start = (T::from_usize_lossy(n) * self.t_pred).min(end_time);
        let end = if n + 1 >= self.n_stages {
            end_time
        } else {
            (T::from_usize_lossy(n + 1) * self.t_pred).min(end_time)
        };
        (start, end)
    }

    pub fn predictor_config(&self, n: usize) -> Result<PredictorConfig<T>> {
        let (s, e) = self.stage_bounds(n);
        PredictorConfig::new(self.h_pred, s, e, self.delta)
    }

    pub fn corrector_config(&self, t_frozen: T) -> Result<CorrectorConfig<T>> {
        CorrectorConfig::new(t_frozen, self.c_rho, self.h_corr, self.t_corr, self.l_sx)
    }
}

/// How each stage advances the particles in time.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum Predictor<T> {
    /// Uniform Euler steps of size `h_pred`.
    #[default]
    Euler,
    /// Adaptive high-accuracy integration of the model's own flow.
    Adaptive { tol: T },
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SamplerOptions<T> {
    /// Skip the corrector (ablation only).
    pub predictor_only: bool,
    pub predictor: Predictor<T>,
}

/// Per-stage bookkeeping returned by [`sample_traced`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StageRecord {
    pub t_start: f64,
    pub t_end: f64,
    pub predictor_steps: usize,
    pub corrector_steps: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SampleTrace {
    pub stages: Vec<StageRecord>,
}

impl SampleTrace {
    /// Sum of the stage lengths.
    pub fn predictor_time(&self) -> f64 {
        self.stages.iter().map(|s| s.t_end - s.t_start).sum()
    }

    pub fn corrector_runs(&self) -> usize {
        self.stages.iter().filter(|s| s.corrector_steps > 0).count()
    }
}

/// Runs the sampler and returns the cloud at time `1 - delta`.
pub fn sample<T: Scalar, M: VelocityField<T>>(
    model: &M,
    plan: &SchedulePlan<T>,
    n_particles: usize,
    key: StreamKey,
    options: SamplerOptions<T>,
) -> Result<SampleCloud<T>> {
    sample_traced(model, plan, n_particles, key, options).map(|(c, _)| c)
}

pub fn sample_traced<T: Scalar, M: VelocityField<T>>(
    model: &M,
    plan: &SchedulePlan<T>,
    n_particles: usize,
    key: StreamKey,
    options: SamplerOptions<T>,
) -> Result<(SampleCloud<T>, SampleTrace)> {
    if model.dim() != plan.d {
        return Err(Error::DimensionMismatch {
            expected: plan.d,
            got: model.dim(),
        });
    }
    let initial = SampleCloud::standard_normal(n_particles, plan.d, key.child(tags::INITIAL));
    sample_from(model, plan, initial, key, options)
}

/// Runs all stages starting from a given initial cloud.
pub fn sample_from<T: Scalar, M: VelocityField<T>>(
    model: &M,
    plan: &SchedulePlan<T>,
    mut cloud: SampleCloud<T>,
    key: StreamKey,
    options: SamplerOptions<T>,
) -> Result<(SampleCloud<T>, SampleTrace)> {
    let corrector_key = key.child(tags::CORRECTOR);
    let mut trace = SampleTrace::default();
    for n in 0..plan.n_stages {
        let cfg = plan.predictor_config(n)?;
        cloud = match options.predictor {
            Predictor::Euler => run_stage(model, &cfg, cloud)?,
            Predictor::Adaptive { tol } => flow_model(model, cfg.t_start(), cfg.t_end(), cloud, tol)?,
        };
        let mut corrector_steps = 0;
        if !options.predictor_only {
            let ccfg = plan.corrector_config(cfg.t_end())?;
            cloud = run_corrector(model, &ccfg, cloud, corrector_key.child(n as u64))?;
            corrector_steps = ccfg.steps();
        }
        trace.stages.push(StageRecord {
            t_start: cfg.t_start().as_f64(),
            t_end: cfg.t_end().as_f64(),
            predictor_steps: cfg.steps(),
            corrector_steps,
        });
    }
    Ok((cloud.with_lineage(key.token()), trace))
}

/// `R^3 max(R, sqrt d) / delta^6 h_pred + R^3 / delta^5 h_corr + eps_sc / delta^2`
/// with all constants set to one.
pub fn error_budget<T: Scalar>(delta: T, r: T, d: usize, h_pred: T, h_corr: T, eps_sc: T) -> T {
    let r3 = r * r * r;
    let spread = r.max(T::from_usize_lossy(d).sqrt());
    r3 * spread / delta.powi(6) * h_pred + r3 / delta.powi(5) * h_corr + eps_sc / (delta * delta)
}

/// [`error_budget`] at the plan's aligned step sizes.
pub fn endpoint_error_budget<T: Scalar>(plan: &SchedulePlan<T>, eps_sc: T) -> T {
    error_budget(plan.delta, plan.r, plan.d, plan.h_pred, plan.h_corr, eps_sc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmarks::point_mass;
    use crate::velocity::VelocityModel;

    #[test]
    fn plan_constants_by_hand() {
        let p = SchedulePlan::<f64>::new(0.5, 1.0, 1, 0.125, 0.25).unwrap();
        assert_eq!(p.l_vx, 8.0);
        assert_eq!(p.l_vt, 16.0);
        assert_eq!(p.l_sx, 16.0);
        assert_eq!(p.t_pred, 0.125);
        assert_eq!(p.t_corr, 0.25);
        assert_eq!(p.n_stages, 4);
        assert_eq!(p.predictor_config(0).unwrap().steps(), 1);
        let p = SchedulePlan::<f64>::new(0.1, 1.0, 1, 0.001, 0.01).unwrap();
        assert!((p.l_vx - 1000.0).abs() < 1e-9);
        assert_eq!(p.n_stages, 900);
        // max(R^2, d) picks d
        assert_eq!(lipschitz_vt(0.5, 1.0, 4), 32.0);
    }

    #[test]
    fn steps_round_down_and_budgets_are_enforced() {
        let p = SchedulePlan::<f64>::new(0.5, 1.0, 1, 0.05, 0.1).unwrap();
        assert!((p.h_pred - 0.125 / 3.0).abs() < 1e-15);
        assert!((p.h_corr - 0.25 / 3.0).abs() < 1e-15);
        assert!(SchedulePlan::<f64>::new(0.5, 1.0, 1, 0.2, 0.1).is_err());
        assert!(SchedulePlan::<f64>::new(0.5, 1.0, 1, 0.1, 0.3).is_err());
        assert!(SchedulePlan::<f64>::new(1.0, 1.0, 1, 0.1, 0.1).is_err());
        assert!(SchedulePlan::<f64>::new(0.5, 0.9, 1, 0.1, 0.1).is_err());
        assert!(SchedulePlan::<f64>::with_friction_scale(0.5, 1.0, 1, 0.1, 0.1, 3.0).is_err());
    }

    #[test]
    fn stages_cover_exactly_up_to_the_horizon() {
        for &delta in &[0.5, 0.3, 0.1, 0.37] {
            let p = SchedulePlan::<f64>::new(delta, 1.0, 1, 1e-3, 1e-3).unwrap();
            let mut total = 0.0;
            for n in 0..p.n_stages {
                let (s, e) = p.stage_bounds(n);
                assert!(e > s, "empty stage {n} at delta {delta}");
                total += e - s;
            }
            assert!((total - (1.0 - delta)).abs() < 1e-12);
            assert_eq!(p.stage_bounds(p.n_stages - 1).1, 1.0 - delta);
            assert!(p.n_stages as f64 * p.t_pred >= 1.0 - delta - 1e-12);
        }
    }

    #[test]
    fn budget_by_hand() {
        assert_eq!(error_budget(0.5_f64, 1.0, 1, 0.0, 0.0, 0.0), 0.0);
        assert!((error_budget(0.5_f64, 1.0, 1, 0.01, 0.01, 0.0) - 0.96).abs() < 1e-12);
        let a = error_budget(0.3_f64, 1.5, 2, 0.01, 0.0, 0.0);
        let b = error_budget(0.3_f64, 1.5, 2, 0.02, 0.0, 0.0);
        assert_eq!(b, 2.0 * a);
    }

    #[test]
    fn predictor_only_endpoint_is_closed_form() {
        let y = [0.5, -0.25];
        let tgt = point_mass(&y).unwrap();
        let m = VelocityModel::exact(&tgt);
        let p = SchedulePlan::<f64>::new(0.5, tgt.diameter(), 2, 0.01, 0.01).unwrap();
        let opts = SamplerOptions {
            predictor_only: true,
            ..Default::default()
        };
        let key = StreamKey::new(11);
        let out = sample(&m, &p, 64, key, opts).unwrap();
        let z0 = SampleCloud::<f64>::standard_normal(64, 2, key.child(tags::INITIAL));
        for (x, z) in out.particles().zip(z0.particles()) {
            for k in 0..2 {
                assert!((x[k] - (y[k] + 0.5 * (z[k] - y[k]))).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn trace_accounts_for_every_stage() {
        let tgt = crate::benchmarks::two_point::<f64>();
        let m = VelocityModel::exact(&tgt);
        let p = SchedulePlan::<f64>::new(0.3, 1.0, 1, 0.01, 0.05).unwrap();
        let (out, tr) = sample_traced(&m, &p, 32, StreamKey::new(1), SamplerOptions::default()).unwrap();
        assert_eq!(out.len(), 32);
        assert_eq!(tr.stages.len(), p.n_stages);
        assert_eq!(tr.corrector_runs(), p.n_stages);
        assert!((tr.predictor_time() - 0.7).abs() < 1e-12);
        let (empty, _) = sample_traced(&m, &p, 0, StreamKey::new(1), SamplerOptions::default()).unwrap();
        assert!(empty.is_empty());
    }
}
