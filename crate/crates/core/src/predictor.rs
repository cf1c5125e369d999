//! Euler predictor for the flow ODE and the high-accuracy reference flow.

use rayon::prelude::*;

use crate::cloud::SampleCloud;
use crate::error::{Error, Result};
use crate::moments::{v_star_into, TimePoint};
use crate::ode::Dopri5;
use crate::target::DiscreteTarget;
use crate::velocity::{VelocityField, VelocityModel};
use crate::Scalar;

/// Number of uniform steps of size at most `h_requested` covering `span`.
pub(crate) fn aligned_steps<T: Scalar>(span: T, h_requested: T) -> usize {
    if span <= T::zero() {
        return 0;
    }
    let ratio = (span / h_requested).as_f64();
    // tolerate representation error so that e.g. 0.125 / 0.0125 gives 10
    let slack = 64.0 * T::epsilon().as_f64();
    (ratio * (1.0 - slack)).ceil().max(1.0) as usize
}

/// A predictor stage `[t_start, t_end]` split into `steps` uniform steps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PredictorConfig<T> {
    h_pred: T,
    t_start: T,
    t_end: T,
    steps: usize,
    delta: T,
}

impl<T: Scalar> PredictorConfig<T> {
    /// Rounds `h_requested` down to `(t_end - t_start) / ceil((t_end - t_start) / h_requested)`.
    pub fn new(h_requested: T, t_start: T, t_end: T, delta: T) -> Result<Self> {
        if !(h_requested > T::zero()) {
            return Err(Error::InvalidParameter(format!(
                "predictor step {h_requested} must be positive"
            )));
        }
        let start = TimePoint::new(t_start, delta)?;
        let end = TimePoint::new(t_end, delta)?;
        if end.t() < start.t() {
            return Err(Error::InvalidParameter(format!(
                "stage end {t_end} precedes its start {t_start}"
            )));
        }
        let span = end.t() - start.t();
        let steps = aligned_steps(span, h_requested);
        let h_pred = if steps == 0 {
            T::zero()
        } else {
            span / T::from_usize_lossy(steps)
        };
        Ok(Self {
            h_pred,
            t_start: start.t(),
            t_end: end.t(),
            steps,
            delta,
        })
    }

    /// Also checks the step against the bound `h <= 1 / L_vX`.
    pub fn with_lipschitz(self, l_vx: T) -> Result<Self> {
        if self.h_pred * l_vx > T::one() + T::lit(1e-12) {
            return Err(Error::InvalidParameter(format!(
                "predictor step {} exceeds 1 / L_vX = {}",
                self.h_pred,
                T::one() / l_vx
            )));
        }
        Ok(self)
    }

    pub fn h_pred(&self) -> T {
        self.h_pred
    }

    pub fn t_start(&self) -> T {
        self.t_start
    }

    pub fn t_end(&self) -> T {
        self.t_end
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn delta(&self) -> T {
        self.delta
    }
}

/// One Euler step `x <- x + h v_hat(t0, x)` for every particle.
pub fn predict_step<T: Scalar, M: VelocityField<T>>(
    model: &M,
    at: TimePoint<T>,
    h: T,
    mut cloud: SampleCloud<T>,
) -> Result<SampleCloud<T>> {
    if !(h >= T::zero()) {
        return Err(Error::InvalidParameter(format!("step {h} must be >= 0")));
    }
    let reach = at.t() + h;
    if reach > at.end() + T::epsilon() * T::lit(8.0) {
        return Err(Error::TimeOutOfRange {
            t: reach.as_f64(),
            limit: at.end().as_f64(),
        });
    }
    check_cloud(model.dim(), &cloud)?;
    if h == T::zero() {
        return Ok(cloud);
    }
    euler_in_place(model, at.t(), h, cloud.as_flat_mut())?;
    Ok(cloud)
}

fn check_cloud<T: Scalar>(dim: usize, cloud: &SampleCloud<T>) -> Result<()> {
    if cloud.dim() != dim && !cloud.is_empty() {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: cloud.dim(),
        });
    }
    Ok(())
}

fn euler_in_place<T: Scalar, M: VelocityField<T>>(model: &M, t: T, h: T, flat: &mut [T]) -> Result<()> {
    let d = model.dim();
    flat.par_chunks_mut(d).try_for_each_init(
        || vec![T::zero(); d],
        |v, x| {
            model.velocity_into(t, x, v)?;
            for (xk, &vk) in x.iter_mut().zip(v.iter()) {
                *xk = *xk + h * vk;
            }
            Ok(())
        },
    )
}

/// Composes Euler steps over the stage grid.
pub fn run_stage<T: Scalar, M: VelocityField<T>>(
    model: &M,
    cfg: &PredictorConfig<T>,
    mut cloud: SampleCloud<T>,
) -> Result<SampleCloud<T>> {
    check_cloud(model.dim(), &cloud)?;
    let d = model.dim();
    let h = cfg.h_pred;
    let t0 = cfg.t_start;
    let steps = cfg.steps;
    // particle-major: each particle runs the whole stage independently
    cloud.as_flat_mut().par_chunks_mut(d).try_for_each_init(
        || vec![T::zero(); d],
        |v, x| {
            for n in 0..steps {
                let t = t0 + T::from_usize_lossy(n) * h;
                model.velocity_into(t, x, v)?;
                for (xk, &vk) in x.iter_mut().zip(v.iter()) {
                    *xk = *xk + h * vk;
                }
            }
            Ok::<(), Error>(())
        },
    )?;
    Ok(cloud)
}

/// Integrates `dX = v_hat(t, X) dt` for every particle with an adaptive 5(4)
/// pair at local tolerance `tol`.
pub fn flow_model<T: Scalar, M: VelocityField<T>>(
    model: &M,
    t_start: T,
    t_end: T,
    mut cloud: SampleCloud<T>,
    tol: T,
) -> Result<SampleCloud<T>> {
    for &t in &[t_start, t_end] {
        if !(t >= T::zero() && t < T::one()) {
            return Err(Error::TimeOutOfRange {
                t: t.as_f64(),
                limit: 1.0,
            });
        }
    }
    check_cloud(model.dim(), &cloud)?;
    if t_start == t_end {
        return Ok(cloud);
    }
    let solver = Dopri5::new(tol);
    let d = model.dim();
    cloud.as_flat_mut().par_chunks_mut(d).try_for_each(|x| {
        solver
            .integrate(|t, y, dy| model.velocity_into(t, y, dy), t_start, t_end, x)
            .map(|_| ())
    })?;
    Ok(cloud)
}

/// Integrates the exact flow `dX = v*(t, X) dt` from `t_start` to `t_end`.
pub fn flow_reference<T: Scalar>(
    target: &DiscreteTarget<T>,
    t_start: T,
    t_end: T,
    cloud: SampleCloud<T>,
    tol: T,
) -> Result<SampleCloud<T>> {
    flow_model(&VelocityModel::exact(target), t_start, t_end, cloud, tol)
}

/// Reference flow of a single point.
pub fn flow_point<T: Scalar>(
    target: &DiscreteTarget<T>,
    t_start: T,
    t_end: T,
    x: &[T],
    tol: T,
) -> Result<Vec<T>> {
    let mut y = x.to_vec();
    if t_start != t_end {
        Dopri5::new(tol).integrate(|t, y, dy| v_star_into(target, t, y, dy), t_start, t_end, &mut y)?;
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmarks::{point_mass, symmetric_pair};
    use crate::rng::StreamKey;
    use crate::velocity::PerturbMode;

    // closed-form flow of a point target: X_t = y + (1 - t)/(1 - t0) (X_t0 - y)
    fn closed_form(y: f64, x0: f64, t0: f64, t: f64) -> f64 {
        y + (1.0 - t) / (1.0 - t0) * (x0 - y)
    }

    #[test]
    fn alignment_rounds_down_the_step() {
        let c = PredictorConfig::<f64>::new(0.0125, 0.0, 0.125, 0.5).unwrap();
        assert_eq!(c.steps(), 10);
        let c = PredictorConfig::<f64>::new(0.03, 0.0, 0.1, 0.5).unwrap();
        assert_eq!(c.steps(), 4);
        assert!((c.h_pred() - 0.025).abs() < 1e-15);
        assert!(PredictorConfig::new(0.01, 0.0, 0.95, 0.1).is_err());
        assert!(PredictorConfig::new(0.01, 0.0, 0.1, 0.1).unwrap().with_lipschitz(200.0).is_err());
    }

    #[test]
    fn zero_step_and_zero_stage_are_identity() {
        let tgt = symmetric_pair(1.0_f64, 1).unwrap();
        let m = VelocityModel::exact(&tgt);
        let c = SampleCloud::<f64>::standard_normal(16, 1, StreamKey::new(3));
        let at = TimePoint::new(0.2, 0.1).unwrap();
        assert_eq!(predict_step(&m, at, 0.0, c.clone()).unwrap(), c);
        let cfg = PredictorConfig::new(0.01, 0.4, 0.4, 0.1).unwrap();
        assert_eq!(run_stage(&m, &cfg, c.clone()).unwrap(), c);
    }

    #[test]
    fn stepping_past_horizon_is_rejected() {
        let tgt = symmetric_pair(1.0_f64, 1).unwrap();
        let m = VelocityModel::exact(&tgt);
        let c = SampleCloud::<f64>::standard_normal(4, 1, StreamKey::new(3));
        let at = TimePoint::new(0.85, 0.1).unwrap();
        assert!(matches!(predict_step(&m, at, 0.1, c), Err(Error::TimeOutOfRange { .. })));
    }

    #[test]
    fn euler_is_exact_for_point_targets() {
        let y = 0.7;
        let tgt = point_mass(&[y]).unwrap();
        let m = VelocityModel::exact(&tgt);
        let c = SampleCloud::<f64>::standard_normal(32, 1, StreamKey::new(5));
        let at = TimePoint::new(0.3, 0.05).unwrap();
        let out = predict_step(&m, at, 0.2, c.clone()).unwrap();
        for (a, b) in out.particles().zip(c.particles()) {
            assert!((a[0] - closed_form(y, b[0], 0.3, 0.5)).abs() < 1e-12);
        }
        let cfg = PredictorConfig::new(0.013, 0.1, 0.9, 0.05).unwrap();
        let out = run_stage(&m, &cfg, c.clone()).unwrap();
        for (a, b) in out.particles().zip(c.particles()) {
            assert!((a[0] - closed_form(y, b[0], 0.1, 0.9)).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_shift_changes_one_step_by_h_eps() {
        let tgt = crate::benchmarks::five_point_d3::<f64>();
        let e = VelocityModel::exact(&tgt);
        let p = VelocityModel::perturbed(&tgt, 0.1, PerturbMode::ConstantShift).unwrap();
        let c = SampleCloud::<f64>::standard_normal(10, 3, StreamKey::new(2));
        let at = TimePoint::new(0.25, 0.1).unwrap();
        let a = predict_step(&e, at, 0.05, c.clone()).unwrap();
        let b = predict_step(&p, at, 0.05, c).unwrap();
        for (pa, pb) in a.particles().zip(b.particles()) {
            assert!((pb[0] - pa[0] - 0.005).abs() < 1e-15);
            assert_eq!(pa[1], pb[1]);
            assert_eq!(pa[2], pb[2]);
        }
    }

    #[test]
    fn reference_flow_matches_closed_form() {
        let y = -0.4;
        let tgt = point_mass(&[y]).unwrap();
        let c = SampleCloud::<f64>::standard_normal(8, 1, StreamKey::new(1));
        let tol = 1e-10;
        let out = flow_reference(&tgt, 0.0, 0.9, c.clone(), tol).unwrap();
        for (a, b) in out.particles().zip(c.particles()) {
            assert!((a[0] - closed_form(y, b[0], 0.0, 0.9)).abs() <= 10.0 * tol);
        }
        assert_eq!(flow_reference(&tgt, 0.3, 0.3, c.clone(), tol).unwrap(), c);
    }

    #[test]
    fn reference_flow_is_tolerance_consistent() {
        let tgt = symmetric_pair(1.0_f64, 1).unwrap();
        let c = SampleCloud::<f64>::standard_normal(64, 1, StreamKey::new(8));
        let a = flow_reference(&tgt, 0.0, 0.9, c.clone(), 1e-10).unwrap();
        let b = flow_reference(&tgt, 0.0, 0.9, c, 1e-12).unwrap();
        for (pa, pb) in a.particles().zip(b.particles()) {
            assert!((pa[0] - pb[0]).abs() <= 1e-8);
        }
    }

    #[test]
    fn reference_flow_rejects_terminal_time() {
        let tgt = symmetric_pair(1.0_f64, 1).unwrap();
        let c = SampleCloud::<f64>::standard_normal(2, 1, StreamKey::new(8));
        assert!(flow_reference(&tgt, 0.0, 1.0, c, 1e-8).is_err());
    }
}
