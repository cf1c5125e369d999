//! Velocity-field roles: the exact oracle, a controlled perturbation of it,
//! and a Lipschitz-clipped variant, plus the score derived from any of them.

use crate::error::{Error, Result};
use crate::linalg::{dist_sq, norm};
use crate::moments::{check_time, v_star_into};
use crate::target::DiscreteTarget;
use crate::Scalar;

/// Anything that can serve as the sampler's velocity field `v_hat(t, x)`.
pub trait VelocityField<T: Scalar>: Sync {
    fn dim(&self) -> usize;

    fn velocity_into(&self, t: T, x: &[T], out: &mut [T]) -> Result<()>;

    fn velocity(&self, t: T, x: &[T]) -> Result<Vec<T>> {
        let mut out = vec![T::zero(); self.dim()];
        self.velocity_into(t, x, &mut out)?;
        Ok(out)
    }

    /// Score derived from the velocity: `-x / (1 - t) + t / (1 - t) * v_hat`.
    fn approx_score_into(&self, t: T, x: &[T], out: &mut [T]) -> Result<()> {
        self.velocity_into(t, x, out)?;
        let inv = T::one() / (T::one() - t);
        let c = t * inv;
        for (o, &xk) in out.iter_mut().zip(x) {
            *o = c * *o - xk * inv;
        }
        Ok(())
    }

    fn approx_score(&self, t: T, x: &[T]) -> Result<Vec<T>> {
        let mut out = vec![T::zero(); self.dim()];
        self.approx_score_into(t, x, &mut out)?;
        Ok(out)
    }
}

/// Shape of the deterministic perturbation added to `v*`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PerturbMode<T> {
    /// `v* + eps * u`.
    ConstantShift,
    /// `v* + eps * sin(omega t) * u`.
    SmoothSinusoid { omega: T },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Exact,
    Perturbed,
    Clipped,
}

#[derive(Clone, Debug)]
enum Role<T> {
    Exact,
    Perturbed {
        eps_sc: T,
        mode: PerturbMode<T>,
        direction: Vec<T>,
    },
    Clipped {
        lip_budget: T,
        anchor: Vec<T>,
    },
}

/// A velocity field built on top of the exact oracle of `target`.
#[derive(Clone, Debug)]
pub struct VelocityModel<'a, T> {
    target: &'a DiscreteTarget<T>,
    role: Role<T>,
}

impl<'a, T: Scalar> VelocityModel<'a, T> {
    pub fn exact(target: &'a DiscreteTarget<T>) -> Self {
        Self {
            target,
            role: Role::Exact,
        }
    }

    /// Perturbation along `e_1`.
    pub fn perturbed(target: &'a DiscreteTarget<T>, eps_sc: T, mode: PerturbMode<T>) -> Result<Self> {
        let mut u = vec![T::zero(); target.dim()];
        u[0] = T::one();
        Self::perturbed_along(target, eps_sc, mode, &u)
    }

    /// Perturbation along `direction` (normalized here).
    pub fn perturbed_along(
        target: &'a DiscreteTarget<T>,
        eps_sc: T,
        mode: PerturbMode<T>,
        direction: &[T],
    ) -> Result<Self> {
        if !(eps_sc >= T::zero()) || !eps_sc.is_finite() {
            return Err(Error::InvalidParameter(format!("eps_sc = {eps_sc} must be >= 0")));
        }
        if direction.len() != target.dim() {
            return Err(Error::DimensionMismatch {
                expected: target.dim(),
                got: direction.len(),
            });
        }
        let n = norm(direction);
        if !(n > T::zero()) {
            return Err(Error::InvalidParameter("perturbation direction is zero".into()));
        }
        Ok(Self {
            target,
            role: Role::Perturbed {
                eps_sc,
                mode,
                direction: direction.iter().map(|&v| v / n).collect(),
            },
        })
    }

    /// Exact velocity whose deviation from the value at the target mean is
    /// softly rescaled so that `||v(x) - v(anchor)|| <= lip_budget ||x - anchor||`.
    pub fn clipped(target: &'a DiscreteTarget<T>, lip_budget: T) -> Result<Self> {
        if !(lip_budget > T::zero()) {
            return Err(Error::InvalidParameter(format!(
                "Lipschitz budget {lip_budget} must be positive"
            )));
        }
        Ok(Self {
            target,
            role: Role::Clipped {
                lip_budget,
                anchor: target.mean(),
            },
        })
    }

    pub fn target(&self) -> &'a DiscreteTarget<T> {
        self.target
    }

    pub fn kind(&self) -> ModelKind {
        match self.role {
            Role::Exact => ModelKind::Exact,
            Role::Perturbed { .. } => ModelKind::Perturbed,
            Role::Clipped { .. } => ModelKind::Clipped,
        }
    }

    /// Root-mean-square velocity error budget (zero unless perturbed).
    pub fn eps_sc(&self) -> T {
        match &self.role {
            Role::Perturbed { eps_sc, .. } => *eps_sc,
            _ => T::zero(),
        }
    }

    pub fn lip_budget(&self) -> Option<T> {
        match &self.role {
            Role::Clipped { lip_budget, .. } => Some(*lip_budget),
            _ => None,
        }
    }
}

impl<T: Scalar> VelocityField<T> for VelocityModel<'_, T> {
    fn dim(&self) -> usize {
        self.target.dim()
    }

    fn velocity_into(&self, t: T, x: &[T], out: &mut [T]) -> Result<()> {
        check_time(t)?;
        v_star_into(self.target, t, x, out)?;
        match &self.role {
            Role::Exact => {}
            Role::Perturbed {
                eps_sc,
                mode,
                direction,
            } => {
                let amp = match mode {
                    PerturbMode::ConstantShift => *eps_sc,
                    PerturbMode::SmoothSinusoid { omega } => *eps_sc * (*omega * t).sin(),
                };
                for (o, &u) in out.iter_mut().zip(direction) {
                    *o = *o + amp * u;
                }
            }
            Role::Clipped { lip_budget, anchor } => {
                let mut va = vec![T::zero(); x.len()];
                v_star_into(self.target, t, anchor, &mut va)?;
                let dev = out
                    .iter()
                    .zip(&va)
                    .fold(T::zero(), |acc, (&a, &b)| acc + (a - b) * (a - b))
                    .sqrt();
                let cap = *lip_budget * dist_sq(x, anchor).sqrt();
                if dev > cap {
                    let s = cap / dev;
                    for (o, &b) in out.iter_mut().zip(&va) {
                        *o = b + (*o - b) * s;
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmarks::{five_point_d3, symmetric_pair};
    use crate::moments::{score, v_star};

    #[test]
    fn exact_model_is_the_oracle() {
        let tgt = five_point_d3::<f64>();
        let m = VelocityModel::exact(&tgt);
        let x = [0.2, -0.1, 0.7];
        assert_eq!(m.velocity(0.4, &x).unwrap(), v_star(&tgt, 0.4, &x).unwrap());
        let s = m.approx_score(0.4, &x).unwrap();
        let s0 = score(&tgt, 0.4, &x).unwrap();
        for (a, b) in s.iter().zip(&s0) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(m.kind(), ModelKind::Exact);
        assert_eq!(m.eps_sc(), 0.0);
    }

    #[test]
    fn constant_shift_adds_exactly_eps_along_e1() {
        let tgt = five_point_d3::<f64>();
        let m = VelocityModel::perturbed(&tgt, 0.1, PerturbMode::ConstantShift).unwrap();
        let x = [0.2, -0.1, 0.7];
        let v = m.velocity(0.3, &x).unwrap();
        let v0 = v_star(&tgt, 0.3, &x).unwrap();
        assert_eq!(v[0], v0[0] + 0.1);
        assert_eq!(v[1], v0[1]);
        assert_eq!(v[2], v0[2]);
    }

    #[test]
    fn score_shift_is_linear_in_velocity_shift() {
        let tgt = symmetric_pair(1.0_f64, 1).unwrap();
        let m = VelocityModel::perturbed(&tgt, 0.1, PerturbMode::ConstantShift).unwrap();
        let e = VelocityModel::exact(&tgt);
        let ds = m.approx_score(0.5, &[0.3]).unwrap()[0] - e.approx_score(0.5, &[0.3]).unwrap()[0];
        assert!((ds - 0.1).abs() < 1e-12);
        for &t in &[0.1, 0.45, 0.8] {
            let ds = m.approx_score(t, &[0.7]).unwrap()[0] - e.approx_score(t, &[0.7]).unwrap()[0];
            let dv = m.velocity(t, &[0.7]).unwrap()[0] - e.velocity(t, &[0.7]).unwrap()[0];
            assert!((ds - t / (1.0 - t) * dv).abs() < 1e-12);
        }
    }

    #[test]
    fn sinusoid_amplitude_is_bounded_by_eps() {
        let tgt = symmetric_pair(1.0, 2).unwrap();
        let m = VelocityModel::perturbed_along(
            &tgt,
            0.1,
            PerturbMode::SmoothSinusoid { omega: 7.0 },
            &[3.0, 4.0],
        )
        .unwrap();
        for k in 0..50 {
            let t = k as f64 / 51.0;
            let x = [0.3, -0.2];
            let v = m.velocity(t, &x).unwrap();
            let v0 = v_star(&tgt, t, &x).unwrap();
            let dev = ((v[0] - v0[0]).powi(2) + (v[1] - v0[1]).powi(2)).sqrt();
            assert!(dev <= 0.1 + 1e-15);
            assert!((dev - 0.1 * (7.0 * t).sin().abs()).abs() < 1e-12);
        }
    }

    #[test]
    fn clipped_model_respects_budget_about_anchor() {
        let tgt = symmetric_pair(1.0_f64, 1).unwrap();
        let budget = 3.0;
        let m = VelocityModel::clipped(&tgt, budget).unwrap();
        let t = 0.9;
        let anchor_v = m.velocity(t, &[0.0]).unwrap()[0];
        for k in -20..=20 {
            let x = k as f64 * 0.05;
            let v = m.velocity(t, &[x]).unwrap()[0];
            assert!((v - anchor_v).abs() <= budget * x.abs() + 1e-12);
        }
        // far from the anchor the cap is inactive
        let far = m.velocity(0.2, &[10.0]).unwrap()[0];
        assert_eq!(far, v_star(&tgt, 0.2, &[10.0]).unwrap()[0]);
    }

    #[test]
    fn invalid_models_are_rejected() {
        let tgt = symmetric_pair(1.0_f64, 1).unwrap();
        assert!(VelocityModel::perturbed(&tgt, -0.1, PerturbMode::ConstantShift).is_err());
        assert!(VelocityModel::clipped(&tgt, 0.0).is_err());
        assert!(VelocityModel::perturbed_along(&tgt, 0.1, PerturbMode::ConstantShift, &[0.0]).is_err());
        let m = VelocityModel::exact(&tgt);
        assert!(m.velocity(1.0, &[0.0]).is_err());
        assert!(m.approx_score(1.2, &[0.0]).is_err());
    }
}
