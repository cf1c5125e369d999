//! Closed-form velocity, score and derivatives for finite-support targets.
//!
//! Under the interpolation `X_t = (1 - t) Z + t X_1` with `X_1 ~ sum_i pi_i
//! delta_{y_i}`, the conditional law of `X_1` given `X_t = x` is the discrete
//! law with posterior weights
//!
//! ```text
//! w_i ∝ pi_i exp(-||x - t y_i||^2 / (2 (1 - t)^2)),
//! ```
//!
//! so every conditional moment is a finite sum and the velocity field, its
//! spatial Jacobian and its time derivative are exact.

use crate::error::{Error, Result};
use crate::linalg::{dist_sq, mat_vec, norm_sq};
use crate::target::DiscreteTarget;
use crate::Scalar;

/// A time on the sampling horizon `[0, 1 - delta]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimePoint<T> {
    t: T,
    delta: T,
}

impl<T: Scalar> TimePoint<T> {
    pub fn new(t: T, delta: T) -> Result<Self> {
        if !(delta > T::zero() && delta < T::one()) {
            return Err(Error::InvalidParameter(format!(
                "early stopping delta = {delta} must lie in (0, 1)"
            )));
        }
        let end = T::one() - delta;
        if !(t >= T::zero() && t <= end + T::epsilon() * T::lit(8.0)) {
            return Err(Error::TimeOutOfRange {
                t: t.as_f64(),
                limit: end.as_f64(),
            });
        }
        Ok(Self { t: t.min(end), delta })
    }

    pub fn t(&self) -> T {
        self.t
    }

    pub fn delta(&self) -> T {
        self.delta
    }

    /// The horizon end `1 - delta`.
    pub fn end(&self) -> T {
        T::one() - self.delta
    }
}

/// Conditional moments of `X_1` given `X_t = x`.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentBundle<T> {
    /// Posterior weights over the support points.
    pub weights: Vec<T>,
    /// `E[X_1 | X_t = x]`.
    pub m1: Vec<T>,
    /// `E[X_1^T X_1 | X_t = x]`.
    pub m2: T,
    /// `Cov(X_1 | X_t = x)`, row-major `d x d`.
    pub m2c: Vec<T>,
    /// `E[X_1 X_1^T X_1 | X_t = x]`.
    pub m3: Vec<T>,
}

pub(crate) fn check_time<T: Scalar>(t: T) -> Result<()> {
    if t >= T::zero() && t < T::one() {
        Ok(())
    } else {
        Err(Error::TimeOutOfRange {
            t: t.as_f64(),
            limit: 1.0,
        })
    }
}

fn check_dim<T: Scalar>(target: &DiscreteTarget<T>, x: &[T]) -> Result<()> {
    if x.len() == target.dim() {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            expected: target.dim(),
            got: x.len(),
        })
    }
}

#[inline]
fn logit<T: Scalar>(lw: T, x: &[T], y: &[T], t: T, inv_two_var: T) -> T {
    let mut s = T::zero();
    for (&xk, &yk) in x.iter().zip(y) {
        let r = xk - t * yk;
        s = s + r * r;
    }
    lw - s * inv_two_var
}

/// Posterior weights `w_i` over the support points.
pub fn posterior_weights<T: Scalar>(target: &DiscreteTarget<T>, t: T, x: &[T]) -> Result<Vec<T>> {
    check_time(t)?;
    check_dim(target, x)?;
    let one_m = T::one() - t;
    let inv_two_var = T::one() / (T::lit(2.0) * one_m * one_m);
    let mut w: Vec<T> = target
        .points()
        .zip(target.log_weights())
        .map(|(y, &lw)| logit(lw, x, y, t, inv_two_var))
        .collect();
    let max = w.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    let mut total = T::zero();
    for v in w.iter_mut() {
        *v = (*v - max).exp();
        total = total + *v;
    }
    w.iter_mut().for_each(|v| *v = *v / total);
    Ok(w)
}

/// All conditional moments at `(t, x)`.
pub fn moments<T: Scalar>(target: &DiscreteTarget<T>, t: T, x: &[T]) -> Result<MomentBundle<T>> {
    let weights = posterior_weights(target, t, x)?;
    let d = target.dim();
    let mut m1 = vec![T::zero(); d];
    let mut m2 = T::zero();
    let mut m3 = vec![T::zero(); d];
    for (y, &w) in target.points().zip(&weights) {
        let ny = norm_sq(y);
        m2 = m2 + w * ny;
        for k in 0..d {
            m1[k] = m1[k] + w * y[k];
            m3[k] = m3[k] + w * ny * y[k];
        }
    }
    // centred accumulation keeps the covariance PSD and exactly zero for a
    // single support point
    let mut m2c = vec![T::zero(); d * d];
    for (y, &w) in target.points().zip(&weights) {
        for i in 0..d {
            let ci = y[i] - m1[i];
            for j in 0..d {
                m2c[i * d + j] = m2c[i * d + j] + w * ci * (y[j] - m1[j]);
            }
        }
    }
    Ok(MomentBundle {
        weights,
        m1,
        m2,
        m2c,
        m3,
    })
}

/// Writes `E[X_1 | X_t = x]` into `out` without allocating.
pub fn posterior_mean_into<T: Scalar>(
    target: &DiscreteTarget<T>,
    t: T,
    x: &[T],
    out: &mut [T],
) -> Result<()> {
    check_time(t)?;
    check_dim(target, x)?;
    let one_m = T::one() - t;
    let inv_two_var = T::one() / (T::lit(2.0) * one_m * one_m);
    let mut max = T::neg_infinity();
    for (y, &lw) in target.points().zip(target.log_weights()) {
        max = max.max(logit(lw, x, y, t, inv_two_var));
    }
    out.iter_mut().for_each(|o| *o = T::zero());
    let mut total = T::zero();
    for (y, &lw) in target.points().zip(target.log_weights()) {
        let w = (logit(lw, x, y, t, inv_two_var) - max).exp();
        total = total + w;
        for (o, &yk) in out.iter_mut().zip(y) {
            *o = *o + w * yk;
        }
    }
    out.iter_mut().for_each(|o| *o = *o / total);
    Ok(())
}

/// Writes `v*(t, x) = (M1 - x) / (1 - t)` into `out`.
pub fn v_star_into<T: Scalar>(
    target: &DiscreteTarget<T>,
    t: T,
    x: &[T],
    out: &mut [T],
) -> Result<()> {
    posterior_mean_into(target, t, x, out)?;
    let inv = T::one() / (T::one() - t);
    for (o, &xk) in out.iter_mut().zip(x) {
        *o = (*o - xk) * inv;
    }
    Ok(())
}

/// The optimal velocity field `v*(t, x) = E[X_1 - Z | X_t = x]`.
pub fn v_star<T: Scalar>(target: &DiscreteTarget<T>, t: T, x: &[T]) -> Result<Vec<T>> {
    let mut out = vec![T::zero(); target.dim()];
    v_star_into(target, t, x, &mut out)?;
    Ok(out)
}

/// The score `grad log q_t(x) = (t M1 - x) / (1 - t)^2`.
pub fn score<T: Scalar>(target: &DiscreteTarget<T>, t: T, x: &[T]) -> Result<Vec<T>> {
    let mut out = vec![T::zero(); target.dim()];
    posterior_mean_into(target, t, x, &mut out)?;
    let one_m = T::one() - t;
    let inv = T::one() / (one_m * one_m);
    for (o, &xk) in out.iter_mut().zip(x) {
        *o = (t * *o - xk) * inv;
    }
    Ok(out)
}

/// Spatial Jacobian `t / (1 - t)^3 M2c - I / (1 - t)`, row-major.
pub fn jac_v_star<T: Scalar>(target: &DiscreteTarget<T>, t: T, x: &[T]) -> Result<Vec<T>> {
    let mb = moments(target, t, x)?;
    Ok(jacobian_from_moments(&mb, t))
}

pub(crate) fn jacobian_from_moments<T: Scalar>(mb: &MomentBundle<T>, t: T) -> Vec<T> {
    let d = mb.m1.len();
    let one_m = T::one() - t;
    let c = t / (one_m * one_m * one_m);
    let diag = T::one() / one_m;
    let mut j: Vec<T> = mb.m2c.iter().map(|&v| c * v).collect();
    for i in 0..d {
        j[i * d + i] = j[i * d + i] - diag;
    }
    j
}

/// Partial time derivative of `v*` at fixed `x`.
pub fn dt_v_star<T: Scalar>(target: &DiscreteTarget<T>, t: T, x: &[T]) -> Result<Vec<T>> {
    let mb = moments(target, t, x)?;
    Ok(dt_from_moments(&mb, t, x))
}

fn dt_from_moments<T: Scalar>(mb: &MomentBundle<T>, t: T, x: &[T]) -> Vec<T> {
    let d = x.len();
    let one_m = T::one() - t;
    let om2 = one_m * one_m;
    let om4 = om2 * om2;
    let mut cx = vec![T::zero(); d];
    mat_vec(&mb.m2c, x, &mut cx);
    let a = T::one() / om2;
    let b = (t + T::one()) / om4;
    let c = t / om4;
    (0..d)
        .map(|k| (mb.m1[k] - x[k]) * a + b * cx[k] - c * (mb.m3[k] - mb.m2 * mb.m1[k]))
        .collect()
}

/// Material derivative of `v*` along flow trajectories:
/// `dt_v_star + jac_v_star * v_star`.
pub fn total_dt_v_star<T: Scalar>(target: &DiscreteTarget<T>, t: T, x: &[T]) -> Result<Vec<T>> {
    let mb = moments(target, t, x)?;
    let d = x.len();
    let jac = jacobian_from_moments(&mb, t);
    let inv = T::one() / (T::one() - t);
    let v: Vec<T> = mb.m1.iter().zip(x).map(|(&m, &xk)| (m - xk) * inv).collect();
    let mut jv = vec![T::zero(); d];
    mat_vec(&jac, &v, &mut jv);
    let mut out = dt_from_moments(&mb, t, x);
    for (o, a) in out.iter_mut().zip(&jv) {
        *o = *o + *a;
    }
    Ok(out)
}

/// Euclidean distance from `x` to the nearest support point.
pub fn dist_to_support<T: Scalar>(target: &DiscreteTarget<T>, x: &[T]) -> T {
    target
        .points()
        .map(|y| dist_sq(x, y))
        .fold(T::infinity(), |a, b| a.min(b))
        .sqrt()
}
