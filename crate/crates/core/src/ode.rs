//! Adaptive Dormand–Prince 5(4) integrator for reference trajectories.

use crate::error::{Error, Result};
use crate::Scalar;

// Dormand–Prince tableau
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// b - b_hat
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

#[derive(Clone, Copy, Debug)]
pub struct Dopri5<T> {
    pub rtol: T,
    pub atol: T,
    pub max_steps: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OdeStats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

impl<T: Scalar> Dopri5<T> {
    pub fn new(tol: T) -> Self {
        Self {
            rtol: tol,
            atol: tol,
            max_steps: 1_000_000,
        }
    }

    /// Integrates `y' = f(t, y)` from `t0` to `t1` in place.
    pub fn integrate<F>(&self, f: F, t0: T, t1: T, y: &mut [T]) -> Result<OdeStats>
    where
        F: Fn(T, &[T], &mut [T]) -> Result<()>,
    {
        let mut stats = OdeStats::default();
        if t1 == t0 {
            return Ok(stats);
        }
        let n = y.len();
        let dir = if t1 > t0 { T::one() } else { -T::one() };
        let span = (t1 - t0).abs();
        let mut k = vec![vec![T::zero(); n]; 7];
        let mut tmp = vec![T::zero(); n];
        let mut y_new = vec![T::zero(); n];
        let l = T::lit;

        let mut t = t0;
        f(t, y, &mut k[0])?;
        stats.evaluations += 1;

        // initial step from the derivative scale
        let d0 = rms_scaled(y, y, self.atol, self.rtol);
        let d1 = rms_scaled(&k[0], y, self.atol, self.rtol);
        let mut h = if d0 < l(1e-5) || d1 < l(1e-5) {
            l(1e-6)
        } else {
            l(0.01) * d0 / d1
        };
        h = h.min(span).max(span * l(1e-12));

        let h_floor = |t: T| T::epsilon() * l(16.0) * t.abs().max(T::one());

        while (t1 - t) * dir > T::zero() {
            if stats.accepted + stats.rejected >= self.max_steps {
                return Err(Error::StepUnderflow { t: t.as_f64() });
            }
            let remaining = (t1 - t).abs();
            let last = h >= remaining;
            if last {
                h = remaining;
            }
            let hs = h * dir;

            stage(&mut tmp, y, hs, &[(A21, &k[0])]);
            f(t + l(C2) * hs, &tmp, &mut k[1])?;
            stage(&mut tmp, y, hs, &[(A31, &k[0]), (A32, &k[1])]);
            f(t + l(C3) * hs, &tmp, &mut k[2])?;
            stage(&mut tmp, y, hs, &[(A41, &k[0]), (A42, &k[1]), (A43, &k[2])]);
            f(t + l(C4) * hs, &tmp, &mut k[3])?;
            stage(
                &mut tmp,
                y,
                hs,
                &[(A51, &k[0]), (A52, &k[1]), (A53, &k[2]), (A54, &k[3])],
            );
            f(t + l(C5) * hs, &tmp, &mut k[4])?;
            stage(
                &mut tmp,
                y,
                hs,
                &[(A61, &k[0]), (A62, &k[1]), (A63, &k[2]), (A64, &k[3]), (A65, &k[4])],
            );
            let t_next = if last { t1 } else { t + hs };
            f(t_next, &tmp, &mut k[5])?;
            stage(
                &mut y_new,
                y,
                hs,
                &[(B1, &k[0]), (B3, &k[2]), (B4, &k[3]), (B5, &k[4]), (B6, &k[5])],
            );
            f(t_next, &y_new, &mut k[6])?;
            stats.evaluations += 6;

            let mut err = T::zero();
            for i in 0..n {
                let e = hs
                    * (l(E1) * k[0][i]
                        + l(E3) * k[2][i]
                        + l(E4) * k[3][i]
                        + l(E5) * k[4][i]
                        + l(E6) * k[5][i]
                        + l(E7) * k[6][i]);
                let sc = self.atol + self.rtol * y[i].abs().max(y_new[i].abs());
                err = err + (e / sc) * (e / sc);
            }
            err = (err / T::from_usize_lossy(n.max(1))).sqrt();

            if err.is_finite() && err <= T::one() {
                stats.accepted += 1;
                t = t_next;
                y.copy_from_slice(&y_new);
                k.swap(0, 6);
                let fac = if err == T::zero() {
                    l(5.0)
                } else {
                    (l(0.9) * err.powf(l(-0.2))).min(l(5.0)).max(l(0.2))
                };
                h = h * fac;
            } else {
                stats.rejected += 1;
                let fac = if err.is_finite() {
                    (l(0.9) * err.powf(l(-0.2))).max(l(0.1)).min(l(0.9))
                } else {
                    l(0.1)
                };
                h = h * fac;
                if h < h_floor(t) {
                    return Err(Error::StepUnderflow { t: t.as_f64() });
                }
            }
        }
        Ok(stats)
    }
}

fn stage<T: Scalar>(out: &mut [T], y: &[T], h: T, terms: &[(f64, &Vec<T>)]) {
    for i in 0..y.len() {
        let mut acc = T::zero();
        for (a, k) in terms {
            acc = acc + T::lit(*a) * k[i];
        }
        out[i] = y[i] + h * acc;
    }
}

fn rms_scaled<T: Scalar>(v: &[T], y: &[T], atol: T, rtol: T) -> T {
    let n = T::from_usize_lossy(v.len().max(1));
    (v.iter()
        .zip(y)
        .map(|(&a, &b)| {
            let s = a / (atol + rtol * b.abs());
            s * s
        })
        .sum::<T>()
        / n)
        .sqrt()
}
