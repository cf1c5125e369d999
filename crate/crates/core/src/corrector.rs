//! Underdamped Langevin corrector with a frozen score, integrated exactly.
//!
//! Over one step of length `h` the score `g` is held at its value at the
//! left gridpoint, so each coordinate follows the linear SDE
//! `dz = v dm`, `dv = (g - rho v) dm + sqrt(2 rho) dB`, whose transition is
//! Gaussian with closed-form mean and covariance.

use rand::Rng;
use rayon::prelude::*;

use crate::cloud::SampleCloud;
use crate::error::{Error, Result};
use crate::predictor::aligned_steps;
use crate::rng::{fill_standard_normal, standard_normal, StreamKey};
use crate::velocity::VelocityField;
use crate::Scalar;

/// Below this value of `rho h` the exponential terms use their power series.
const SERIES_CUTOFF: f64 = 0.1;

/// Friction scales accepted relative to `sqrt(L_SX)`.
pub const FRICTION_SCALE_RANGE: (f64, f64) = (0.5, 2.0);

/// Parameters of one corrector run at a frozen time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CorrectorConfig<T> {
    t_frozen: T,
    rho: T,
    h_corr: T,
    t_corr: T,
    steps: usize,
}

impl<T: Scalar> CorrectorConfig<T> {
    /// Corrector with friction `rho = c_rho sqrt(L_SX)` and total time
    /// `t_corr <= 1 / sqrt(L_SX)`; the step is rounded down to divide `t_corr`.
    pub fn new(t_frozen: T, c_rho: T, h_requested: T, t_corr: T, l_sx: T) -> Result<Self> {
        if !(l_sx > T::zero()) {
            return Err(Error::InvalidParameter(format!("L_SX = {l_sx} must be positive")));
        }
        let (lo, hi) = FRICTION_SCALE_RANGE;
        if !(c_rho >= T::lit(lo) && c_rho <= T::lit(hi)) {
            return Err(Error::InvalidParameter(format!(
                "friction scale {c_rho} outside [{lo}, {hi}]"
            )));
        }
        let budget = T::one() / l_sx.sqrt();
        if t_corr > budget * (T::one() + T::lit(1e-12)) {
            return Err(Error::InvalidParameter(format!(
                "corrector time {t_corr} exceeds 1 / sqrt(L_SX) = {budget}"
            )));
        }
        Self::with_friction(t_frozen, c_rho * l_sx.sqrt(), h_requested, t_corr)
    }

    /// Corrector with an explicit friction and no budget checks.
    pub fn with_friction(t_frozen: T, rho: T, h_requested: T, t_corr: T) -> Result<Self> {
        if !(t_frozen >= T::zero() && t_frozen < T::one()) {
            return Err(Error::TimeOutOfRange {
                t: t_frozen.as_f64(),
                limit: 1.0,
            });
        }
        if !(rho > T::zero() && rho.is_finite()) {
            return Err(Error::InvalidParameter(format!("friction {rho} must be positive")));
        }
        if !(t_corr >= T::zero()) {
            return Err(Error::InvalidParameter(format!("corrector time {t_corr} must be >= 0")));
        }
        if !(h_requested > T::zero()) {
            return Err(Error::InvalidParameter(format!(
                "corrector step {h_requested} must be positive"
            )));
        }
        let steps = aligned_steps(t_corr, h_requested);
        let h_corr = if steps == 0 {
            h_requested
        } else {
            t_corr / T::from_usize_lossy(steps)
        };
        Ok(Self {
            t_frozen,
            rho,
            h_corr,
            t_corr,
            steps,
        })
    }

    pub fn t_frozen(&self) -> T {
        self.t_frozen
    }

    pub fn rho(&self) -> T {
        self.rho
    }

    pub fn h_corr(&self) -> T {
        self.h_corr
    }

    pub fn t_corr(&self) -> T {
        self.t_corr
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn transition(&self) -> OuTransition<T> {
        OuTransition::new(self.rho, self.h_corr)
    }
}

/// `sum_{k >= 3} (-1)^(k+1) (2^(k-1) - 2) x^k / k!`.
fn position_variance_series(x: f64) -> f64 {
    let mut term = x * x / 2.0;
    let mut sum = 0.0;
    for k in 3..=14 {
        term *= x / k as f64;
        let c = (2.0_f64.powi(k - 1) - 2.0) * if k % 2 == 1 { 1.0 } else { -1.0 };
        sum += c * term;
    }
    sum
}

/// `x - 2 (1 - e^-x) + (1 - e^-2x) / 2`, the position variance times `rho^2 / 2`.
fn position_variance_kernel(x: f64) -> f64 {
    if x < SERIES_CUTOFF {
        position_variance_series(x)
    } else {
        x + 2.0 * (-x).exp_m1() - 0.5 * (-2.0 * x).exp_m1()
    }
}

/// `sum_{k >= 2} (-1)^k x^k / k!`.
fn drift_series(x: f64) -> f64 {
    let mut term = x;
    let mut sum = 0.0;
    for k in 2..=14 {
        term *= -x / k as f64;
        sum += term;
    }
    -sum
}

/// `x - (1 - e^-x)`.
fn drift_kernel(x: f64) -> f64 {
    if x < SERIES_CUTOFF {
        drift_series(x)
    } else {
        x + (-x).exp_m1()
    }
}

/// Exact one-step transition of the frozen-score ULD for a given `(rho, h)`.
///
/// The coordinates decouple, and each `(z_k, v_k)` pair receives a Gaussian
/// increment with the same `2 x 2` covariance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OuTransition<T> {
    /// `e^{-rho h}`.
    pub decay: T,
    /// `(1 - e^{-rho h}) / rho`, the coefficient of `v` in `z` and of `g` in `v`.
    pub a: T,
    /// `(h - a) / rho`, the coefficient of `g` in `z`.
    pub b: T,
    pub var_z: T,
    pub var_v: T,
    pub cov_zv: T,
    chol: [T; 3],
}

impl<T: Scalar> OuTransition<T> {
    pub fn new(rho: T, h: T) -> Self {
        let r = rho.as_f64();
        let x = r * h.as_f64();
        let decay = (-x).exp();
        let a = -(-x).exp_m1() / r;
        let b = drift_kernel(x) / (r * r);
        let var_z = 2.0 * position_variance_kernel(x) / (r * r);
        let var_v = -(-2.0 * x).exp_m1();
        let cov_zv = (-x).exp_m1().powi(2) / r;
        let l11 = var_z.sqrt();
        let (l21, l22) = if l11 > 0.0 {
            let l21 = cov_zv / l11;
            (l21, (var_v - l21 * l21).max(0.0).sqrt())
        } else {
            (0.0, var_v.sqrt())
        };
        Self {
            decay: T::lit(decay),
            a: T::lit(a),
            b: T::lit(b),
            var_z: T::lit(var_z),
            var_v: T::lit(var_v),
            cov_zv: T::lit(cov_zv),
            chol: [T::lit(l11), T::lit(l21), T::lit(l22)],
        }
    }

    /// Mean of `(z', v')` given `(z, v)` and the frozen score `g`.
    #[inline]
    pub fn mean(&self, z: T, v: T, g: T) -> (T, T) {
        (z + self.a * v + self.b * g, self.decay * v + self.a * g)
    }

    /// Applies the transition in place using standard normals `xi`.
    #[inline]
    pub fn apply(&self, z: &mut T, v: &mut T, g: T, xi: (T, T)) {
        let (mz, mv) = self.mean(*z, *v, g);
        let [l11, l21, l22] = self.chol;
        *z = mz + l11 * xi.0;
        *v = mv + l21 * xi.0 + l22 * xi.1;
    }
}

/// Positions and velocities of the corrector particles.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseCloud<T> {
    positions: SampleCloud<T>,
    velocities: SampleCloud<T>,
}

impl<T: Scalar> PhaseCloud<T> {
    pub fn new(positions: SampleCloud<T>, velocities: SampleCloud<T>) -> Result<Self> {
        if positions.len() != velocities.len() {
            return Err(Error::SizeMismatch(positions.len(), velocities.len()));
        }
        if positions.dim() != velocities.dim() {
            return Err(Error::DimensionMismatch {
                expected: positions.dim(),
                got: velocities.dim(),
            });
        }
        Ok(Self {
            positions,
            velocities,
        })
    }

    /// Pairs `positions` with fresh `N(0, I)` velocities.
    pub fn with_fresh_velocities(positions: SampleCloud<T>, key: StreamKey) -> Self {
        let velocities = SampleCloud::standard_normal(positions.len(), positions.dim(), key);
        Self {
            positions,
            velocities,
        }
    }

    pub fn positions(&self) -> &SampleCloud<T> {
        &self.positions
    }

    pub fn velocities(&self) -> &SampleCloud<T> {
        &self.velocities
    }

    pub fn into_parts(self) -> (SampleCloud<T>, SampleCloud<T>) {
        (self.positions, self.velocities)
    }
}

/// One exact frozen-score step for a single particle.
#[allow(clippy::too_many_arguments)]
fn particle_step<T: Scalar, M: VelocityField<T>, R: Rng + ?Sized>(
    model: &M,
    t: T,
    tr: &OuTransition<T>,
    index: usize,
    z: &mut [T],
    v: &mut [T],
    g: &mut [T],
    rng: &mut R,
) -> Result<()> {
    model.approx_score_into(t, z, g)?;
    if g.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFiniteScore {
            particle: index,
            t: t.as_f64(),
            z: z.iter().map(|c| c.as_f64()).collect(),
        });
    }
    for k in 0..z.len() {
        let xi = (standard_normal(rng), standard_normal(rng));
        tr.apply(&mut z[k], &mut v[k], g[k], xi);
    }
    Ok(())
}

/// One ULMC step for every particle; particle `i` draws from `key.particle_rng(i)`.
pub fn ulmc_step<T: Scalar, M: VelocityField<T>>(
    model: &M,
    cfg: &CorrectorConfig<T>,
    phase: PhaseCloud<T>,
    key: StreamKey,
) -> Result<PhaseCloud<T>> {
    let (mut pos, mut vel) = phase.into_parts();
    let d = pos.dim();
    if d != model.dim() && !pos.is_empty() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            got: d,
        });
    }
    let tr = cfg.transition();
    let t = cfg.t_frozen;
    pos.as_flat_mut()
        .par_chunks_mut(d)
        .zip(vel.as_flat_mut().par_chunks_mut(d))
        .enumerate()
        .try_for_each_init(
            || vec![T::zero(); d],
            |g, (i, (z, v))| particle_step(model, t, &tr, i, z, v, g, &mut key.particle_rng(i)),
        )?;
    PhaseCloud::new(pos, vel)
}

/// Draws fresh velocities and runs `cfg.steps()` ULMC steps; returns positions.
///
/// Each particle owns one random stream for its initial velocity and all of
/// its step noise, so the output does not depend on the thread count.
pub fn run_corrector<T: Scalar, M: VelocityField<T>>(
    model: &M,
    cfg: &CorrectorConfig<T>,
    mut positions: SampleCloud<T>,
    key: StreamKey,
) -> Result<SampleCloud<T>> {
    let d = positions.dim();
    if d != model.dim() && !positions.is_empty() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            got: d,
        });
    }
    if cfg.steps == 0 {
        return Ok(positions);
    }
    let tr = cfg.transition();
    let t = cfg.t_frozen;
    let steps = cfg.steps;
    positions
        .as_flat_mut()
        .par_chunks_mut(d)
        .enumerate()
        .try_for_each_init(
            || (vec![T::zero(); d], vec![T::zero(); d]),
            |(v, g), (i, z)| {
                let mut rng = key.particle_rng(i);
                fill_standard_normal(&mut rng, v);
                for _ in 0..steps {
                    particle_step(model, t, &tr, i, z, v, g, &mut rng)?;
                }
                Ok::<(), Error>(())
            },
        )?;
    Ok(positions.with_lineage(key.token()))
}
