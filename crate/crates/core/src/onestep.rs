//! One-step generation: the power-law time grid, the exact consistency map,
//! one-step flow updates and the quantities that bound their error.

use rayon::prelude::*;
use serde::Serialize;

use crate::cloud::SampleCloud;
use crate::error::{Error, Result};
use crate::linalg::dist_sq;
use crate::metrics::{w2_cloud_cloud, w2_cloud_target};
use crate::moments::TimePoint;
use crate::predictor::{flow_point, flow_reference, predict_step};
use crate::rng::{tags, StreamKey};
use crate::target::DiscreteTarget;
use crate::velocity::VelocityField;
use crate::Scalar;

/// Increasing times `0 = t_0 < ... < t_K = 1 - delta` with `1 - t` following
/// a power law of exponent `a`.
///
/// With `u_j = delta^{1/a} + j (1 - delta^{1/a}) / K` the times are
/// `t_k = 1 - u_{K-k}^a`, so both endpoints are hit exactly.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EdmGrid<T> {
    a: T,
    delta: T,
    times: Vec<T>,
    steps: Vec<T>,
}

impl<T: Scalar> EdmGrid<T> {
    pub fn new(a: T, delta: T, k: usize) -> Result<Self> {
        if !(a >= T::one()) || !a.is_finite() {
            return Err(Error::InvalidParameter(format!("grid exponent a = {a} must be >= 1")));
        }
        if !(delta > T::zero() && delta < T::one()) {
            return Err(Error::InvalidParameter(format!("delta = {delta} outside (0, 1)")));
        }
        if k == 0 {
            return Err(Error::InvalidParameter("grid needs at least one step".into()));
        }
        let base = delta.powf(T::one() / a);
        let h = (T::one() - base) / T::from_usize_lossy(k);
        let mut times: Vec<T> = (0..=k)
            .map(|i| {
                let j = k - i;
                let u = if j == k { T::one() } else { base + T::from_usize_lossy(j) * h };
                T::one() - u.powf(a)
            })
            .collect();
        times[0] = T::zero();
        times[k] = T::one() - delta;
        let steps: Vec<T> = times.windows(2).map(|w| w[1] - w[0]).collect();
        if steps.iter().any(|&s| !(s > T::zero())) {
            return Err(Error::InvalidParameter(format!(
                "grid with K = {k} is too fine for the working precision"
            )));
        }
        Ok(Self {
            a,
            delta,
            times,
            steps,
        })
    }

    pub fn a(&self) -> T {
        self.a
    }

    pub fn delta(&self) -> T {
        self.delta
    }

    /// Number of steps `K`.
    pub fn k(&self) -> usize {
        self.steps.len()
    }

    /// `t_0, ..., t_K`.
    pub fn times(&self) -> &[T] {
        &self.times
    }

    /// `h_k = t_k - t_{k-1}` for `k = 1..=K`, stored at index `k - 1`.
    pub fn steps(&self) -> &[T] {
        &self.steps
    }

    /// `sum_{k=1}^{K} h_k^2 / (1 - t_k)^2`.
    pub fn grid_sum(&self) -> T {
        self.steps
            .iter()
            .zip(&self.times[1..])
            .map(|(&h, &t)| {
                let r = h / (T::one() - t);
                r * r
            })
            .sum()
    }
}

pub fn build_grid<T: Scalar>(a: T, delta: T, k: usize) -> Result<EdmGrid<T>> {
    EdmGrid::new(a, delta, k)
}

pub fn grid_sum<T: Scalar>(grid: &EdmGrid<T>) -> T {
    grid.grid_sum()
}

/// The exact consistency function: the flow map from `(x, t)` to time `1 - delta`.
#[derive(Clone, Copy, Debug)]
pub struct ConsistencyOracle<'a, T> {
    target: &'a DiscreteTarget<T>,
    delta: T,
    tol: T,
}

impl<'a, T: Scalar> ConsistencyOracle<'a, T> {
    pub fn new(target: &'a DiscreteTarget<T>, delta: T, tol: T) -> Result<Self> {
        if !(delta > T::zero() && delta < T::one()) {
            return Err(Error::InvalidParameter(format!("delta = {delta} outside (0, 1)")));
        }
        if !(tol > T::zero()) {
            return Err(Error::InvalidParameter(format!("tolerance {tol} must be positive")));
        }
        Ok(Self { target, delta, tol })
    }

    pub fn target(&self) -> &'a DiscreteTarget<T> {
        self.target
    }

    pub fn delta(&self) -> T {
        self.delta
    }

    pub fn tol(&self) -> T {
        self.tol
    }

    pub fn end(&self) -> T {
        T::one() - self.delta
    }

    /// `f(x, t)`; exactly `x` at `t = 1 - delta`.
    pub fn map(&self, x: &[T], t: T) -> Result<Vec<T>> {
        let at = TimePoint::new(t, self.delta)?;
        if at.t() >= self.end() {
            return Ok(x.to_vec());
        }
        flow_point(self.target, at.t(), self.end(), x, self.tol)
    }

    /// `f(x, t)` for every particle.
    pub fn map_cloud(&self, cloud: SampleCloud<T>, t: T) -> Result<SampleCloud<T>> {
        let at = TimePoint::new(t, self.delta)?;
        if at.t() >= self.end() {
            return Ok(cloud);
        }
        flow_reference(self.target, at.t(), self.end(), cloud, self.tol)
    }
}

pub fn consistency_map<T: Scalar>(oracle: &ConsistencyOracle<'_, T>, x: &[T], t: T) -> Result<Vec<T>> {
    oracle.map(x, t)
}

fn check_index<T: Scalar>(grid: &EdmGrid<T>, k: usize) -> Result<()> {
    if k < grid.k() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "step index {k} outside 0..{}",
            grid.k()
        )))
    }
}

/// One Euler step from `t_k` to `t_{k+1}` with the model's velocity.
pub fn onestep_flow<T: Scalar, M: VelocityField<T>>(
    model: &M,
    grid: &EdmGrid<T>,
    k: usize,
    cloud_at_tk: SampleCloud<T>,
) -> Result<SampleCloud<T>> {
    check_index(grid, k)?;
    let at = TimePoint::new(grid.times[k], grid.delta)?;
    predict_step(model, at, grid.steps[k], cloud_at_tk)
}

fn mean_sq_dist<T: Scalar>(a: &SampleCloud<T>, b: &SampleCloud<T>) -> T {
    if a.is_empty() {
        return T::zero();
    }
    let s: f64 = a
        .as_flat()
        .par_chunks(a.dim())
        .zip(b.as_flat().par_chunks(b.dim()))
        .map(|(x, y)| dist_sq(x, y).as_f64())
        .sum();
    T::lit(s / a.len() as f64)
}

/// Monte Carlo mean of `||f(X_{t_k}, t_k) - f(X_hat_{t_{k+1}}, t_{k+1})||^2`
/// with `X_{t_k} ~ q_{t_k}` and `X_hat` its one-step update.
pub fn cd_residual<T: Scalar, M: VelocityField<T>>(
    oracle: &ConsistencyOracle<'_, T>,
    model: &M,
    grid: &EdmGrid<T>,
    k: usize,
    n_particles: usize,
    key: StreamKey,
) -> Result<T> {
    check_index(grid, k)?;
    let (xk, _) = oracle
        .target
        .sample_interpolant(grid.times[k], n_particles, key.child(tags::INTERPOLATION_NOISE));
    let stepped = onestep_flow(model, grid, k, xk.clone())?;
    let lhs = oracle.map_cloud(xk, grid.times[k])?;
    let rhs = oracle.map_cloud(stepped, grid.times[k + 1])?;
    Ok(mean_sq_dist(&lhs, &rhs))
}

/// Root-mean-square one-step errors `(E ||X_hat_{t_{k+1}} - X_{t_{k+1}}||^2)^{1/2}`
/// for every `k`, with `X_{t_k} ~ q_{t_k}` and `X_{t_{k+1}}` its exact flow.
pub fn onestep_errors<T: Scalar, M: VelocityField<T>>(
    oracle: &ConsistencyOracle<'_, T>,
    model: &M,
    grid: &EdmGrid<T>,
    n_particles: usize,
    key: StreamKey,
) -> Result<Vec<T>> {
    (0..grid.k())
        .map(|k| {
            let (xk, _) = oracle.target.sample_interpolant(
                grid.times[k],
                n_particles,
                key.child(tags::INTERPOLATION_NOISE).child(k as u64),
            );
            let stepped = onestep_flow(model, grid, k, xk.clone())?;
            let exact = flow_reference(oracle.target, grid.times[k], grid.times[k + 1], xk, oracle.tol)?;
            Ok(mean_sq_dist(&stepped, &exact).sqrt())
        })
        .collect()
}

/// The telescoped chain `sum_k (E ||X_hat_{t_{k+1}} - X_{t_{k+1}}||^2)^{1/2}`.
pub fn e2_chain<T: Scalar, M: VelocityField<T>>(
    oracle: &ConsistencyOracle<'_, T>,
    model: &M,
    grid: &EdmGrid<T>,
    n_particles: usize,
    key: StreamKey,
) -> Result<T> {
    Ok(onestep_errors(oracle, model, grid, n_particles, key)?
        .into_iter()
        .sum())
}

/// Largest difference quotient `||f(x, t) - f(x', t)|| / ||x - x'||` over
/// `pairs` pairs at time `t`.
///
/// Even-numbered pairs are independent draws from `q_t`; odd-numbered pairs
/// are local perturbations of scale `0.1 (1 - t)`.
pub fn empirical_lipschitz<T: Scalar>(
    oracle: &ConsistencyOracle<'_, T>,
    t: T,
    pairs: usize,
    key: StreamKey,
) -> Result<T> {
    let (a, _) = oracle.target.sample_interpolant(t, pairs, key.child(1));
    let (b, _) = oracle.target.sample_interpolant(t, pairs, key.child(2));
    let noise = SampleCloud::<T>::standard_normal(pairs, a.dim(), key.child(3));
    let scale = T::lit(0.1) * (T::one() - t);
    let mut partner = b.into_flat();
    let d = a.dim();
    for i in (1..pairs).step_by(2) {
        for k in 0..d {
            partner[i * d + k] = a.particle(i)[k] + scale * noise.particle(i)[k];
        }
    }
    let partner = SampleCloud::from_flat(d, partner)?;
    let fa = oracle.map_cloud(a.clone(), t)?;
    let fb = oracle.map_cloud(partner.clone(), t)?;
    let mut best = T::zero();
    for i in 0..pairs {
        let dx = dist_sq(a.particle(i), partner.particle(i));
        if dx > T::zero() {
            best = best.max((dist_sq(fa.particle(i), fb.particle(i)) / dx).sqrt());
        }
    }
    Ok(best)
}

/// Error report for one-step generation from `N(0, I)` through `f(., 0)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OneStepReport {
    pub k: usize,
    pub a: f64,
    pub delta: f64,
    /// `W_2` of the generated cloud to the target.
    pub w2_to_target: f64,
    /// `W_2` of the generated cloud to fresh exact samples of `q_{1-delta}`.
    pub w2_to_reference: f64,
    /// `sum_k (E ||f(X_{t_k}, t_k) - f(X_hat_{t_{k+1}}, t_{k+1})||^2)^{1/2}`.
    pub e1: f64,
    /// Telescoped one-step-error chain, without the Lipschitz factor.
    pub e2_chain: f64,
    /// `(sqrt d + R) delta`.
    pub early_stopping: f64,
    /// `R^2 max(R, sqrt d) / delta^2 * grid_sum`.
    pub grid_term: f64,
    /// `e1 + e2_chain + early_stopping`.
    pub bound: f64,
}

/// Generated-sample errors together with the terms of their decomposition.
pub fn onestep_generation_error<T: Scalar, M: VelocityField<T>>(
    oracle: &ConsistencyOracle<'_, T>,
    model: &M,
    grid: &EdmGrid<T>,
    n_particles: usize,
    key: StreamKey,
) -> Result<OneStepReport> {
    let tgt = oracle.target;
    let z = SampleCloud::<T>::standard_normal(n_particles, tgt.dim(), key.child(tags::INITIAL));
    let generated = oracle.map_cloud(z, T::zero())?;
    let (reference, _) = tgt.sample_interpolant(oracle.end(), n_particles, key.child(tags::REFERENCE));
    let w2_to_target = w2_cloud_target(&generated, tgt)?.as_f64();
    let w2_to_reference = w2_cloud_cloud(&generated, &reference)?.as_f64();
    let residual_key = key.child(tags::TARGET_DRAW);
    let mut e1 = 0.0;
    for k in 0..grid.k() {
        e1 += cd_residual(oracle, model, grid, k, n_particles, residual_key.child(k as u64))?
            .as_f64()
            .sqrt();
    }
    let e2 = e2_chain(oracle, model, grid, n_particles, key.child(tags::ULMC_STEP))?.as_f64();
    let r = tgt.diameter().as_f64();
    let d = tgt.dim() as f64;
    let delta = oracle.delta.as_f64();
    let early_stopping = (d.sqrt() + r) * delta;
    let grid_term = r * r * r.max(d.sqrt()) / (delta * delta) * grid.grid_sum().as_f64();
    Ok(OneStepReport {
        k: grid.k(),
        a: grid.a.as_f64(),
        delta,
        w2_to_target,
        w2_to_reference,
        e1,
        e2_chain: e2,
        early_stopping,
        grid_term,
        bound: e1 + e2 + early_stopping,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmarks::{point_mass, symmetric_pair};
    use crate::velocity::VelocityModel;

    #[test]
    fn uniform_grid_when_a_is_one() {
        let g = build_grid(1.0_f64, 0.1, 9).unwrap();
        for (k, &t) in g.times().iter().enumerate() {
            assert!((t - 0.1 * k as f64).abs() < 1e-12);
        }
        for &h in g.steps() {
            assert!((h - 0.1).abs() < 1e-12);
        }
        // hand sum of 0.01 / (1 - t_k)^2 for t_k = 0.1, ..., 0.9
        let hand: f64 = (1..=9).map(|k| 0.01 / (1.0 - 0.1 * k as f64).powi(2)).sum();
        assert!((g.grid_sum() - hand).abs() < 1e-12);
    }

    #[test]
    fn single_step_grid() {
        let g = build_grid(2.0_f64, 0.2, 1).unwrap();
        assert_eq!(g.times(), &[0.0, 0.8]);
        assert!((g.grid_sum() - 0.64 / 0.04).abs() < 1e-12);
    }

    #[test]
    fn steps_shrink_towards_the_horizon() {
        let (a, delta, k) = (2.0_f64, 0.1_f64, 100);
        let g = build_grid(a, delta, k).unwrap();
        let base = delta.sqrt();
        let h = (1.0 - base) / k as f64;
        // direct evaluation at the two ends of the u-grid
        let first = 1.0 - (1.0 - h).powf(a);
        let last = (base + h).powf(a) - base.powf(a);
        let hs = g.steps();
        assert!((hs[0] - first).abs() < 1e-12);
        assert!((hs[k - 1] - last).abs() < 1e-12);
        assert!(hs[k - 1] < hs[0]);
        assert!(hs.windows(2).all(|w| w[1] <= w[0] + 1e-15));
        assert_eq!(*g.times().last().unwrap(), 0.9);
    }

    #[test]
    fn invalid_grids_are_rejected() {
        assert!(build_grid(0.5, 0.1, 4).is_err());
        assert!(build_grid(1.0, 1.0, 4).is_err());
        assert!(build_grid(1.0, 0.1, 0).is_err());
    }

    #[test]
    fn consistency_map_boundary_and_closed_form() {
        let y = [0.3_f64, -0.6];
        let tgt = point_mass(&y).unwrap();
        let o = ConsistencyOracle::new(&tgt, 0.1, 1e-10).unwrap();
        let x = [1.2, 0.4];
        assert_eq!(o.map(&x, 0.9).unwrap(), x.to_vec());
        let t = 0.25;
        let f = o.map(&x, t).unwrap();
        for k in 0..2 {
            let want = y[k] + 0.1 / (1.0 - t) * (x[k] - y[k]);
            assert!((f[k] - want).abs() <= 1e-9);
        }
    }

    #[test]
    fn consistency_map_is_constant_along_trajectories() {
        let tgt = symmetric_pair(0.5_f64, 1).unwrap();
        let tol = 1e-10;
        let o = ConsistencyOracle::new(&tgt, 0.1, tol).unwrap();
        let x = [0.37];
        let x2 = flow_point(&tgt, 0.2, 0.6, &x, 1e-12).unwrap();
        let a = o.map(&x, 0.2).unwrap();
        let b = o.map(&x2, 0.6).unwrap();
        assert!((a[0] - b[0]).abs() <= 10.0 * tol);
    }

    #[test]
    fn residual_vanishes_for_point_targets() {
        let tgt = point_mass(&[0.4_f64]).unwrap();
        let tol = 1e-10;
        let o = ConsistencyOracle::new(&tgt, 0.1, tol).unwrap();
        let m = VelocityModel::exact(&tgt);
        let g = build_grid(2.0, 0.1, 8).unwrap();
        for k in 0..8 {
            let r = cd_residual(&o, &m, &g, k, 64, StreamKey::new(k as u64)).unwrap();
            assert!(r <= (10.0 * tol).powi(2), "k = {k}: {r}");
        }
        assert!(cd_residual(&o, &m, &g, 8, 4, StreamKey::new(0)).is_err());
    }

    #[test]
    fn point_target_generation_error_is_closed_form() {
        let y = [0.5_f64];
        let tgt = point_mass(&y).unwrap();
        let delta = 0.2;
        let o = ConsistencyOracle::new(&tgt, delta, 1e-11).unwrap();
        let m = VelocityModel::exact(&tgt);
        let g = build_grid(1.0, delta, 4).unwrap();
        let key = StreamKey::new(3);
        let rep = onestep_generation_error(&o, &m, &g, 500, key).unwrap();
        // W2 of a cloud to a point mass is the RMS distance to it
        let z = SampleCloud::<f64>::standard_normal(500, 1, key.child(tags::INITIAL));
        let rms = (z.particles().map(|p| (delta * (p[0] - y[0])).powi(2)).sum::<f64>() / 500.0).sqrt();
        assert!((rep.w2_to_target - rms).abs() < 1e-8);
        // and its expectation is delta sqrt(d + |y|^2)
        assert!((rep.w2_to_target - delta * (1.0_f64 + 0.25).sqrt()).abs() < 0.02);
        assert!(rep.e2_chain < 1e-8);
    }

    #[test]
    fn lipschitz_estimate_of_point_target_is_exact() {
        let tgt = point_mass(&[0.1_f64, 0.2]).unwrap();
        let o = ConsistencyOracle::new(&tgt, 0.1, 1e-11).unwrap();
        let l = empirical_lipschitz(&o, 0.5, 50, StreamKey::new(1)).unwrap();
        assert!((l - 0.2).abs() < 1e-8);
    }
}
