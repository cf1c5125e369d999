//! Distances between particle clouds and targets.
//!
//! Optimal-transport quantities are solved exactly; one-dimensional inputs
//! take the sorted (quantile) coupling, which is optimal on the line.

mod assignment;
mod transport;

use rayon::prelude::*;
use serde::Serialize;

use crate::cloud::SampleCloud;
use crate::error::{Error, Result};
use crate::linalg::{dist_sq, norm};
use crate::target::DiscreteTarget;
use crate::Scalar;

pub use assignment::solve as solve_assignment;
pub use transport::solve as solve_transport;

/// Largest cloud accepted by the exact `W_2` routines.
pub const W2_MAX_PARTICLES: usize = 4096;

fn check_dims(a: usize, b: usize) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected: a, got: b })
    }
}

fn check_cap(n: usize) -> Result<()> {
    if n > W2_MAX_PARTICLES {
        Err(Error::TooManyParticles {
            n,
            cap: W2_MAX_PARTICLES,
        })
    } else {
        Ok(())
    }
}

fn sorted_coords<T: Scalar>(c: &SampleCloud<T>) -> Vec<f64> {
    let mut v: Vec<f64> = c.as_flat().iter().map(|x| x.as_f64()).collect();
    v.sort_by(f64::total_cmp);
    v
}

/// `W_2` between the empirical measures of two equal-size clouds.
pub fn w2_cloud_cloud<T: Scalar>(a: &SampleCloud<T>, b: &SampleCloud<T>) -> Result<T> {
    if a.len() != b.len() {
        return Err(Error::SizeMismatch(a.len(), b.len()));
    }
    check_cap(a.len())?;
    if a.is_empty() {
        return Ok(T::zero());
    }
    check_dims(a.dim(), b.dim())?;
    let n = a.len();
    let mean_cost = if a.dim() == 1 {
        let (sa, sb) = (sorted_coords(a), sorted_coords(b));
        sa.iter().zip(&sb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n as f64
    } else {
        let mut cost = vec![0.0; n * n];
        cost.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
            let p = a.particle(i);
            for (j, c) in row.iter_mut().enumerate() {
                *c = dist_sq(p, b.particle(j)).as_f64();
            }
        });
        assignment::solve(n, &cost).1 / n as f64
    };
    Ok(T::lit(mean_cost.max(0.0).sqrt()))
}

/// Exact `W_2` between a cloud (uniform weights) and a discrete target.
pub fn w2_cloud_target<T: Scalar>(a: &SampleCloud<T>, target: &DiscreteTarget<T>) -> Result<T> {
    check_cap(a.len())?;
    if a.is_empty() {
        return Ok(T::zero());
    }
    check_dims(target.dim(), a.dim())?;
    let n = a.len();
    let mass = 1.0 / n as f64;
    let weights: Vec<f64> = target.weights().iter().map(|w| w.as_f64()).collect();
    let cost = if a.dim() == 1 {
        let src: Vec<(f64, f64)> = a.as_flat().iter().map(|x| (x.as_f64(), mass)).collect();
        let dst: Vec<(f64, f64)> = target
            .points()
            .zip(&weights)
            .map(|(p, &w)| (p[0].as_f64(), w))
            .collect();
        transport::solve_1d(&src, &dst)
    } else {
        let m = target.len();
        let mut cost = vec![0.0; n * m];
        cost.par_chunks_mut(m).enumerate().for_each(|(i, row)| {
            let p = a.particle(i);
            for (c, y) in row.iter_mut().zip(target.points()) {
                *c = dist_sq(p, y).as_f64();
            }
        });
        transport::solve(&vec![mass; n], &weights, &cost)
    };
    Ok(T::lit(cost.max(0.0).sqrt()))
}

/// Sum of `||x_i - x_j||` over ordered pairs `i != j`.
fn within_sum<T: Scalar>(c: &SampleCloud<T>) -> f64 {
    if c.dim() == 1 {
        let s = sorted_coords(c);
        let n = s.len() as f64;
        2.0 * s
            .iter()
            .enumerate()
            .map(|(j, &x)| x * (2.0 * j as f64 - n + 1.0))
            .sum::<f64>()
    } else {
        (0..c.len())
            .into_par_iter()
            .map(|i| {
                let p = c.particle(i);
                c.particles().map(|q| dist_sq(p, q).as_f64().sqrt()).sum::<f64>()
            })
            .sum()
    }
}

/// Sum of `||a_i - b_j||` over all pairs.
fn cross_sum<T: Scalar>(a: &SampleCloud<T>, b: &SampleCloud<T>) -> f64 {
    if a.dim() == 1 {
        let sa = sorted_coords(a);
        let sb = sorted_coords(b);
        let total_b: f64 = sb.iter().sum();
        // for each a, |a - b| splits at the number of b below it
        let mut below = 0usize;
        let mut below_sum = 0.0;
        let nb = sb.len() as f64;
        let mut acc = 0.0;
        for &x in &sa {
            while below < sb.len() && sb[below] <= x {
                below_sum += sb[below];
                below += 1;
            }
            let k = below as f64;
            acc += x * k - below_sum + (total_b - below_sum) - x * (nb - k);
        }
        acc
    } else {
        (0..a.len())
            .into_par_iter()
            .map(|i| {
                let p = a.particle(i);
                b.particles().map(|q| dist_sq(p, q).as_f64().sqrt()).sum::<f64>()
            })
            .sum()
    }
}

fn energy_terms<T: Scalar>(a: &SampleCloud<T>, b: &SampleCloud<T>) -> Result<(f64, f64, f64)> {
    for n in [a.len(), b.len()] {
        if n < 2 {
            return Err(Error::TooFewParticles { min: 2, got: n });
        }
    }
    check_dims(a.dim(), b.dim())?;
    Ok((cross_sum(a, b), within_sum(a), within_sum(b)))
}

/// Energy distance between the empirical measures of `a` and `b`:
/// `2 E||A - B|| - E||A - A'|| - E||B - B'||` with all expectations over the
/// empirical laws. Nonnegative, and zero exactly on equal multisets.
pub fn energy_distance<T: Scalar>(a: &SampleCloud<T>, b: &SampleCloud<T>) -> Result<T> {
    let (cross, wa, wb) = energy_terms(a, b)?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    Ok(T::lit((2.0 * cross / (na * nb) - wa / (na * na) - wb / (nb * nb)).max(0.0)))
}

/// Unbiased U-statistic estimate of the energy distance between the laws
/// that generated `a` and `b`. Can be negative.
pub fn energy_distance_unbiased<T: Scalar>(a: &SampleCloud<T>, b: &SampleCloud<T>) -> Result<T> {
    let (cross, wa, wb) = energy_terms(a, b)?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    Ok(T::lit(
        2.0 * cross / (na * nb) - wa / (na * (na - 1.0)) - wb / (nb * (nb - 1.0)),
    ))
}

/// Mean and covariance of a cloud next to those of a target.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MomentReport {
    pub cloud_mean: Vec<f64>,
    pub cloud_covariance: Vec<f64>,
    pub target_mean: Vec<f64>,
    pub target_covariance: Vec<f64>,
    /// Euclidean norm of the mean difference.
    pub mean_error: f64,
    /// Frobenius norm of the covariance difference.
    pub covariance_error: f64,
}

pub fn moment_report<T: Scalar>(a: &SampleCloud<T>, target: &DiscreteTarget<T>) -> Result<MomentReport> {
    if !a.is_empty() {
        check_dims(target.dim(), a.dim())?;
    }
    let f = |v: Vec<T>| v.into_iter().map(|x| x.as_f64()).collect::<Vec<f64>>();
    let cloud_mean = f(if a.is_empty() { vec![T::zero(); target.dim()] } else { a.mean() });
    let cloud_covariance = f(if a.is_empty() {
        vec![T::zero(); target.dim() * target.dim()]
    } else {
        a.covariance()
    });
    let target_mean = f(target.mean());
    let target_covariance = f(target.covariance());
    let diff = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p - q).collect::<Vec<f64>>();
    Ok(MomentReport {
        mean_error: norm(&diff(&cloud_mean, &target_mean)),
        covariance_error: norm(&diff(&cloud_covariance, &target_covariance)),
        cloud_mean,
        cloud_covariance,
        target_mean,
        target_covariance,
    })
}
