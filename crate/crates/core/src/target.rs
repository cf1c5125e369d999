//! Finite-support target laws.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cloud::SampleCloud;
use crate::error::{Error, Result};
use crate::linalg::{dist_sq, norm_sq};
use crate::rng::StreamKey;
use crate::Scalar;

/// A weighted point cloud `sum_i pi_i delta_{y_i}` on a compact set.
///
/// `diameter` is the largest distance between two support points or between
/// a support point and the origin, clamped below by 1.
#[derive(Clone, Debug)]
pub struct DiscreteTarget<T> {
    dim: usize,
    points: Vec<T>,
    weights: Vec<T>,
    log_weights: Vec<T>,
    diameter: T,
}

/// On-disk form: `{"dim": 2, "points": [[..], ..], "weights": [..]}`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct TargetDocument {
    pub dim: usize,
    pub points: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
}

impl<T: Scalar> DiscreteTarget<T> {
    /// Builds a target; `weights = None` means uniform. Weights are
    /// renormalized after checking they already sum to one within 1e-6.
    pub fn new(dim: usize, points: &[Vec<T>], weights: Option<&[T]>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidTarget("dimension must be positive".into()));
        }
        if points.is_empty() {
            return Err(Error::InvalidTarget("target needs at least one point".into()));
        }
        let m = points.len();
        let mut flat = Vec::with_capacity(m * dim);
        for (i, p) in points.iter().enumerate() {
            if p.len() != dim {
                return Err(Error::InvalidTarget(format!(
                    "point {i} has dimension {} (expected {dim})",
                    p.len()
                )));
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidTarget(format!("point {i} is not finite")));
            }
            flat.extend_from_slice(p);
        }
        let weights: Vec<T> = match weights {
            None => vec![T::one() / T::from_usize_lossy(m); m],
            Some(w) => {
                if w.len() != m {
                    return Err(Error::InvalidTarget(format!(
                        "{} weights for {m} points",
                        w.len()
                    )));
                }
                if let Some(i) = w.iter().position(|&v| !(v > T::zero()) || !v.is_finite()) {
                    return Err(Error::InvalidTarget(format!("weight {i} is not positive")));
                }
                let s: T = w.iter().copied().sum();
                if (s - T::one()).abs() > T::lit(1e-6) {
                    return Err(Error::InvalidTarget(format!("weights sum to {s}, not 1")));
                }
                w.iter().map(|&v| v / s).collect()
            }
        };
        let log_weights = weights.iter().map(|w| w.ln()).collect();

        let mut r2 = T::zero();
        for i in 0..m {
            let yi = &flat[i * dim..(i + 1) * dim];
            r2 = r2.max(norm_sq(yi));
            for j in (i + 1)..m {
                r2 = r2.max(dist_sq(yi, &flat[j * dim..(j + 1) * dim]));
            }
        }
        let diameter = r2.sqrt().max(T::one());

        Ok(Self {
            dim,
            points: flat,
            weights,
            log_weights,
            diameter,
        })
    }

    pub fn from_document(doc: &TargetDocument) -> Result<Self> {
        let pts: Vec<Vec<T>> = doc
            .points
            .iter()
            .map(|p| p.iter().map(|&v| T::lit(v)).collect())
            .collect();
        let w: Option<Vec<T>> = doc
            .weights
            .as_ref()
            .map(|w| w.iter().map(|&v| T::lit(v)).collect());
        Self::new(doc.dim, &pts, w.as_deref())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: TargetDocument = serde_json::from_str(text)?;
        Self::from_document(&doc)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn to_document(&self) -> TargetDocument {
        TargetDocument {
            dim: self.dim,
            points: self
                .points
                .chunks_exact(self.dim)
                .map(|p| p.iter().map(|v| v.as_f64()).collect())
                .collect(),
            weights: Some(self.weights.iter().map(|v| v.as_f64()).collect()),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of support points.
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, i: usize) -> &[T] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> std::slice::ChunksExact<'_, T> {
        self.points.chunks_exact(self.dim)
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub(crate) fn log_weights(&self) -> &[T] {
        &self.log_weights
    }

    /// The support radius `R` (always >= 1).
    pub fn diameter(&self) -> T {
        self.diameter
    }

    pub fn mean(&self) -> Vec<T> {
        let mut m = vec![T::zero(); self.dim];
        for (p, &w) in self.points().zip(&self.weights) {
            for (a, &y) in m.iter_mut().zip(p) {
                *a = *a + w * y;
            }
        }
        m
    }

    /// Population covariance, row-major `d x d`.
    pub fn covariance(&self) -> Vec<T> {
        let d = self.dim;
        let mean = self.mean();
        let mut c = vec![T::zero(); d * d];
        for (p, &w) in self.points().zip(&self.weights) {
            for i in 0..d {
                for j in 0..d {
                    c[i * d + j] = c[i * d + j] + w * (p[i] - mean[i]) * (p[j] - mean[j]);
                }
            }
        }
        c
    }

    /// `E ||X_1||^2`.
    pub fn second_moment(&self) -> T {
        self.points()
            .zip(&self.weights)
            .map(|(p, &w)| w * norm_sq(p))
            .sum()
    }

    /// Draws a support index from the weights.
    pub fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u = T::lit(rng.random::<f64>());
        let mut acc = T::zero();
        for (i, &w) in self.weights.iter().enumerate() {
            acc = acc + w;
            if u < acc {
                return i;
            }
        }
        self.weights.len() - 1
    }

    /// `n` i.i.d. draws of `X_1`.
    pub fn sample(&self, n: usize, key: StreamKey) -> SampleCloud<T> {
        let mut data = Vec::with_capacity(n * self.dim);
        for i in 0..n {
            let j = self.sample_index(&mut key.particle_rng(i));
            data.extend_from_slice(self.point(j));
        }
        SampleCloud::from_flat(self.dim, data)
            .expect("target points are finite")
            .with_lineage(key.token())
    }

    /// `n` draws of `X_t = (1 - t) Z + t X_1`, i.e. exact samples of `q_t`.
    ///
    /// Returns the interpolated cloud together with the `X_1` endpoints used.
    pub fn sample_interpolant(
        &self,
        t: T,
        n: usize,
        key: StreamKey,
    ) -> (SampleCloud<T>, SampleCloud<T>) {
        let d = self.dim;
        let mut xt = Vec::with_capacity(n * d);
        let mut x1 = Vec::with_capacity(n * d);
        for i in 0..n {
            let mut rng = key.particle_rng(i);
            let j = self.sample_index(&mut rng);
            let y = self.point(j);
            for &yk in y {
                let z: T = crate::rng::standard_normal(&mut rng);
                xt.push((T::one() - t) * z + t * yk);
            }
            x1.extend_from_slice(y);
        }
        (
            SampleCloud::from_flat(d, xt)
                .expect("finite samples")
                .with_lineage(key.token()),
            SampleCloud::from_flat(d, x1)
                .expect("finite samples")
                .with_lineage(key.token()),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_weights_by_default_and_diameter_clamped() {
        let t = DiscreteTarget::<f64>::new(1, &[vec![-0.2], vec![0.2]], None).unwrap();
        assert_eq!(t.weights(), &[0.5, 0.5]);
        assert_eq!(t.diameter(), 1.0);
        let t = DiscreteTarget::<f64>::new(1, &[vec![-1.0], vec![1.0]], None).unwrap();
        assert_eq!(t.diameter(), 2.0);
    }

    #[test]
    fn origin_distance_counts_toward_diameter() {
        let t = DiscreteTarget::<f64>::new(2, &[vec![3.0, 4.0]], None).unwrap();
        assert_eq!(t.diameter(), 5.0);
    }

    #[test]
    fn rejects_malformed_targets() {
        assert!(DiscreteTarget::<f64>::new(1, &[], None).is_err());
        assert!(DiscreteTarget::<f64>::new(2, &[vec![1.0]], None).is_err());
        assert!(DiscreteTarget::<f64>::new(1, &[vec![1.0], vec![2.0]], Some(&[0.5, 0.6])).is_err());
        assert!(DiscreteTarget::<f64>::new(1, &[vec![1.0], vec![2.0]], Some(&[1.0, 0.0])).is_err());
        assert!(DiscreteTarget::<f64>::from_json(r#"{"dim": 1, "points": []}"#).is_err());
    }

    #[test]
    fn json_round_trip_keeps_weights() {
        let text = r#"{"dim": 2, "points": [[0.0, 1.0], [1.0, 0.0]], "weights": [0.25, 0.75]}"#;
        let t = DiscreteTarget::<f64>::from_json(text).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.weights(), &[0.25, 0.75]);
        let back = DiscreteTarget::<f64>::from_document(&t.to_document()).unwrap();
        assert_eq!(back.weights(), t.weights());
        assert_eq!(back.point(1), &[1.0, 0.0]);
    }

    #[test]
    fn moments_of_symmetric_pair() {
        let t = DiscreteTarget::<f64>::new(1, &[vec![-1.0], vec![1.0]], None).unwrap();
        assert_eq!(t.mean(), vec![0.0]);
        assert_eq!(t.covariance(), vec![1.0]);
        assert_eq!(t.second_moment(), 1.0);
    }
}
