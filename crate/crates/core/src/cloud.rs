use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::{fill_standard_normal, StreamKey};
use crate::Scalar;

/// A set of `n` particles in `R^d`, stored row-major, together with the
/// lineage token of the random streams that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleCloud<T> {
    dim: usize,
    data: Vec<T>,
    lineage: u64,
}

impl<T: Scalar> SampleCloud<T> {
    pub fn from_flat(dim: usize, data: Vec<T>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("cloud dimension must be positive".into()));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: data.len() % dim,
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("cloud contains non-finite entries".into()));
        }
        Ok(Self { dim, data, lineage: 0 })
    }

    pub fn from_rows(dim: usize, rows: &[Vec<T>]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            if r.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::from_flat(dim, data)
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            data: Vec::new(),
            lineage: 0,
        }
    }

    /// `n` i.i.d. draws from `N(0, I_d)`, one substream per particle.
    pub fn standard_normal(n: usize, dim: usize, key: StreamKey) -> Self {
        let mut data = vec![T::zero(); n * dim];
        data.par_chunks_mut(dim.max(1))
            .enumerate()
            .for_each(|(i, row)| fill_standard_normal(&mut key.particle_rng(i), row));
        Self {
            dim,
            data,
            lineage: key.token(),
        }
    }

    #[must_use]
    pub fn with_lineage(mut self, token: u64) -> Self {
        self.lineage = token;
        self
    }

    pub fn lineage(&self) -> u64 {
        self.lineage
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn particle(&self, i: usize) -> &[T] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn particles(&self) -> std::slice::ChunksExact<'_, T> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[T] {
        &self.data
    }

    pub fn as_flat_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_flat(self) -> Vec<T> {
        self.data
    }

    /// Adds `shift` to every particle.
    #[must_use]
    pub fn translated(mut self, shift: &[T]) -> Self {
        for row in self.data.chunks_exact_mut(self.dim) {
            for (x, &s) in row.iter_mut().zip(shift) {
                *x = *x + s;
            }
        }
        self
    }

    /// Sample mean of the particles (zero vector for an empty cloud).
    pub fn mean(&self) -> Vec<T> {
        let mut m = vec![T::zero(); self.dim];
        if self.is_empty() {
            return m;
        }
        for row in self.particles() {
            for (a, &x) in m.iter_mut().zip(row) {
                *a = *a + x;
            }
        }
        let n = T::from_usize_lossy(self.len());
        m.iter_mut().for_each(|a| *a = *a / n);
        m
    }

    /// Unbiased sample covariance, row-major `d x d`.
    pub fn covariance(&self) -> Vec<T> {
        let d = self.dim;
        let mut c = vec![T::zero(); d * d];
        let n = self.len();
        if n < 2 {
            return c;
        }
        let m = self.mean();
        for row in self.particles() {
            for i in 0..d {
                let di = row[i] - m[i];
                for j in 0..d {
                    c[i * d + j] = c[i * d + j] + di * (row[j] - m[j]);
                }
            }
        }
        let denom = T::from_usize_lossy(n - 1);
        c.iter_mut().for_each(|v| *v = *v / denom);
        c
    }

    /// Converts the cloud to another precision.
    pub fn cast<U: Scalar>(&self) -> SampleCloud<U> {
        SampleCloud {
            dim: self.dim,
            data: self.data.iter().map(|&v| U::lit(v.as_f64())).collect(),
            lineage: self.lineage,
        }
    }
}
