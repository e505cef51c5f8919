use crate::error::{FlowError, Result};
use crate::scalar::Scalar;

/// `M` points in `R^d`, stored contiguously, plus the outer iteration counter.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble<T> {
    data: Vec<T>,
    dim: usize,
    iteration: u64,
}

impl<T: Scalar> ParticleEnsemble<T> {
    pub fn new(points: Vec<Vec<T>>) -> Result<Self> {
        let dim = points.first().map(Vec::len).unwrap_or(0);
        let mut data = Vec::with_capacity(points.len() * dim);
        for p in &points {
            if p.len() != dim {
                return Err(FlowError::DimensionMismatch {
                    expected: dim,
                    got: p.len(),
                });
            }
            data.extend_from_slice(p);
        }
        Self::from_flat(data, dim)
    }

    /// Builds an ensemble from row-major point data.
    pub fn from_flat(data: Vec<T>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(FlowError::InvalidInput("particle dimension must be >= 1".into()));
        }
        if data.is_empty() || data.len() % dim != 0 {
            return Err(FlowError::InvalidInput(format!(
                "{} values do not form a non-empty set of {dim}-dimensional points",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(FlowError::NonFinite {
                what: "coordinate",
                index: pos / dim,
            });
        }
        Ok(Self {
            data,
            dim,
            iteration: 0,
        })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn count(&self) -> usize {
        self.data.len() / self.dim
    }

    #[inline]
    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn with_iteration(mut self, iteration: u64) -> Self {
        self.iteration = iteration;
        self
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[T] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn point_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl ExactSizeIterator<Item = &[T]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[T] {
        &self.data
    }

    /// Mutable access to the row-major data. Callers must keep values finite.
    pub fn as_flat_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn to_vecs(&self) -> Vec<Vec<T>> {
        self.points().map(<[T]>::to_vec).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Coordinate-wise empirical mean.
    pub fn mean(&self) -> Vec<T> {
        let mut m = vec![T::zero(); self.dim];
        for p in self.points() {
            for (acc, &v) in m.iter_mut().zip(p) {
                *acc = *acc + v;
            }
        }
        let n = T::lit(self.count() as f64);
        m.iter_mut().for_each(|v| *v = *v / n);
        m
    }

    /// Coordinate-wise empirical (population) variance.
    pub fn variance(&self) -> Vec<T> {
        let mean = self.mean();
        let mut var = vec![T::zero(); self.dim];
        for p in self.points() {
            for ((acc, &v), &mu) in var.iter_mut().zip(p).zip(&mean) {
                *acc = *acc + (v - mu) * (v - mu);
            }
        }
        let n = T::lit(self.count() as f64);
        var.iter_mut().for_each(|v| *v = *v / n);
        var
    }

    /// Reorders particles: output particle `k` is input particle `order[k]`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        if order.len() != self.count() {
            return Err(FlowError::DimensionMismatch {
                expected: self.count(),
                got: order.len(),
            });
        }
        let mut data = Vec::with_capacity(self.data.len());
        for &k in order {
            if k >= self.count() {
                return Err(FlowError::InvalidInput(format!("permutation index {k} out of range")));
            }
            data.extend_from_slice(self.point(k));
        }
        Ok(Self {
            data,
            dim: self.dim,
            iteration: self.iteration,
        })
    }
}
