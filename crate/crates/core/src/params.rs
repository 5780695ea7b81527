use std::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};

/// Flat parameter (or direction) vector in R^d.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// `self += scale * other`
    pub fn axpy(&mut self, scale: f64, other: &[f64]) {
        debug_assert_eq!(self.0.len(), other.len());
        for (a, b) in self.0.iter_mut().zip(other) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.0.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn max_abs_diff(&self, other: &[f64]) -> f64 {
        self.0
            .iter()
            .zip(other)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// `self - step * direction`, the descent step used by every update rule.
    pub fn descend(&self, step: f64, direction: &[f64]) -> ParamVector {
        debug_assert_eq!(self.0.len(), direction.len());
        Self(self.0.iter().zip(direction).map(|(t, u)| t - step * u).collect())
    }

    /// Arithmetic mean of equal-length vectors, accumulated in iteration order.
    ///
    /// The sum is taken relative to the first vector, `x₀ + Σ(xᵢ - x₀)/n`, so
    /// the mean of bitwise-identical vectors is bitwise that vector.
    ///
    /// Panics if `vectors` is empty.
    pub fn mean<'a, I>(vectors: I) -> ParamVector
    where
        I: IntoIterator<Item = &'a ParamVector>,
    {
        let mut iter = vectors.into_iter();
        let anchor = iter.next().expect("mean of an empty set of vectors");
        let mut offset = vec![0.0; anchor.dim()];
        let mut n = 1usize;
        for v in iter {
            assert_eq!(v.dim(), anchor.dim(), "mean of vectors with different dimensions");
            for ((o, x), a) in offset.iter_mut().zip(&v.0).zip(&anchor.0) {
                *o += x - a;
            }
            n += 1;
        }
        let n = n as f64;
        Self(anchor.0.iter().zip(offset).map(|(a, o)| a + o / n).collect())
    }
}

impl Deref for ParamVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParamVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(values: Vec<f64>) -> Self {
        Self(values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn mean_of_identical_is_exact() {
        let x = ParamVector::from_vec(vec![0.1, -3.7e-5, 12.25]);
        let m = ParamVector::mean([&x, &x, &x]);
        assert_eq!(m, x);
    }

    #[test]
    fn opposite_vectors_cancel() {
        let v = ParamVector::from_vec(vec![0.3, -1.1]);
        let w = ParamVector::from_vec(vec![-0.3, 1.1]);
        assert_eq!(ParamVector::mean([&v, &w]).norm(), 0.0);
    }

    proptest! {
        #[test]
        fn mean_matches_naive(xs in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 3), 1..6)) {
            let vs: Vec<ParamVector> = xs.into_iter().map(ParamVector::from_vec).collect();
            let m = ParamVector::mean(&vs);
            for k in 0..3 {
                let naive = vs.iter().map(|v| v[k]).sum::<f64>() / vs.len() as f64;
                prop_assert!((m[k] - naive).abs() <= 1e-9 * (1.0 + naive.abs()));
            }
        }

        #[test]
        fn descend_moves_by_step_times_norm(
            t in prop::collection::vec(-10f64..10.0, 4),
            u in prop::collection::vec(-10f64..10.0, 4),
            a in 0f64..1.0,
        ) {
            let theta = ParamVector::from_vec(t);
            let next = theta.descend(a, &u);
            let moved = ParamVector::from_vec(next.iter().zip(theta.iter()).map(|(x, y)| x - y).collect());
            let expected = a * ParamVector::from_vec(u).norm();
            prop_assert!((moved.norm() - expected).abs() <= 1e-9 * (1.0 + expected));
        }
    }
}
