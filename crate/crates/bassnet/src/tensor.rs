//! Dense rank-3 volumes and their shape algebra.
//!
//! A [`Volume`] is a contiguous `a x b x c` block of `f64` in canonical
//! order: the flat index of element `(i, j, k)` is `(i * b + j) * c + k`,
//! so the spectral axis `c` varies fastest. Keeping the spectral axis last
//! and contiguous makes band slicing a contiguous-range copy.
//!
//! Volumes are immutable once an operation has produced them; all
//! operations here are pure functions.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Extents of a rank-3 volume. All three are at least 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape3 {
    pub a: usize,
    pub b: usize,
    pub c: usize,
}

impl Shape3 {
    pub fn new(a: usize, b: usize, c: usize) -> Result<Self> {
        if a == 0 || b == 0 || c == 0 {
            return Err(Error::shape(format!(
                "shape extents must be >= 1, got {}x{}x{}",
                a, b, c
            )));
        }
        // element count has to be addressable
        a.checked_mul(b)
            .and_then(|ab| ab.checked_mul(c))
            .ok_or_else(|| {
                Error::shape(format!("element count of {}x{}x{} overflows", a, b, c))
            })?;
        Ok(Shape3 { a, b, c })
    }

    pub fn len(&self) -> usize {
        self.a * self.b * self.c
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Flat index of `(i, j, k)` in canonical order.
    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        debug_assert!(i < self.a && j < self.b && k < self.c);
        (i * self.b + j) * self.c + k
    }
}

impl std::fmt::Display for Shape3 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.a, self.b, self.c)
    }
}

/// Dense rank-3 array of `f64` in canonical `(a, b, c)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    shape: Shape3,
    data: Vec<f64>,
}

impl Volume {
    /// All-zero volume of the given shape.
    pub fn zeros(shape: Shape3) -> Volume {
        Volume {
            shape,
            data: vec![0.0; shape.len()],
        }
    }

    /// Wrap an existing buffer. The buffer length must match the shape.
    pub fn from_vec(shape: Shape3, data: Vec<f64>) -> Result<Volume> {
        if data.len() != shape.len() {
            return Err(Error::shape(format!(
                "buffer of length {} does not fill shape {}",
                data.len(),
                shape
            )));
        }
        Ok(Volume { shape, data })
    }

    pub fn shape(&self) -> Shape3 {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable view of the storage; the shape stays fixed.
    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.shape.index(i, j, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f64) {
        self.data[self.shape.index(i, j, k)] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Contiguous spectral slice `[k0, k1)` of every spatial position:
    /// returns an `a x b x (k1 - k0)` volume.
    pub fn slice_channels(&self, k0: usize, k1: usize) -> Result<Volume> {
        if k0 >= k1 || k1 > self.shape.c {
            return Err(Error::shape(format!(
                "channel slice [{}, {}) out of range for {}",
                k0, k1, self.shape
            )));
        }
        let width = k1 - k0;
        let out_shape = Shape3::new(self.shape.a, self.shape.b, width)?;
        let mut data = Vec::with_capacity(out_shape.len());
        for i in 0..self.shape.a {
            for j in 0..self.shape.b {
                let base = self.shape.index(i, j, 0);
                data.extend_from_slice(&self.data[base + k0..base + k1]);
            }
        }
        Ok(Volume {
            shape: out_shape,
            data,
        })
    }
}

/// `max(0, x)` applied element-wise; shape preserved.
pub fn elementwise_max_zero(v: &Volume) -> Volume {
    Volume {
        shape: v.shape,
        data: v.data.iter().map(|&x| x.max(0.0)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zeros_unit_shape() {
        let v = Volume::zeros(Shape3::new(1, 1, 1).unwrap());
        assert_eq!(v.data(), &[0.0]);
    }

    #[test]
    fn zeros_element_count() {
        let v = Volume::zeros(Shape3::new(3, 3, 220).unwrap());
        assert_eq!(v.data().len(), 1980);
        assert!(v.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn zeros_sum_is_zero() {
        let v = Volume::zeros(Shape3::new(2, 1, 3).unwrap());
        assert_eq!(v.data().iter().sum::<f64>(), 0.0);
    }

    #[test]
    fn rejects_zero_extent() {
        assert!(Shape3::new(0, 1, 1).is_err());
        assert!(Shape3::new(1, 0, 1).is_err());
        assert!(Shape3::new(1, 1, 0).is_err());
    }

    #[test]
    fn rejects_overflowing_count() {
        assert!(Shape3::new(usize::MAX, 2, 2).is_err());
    }

    #[test]
    fn canonical_index_round_trips() {
        let shape = Shape3::new(4, 3, 5).unwrap();
        let mut seen = vec![false; shape.len()];
        for i in 0..shape.a {
            for j in 0..shape.b {
                for k in 0..shape.c {
                    let flat = shape.index(i, j, k);
                    assert_eq!(flat, (i * shape.b + j) * shape.c + k);
                    assert!(!seen[flat]);
                    seen[flat] = true;
                }
            }
        }
        assert!(seen.into_iter().all(|s| s));
    }

    #[test]
    fn max_zero_clamps_negatives() {
        let v = Volume::from_vec(
            Shape3::new(1, 1, 3).unwrap(),
            vec![-1.5, 0.0, 2.0],
        )
        .unwrap();
        assert_eq!(elementwise_max_zero(&v).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn max_zero_identity_on_nonnegative() {
        let v = Volume::from_vec(Shape3::new(1, 2, 2).unwrap(), vec![0.0, 1.0, 2.5, 0.25])
            .unwrap();
        assert_eq!(elementwise_max_zero(&v), v);
    }

    #[test]
    fn max_zero_saturates_all_negative() {
        let v = Volume::from_vec(Shape3::new(1, 1, 4).unwrap(), vec![-1.0, -0.5, -3.0, -0.01])
            .unwrap();
        assert!(elementwise_max_zero(&v).data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn max_zero_idempotent() {
        let v = Volume::from_vec(
            Shape3::new(2, 1, 3).unwrap(),
            vec![-2.0, 3.0, 0.0, 1.5, -0.25, 7.0],
        )
        .unwrap();
        let once = elementwise_max_zero(&v);
        let twice = elementwise_max_zero(&once);
        assert_eq!(once, twice);
    }

    #[test]
    fn slice_channels_picks_contiguous_range() {
        let shape = Shape3::new(2, 2, 4).unwrap();
        let data: Vec<f64> = (0..16).map(|x| x as f64).collect();
        let v = Volume::from_vec(shape, data).unwrap();
        let s = v.slice_channels(1, 3).unwrap();
        assert_eq!(s.shape(), Shape3::new(2, 2, 2).unwrap());
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    assert_eq!(s.get(i, j, k), v.get(i, j, k + 1));
                }
            }
        }
    }
}
