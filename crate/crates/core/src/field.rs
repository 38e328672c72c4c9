//! Flat scalar fields on a structured grid.
//!
//! Storage is row-major in `y`: the value at cell `(i, j)` lives at index
//! `j * nx + i`. All stencil code in this crate relies on that layout.

use serde::{Deserialize, Serialize};

/// A scalar value per grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Field {
    nx: usize,
    ny: usize,
    data: Vec<f64>,
}

impl Field {
    /// Constant field.
    pub fn constant(nx: usize, ny: usize, value: f64) -> Self {
        Field {
            nx,
            ny,
            data: vec![value; nx * ny],
        }
    }

    pub fn zeros(nx: usize, ny: usize) -> Self {
        Self::constant(nx, ny, 0.0)
    }

    /// Build from a cell-index function evaluated at every `(i, j)`.
    pub fn from_fn(nx: usize, ny: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                data.push(f(i, j));
            }
        }
        Field { nx, ny, data }
    }

    pub fn from_vec(nx: usize, ny: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), nx * ny, "field data length mismatch");
        Field { nx, ny, data }
    }

    #[inline]
    pub fn nx(&self) -> usize {
        self.nx
    }

    #[inline]
    pub fn ny(&self) -> usize {
        self.ny
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// True when another field has the same cell dimensions.
    pub fn same_shape(&self, other: &Field) -> bool {
        self.nx == other.nx && self.ny == other.ny
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.nx && j < self.ny);
        j * self.nx + i
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[self.idx(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        let k = self.idx(i, j);
        self.data[k] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field {
            nx: self.nx,
            ny: self.ny,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_with(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Field {
        assert!(self.same_shape(other), "field shape mismatch");
        Field {
            nx: self.nx,
            ny: self.ny,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    /// Largest value. NaN never wins the max, so a NaN-free field returns
    /// its true supremum.
    pub fn sup(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn inf(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn abs_sup(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, &v| m.max(v.abs()))
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Midpoint-rule integral over the domain.
    pub fn integral(&self, cell_area: f64) -> f64 {
        self.sum() * cell_area
    }

    pub fn dot(&self, other: &Field) -> f64 {
        assert!(self.same_shape(other), "field shape mismatch");
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn norm_l2(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn scale_in_place(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    /// `self += s * other`.
    pub fn axpy_in_place(&mut self, s: f64, other: &Field) {
        assert!(self.same_shape(other), "field shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }
}
