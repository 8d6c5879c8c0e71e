//! Dense `f64` tensors with define-by-run reverse-mode differentiation.
//!
//! A [`Graph`] is built fresh for every forward pass. Parameters live in a
//! [`ParamStore`] and are copied into the graph as leaves; after
//! [`Graph::backward`] the resulting [`Gradients`] are accumulated back into
//! the store. Gradients are never zeroed implicitly.

pub mod gradcheck;
mod graph;
mod params;

pub use graph::{Gradients, Graph, Var};
pub use params::{ParamId, ParamStore, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major dense array. An empty shape denotes a scalar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&e| e == 0) {
            return Err(Error::dim(
                "tensor",
                format!("zero extent in shape {shape:?}"),
            ));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::dim(
                "tensor",
                format!("shape {shape:?} needs {numel} values, got {}", data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    /// Convenience for a 2-D matrix given as rows.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let m = rows.len();
        let n = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::dim("from_rows", "ragged rows"));
        }
        Self::new(
            vec![m, n],
            rows.iter().flat_map(|r| r.iter().copied()).collect(),
        )
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() || shape.iter().any(|&e| e == 0) {
            return Err(Error::dim(
                "reshape",
                format!("{:?} -> {shape:?}", self.shape),
            ));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Euclidean norm of all entries.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Splits `shape` around `axis` into `(outer, axis_len, inner)` strides.
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_values() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(matches!(
            Tensor::new(vec![2, 3], vec![0.0; 5]),
            Err(Error::Dimension { .. })
        ));
        assert!(Tensor::new(vec![0, 3], vec![]).is_err());
    }

    #[test]
    fn scalar_has_empty_shape() {
        let s = Tensor::scalar(2.5);
        assert!(s.shape().is_empty());
        assert_eq!(s.item(), 2.5);
    }

    #[test]
    fn axis_split_strides() {
        assert_eq!(axis_split(&[2, 3, 4], 1), (2, 3, 4));
        assert_eq!(axis_split(&[2, 3, 4], 0), (1, 2, 12));
        assert_eq!(axis_split(&[2, 3, 4], 2), (6, 4, 1));
    }
}
