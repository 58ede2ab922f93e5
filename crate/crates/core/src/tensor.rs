//! Dense row-major `f64` tensors.
//!
//! A [`Tensor`] is always finite: constructors reject NaN and infinities, so
//! values read back from a tensor never need re-validation.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Splits a shape into (rows, last-axis length). A 0-d shape is one row of one.
pub fn rows_last(shape: &[usize]) -> (usize, usize) {
    match shape.last() {
        Some(&last) if last > 0 => (numel(shape) / last, last),
        Some(_) => (0, 0),
        None => (1, 1),
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if numel(&shape) != data.len() {
            return Err(shape_err(
                "tensor",
                format!("shape {:?} needs {} values, got {}", shape, numel(&shape), data.len()),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("tensor input"));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self { shape: shape.to_vec(), data: vec![0.0; numel(shape)] }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        assert!(value.is_finite());
        Self { shape: shape.to_vec(), data: vec![value; numel(shape)] }
    }

    pub fn scalar(value: f64) -> Result<Self> {
        Self::new(Vec::new(), vec![value])
    }

    pub fn from_vec(data: Vec<f64>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Row `i` of a tensor viewed as (rows, last-axis).
    pub fn row(&self, i: usize) -> &[f64] {
        let (_, n) = rows_last(&self.shape);
        &self.data[i * n..(i + 1) * n]
    }

    pub fn item(&self) -> Option<f64> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        if numel(&shape) != self.data.len() {
            return Err(shape_err("reshape", format!("{:?} -> {:?}", self.shape, shape)));
        }
        self.shape = shape;
        Ok(self)
    }

    /// Applies `f` to the raw buffer and re-validates finiteness.
    pub fn update<F: FnOnce(&mut [f64])>(&mut self, f: F) -> Result<()> {
        f(&mut self.data);
        if self.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("tensor update"));
        }
        Ok(())
    }

    /// Appends the rows of `other` along the first axis.
    pub fn concat_rows(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape.len() != other.shape.len() || self.shape[1..] != other.shape[1..] {
            return Err(shape_err("concat_rows", format!("{:?} vs {:?}", self.shape, other.shape)));
        }
        let mut shape = self.shape.clone();
        shape[0] += other.shape[0];
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        Ok(Tensor { shape, data })
    }
}
