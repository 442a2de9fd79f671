//! Dense multi-dimensional tables of real-valued counts.
//!
//! A [`Table`] is the workhorse behind marginal measurement and synthetic
//! data fitting: a contingency table over a handful of categorical axes,
//! stored row-major in a flat `Vec<f64>`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A dense table of real-valued counts (or probabilities) over categorical
/// axes. Cell order is row-major: the last axis varies fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl Table {
    /// An all-zero table with the given axis cardinalities.
    pub fn zeros(dims: &[usize]) -> Result<Table> {
        if dims.is_empty() || dims.contains(&0) {
            return Err(Error::Data(format!(
                "table dimensions must be nonempty and positive, got {dims:?}"
            )));
        }
        let len: usize = dims.iter().product();
        Ok(Table { dims: dims.to_vec(), data: vec![0.0; len] })
    }

    /// A table with explicit cell data in row-major order.
    pub fn from_data(dims: &[usize], data: Vec<f64>) -> Result<Table> {
        let mut t = Table::zeros(dims)?;
        if data.len() != t.data.len() {
            return Err(Error::Data(format!(
                "expected {} cells for dims {dims:?}, got {}",
                t.data.len(),
                data.len()
            )));
        }
        t.data = data;
        Ok(t)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Flat row-major offset of a multi-index.
    pub fn offset(&self, index: &[usize]) -> Result<usize> {
        if index.len() != self.dims.len() {
            return Err(Error::Data(format!(
                "index rank {} does not match table rank {}",
                index.len(),
                self.dims.len()
            )));
        }
        let mut off = 0;
        for (i, (&ix, &dim)) in index.iter().zip(&self.dims).enumerate() {
            if ix >= dim {
                return Err(Error::Data(format!(
                    "index {ix} out of range for axis {i} of size {dim}"
                )));
            }
            off = off * dim + ix;
        }
        Ok(off)
    }

    pub fn get(&self, index: &[usize]) -> Result<f64> {
        Ok(self.data[self.offset(index)?])
    }

    pub fn set(&mut self, index: &[usize], value: f64) -> Result<()> {
        let off = self.offset(index)?;
        self.data[off] = value;
        Ok(())
    }

    pub fn add(&mut self, index: &[usize], value: f64) -> Result<()> {
        let off = self.offset(index)?;
        self.data[off] += value;
        Ok(())
    }

    /// Sum of all cells.
    pub fn total(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Multiply every cell by a constant.
    pub fn scale(&mut self, factor: f64) {
        for cell in &mut self.data {
            *cell *= factor;
        }
    }

    /// The table rescaled to sum to 1. Errors if the total is not
    /// strictly positive.
    pub fn normalized(&self) -> Result<Table> {
        let total = self.total();
        if total <= 0.0 || total.is_nan() {
            return Err(Error::Data(format!(
                "cannot normalize a table with total {total}"
            )));
        }
        let mut out = self.clone();
        out.scale(1.0 / total);
        Ok(out)
    }

    /// Sum out every axis except the ones listed in `keep` (which must be
    /// strictly increasing). Result axes appear in the order given.
    pub fn marginalize(&self, keep: &[usize]) -> Result<Table> {
        if keep.is_empty() {
            return Err(Error::Data("cannot marginalize onto zero axes".into()));
        }
        if keep.windows(2).any(|w| w[0] >= w[1]) || keep.iter().any(|&a| a >= self.dims.len()) {
            return Err(Error::Data(format!(
                "marginalize axes {keep:?} invalid for rank {}",
                self.dims.len()
            )));
        }
        let out_dims: Vec<usize> = keep.iter().map(|&a| self.dims[a]).collect();
        let mut out = Table::zeros(&out_dims)?;
        let mut index = vec![0usize; self.dims.len()];
        for (flat, &value) in self.data.iter().enumerate() {
            // Decompose the flat offset into the full multi-index.
            let mut rem = flat;
            for axis in (0..self.dims.len()).rev() {
                index[axis] = rem % self.dims[axis];
                rem /= self.dims[axis];
            }
            let mut off = 0;
            for &a in keep {
                off = off * self.dims[a] + index[a];
            }
            out.data[off] += value;
        }
        Ok(out)
    }

    /// Iterate over (multi-index, value) pairs in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (Vec<usize>, f64)> + '_ {
        let dims = self.dims.clone();
        self.data.iter().enumerate().map(move |(flat, &v)| {
            let mut index = vec![0usize; dims.len()];
            let mut rem = flat;
            for axis in (0..dims.len()).rev() {
                index[axis] = rem % dims[axis];
                rem /= dims[axis];
            }
            (index, v)
        })
    }
}
