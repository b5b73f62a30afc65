//! Dense row-major N-dimensional arrays of `f64`.
//!
//! Images are stored height × width × channels; when a batch is present it is
//! prepended as axis 0, so axis 1 indexes rows, axis 2 columns and axis 3
//! channels.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn check_extents(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::shape("tensor must have at least one axis"));
    }
    if let Some(axis) = shape.iter().position(|&e| e == 0) {
        return Err(Error::shape(format!(
            "extent of axis {axis} is 0 in shape {shape:?}"
        )));
    }
    Ok(shape.iter().product())
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Result<Self> {
        let len = check_extents(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        })
    }

    pub fn full(shape: &[usize], value: f64) -> Result<Self> {
        let mut t = Self::zeros(shape)?;
        t.data.fill(value);
        Ok(t)
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let len = check_extents(shape)?;
        if data.len() != len {
            return Err(Error::shape(format!(
                "data length {} does not match shape {shape:?} ({len} elements)",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Tensor of the same shape as `self`, filled with zeros.
    pub fn zeros_like(&self) -> Self {
        Self {
            shape: self.shape.clone(),
            data: vec![0.0; self.data.len()],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    /// Extent of the last axis.
    pub fn channels(&self) -> usize {
        *self.shape.last().expect("tensor rank >= 1")
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        Self::from_vec(shape, self.data)
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.expect_same_shape(other)?;
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// Elementwise `self += other`.
    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        self.expect_same_shape(other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn expect_same_shape(&self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "shape mismatch: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        self.expect_same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// Row-major element access for an index of full rank.
    pub fn at(&self, index: &[usize]) -> f64 {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: f64) {
        let off = self.offset(index);
        self.data[off] = value;
    }

    fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        index.iter().zip(&self.shape).fold(0, |acc, (&i, &e)| {
            debug_assert!(i < e);
            acc * e + i
        })
    }
}

/// Joins `a` and `b` along `axis`. All other extents must agree.
pub fn concat(a: &Tensor, b: &Tensor, axis: usize) -> Result<Tensor> {
    if a.rank() != b.rank() {
        return Err(Error::shape(format!(
            "concat rank mismatch: {:?} vs {:?}",
            a.shape, b.shape
        )));
    }
    if axis >= a.rank() {
        return Err(Error::shape(format!(
            "concat axis {axis} out of range for rank {}",
            a.rank()
        )));
    }
    for (i, (ea, eb)) in a.shape.iter().zip(&b.shape).enumerate() {
        if i != axis && ea != eb {
            return Err(Error::shape(format!(
                "concat along axis {axis}: extents differ on axis {i}: {:?} vs {:?}",
                a.shape, b.shape
            )));
        }
    }
    let outer: usize = a.shape[..axis].iter().product();
    let inner: usize = a.shape[axis + 1..].iter().product();
    let block_a = a.shape[axis] * inner;
    let block_b = b.shape[axis] * inner;

    let mut shape = a.shape.clone();
    shape[axis] += b.shape[axis];
    let mut data = Vec::with_capacity(a.len() + b.len());
    for o in 0..outer {
        data.extend_from_slice(&a.data[o * block_a..(o + 1) * block_a]);
        data.extend_from_slice(&b.data[o * block_b..(o + 1) * block_b]);
    }
    Tensor::from_vec(&shape, data)
}

/// Inverse of [`concat`]: splits `t` along `axis` at `at`, returning the two parts.
pub fn split(t: &Tensor, axis: usize, at: usize) -> Result<(Tensor, Tensor)> {
    if axis >= t.rank() || at == 0 || at >= t.shape[axis] {
        return Err(Error::shape(format!(
            "cannot split shape {:?} on axis {axis} at {at}",
            t.shape
        )));
    }
    let outer: usize = t.shape[..axis].iter().product();
    let inner: usize = t.shape[axis + 1..].iter().product();
    let block = t.shape[axis] * inner;
    let cut = at * inner;
    let mut first = Vec::with_capacity(outer * cut);
    let mut second = Vec::with_capacity(outer * (block - cut));
    for o in 0..outer {
        let row = &t.data[o * block..(o + 1) * block];
        first.extend_from_slice(&row[..cut]);
        second.extend_from_slice(&row[cut..]);
    }
    let mut s1 = t.shape.clone();
    s1[axis] = at;
    let mut s2 = t.shape.clone();
    s2[axis] -= at;
    Ok((
        Tensor::from_vec(&s1, first)?,
        Tensor::from_vec(&s2, second)?,
    ))
}

/// Extracts channel `index` of the last axis, keeping it as an extent-1 axis.
pub fn channel(t: &Tensor, index: usize) -> Result<Tensor> {
    let k = t.channels();
    if index >= k {
        return Err(Error::shape(format!(
            "channel {index} out of range for shape {:?}",
            t.shape
        )));
    }
    let mut shape = t.shape.clone();
    *shape.last_mut().unwrap() = 1;
    let data = t.data.iter().skip(index).step_by(k).copied().collect();
    Tensor::from_vec(&shape, data)
}

/// Splits the last axis into `k` single-channel tensors.
pub fn slice_channels(t: &Tensor) -> Vec<Tensor> {
    (0..t.channels())
        .map(|c| channel(t, c).expect("channel index in range"))
        .collect()
}
