//! Dense row-major tensors and stride-tagged feature maps.
//!
//! Spatial maps are stored channel-major as `[channels, height, width]`;
//! convolution kernels as `[out, in, k, k]`; scalars have an empty shape.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape("Tensor::from_vec", &[numel], &[data.len()]));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
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

    /// `(channels, height, width)` of a spatial map.
    ///
    /// Panics if the tensor is not rank 3.
    pub fn chw(&self) -> (usize, usize, usize) {
        match self.shape[..] {
            [c, h, w] => (c, h, w),
            _ => panic!("expected a [C, H, W] tensor, got shape {:?}", self.shape),
        }
    }

    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        let (_, h, w) = self.chw();
        self.data[(c * h + y) * w + x]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale_assign(&mut self, factor: f64) {
        for v in &mut self.data {
            *v *= factor;
        }
    }

    /// Single channel of a spatial map as a `[1, H, W]` tensor.
    pub fn channel(&self, c: usize) -> Tensor {
        let (_, h, w) = self.chw();
        Tensor {
            shape: vec![1, h, w],
            data: self.data[c * h * w..(c + 1) * h * w].to_vec(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// A spatial feature grid together with its downsampling factor relative to
/// the network input.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub values: Tensor,
    pub stride: usize,
}

impl FeatureMap {
    pub fn new(values: Tensor, stride: usize) -> Self {
        Self { values, stride }
    }

    pub fn channels(&self) -> usize {
        self.values.chw().0
    }

    pub fn height(&self) -> usize {
        self.values.chw().1
    }

    pub fn width(&self) -> usize {
        self.values.chw().2
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
