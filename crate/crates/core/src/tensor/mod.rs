//! Dense row-major tensors, the kernels behind them, a reverse-mode tape,
//! the seeded random source and the Adam optimizer.

pub mod adam;
pub mod kernels;
pub mod rng;
pub mod tape;

use std::fmt;

use crate::error::{Error, Result};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use kernels::{layer_norm, matmul, softmax_attention, Activation, KeyMask, Mlp};
pub use rng::Rng;
pub use tape::{GradTape, Gradients, Precision, Var};

/// A dense tensor of `f64` scalars stored row-major.
///
/// A shape of `[]` is a scalar holding one value. Zero-sized dimensions are
/// representable so empty inputs can be rejected by the ops that care.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<f64> = self.data.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &preview)
            .field("numel", &self.data.len())
            .field("requires_grad", &self.requires_grad)
            .finish()
    }
}

impl Tensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::dim(
                "Tensor::new",
                format!("shape {shape:?} needs {expected} values, got {}", data.len()),
            ));
        }
        Ok(Tensor {
            shape,
            data,
            requires_grad: false,
        })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: f64) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; n],
            requires_grad: false,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
            requires_grad: false,
        }
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros([n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Builds a 2-D tensor from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::dim("Tensor::from_rows", "ragged rows"));
        }
        Tensor::new([rows.len(), cols], rows.concat())
    }

    pub fn with_grad(mut self, requires_grad: bool) -> Self {
        self.requires_grad = requires_grad;
        self
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
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

    /// Value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        match self.data.as_slice() {
            [v] => Ok(*v),
            _ => Err(Error::dim(
                "Tensor::item",
                format!("expected one element, shape {:?}", self.shape),
            )),
        }
    }

    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            s => Err(Error::dim("dims2", format!("expected rank 2, got {s:?}"))),
        }
    }

    /// Size of the last axis (1 for scalars).
    pub fn last_dim(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Tensor> {
        let mut out = Tensor::new(shape, self.data.clone())?;
        out.requires_grad = self.requires_grad;
        Ok(out)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
            requires_grad: false,
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::shapes("zip_map", &self.shape, &other.shape));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
            requires_grad: false,
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.map(|v| v * c)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.sum() / self.data.len() as f64
        }
    }

    /// Population variance over all elements.
    pub fn variance(&self) -> f64 {
        let m = self.mean();
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / self.data.len() as f64
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::shapes("max_abs_diff", &self.shape, &other.shape));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// Number of elements in one slice along the first axis.
    fn outer_stride(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    /// Slices `len` entries along the first axis starting at `start`.
    pub fn narrow0(&self, start: usize, len: usize) -> Result<Tensor> {
        let outer = *self.shape.first().ok_or_else(|| Error::dim("narrow0", "scalar"))?;
        if start + len > outer {
            return Err(Error::dim(
                "narrow0",
                format!("range {start}..{} exceeds axis of {outer}", start + len),
            ));
        }
        let stride = self.outer_stride();
        let mut shape = self.shape.clone();
        shape[0] = len;
        Tensor::new(shape, self.data[start * stride..(start + len) * stride].to_vec())
    }

    /// Overwrites entries `start..start + src.shape[0]` along the first axis.
    pub fn assign0(&mut self, start: usize, src: &Tensor) -> Result<()> {
        if src.shape.get(1..) != self.shape.get(1..) {
            return Err(Error::shapes("assign0", &self.shape, &src.shape));
        }
        let stride = self.outer_stride();
        let len = src.shape[0];
        if start + len > self.shape[0] {
            return Err(Error::dim("assign0", "range exceeds destination"));
        }
        self.data[start * stride..(start + len) * stride].copy_from_slice(&src.data);
        Ok(())
    }

    /// Concatenates along the first axis.
    pub fn concat0(parts: &[Tensor]) -> Result<Tensor> {
        let first = parts.first().ok_or_else(|| Error::dim("concat0", "no inputs"))?;
        let tail = first.shape.get(1..).unwrap_or(&[]).to_vec();
        let mut outer = 0;
        let mut data = Vec::new();
        for p in parts {
            if p.shape.get(1..).unwrap_or(&[]) != tail.as_slice() || p.rank() == 0 {
                return Err(Error::shapes("concat0", &first.shape, &p.shape));
            }
            outer += p.shape[0];
            data.extend_from_slice(&p.data);
        }
        let mut shape = vec![outer];
        shape.extend(tail);
        Tensor::new(shape, data)
    }
}
