//! Minimal dense-tensor layer shared by every other module.
//!
//! Tensors are row-major `f32` by default; an `f64` instantiation backs the
//! gradient checks. All operations are pure, use a fixed accumulation order
//! (no blocking or reassociation), and are safe to call concurrently.

use num_traits::Float;

use crate::error::{Error, Result};
use crate::par;

/// Dense row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Float + Send + Sync> Tensor<T> {
    /// Builds a tensor, checking that `data` fills `shape` exactly and that
    /// every dimension is positive.
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::shape(format!(
                "tensor dimensions must be positive, got {shape:?}"
            )));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {numel} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    /// All-zero tensor. Panics on a zero dimension (programmer error).
    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel: usize = shape.iter().product();
        assert!(
            !shape.is_empty() && shape.iter().all(|&d| d > 0),
            "tensor dimensions must be positive, got {shape:?}"
        );
        Tensor {
            shape,
            data: vec![T::zero(); numel],
        }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::shape("ragged rows".to_string()));
        }
        Tensor::new(vec![r, c], rows.concat())
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

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// Returns the `[rows, cols]` of a rank-2 tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(Error::shape(format!(
                "expected rank-2 tensor, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [a, b, c] => Ok((a, b, c)),
            _ => Err(Error::shape(format!(
                "expected rank-3 tensor, got shape {:?}",
                self.shape
            ))),
        }
    }

    /// Row `i` of a rank-2 tensor as a slice.
    pub fn row(&self, i: usize) -> &[T] {
        let c = self.shape[self.rank() - 1];
        &self.data[i * c..(i + 1) * c]
    }

    pub fn at2(&self, i: usize, j: usize) -> T {
        self.data[i * self.shape[1] + j]
    }

    pub fn at3(&self, i: usize, j: usize, k: usize) -> T {
        self.data[(i * self.shape[1] + j) * self.shape[2] + k]
    }

    /// Reinterprets the buffer under a new shape with the same element count.
    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Tensor::new(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Matrix product of two rank-2 tensors.
    ///
    /// Accumulation runs in a fixed k-order per output cell, one output row
    /// per task, so results do not depend on thread count.
    pub fn matmul(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        let (m, ka) = self.dims2()?;
        let (kb, n) = rhs.dims2()?;
        if ka != kb {
            return Err(Error::shape(format!(
                "matmul inner dimensions disagree: {m}x{ka} vs {kb}x{n}"
            )));
        }
        let mut out = vec![T::zero(); m * n];
        par::for_each_chunk_mut(&mut out, n, |i, row| {
            let a = self.row(i);
            for j in 0..n {
                let mut acc = T::zero();
                for (k, &av) in a.iter().enumerate() {
                    acc = acc + av * rhs.data[k * n + j];
                }
                row[j] = acc;
            }
        });
        Tensor::new(vec![m, n], out)
    }

    /// Pairwise cosine similarity between the rows of `self` (p×d) and the
    /// rows of `rhs` (q×d), returning p×q.
    ///
    /// Rows with near-zero norm (< 1e-12) score 0 against everything rather
    /// than producing NaN. Entries are clamped to [-1, 1].
    pub fn cosine_rows(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        let (p, da) = self.dims2()?;
        let (q, db) = rhs.dims2()?;
        if da != db {
            return Err(Error::shape(format!(
                "cosine feature dimensions disagree: {da} vs {db}"
            )));
        }
        let eps = T::from(1e-12).unwrap();
        let norms_a: Vec<T> = (0..p).map(|i| norm(self.row(i))).collect();
        let norms_b: Vec<T> = (0..q).map(|j| norm(rhs.row(j))).collect();
        let mut out = vec![T::zero(); p * q];
        par::for_each_chunk_mut(&mut out, q, |i, row| {
            let a = self.row(i);
            for (j, slot) in row.iter_mut().enumerate() {
                if norms_a[i] < eps || norms_b[j] < eps {
                    *slot = T::zero();
                } else {
                    let mut dot = T::zero();
                    let b = rhs.row(j);
                    for (&av, &bv) in a.iter().zip(b) {
                        dot = dot + av * bv;
                    }
                    let c = dot / (norms_a[i] * norms_b[j]);
                    *slot = c.min(T::one()).max(-T::one());
                }
            }
        });
        Tensor::new(vec![p, q], out)
    }

    /// Elementwise logistic function.
    pub fn sigmoid(&self) -> Self {
        self.map(|x| T::one() / (T::one() + (-x).exp()))
    }

    /// Elementwise rectification, `max(0, x)`.
    pub fn rectify(&self) -> Self {
        self.map(|x| x.max(T::zero()))
    }

    /// Row-wise softmax of a rank-2 tensor, stabilised by subtracting each
    /// row's maximum before exponentiation.
    pub fn softmax_rows(&self) -> Result<Self> {
        let (r, c) = self.dims2()?;
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            let row = self.row(i);
            let max = row.iter().cloned().fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for (j, &x) in row.iter().enumerate() {
                let e = (x - max).exp();
                out[i * c + j] = e;
                sum = sum + e;
            }
            for j in 0..c {
                out[i * c + j] = out[i * c + j] / sum;
            }
        }
        Tensor::new(vec![r, c], out)
    }
}

impl Tensor<f32> {
    pub fn to_f64(&self) -> Tensor<f64> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| x as f64).collect(),
        }
    }
}

impl Tensor<f64> {
    pub fn to_f32(&self) -> Tensor<f32> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| x as f32).collect(),
        }
    }
}

fn norm<T: Float>(row: &[T]) -> T {
    let mut s = T::zero();
    for &x in row {
        s = s + x * x;
    }
    s.sqrt()
}

/// Parameters of a three-layer fully connected network.
///
/// Each weight matrix is stored `in_dim x out_dim`; consecutive layer
/// dimensions must chain.
#[derive(Debug, Clone)]
pub struct MlpParams<T = f32> {
    weights: [Tensor<T>; 3],
    biases: [Vec<T>; 3],
}

impl<T: Float + Send + Sync> MlpParams<T> {
    pub fn new(weights: [Tensor<T>; 3], biases: [Vec<T>; 3]) -> Result<Self> {
        for (i, (w, b)) in weights.iter().zip(&biases).enumerate() {
            let (_, out) = w.dims2()?;
            if out != b.len() {
                return Err(Error::shape(format!(
                    "layer {i}: weight output {out} vs bias length {}",
                    b.len()
                )));
            }
        }
        for i in 0..2 {
            let (_, out) = weights[i].dims2()?;
            let (next_in, _) = weights[i + 1].dims2()?;
            if out != next_in {
                return Err(Error::shape(format!(
                    "layer {i} output {out} does not chain into layer {} input {next_in}",
                    i + 1
                )));
            }
        }
        Ok(MlpParams { weights, biases })
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.weights[2].shape()[1]
    }

    /// Forward pass: FC, rectify, FC, rectify, FC. The final layer is left
    /// linear; score heads apply their own activation.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (_, d) = x.dims2()?;
        if d != self.input_dim() {
            return Err(Error::shape(format!(
                "mlp expects input dimension {}, got {d}",
                self.input_dim()
            )));
        }
        let mut h = x.clone();
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = h.matmul(w)?;
            let (rows, cols) = z.dims2()?;
            for r in 0..rows {
                for c in 0..cols {
                    z.data[r * cols + c] = z.data[r * cols + c] + b[c];
                }
            }
            h = if i < 2 { z.rectify() } else { z };
        }
        Ok(h)
    }
}
