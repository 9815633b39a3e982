//! Dense row-major tensors over `f64`.
//!
//! Shapes broadcast by trailing-dimension alignment with size-1 stretching,
//! and nothing else: no implicit reshapes, no views. Scalars are shape `[1]`.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor, checking that `data` fills `shape` exactly.
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::BadShape {
                op: "Tensor::new",
                expected: format!("{} values for shape {:?}", numel, shape),
                got: vec![data.len()],
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Tensor::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// 1-d tensor from a slice.
    pub fn vector(values: &[f64]) -> Self {
        Tensor {
            shape: vec![values.len()],
            data: values.to_vec(),
        }
    }

    /// 2-d tensor from rows; all rows must share a length.
    pub fn matrix(rows: &[Vec<f64>]) -> Result<Self> {
        let ncols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * ncols);
        for row in rows {
            if row.len() != ncols {
                return Err(Error::BadShape {
                    op: "Tensor::matrix",
                    expected: format!("rows of length {}", ncols),
                    got: vec![row.len()],
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Tensor {
            shape: vec![rows.len(), ncols],
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() == 1 {
            Ok(self.data[0])
        } else {
            Err(Error::BadShape {
                op: "Tensor::item",
                expected: "a single-element tensor".to_string(),
                got: self.shape.clone(),
            })
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Row `i` of a 2-d tensor as a fresh 1-d tensor.
    pub fn row(&self, i: usize) -> Result<Tensor> {
        if self.shape.len() != 2 {
            return Err(Error::BadShape {
                op: "Tensor::row",
                expected: "a 2-d tensor".to_string(),
                got: self.shape.clone(),
            });
        }
        let ncols = self.shape[1];
        Ok(Tensor {
            shape: vec![ncols],
            data: self.data[i * ncols..(i + 1) * ncols].to_vec(),
        })
    }

    /// Gathers rows of a 2-d tensor into a new tensor, in index order.
    pub fn gather_rows(&self, indices: &[usize]) -> Result<Tensor> {
        if self.shape.len() != 2 {
            return Err(Error::BadShape {
                op: "Tensor::gather_rows",
                expected: "a 2-d tensor".to_string(),
                got: self.shape.clone(),
            });
        }
        let ncols = self.shape[1];
        let mut data = Vec::with_capacity(indices.len() * ncols);
        for &i in indices {
            data.extend_from_slice(&self.data[i * ncols..(i + 1) * ncols]);
        }
        Ok(Tensor {
            shape: vec![indices.len(), ncols],
            data,
        })
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape.clone(),
                rhs: shape.to_vec(),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    /// Broadcast shape of `a` and `b` under trailing alignment, if any.
    pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
        let ndim = a.len().max(b.len());
        let mut out = vec![0usize; ndim];
        for i in 0..ndim {
            let da = if i < ndim - a.len() { 1 } else { a[i - (ndim - a.len())] };
            let db = if i < ndim - b.len() { 1 } else { b[i - (ndim - b.len())] };
            if da == db {
                out[i] = da;
            } else if da == 1 {
                out[i] = db;
            } else if db == 1 {
                out[i] = da;
            } else {
                return None;
            }
        }
        Some(out)
    }

    /// Materializes this tensor stretched to `shape`.
    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Tensor> {
        if self.shape == shape {
            return Ok(self.clone());
        }
        let compatible = Tensor::broadcast_shape(&self.shape, shape)
            .map(|s| s == shape)
            .unwrap_or(false);
        if !compatible {
            return Err(Error::ShapeMismatch {
                op: "broadcast_to",
                lhs: self.shape.clone(),
                rhs: shape.to_vec(),
            });
        }
        let ndim = shape.len();
        let src = pad_shape(&self.shape, ndim);
        let numel: usize = shape.iter().product();
        let mut data = vec![0.0; numel];
        let mut coords = vec![0usize; ndim];
        for (flat, slot) in data.iter_mut().enumerate() {
            unflatten(flat, shape, &mut coords);
            *slot = self.data[flatten_clamped(&coords, &src)];
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    /// Sums away broadcast dimensions so the result has `shape`.
    /// Inverse of `broadcast_to` in the adjoint sense.
    pub fn sum_to(&self, shape: &[usize]) -> Result<Tensor> {
        if self.shape == shape {
            return Ok(self.clone());
        }
        let compatible = Tensor::broadcast_shape(shape, &self.shape)
            .map(|s| s == self.shape)
            .unwrap_or(false);
        if !compatible {
            return Err(Error::ShapeMismatch {
                op: "sum_to",
                lhs: self.shape.clone(),
                rhs: shape.to_vec(),
            });
        }
        let ndim = self.shape.len();
        let dst = pad_shape(shape, ndim);
        let dst_numel: usize = shape.iter().product();
        let mut data = vec![0.0; dst_numel];
        let mut coords = vec![0usize; ndim];
        for (flat, &v) in self.data.iter().enumerate() {
            unflatten(flat, &self.shape, &mut coords);
            data[flatten_clamped(&coords, &dst)] += v;
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    /// Elementwise combine with broadcasting.
    pub fn zip_broadcast(
        &self,
        other: &Tensor,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let shape = Tensor::broadcast_shape(&self.shape, &other.shape).ok_or_else(|| {
            Error::ShapeMismatch {
                op,
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            }
        })?;
        if self.shape == shape && other.shape == shape {
            // Common fast path: no stretching needed.
            let data = self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect();
            return Ok(Tensor { shape, data });
        }
        let a = self.broadcast_to(&shape)?;
        let b = other.broadcast_to(&shape)?;
        let data = a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect();
        Ok(Tensor { shape, data })
    }

    /// 2-d matrix product.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape.len() != 2 || other.shape.len() != 2 || self.shape[1] != other.shape[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        let (m, k) = (self.shape[0], self.shape[1]);
        let n = other.shape[1];
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let brow = &other.data[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        Ok(Tensor {
            shape: vec![m, n],
            data: out,
        })
    }

    pub fn transpose2d(&self) -> Result<Tensor> {
        if self.shape.len() != 2 {
            return Err(Error::BadShape {
                op: "transpose",
                expected: "a 2-d tensor".to_string(),
                got: self.shape.clone(),
            });
        }
        let (m, n) = (self.shape[0], self.shape[1]);
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = self.data[i * n + j];
            }
        }
        Ok(Tensor {
            shape: vec![n, m],
            data,
        })
    }

    pub fn sum_all(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean_all(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.sum_all() / self.data.len() as f64
        }
    }
}

fn pad_shape(shape: &[usize], ndim: usize) -> Vec<usize> {
    let mut padded = vec![1usize; ndim];
    padded[ndim - shape.len()..].copy_from_slice(shape);
    padded
}

fn unflatten(flat: usize, shape: &[usize], coords: &mut [usize]) {
    let mut rem = flat;
    for d in (0..shape.len()).rev() {
        coords[d] = rem % shape[d];
        rem /= shape[d];
    }
}

/// Flat index into a (padded) shape, treating size-1 dims as pinned at 0.
fn flatten_clamped(coords: &[usize], shape: &[usize]) -> usize {
    let mut flat = 0;
    let mut stride = 1;
    for d in (0..shape.len()).rev() {
        let c = if shape[d] == 1 { 0 } else { coords[d] };
        flat += c * stride;
        stride *= shape[d];
    }
    flat
}
