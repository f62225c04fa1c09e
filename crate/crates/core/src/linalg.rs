//! Dense helpers shared by the diagnostics: vector products and the
//! row-major tensor used for Jacobians and structural matrices.

use crate::error::{domain, Result};

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2_sq(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    norm2_sq(a).sqrt()
}

/// Row-major dense tensor. Only rank 1 and 2 are used in practice.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != data.len() {
            return domain(format!(
                "tensor data length {} does not match shape {:?}",
                data.len(),
                shape
            ));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Builds a square matrix from nested rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != m) {
            return domain("ragged rows");
        }
        Self::from_vec(&[n, m], rows.concat())
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.set(i, i, 1.0);
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape.get(1).copied().unwrap_or(1)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let c = self.cols();
        self.data[i * c + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows()).map(|i| self.get(i, j)).collect()
    }

    pub fn set_column(&mut self, j: usize, col: &[f64]) {
        for (i, v) in col.iter().enumerate() {
            self.set(i, j, *v);
        }
    }

    /// `selfᵀ · self` for a rank-2 tensor.
    pub fn gram(&self) -> Tensor {
        let (n, m) = (self.rows(), self.cols());
        let mut g = Tensor::zeros(&[m, m]);
        for k in 0..n {
            let r = self.row(k);
            for i in 0..m {
                let ri = r[i];
                if ri == 0.0 {
                    continue;
                }
                for j in i..m {
                    g.data[i * m + j] += ri * r[j];
                }
            }
        }
        for i in 0..m {
            for j in 0..i {
                g.data[i * m + j] = g.data[j * m + i];
            }
        }
        g
    }

    /// `xᵀ A x` for a square matrix.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        let n = self.rows();
        let mut acc = 0.0;
        for i in 0..n {
            acc += x[i] * dot(self.row(i), x);
        }
        acc
    }

    pub fn frobenius(&self) -> f64 {
        norm2(&self.data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
