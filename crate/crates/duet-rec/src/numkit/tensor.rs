//! Dense row-major tensors and the handful of kernels the models need.
//!
//! Everything is `f64`. Rank is 1, 2 or 3; rank-3 tensors only appear as
//! convolution filter banks `[q, h, d]` and are treated as `q` stacked
//! matrices.

use crate::error::{Error, Result};
use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape {
                op: "from_vec",
                detail: format!("shape {:?} wants {} values, got {}", shape, n, data.len()),
            });
        }
        if shape.is_empty() || shape.len() > 3 {
            return Err(Error::Shape {
                op: "from_vec",
                detail: format!("rank must be 1..=3, got {:?}", shape),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Rank-1 tensor from a slice.
    pub fn vector(data: &[f64]) -> Tensor {
        Tensor {
            shape: vec![data.len()],
            data: data.to_vec(),
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

    /// Number of rows when viewed as a matrix (rank-1 counts as one row).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            1 => 1,
            2 => self.shape[0],
            _ => self.shape[0] * self.shape[1],
        }
    }

    /// Number of columns when viewed as a matrix.
    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap()
    }

    /// Borrow row `i` of a matrix view.
    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn get2(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    pub fn reshaped(&self, shape: &[usize]) -> Result<Tensor> {
        Tensor::from_vec(shape, self.data.clone())
    }

    /// True when every element is finite.
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Glorot (Xavier) uniform init over `[-b, b]`, `b = sqrt(6/(fan_in+fan_out))`.
    pub fn glorot<R: Rng>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    /// Embedding-table init, uniform in `[-0.5/dim, 0.5/dim]` per coordinate.
    pub fn embedding<R: Rng>(rows: usize, dim: usize, rng: &mut R) -> Tensor {
        let bound = 0.5 / dim as f64;
        let n = rows * dim;
        let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
        Tensor {
            shape: vec![rows, dim],
            data,
        }
    }
}

fn check_mat(t: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    if t.rank() != 2 {
        return Err(Error::Shape {
            op,
            detail: format!("expected rank-2, got {:?}", t.shape()),
        });
    }
    Ok((t.shape[0], t.shape[1]))
}

/// `C = A @ B` for `[n,k] @ [k,m]`, ikj loop order.
pub fn matmul_nn(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (n, ka) = check_mat(a, "matmul_nn")?;
    let (kb, m) = check_mat(b, "matmul_nn")?;
    if ka != kb {
        return Err(Error::Shape {
            op: "matmul_nn",
            detail: format!("inner dims {} vs {}", ka, kb),
        });
    }
    let mut c = Tensor::zeros(&[n, m]);
    for i in 0..n {
        let arow = a.row(i);
        let crow = c.row_mut(i);
        for (k, &aik) in arow.iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            let brow = b.row(k);
            for j in 0..m {
                crow[j] += aik * brow[j];
            }
        }
    }
    Ok(c)
}

/// `C = A @ B^T` for `[n,k] @ [m,k]^T`.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (n, ka) = check_mat(a, "matmul_nt")?;
    let (m, kb) = check_mat(b, "matmul_nt")?;
    if ka != kb {
        return Err(Error::Shape {
            op: "matmul_nt",
            detail: format!("inner dims {} vs {}", ka, kb),
        });
    }
    let mut c = Tensor::zeros(&[n, m]);
    for i in 0..n {
        let arow = a.row(i);
        let crow = c.row_mut(i);
        for j in 0..m {
            let brow = b.row(j);
            let mut acc = 0.0;
            for k in 0..ka {
                acc += arow[k] * brow[k];
            }
            crow[j] = acc;
        }
    }
    Ok(c)
}

/// `C = A^T @ B` for `[k,n]^T @ [k,m]`.
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (ka, n) = check_mat(a, "matmul_tn")?;
    let (kb, m) = check_mat(b, "matmul_tn")?;
    if ka != kb {
        return Err(Error::Shape {
            op: "matmul_tn",
            detail: format!("inner dims {} vs {}", ka, kb),
        });
    }
    let mut c = Tensor::zeros(&[n, m]);
    for k in 0..ka {
        let arow = a.row(k);
        let brow = b.row(k);
        for (i, &aki) in arow.iter().enumerate() {
            if aki == 0.0 {
                continue;
            }
            let crow = c.row_mut(i);
            for j in 0..m {
                crow[j] += aki * brow[j];
            }
        }
    }
    Ok(c)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

/// Numerically stable softmax of a vector.
pub fn softmax_vec(x: &[f64]) -> Vec<f64> {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
