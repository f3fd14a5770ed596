//! Dense f64 tensors and reverse-mode autodiff on a recorded tape.
//!
//! Values are plain row-major buffers. Differentiable computation goes
//! through [`tape::Tape`], which records one node per primitive and replays
//! them in reverse for gradients. Parameters live in a [`params::ParamStore`]
//! with an explicit trainable/frozen flag per entry; [`adam::Adam`] updates
//! trainable entries only.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod params;
pub mod tape;

pub use adam::{Adam, AdamConfig};
pub use params::{is_trainable_name, ParamStore, Parameter, ParameterPartition};
pub use tape::{NodeId, Tape};

use crate::{Error, Result};

/// Dense row-major f64 tensor. Rank is the length of `shape`; matrix ops
/// treat the tensor as 2-D `[rows, cols]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![0.0; n] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "shape {:?} wants {} values, got {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    pub fn scalar(v: f64) -> Self {
        Tensor { shape: vec![1], data: vec![v] }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Rows of the 2-D view: `[n, d]` has n rows, `[n]` is one row.
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 | 1 => 1,
            _ => self.shape[..self.shape.len() - 1].iter().product(),
        }
    }

    /// Columns of the 2-D view (the last axis).
    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap_or(&1)
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let d = self.cols();
        &self.data[r * d..(r + 1) * d]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let d = self.cols();
        &mut self.data[r * d..(r + 1) * d]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Draw values i.i.d. N(0, std^2).
    pub fn randn(shape: &[usize], std: f64, rng: &mut impl rand::Rng) -> Self {
        use rand_distr::{Distribution, StandardNormal};
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                z * std
            })
            .collect();
        Tensor { shape: shape.to_vec(), data }
    }
}

/// out[m,n] += a[m,k] @ b[k,n]. Accumulating i-k-j kernel; `out` must be
/// zeroed by the caller when plain assignment is wanted.
pub fn matmul_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
}

/// out[m,n] += a[m,k] @ b[n,k]^T.
pub fn matmul_bt_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for p in 0..k {
                acc += arow[p] * brow[p];
            }
            orow[j] += acc;
        }
    }
}

/// out[k,n] += a[m,k]^T @ b[m,n].
pub fn matmul_at_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(out.len(), k * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_known_product() {
        // [[1,2],[3,4]] @ [[5,6],[7,8]] = [[19,22],[43,50]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut out = [0.0; 4];
        matmul_acc(&a, &b, 2, 2, 2, &mut out);
        assert_eq!(out, [19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn transposed_kernels_agree_with_plain() {
        let a = [1.0, -2.0, 0.5, 3.0, 4.0, -1.0]; // [2,3]
        let b = [2.0, 1.0, 0.0, -1.0, 1.5, 2.5]; // [3,2]
        let mut ab = [0.0; 4];
        matmul_acc(&a, &b, 2, 3, 2, &mut ab);

        // b^T is [2,3]; a @ (b^T)^T must equal a @ b.
        let bt = [2.0, 0.0, 1.5, 1.0, -1.0, 2.5];
        let mut ab2 = [0.0; 4];
        matmul_bt_acc(&a, &bt, 2, 3, 2, &mut ab2);
        assert_eq!(ab, ab2);

        // (a^T)^T @ b via matmul_at: at is [3,2] with at^T = a.
        let at = [1.0, 3.0, -2.0, 4.0, 0.5, -1.0];
        let mut ab3 = [0.0; 4];
        matmul_at_acc(&at, &b, 3, 2, 2, &mut ab3);
        assert_eq!(ab, ab3);
    }

    #[test]
    fn from_vec_rejects_bad_length() {
        assert!(Tensor::from_vec(&[2, 3], vec![0.0; 5]).is_err());
    }
}
