use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major tensor of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::ShapeMismatch(format!("shape {shape:?} needs {n} values, got {}", data.len())));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: vec![1, 1],
            data: vec![v],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::ShapeMismatch("ragged rows".into()));
        }
        Ok(Self {
            shape: vec![rows.len(), cols],
            data: rows.concat(),
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Leading extent of a 2-D tensor.
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Trailing extent of a 2-D tensor (1 for vectors).
    pub fn cols(&self) -> usize {
        if self.shape.len() >= 2 {
            self.shape[1..].iter().product()
        } else {
            1
        }
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

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn zeros_like(&self) -> Tensor {
        Tensor::zeros(&self.shape)
    }
}

/// `c[n×p] += a[n×k] · b[k×p]`.
pub(crate) fn matmul_acc(a: &[f64], b: &[f64], c: &mut [f64], n: usize, k: usize, p: usize) {
    for i in 0..n {
        let ci = &mut c[i * p..(i + 1) * p];
        for (l, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let bl = &b[l * p..(l + 1) * p];
            for (cv, bv) in ci.iter_mut().zip(bl) {
                *cv += av * bv;
            }
        }
    }
}

/// `c[n×k] += a[n×p] · b[k×p]ᵀ`.
pub(crate) fn matmul_nt_acc(a: &[f64], b: &[f64], c: &mut [f64], n: usize, p: usize, k: usize) {
    for i in 0..n {
        let ai = &a[i * p..(i + 1) * p];
        for l in 0..k {
            let bl = &b[l * p..(l + 1) * p];
            c[i * k + l] += ai.iter().zip(bl).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `c[k×p] += a[n×k]ᵀ · b[n×p]`.
pub(crate) fn matmul_tn_acc(a: &[f64], b: &[f64], c: &mut [f64], n: usize, k: usize, p: usize) {
    for i in 0..n {
        let bi = &b[i * p..(i + 1) * p];
        for (l, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let cl = &mut c[l * p..(l + 1) * p];
            for (cv, bv) in cl.iter_mut().zip(bi) {
                *cv += av * bv;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_checked() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert_eq!(Tensor::zeros(&[2, 3]).cols(), 3);
    }

    #[test]
    fn matmul_variants_agree() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2×3
        let b = [7.0, 8.0, 9.0, 10.0, 11.0, 12.0]; // 3×2
        let mut c = [0.0; 4];
        matmul_acc(&a, &b, &mut c, 2, 3, 2);
        assert_eq!(c, [58.0, 64.0, 139.0, 154.0]);

        let bt = [7.0, 9.0, 11.0, 8.0, 10.0, 12.0]; // bᵀ, 2×3
        let mut c2 = [0.0; 4];
        matmul_nt_acc(&a, &bt, &mut c2, 2, 3, 2);
        assert_eq!(c2, c);

        let at = [1.0, 4.0, 2.0, 5.0, 3.0, 6.0]; // aᵀ, 3×2
        let mut c3 = [0.0; 4];
        matmul_tn_acc(&at, &b, &mut c3, 3, 2, 2);
        assert_eq!(c3, c);
    }
}
