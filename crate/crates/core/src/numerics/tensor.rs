use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Row-major dense tensor of `f64`.
///
/// Most of the model works on matrices, so the 2-D accessors treat the first
/// axis as rows and flatten the remaining axes into columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape("from_vec", shape, &[data.len()]));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Builds a matrix from nested rows. Panics on ragged input.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Tensor {
            shape: vec![r, c],
            data,
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let mut t = Tensor::zeros(shape);
        t.data.iter_mut().for_each(|x| *x = value);
        t
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    pub fn cols(&self) -> usize {
        if self.shape.len() < 2 {
            return 1;
        }
        self.shape[1..].iter().product()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let c = self.cols();
        self.data[i * c + j] = v;
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::shape("reshape", &self.shape, shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn zeros_like(&self) -> Self {
        Tensor::zeros(&self.shape)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn transpose(&self) -> Tensor {
        let (r, c) = (self.rows(), self.cols());
        let mut out = Tensor::zeros(&[c, r]);
        for i in 0..r {
            for j in 0..c {
                out.data[j * r + i] = self.data[i * c + j];
            }
        }
        out
    }

    /// `self · other` for 2-D operands.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (n, a) = (self.rows(), self.cols());
        let (a2, b) = (other.rows(), other.cols());
        if a != a2 {
            return Err(Error::shape("matmul", &self.shape, &other.shape));
        }
        let mut out = Tensor::zeros(&[n, b]);
        for i in 0..n {
            let xi = &self.data[i * a..(i + 1) * a];
            let yi = &mut out.data[i * b..(i + 1) * b];
            for (k, &x) in xi.iter().enumerate() {
                if x == 0.0 {
                    continue;
                }
                let wk = &other.data[k * b..(k + 1) * b];
                for (y, &w) in yi.iter_mut().zip(wk) {
                    *y += x * w;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · other` without materializing the transpose.
    pub fn t_matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (n, a) = (self.rows(), self.cols());
        let (n2, b) = (other.rows(), other.cols());
        if n != n2 {
            return Err(Error::shape("t_matmul", &self.shape, &other.shape));
        }
        let mut out = Tensor::zeros(&[a, b]);
        for r in 0..n {
            let xr = &self.data[r * a..(r + 1) * a];
            let yr = &other.data[r * b..(r + 1) * b];
            for (i, &x) in xr.iter().enumerate() {
                if x == 0.0 {
                    continue;
                }
                let oi = &mut out.data[i * b..(i + 1) * b];
                for (o, &y) in oi.iter_mut().zip(yr) {
                    *o += x * y;
                }
            }
        }
        Ok(out)
    }

    /// `self · otherᵀ` without materializing the transpose.
    pub fn matmul_t(&self, other: &Tensor) -> Result<Tensor> {
        let (n, a) = (self.rows(), self.cols());
        let (b, a2) = (other.rows(), other.cols());
        if a != a2 {
            return Err(Error::shape("matmul_t", &self.shape, &other.shape));
        }
        let mut out = Tensor::zeros(&[n, b]);
        for i in 0..n {
            let xi = &self.data[i * a..(i + 1) * a];
            for j in 0..b {
                let wj = &other.data[j * a..(j + 1) * a];
                out.data[i * b + j] = xi.iter().zip(wj).map(|(x, w)| x * w).sum();
            }
        }
        Ok(out)
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        let mut out = self.clone();
        out.add_assign(other)?;
        Ok(out)
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape("add", &self.shape, &other.shape));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn hadamard(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::shape("hadamard", &self.shape, &other.shape));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(a, b)| a * b).collect(),
        })
    }

    /// Columns `[start, end)` of a matrix.
    pub fn col_slice(&self, start: usize, end: usize) -> Tensor {
        let (r, c) = (self.rows(), self.cols());
        let w = end - start;
        let mut out = Tensor::zeros(&[r, w]);
        for i in 0..r {
            out.data[i * w..(i + 1) * w].copy_from_slice(&self.data[i * c + start..i * c + end]);
        }
        out
    }

    /// Writes `block` into columns starting at `start`.
    pub fn set_cols(&mut self, start: usize, block: &Tensor) {
        let (r, c) = (self.rows(), self.cols());
        let w = block.cols();
        debug_assert_eq!(block.rows(), r);
        for i in 0..r {
            self.data[i * c + start..i * c + start + w].copy_from_slice(block.row(i));
        }
    }

    /// Column sums of a matrix as a `1×cols` tensor.
    pub fn sum_rows(&self) -> Tensor {
        let c = self.cols();
        let mut out = Tensor::zeros(&[1, c]);
        for i in 0..self.rows() {
            for (o, x) in out.data.iter_mut().zip(self.row(i)) {
                *o += x;
            }
        }
        out
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transposed_products_agree_with_explicit_transpose() {
        let a = Tensor::from_rows(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]);
        let b = Tensor::from_rows(&[&[0.5, -1.0], &[2.0, 0.25]]);
        let lhs = a.t_matmul(&b).unwrap();
        let rhs = a.transpose().matmul(&b).unwrap();
        assert_eq!(lhs, rhs);
        let c = Tensor::from_rows(&[&[1.0, 0.0, -1.0], &[2.0, 2.0, 2.0]]);
        assert_eq!(a.matmul_t(&c).unwrap(), a.matmul(&c.transpose()).unwrap());
    }

    #[test]
    fn from_vec_rejects_wrong_length() {
        assert!(Tensor::from_vec(&[2, 3], alloc::vec![0.0; 5]).is_err());
    }

    #[test]
    fn column_slices_round_trip() {
        let a = Tensor::from_rows(&[&[1.0, 2.0, 3.0, 4.0], &[5.0, 6.0, 7.0, 8.0]]);
        let mut b = Tensor::zeros(&[2, 4]);
        b.set_cols(0, &a.col_slice(0, 2));
        b.set_cols(2, &a.col_slice(2, 4));
        assert_eq!(a, b);
    }
}
