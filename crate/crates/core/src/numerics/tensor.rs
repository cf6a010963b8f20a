use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::RngState;

/// Dense row-major tensor of `f64`.
///
/// Almost everything in the crate is rank 2 (`[rows × cols]`); the matrix
/// helpers below return `Error::Shape` when handed anything else.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::shape(format!("row {i} has {} entries, expected {cols}", r.len())));
            }
            data.extend_from_slice(r);
        }
        Self::matrix(rows.len(), cols, data)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn randn(rows: usize, cols: usize, std: f64, rng: &mut RngState) -> Self {
        let data = (0..rows * cols).map(|_| std * rng.normal()).collect();
        Self {
            shape: vec![rows, cols],
            data,
        }
    }

    /// Matrix with orthonormal rows (or columns, whichever is shorter),
    /// from Gram-Schmidt on a Gaussian draw.
    pub fn random_orthogonal(rows: usize, cols: usize, rng: &mut RngState) -> Self {
        let tall = rows > cols;
        let (n, m) = if tall { (cols, rows) } else { (rows, cols) };
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n);
        while basis.len() < n {
            let mut v: Vec<f64> = (0..m).map(|_| rng.normal()).collect();
            for b in &basis {
                let d = dot(&v, b);
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
            }
            let norm = dot(&v, &v).sqrt();
            if norm > 1e-8 {
                v.iter_mut().for_each(|x| *x /= norm);
                basis.push(v);
            }
        }
        let flat: Vec<f64> = basis.into_iter().flatten().collect();
        let t = Self {
            shape: vec![n, m],
            data: flat,
        };
        if tall {
            t.transpose()
        } else {
            t
        }
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
            1
        } else {
            self.shape[1..].iter().product()
        }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        let cols = self.cols();
        self.data[r * cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[r * c..(r + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    fn require_matrix(&self, what: &str) -> Result<()> {
        if self.shape.len() != 2 {
            return Err(Error::shape(format!("{what}: expected a matrix, got shape {:?}", self.shape)));
        }
        Ok(())
    }

    pub fn transpose(&self) -> Self {
        let (r, c) = (self.rows(), self.cols());
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Self {
            shape: vec![c, r],
            data: out,
        }
    }

    /// `self · other`
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        self.require_matrix("matmul")?;
        other.require_matrix("matmul")?;
        let (n, k) = (self.rows(), self.cols());
        let (k2, m) = (other.rows(), other.cols());
        if k != k2 {
            return Err(Error::shape(format!("matmul {n}x{k} by {k2}x{m}")));
        }
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let orow = &mut out[i * m..(i + 1) * m];
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let brow = &other.data[p * m..(p + 1) * m];
                orow.iter_mut().zip(brow).for_each(|(o, b)| *o += a * b);
            }
        }
        Tensor::matrix(n, m, out)
    }

    /// `self · otherᵀ`; the usual shape for `x Wᵀ` with weights stored `[out × in]`.
    pub fn matmul_t(&self, other: &Tensor) -> Result<Tensor> {
        self.require_matrix("matmul_t")?;
        other.require_matrix("matmul_t")?;
        let (n, k) = (self.rows(), self.cols());
        let (m, k2) = (other.rows(), other.cols());
        if k != k2 {
            return Err(Error::shape(format!("matmul_t {n}x{k} by ({m}x{k2})ᵀ")));
        }
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let a = &self.data[i * k..(i + 1) * k];
            for j in 0..m {
                out[i * m + j] = dot(a, &other.data[j * k..(j + 1) * k]);
            }
        }
        Tensor::matrix(n, m, out)
    }

    /// `selfᵀ · other`
    pub fn t_matmul(&self, other: &Tensor) -> Result<Tensor> {
        self.require_matrix("t_matmul")?;
        other.require_matrix("t_matmul")?;
        let (k, n) = (self.rows(), self.cols());
        let (k2, m) = (other.rows(), other.cols());
        if k != k2 {
            return Err(Error::shape(format!("t_matmul ({k}x{n})ᵀ by {k2}x{m}")));
        }
        let mut out = vec![0.0; n * m];
        for p in 0..k {
            let arow = &self.data[p * n..(p + 1) * n];
            let brow = &other.data[p * m..(p + 1) * m];
            for (i, &a) in arow.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                out[i * m..(i + 1) * m]
                    .iter_mut()
                    .zip(brow)
                    .for_each(|(o, b)| *o += a * b);
            }
        }
        Tensor::matrix(n, m, out)
    }

    fn zip_with(&self, other: &Tensor, op: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::shape(format!("{op}: {:?} vs {:?}", self.shape, other.shape)));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(a, b)| f(*a, *b)).collect(),
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(format!("add_assign: {:?} vs {:?}", self.shape, other.shape)));
        }
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b);
        Ok(())
    }

    /// `self += alpha · other`
    pub fn axpy(&mut self, alpha: f64, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(format!("axpy: {:?} vs {:?}", self.shape, other.shape)));
        }
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += alpha * b);
        Ok(())
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|x| x * s)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff on different shapes");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(&self, start: usize, end: usize) -> Tensor {
        let c = self.cols();
        let mut shape = self.shape.clone();
        shape[0] = end - start;
        Tensor {
            shape,
            data: self.data[start * c..end * c].to_vec(),
        }
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&self, start: usize, end: usize) -> Tensor {
        let (r, c) = (self.rows(), self.cols());
        let w = end - start;
        let mut data = Vec::with_capacity(r * w);
        for i in 0..r {
            data.extend_from_slice(&self.data[i * c + start..i * c + end]);
        }
        Tensor {
            shape: vec![r, w],
            data,
        }
    }

    pub fn write_cols(&mut self, start: usize, block: &Tensor) {
        let c = self.cols();
        let w = block.cols();
        for i in 0..block.rows() {
            self.data[i * c + start..i * c + start + w].copy_from_slice(block.row(i));
        }
    }

    pub fn concat_rows(parts: &[&Tensor]) -> Result<Tensor> {
        let Some(first) = parts.first() else {
            return Err(Error::shape("concat_rows of nothing"));
        };
        let c = first.cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            if p.cols() != c {
                return Err(Error::shape(format!("concat_rows: {} vs {} columns", p.cols(), c)));
            }
            rows += p.rows();
            data.extend_from_slice(&p.data);
        }
        let mut shape = first.shape.clone();
        if shape.is_empty() {
            shape = vec![rows, 1];
        } else {
            shape[0] = rows;
        }
        Tensor::new(shape, data)
    }

    /// Reinterpret with a new shape of the same element count.
    pub fn reshape(self, shape: Vec<usize>) -> Result<Tensor> {
        Tensor::new(shape, self.data)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_variants_agree() {
        let mut rng = RngState::new(3);
        let a = Tensor::randn(4, 3, 1.0, &mut rng);
        let b = Tensor::randn(3, 5, 1.0, &mut rng);
        let ab = a.matmul(&b).unwrap();
        let ab2 = a.matmul_t(&b.transpose()).unwrap();
        let ab3 = a.transpose().t_matmul(&b).unwrap();
        assert!(ab.max_abs_diff(&ab2) < 1e-14);
        assert!(ab.max_abs_diff(&ab3) < 1e-14);
    }

    #[test]
    fn shape_errors() {
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
        let a = Tensor::zeros(&[2, 3]);
        assert!(a.matmul(&a).is_err());
        assert!(a.add(&Tensor::zeros(&[3, 2])).is_err());
    }

    #[test]
    fn orthogonal_init_has_orthonormal_rows() {
        let mut rng = RngState::new(9);
        let q = Tensor::random_orthogonal(4, 8, &mut rng);
        let g = q.matmul_t(&q).unwrap();
        assert!(g.max_abs_diff(&Tensor::identity(4)) < 1e-12);
        let tall = Tensor::random_orthogonal(8, 4, &mut rng);
        let g = tall.t_matmul(&tall).unwrap();
        assert!(g.max_abs_diff(&Tensor::identity(4)) < 1e-12);
    }

    #[test]
    fn column_slices_round_trip() {
        let mut rng = RngState::new(1);
        let a = Tensor::randn(3, 6, 1.0, &mut rng);
        let mut b = Tensor::zeros(&[3, 6]);
        b.write_cols(0, &a.slice_cols(0, 2));
        b.write_cols(2, &a.slice_cols(2, 6));
        assert_eq!(a, b);
    }
}
