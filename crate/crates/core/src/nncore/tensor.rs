use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor2 {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor2 {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(shape_err(format!(
                "buffer of length {} cannot hold a {rows}x{cols} tensor",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite entry at row {}, column {}",
                pos / cols.max(1),
                pos % cols.max(1)
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(shape_err(format!(
                    "row {i} has {} entries, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Self::from_vec(rows.len(), cols, data)
    }

    /// Single-column tensor.
    pub fn column_vector(values: &[f64]) -> Result<Self> {
        Self::from_vec(values.len(), 1, values.to_vec())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
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

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Gathers the given rows, in order, into a new tensor.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    /// Column range `[start, end)` as a new tensor.
    pub fn slice_cols(&self, start: usize, end: usize) -> Self {
        let cols = end - start;
        let mut data = Vec::with_capacity(self.rows * cols);
        for r in 0..self.rows {
            data.extend_from_slice(&self.row(r)[start..end]);
        }
        Self {
            rows: self.rows,
            cols,
            data,
        }
    }

    /// Horizontal concatenation.
    pub fn hcat(parts: &[&Tensor2]) -> Result<Self> {
        let rows = parts.first().map_or(0, |t| t.rows);
        if let Some(bad) = parts.iter().find(|t| t.rows != rows) {
            return Err(shape_err(format!(
                "cannot concatenate tensors with {} and {rows} rows",
                bad.rows
            )));
        }
        let cols = parts.iter().map(|t| t.cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for t in parts {
                data.extend_from_slice(t.row(r));
            }
        }
        Ok(Self { rows, cols, data })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Tensor2) -> Result<Self> {
        if self.cols != other.rows {
            return Err(shape_err(format!(
                "matmul of {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Tensor2::zeros(self.rows, other.cols);
        matmul_into(self, other, &mut out);
        Ok(out)
    }

    pub fn transpose(&self) -> Self {
        let mut out = Tensor2::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }
}

/// `out = a · b`; shapes are the caller's responsibility.
pub(crate) fn matmul_into(a: &Tensor2, b: &Tensor2, out: &mut Tensor2) {
    let n = b.cols;
    out.data.fill(0.0);
    for r in 0..a.rows {
        let arow = &a.data[r * a.cols..(r + 1) * a.cols];
        let orow = &mut out.data[r * n..(r + 1) * n];
        for (k, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b.data[k * n..(k + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out += aᵀ · b` where `a` is (batch × p) and `b` is (batch × q).
pub(crate) fn matmul_tn_acc(a: &Tensor2, b: &Tensor2, out: &mut Tensor2) {
    let q = b.cols;
    for r in 0..a.rows {
        let arow = &a.data[r * a.cols..(r + 1) * a.cols];
        let brow = &b.data[r * q..(r + 1) * q];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out.data[p * q..(p + 1) * q];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out = a · bᵀ` where `a` is (batch × q) and `b` is (p × q).
pub(crate) fn matmul_nt_into(a: &Tensor2, b: &Tensor2, out: &mut Tensor2) {
    let p = b.rows;
    for r in 0..a.rows {
        let arow = &a.data[r * a.cols..(r + 1) * a.cols];
        for j in 0..p {
            let brow = &b.data[j * b.cols..(j + 1) * b.cols];
            out.data[r * p + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_buffer_length() {
        assert!(matches!(
            Tensor2::from_vec(2, 2, vec![1.0; 3]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn rejects_non_finite() {
        assert!(matches!(
            Tensor2::from_vec(1, 2, vec![1.0, f64::NAN]),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn matmul_variants_agree() {
        let a = Tensor2::from_rows(&[vec![1.0, 2.0], vec![3.0, -1.0], vec![0.5, 4.0]]).unwrap();
        let b = Tensor2::from_rows(&[vec![2.0, 0.0, 1.0], vec![-1.0, 3.0, 2.0]]).unwrap();
        let ab = a.matmul(&b).unwrap();
        assert_eq!(ab.row(0), &[0.0, 6.0, 5.0]);

        let mut nt = Tensor2::zeros(3, 3);
        matmul_nt_into(&a, &b.transpose(), &mut nt);
        assert_eq!(nt, ab);

        let mut tn = Tensor2::zeros(2, 3);
        matmul_tn_acc(&a, &ab, &mut tn);
        assert_eq!(tn, a.transpose().matmul(&ab).unwrap());
    }

    #[test]
    fn hcat_and_slice() {
        let a = Tensor2::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        let b = Tensor2::from_rows(&[vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        let c = Tensor2::hcat(&[&a, &b]).unwrap();
        assert_eq!(c.row(1), &[2.0, 5.0, 6.0]);
        assert_eq!(c.slice_cols(1, 3), b);
        assert_eq!(c.select_rows(&[1, 1]).row(0), &[2.0, 5.0, 6.0]);
    }
}
