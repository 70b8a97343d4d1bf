//! Descriptive statistics and ordinary least squares.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::nncore::Tensor2;

/// Ridge penalty used when the normal equations are singular.
pub const RIDGE_FALLBACK: f64 = 1e-6;

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n − 1 denominator); 0 for fewer than two values.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Population standard deviation (n denominator).
pub fn pop_std(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Linear-interpolation quantile of already sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    let h = (n - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn sorted(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (mean(x), mean(y));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

/// Average ranks (ties share the mean rank).
pub fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    pearson(&ranks(x), &ranks(y))
}

/// Least-squares fit of `y` on the columns of a design (with intercept).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlsFit {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub r2: f64,
    /// True when the normal equations were singular and a ridge penalty of
    /// [`RIDGE_FALLBACK`] was added.
    pub ridge_fallback: bool,
}

impl OlsFit {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.intercept
            + row
                .iter()
                .zip(&self.coefficients)
                .map(|(x, b)| x * b)
                .sum::<f64>()
    }

    pub fn predict(&self, x: &Tensor2) -> Vec<f64> {
        (0..x.rows()).map(|r| self.predict_row(x.row(r))).collect()
    }
}

/// OLS of `y` on `x` plus an intercept, by Cholesky on the normal equations.
pub fn ols(x: &Tensor2, y: &[f64]) -> Result<OlsFit> {
    if x.rows() != y.len() {
        return Err(shape_err(format!(
            "design has {} rows, response has {}",
            x.rows(),
            y.len()
        )));
    }
    let n = x.rows();
    let p = x.cols() + 1;
    if n == 0 {
        return Err(Error::Data("cannot regress on an empty sample".into()));
    }
    let design = DMatrix::from_fn(n, p, |r, c| if c == 0 { 1.0 } else { x.get(r, c - 1) });
    let yv = DVector::from_column_slice(y);
    let xtx = design.tr_mul(&design);
    let xty = design.tr_mul(&yv);

    let (beta, ridge_fallback) = match solve_spd(&xtx, &xty) {
        Some(b) => (b, false),
        None => {
            let mut reg = xtx.clone();
            for i in 1..p {
                reg[(i, i)] += RIDGE_FALLBACK * n as f64;
            }
            let b = solve_spd(&reg, &xty).ok_or_else(|| {
                Error::Data("normal equations singular even after ridge fallback".into())
            })?;
            (b, true)
        }
    };

    let fit = OlsFit {
        intercept: beta[0],
        coefficients: beta.iter().skip(1).copied().collect(),
        r2: 0.0,
        ridge_fallback,
    };
    let pred = fit.predict(x);
    Ok(OlsFit {
        r2: r_squared(y, &pred),
        ..fit
    })
}

fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let chol = a.clone().cholesky()?;
    // reject numerically singular systems that Cholesky happens to accept
    let diag_max = (0..a.nrows()).map(|i| a[(i, i)]).fold(0.0f64, f64::max);
    let l = chol.l();
    let piv_min = (0..a.nrows()).map(|i| l[(i, i)] * l[(i, i)]).fold(f64::INFINITY, f64::min);
    if !(piv_min > 1e-12 * diag_max.max(1e-300)) {
        return None;
    }
    Some(chol.solve(b))
}

/// `1 − SSE/SST`; 1 when the response is constant and perfectly predicted.
pub fn r_squared(y: &[f64], pred: &[f64]) -> f64 {
    let m = mean(y);
    let sse: f64 = y.iter().zip(pred).map(|(a, b)| (a - b).powi(2)).sum();
    let sst: f64 = y.iter().map(|a| (a - m).powi(2)).sum();
    if sst == 0.0 {
        return if sse == 0.0 { 1.0 } else { f64::NEG_INFINITY };
    }
    1.0 - sse / sst
}

/// Summary row of a distribution table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub name: String,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
}

pub fn moments(name: &str, xs: &[f64]) -> Moments {
    let s = sorted(xs);
    Moments {
        name: name.to_string(),
        mean: mean(xs),
        std: std_dev(xs),
        min: s.first().copied().unwrap_or(f64::NAN),
        q25: quantile_sorted(&s, 0.25),
        median: quantile_sorted(&s, 0.5),
        q75: quantile_sorted(&s, 0.75),
        max: s.last().copied().unwrap_or(f64::NAN),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ols_recovers_exact_line() {
        let x = Tensor2::from_rows(&[vec![0.0], vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        let y = [1.0, 3.0, 5.0, 7.0];
        let fit = ols(&x, &y).unwrap();
        assert!((fit.intercept - 1.0).abs() < 1e-12);
        assert!((fit.coefficients[0] - 2.0).abs() < 1e-12);
        assert!((fit.r2 - 1.0).abs() < 1e-12);
        assert!(!fit.ridge_fallback);
    }

    #[test]
    fn collinear_design_falls_back_to_ridge() {
        let x = Tensor2::from_rows(&[
            vec![1.0, 2.0],
            vec![2.0, 4.0],
            vec![3.0, 6.0],
            vec![4.0, 8.0],
        ])
        .unwrap();
        let fit = ols(&x, &[1.0, 2.0, 3.0, 4.5]).unwrap();
        assert!(fit.ridge_fallback);
        assert!(fit.r2 > 0.95);
    }

    #[test]
    fn quantiles_interpolate() {
        let s = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile_sorted(&s, 0.5), 3.0);
        assert_eq!(quantile_sorted(&s, 0.125), 1.5);
        assert_eq!(quantile_sorted(&s, 1.0), 5.0);
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }
}
