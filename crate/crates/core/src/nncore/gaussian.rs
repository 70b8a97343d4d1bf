use serde::{Deserialize, Serialize};

use super::rng::RngStream;
use crate::error::{shape_err, Result};

pub const LOG_VAR_MIN: f64 = -10.0;
pub const LOG_VAR_MAX: f64 = 10.0;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Diagonal Gaussian given by per-dimension mean and log-variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianHead {
    pub mean: Vec<f64>,
    pub log_var: Vec<f64>,
}

impl GaussianHead {
    /// Builds a head, clamping log-variances into `[-10, 10]`.
    pub fn new(mean: Vec<f64>, log_var: Vec<f64>) -> Result<Self> {
        if mean.len() != log_var.len() {
            return Err(shape_err(format!(
                "mean has {} dimensions, log-variance has {}",
                mean.len(),
                log_var.len()
            )));
        }
        let log_var = log_var.into_iter().map(clamp_log_var).collect();
        Ok(Self { mean, log_var })
    }

    pub fn standard(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            log_var: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

#[inline]
pub fn clamp_log_var(v: f64) -> f64 {
    v.clamp(LOG_VAR_MIN, LOG_VAR_MAX)
}

/// `KL(q ‖ p)` for diagonal Gaussians, summed over dimensions.
pub fn gaussian_kl(q: &GaussianHead, p: &GaussianHead) -> Result<f64> {
    if q.dim() != p.dim() {
        return Err(shape_err(format!(
            "KL between {}- and {}-dimensional Gaussians",
            q.dim(),
            p.dim()
        )));
    }
    Ok((0..q.dim())
        .map(|i| kl_term(q.mean[i], q.log_var[i], p.mean[i], p.log_var[i]))
        .sum())
}

#[inline]
pub(crate) fn kl_term(mq: f64, lq: f64, mp: f64, lp: f64) -> f64 {
    let d = mq - mp;
    0.5 * (lp - lq + ((lq - lp).exp() + d * d * (-lp).exp()) - 1.0)
}

pub fn gaussian_log_likelihood(x: &[f64], head: &GaussianHead) -> Result<f64> {
    if x.len() != head.dim() {
        return Err(shape_err(format!(
            "{} observations for a {}-dimensional Gaussian",
            x.len(),
            head.dim()
        )));
    }
    Ok(x
        .iter()
        .zip(&head.mean)
        .zip(&head.log_var)
        .map(|((&xi, &m), &lv)| log_density(xi, m, lv))
        .sum())
}

#[inline]
pub(crate) fn log_density(x: f64, mean: f64, log_var: f64) -> f64 {
    let d = x - mean;
    -0.5 * (LN_2PI + log_var + d * d * (-log_var).exp())
}

/// `mean + exp(log_var / 2) ⊙ ε` with `ε ~ N(0, I)` drawn from `rng`.
pub fn reparameterize(head: &GaussianHead, rng: &mut RngStream) -> Vec<f64> {
    head.mean
        .iter()
        .zip(&head.log_var)
        .map(|(&m, &lv)| m + (0.5 * lv).exp() * rng.standard_normal())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn head(m: f64, var: f64) -> GaussianHead {
        GaussianHead::new(vec![m], vec![var.ln()]).unwrap()
    }

    #[test]
    fn kl_closed_form_cases() {
        let q = head(0.3, 2.0);
        assert_eq!(gaussian_kl(&q, &q).unwrap(), 0.0);
        assert!((gaussian_kl(&head(1.0, 1.0), &head(0.0, 1.0)).unwrap() - 0.5).abs() < 1e-15);
        let expect = 0.5 * (4.0 - 4f64.ln() - 1.0);
        assert!((gaussian_kl(&head(0.0, 4.0), &head(0.0, 1.0)).unwrap() - expect).abs() < 1e-12);
        assert!((expect - 0.8069).abs() < 1e-4);
    }

    #[test]
    fn log_likelihood_at_mean_and_one_sigma() {
        let h = head(2.0, 1.0);
        let ll = gaussian_log_likelihood(&[2.0], &h).unwrap();
        assert!((ll + 0.918_938_533_204_672_7).abs() < 1e-15);
        let var: f64 = 3.0;
        let h = head(1.0, var);
        let ll = gaussian_log_likelihood(&[1.0 + var.sqrt()], &h).unwrap();
        let expect = -0.5 * (2.0 * std::f64::consts::PI * var).ln() - 0.5;
        assert!((ll - expect).abs() < 1e-12);
    }

    #[test]
    fn density_integrates_to_one() {
        // midpoint quadrature over ±12σ
        let h = head(0.7, 2.25);
        let (lo, hi, steps) = (0.7 - 18.0, 0.7 + 18.0, 200_000);
        let dx = (hi - lo) / steps as f64;
        let total: f64 = (0..steps)
            .map(|i| {
                let x = lo + (i as f64 + 0.5) * dx;
                gaussian_log_likelihood(&[x], &h).unwrap().exp() * dx
            })
            .sum();
        assert!((total - 1.0).abs() < 1e-9, "integral {total}");
    }

    #[test]
    fn clamped_log_var_sample_is_near_mean() {
        let h = GaussianHead::new(vec![1.5], vec![f64::NEG_INFINITY]).unwrap();
        assert_eq!(h.log_var[0], LOG_VAR_MIN);
        let s = reparameterize(&h, &mut RngStream::new(3));
        let eps = RngStream::new(3).standard_normal();
        // σ = exp(-5) ≈ 0.0067, so a unit ε moves the sample by less than 0.01
        assert!((s[0] - 1.5).abs() <= 0.01 * eps.abs().max(1.0));
    }

    #[test]
    fn reparameterize_is_deterministic_per_seed() {
        let h = GaussianHead::new(vec![0.0, 1.0], vec![0.5, -0.5]).unwrap();
        let a = reparameterize(&h, &mut RngStream::new(11));
        let b = reparameterize(&h, &mut RngStream::new(11));
        assert_eq!(a, b);
    }

    #[test]
    fn reparameterized_moments_match_head() {
        let (m, var) = (-0.4, 2.0);
        let h = head(m, var);
        let mut rng = RngStream::new(5);
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| reparameterize(&h, &mut rng)[0]).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let s2 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se_mean = (var / n as f64).sqrt();
        // Var(s²) = 2σ⁴/(n-1) for Gaussian data
        let se_var = (2.0 * var * var / (n - 1) as f64).sqrt();
        assert!((mean - m).abs() < 3.0 * se_mean);
        assert!((s2 - var).abs() < 3.0 * se_var);
    }

    #[test]
    fn mismatched_dimensions() {
        assert!(GaussianHead::new(vec![0.0], vec![]).is_err());
        assert!(gaussian_kl(&GaussianHead::standard(1), &GaussianHead::standard(2)).is_err());
        assert!(gaussian_log_likelihood(&[0.0, 1.0], &GaussianHead::standard(1)).is_err());
    }
}
