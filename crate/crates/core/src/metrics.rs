//! Latent-recovery scores and reconstruction error.

use crate::error::{Error, Result};
use crate::nncore::Tensor2;
use crate::stats;

/// Minimum-cost perfect matching on a square cost matrix (Hungarian method
/// with potentials, O(n³)). Returns `assign[row] = column`.
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    // 1-based arrays; p[col] is the row matched to col
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; n];
    for j in 1..=n {
        assign[p[j] - 1] = j - 1;
    }
    assign
}

fn check_pair(z_hat: &Tensor2, z_true: &Tensor2) -> Result<()> {
    if z_hat.shape() != z_true.shape() {
        return Err(Error::Shape(format!(
            "recovered latent is {:?}, reference is {:?}",
            z_hat.shape(),
            z_true.shape()
        )));
    }
    if z_hat.cols() == 0 || z_hat.rows() < 2 {
        return Err(Error::Shape("latent comparison needs at least one column and two rows".into()));
    }
    Ok(())
}

/// `r2[j][k]`: R² of the simple regression of true column `j` on recovered
/// column `k`.
pub fn pairwise_r2(z_hat: &Tensor2, z_true: &Tensor2) -> Result<Vec<Vec<f64>>> {
    check_pair(z_hat, z_true)?;
    let hat: Vec<Vec<f64>> = (0..z_hat.cols()).map(|k| z_hat.column(k)).collect();
    Ok((0..z_true.cols())
        .map(|j| {
            let t = z_true.column(j);
            hat.iter().map(|h| stats::pearson(h, &t).powi(2)).collect()
        })
        .collect())
}

/// Best average per-dimension R² over one-to-one assignments of recovered to
/// true dimensions. `perm[j]` is the recovered column paired with true `j`.
pub fn permuted_r2(z_hat: &Tensor2, z_true: &Tensor2) -> Result<(f64, Vec<usize>)> {
    let r2 = pairwise_r2(z_hat, z_true)?;
    let cost: Vec<Vec<f64>> = r2.iter().map(|row| row.iter().map(|v| -v).collect()).collect();
    let perm = hungarian(&cost);
    let score = perm.iter().enumerate().map(|(j, &k)| r2[j][k]).sum::<f64>() / perm.len() as f64;
    Ok((score, perm))
}

/// Mean absolute error after permutation alignment and per-dimension affine
/// rescaling of the recovered latent onto the reference.
///
/// Each recovered column is regressed on its paired true column,
/// `ẑ ≈ c + b·z`, and mapped back as `(ẑ − c)/b`. Inverting this regression
/// (rather than regressing `z` on `ẑ`) removes scale and offset without
/// shrinking noisy recoveries toward the mean.
pub fn latent_mae(z_hat: &Tensor2, z_true: &Tensor2) -> Result<f64> {
    let (_, perm) = permuted_r2(z_hat, z_true)?;
    let mut total = 0.0;
    for (j, &k) in perm.iter().enumerate() {
        let truth = z_true.column(j);
        let rec = z_hat.column(k);
        let fit = stats::ols(&Tensor2::column_vector(&truth)?, &rec)?;
        let b = fit.coefficients[0];
        let fallback = stats::mean(&truth);
        for (r, t) in rec.iter().zip(&truth) {
            let aligned = if b.abs() > 1e-12 { (r - fit.intercept) / b } else { fallback };
            total += (aligned - t).abs();
        }
    }
    Ok(total / (z_true.rows() * z_true.cols()) as f64)
}

pub fn rmse(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::Shape(format!("{} predictions for {} targets", pred.len(), target.len())));
    }
    if pred.is_empty() {
        return Err(Error::Shape("rmse of an empty set".into()));
    }
    let ss: f64 = pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((ss / pred.len() as f64).sqrt())
}

pub fn rmse_tensor(pred: &Tensor2, target: &Tensor2) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::Shape(format!("{:?} vs {:?}", pred.shape(), target.shape())));
    }
    rmse(pred.data(), target.data())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::RngStream;
    use proptest::prelude::*;

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, n - 1);
                out.push(q);
            }
        }
        out
    }

    fn random(n: usize, d: usize, seed: u64) -> Tensor2 {
        Tensor2::from_vec(n, d, RngStream::new(seed).normal_vec(n * d)).unwrap()
    }

    #[test]
    fn identity_scores_one() {
        let z = random(200, 3, 1);
        let (s, p) = permuted_r2(&z, &z).unwrap();
        assert!((s - 1.0).abs() < 1e-9);
        assert_eq!(p, vec![0, 1, 2]);
        assert!(latent_mae(&z, &z).unwrap() < 1e-12);
        let shifted = z.map(|v| 2.0 * v + 1.0);
        assert!(latent_mae(&shifted, &z).unwrap() < 1e-12);
    }

    #[test]
    fn permuted_affine_columns_score_one() {
        let z = random(300, 4, 2);
        let order = [2, 0, 3, 1];
        let mut zh = Tensor2::zeros(300, 4);
        for i in 0..300 {
            for (k, &src) in order.iter().enumerate() {
                zh.set(i, k, -3.0 * z.get(i, src) + 1.5);
            }
        }
        let (s, p) = permuted_r2(&zh, &z).unwrap();
        assert!((s - 1.0).abs() < 1e-9);
        for (j, &k) in p.iter().enumerate() {
            assert_eq!(order[k], j);
        }
        assert!(latent_mae(&zh, &z).unwrap() < 1e-9);
    }

    #[test]
    fn independent_noise_scores_near_zero() {
        let (s, _) = permuted_r2(&random(10_000, 3, 3), &random(10_000, 3, 4)).unwrap();
        assert!(s <= 0.05, "{s}");
    }

    #[test]
    fn mae_of_half_unit_noise_is_half_root_two_over_pi() {
        let n = 100_000;
        let z = random(n, 1, 5);
        let noise = random(n, 1, 6);
        let zh = Tensor2::from_vec(n, 1, z.data().iter().zip(noise.data()).map(|(a, b)| a + 0.5 * b).collect())
            .unwrap();
        // E|N(0, σ²)| = σ·√(2/π)
        let expected = 0.5 * (2.0 / std::f64::consts::PI).sqrt();
        let got = latent_mae(&zh, &z).unwrap();
        assert!((got - expected).abs() / expected < 0.02, "{got} vs {expected}");
    }

    #[test]
    fn mismatched_shapes_are_errors() {
        assert!(permuted_r2(&random(10, 2, 1), &random(10, 3, 1)).is_err());
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn rmse_cases() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((rmse(&[3.5, 0.5], &[1.0, -2.0]).unwrap() - 2.5).abs() < 1e-15);
        let mut rng = RngStream::new(3);
        let a = rng.normal_vec(57);
        let b = rng.normal_vec(57);
        let mut acc = 0.0;
        for i in 0..57 {
            acc += (a[i] - b[i]).powi(2);
        }
        assert!((rmse(&a, &b).unwrap() - (acc / 57.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn wide_latents_stay_exact() {
        let z = random(400, 14, 7);
        let mut zh = Tensor2::zeros(400, 14);
        for i in 0..400 {
            for k in 0..14 {
                zh.set(i, k, z.get(i, 13 - k) * 0.5);
            }
        }
        let (s, p) = permuted_r2(&zh, &z).unwrap();
        assert!((s - 1.0).abs() < 1e-9);
        assert_eq!(p, (0..14).rev().collect::<Vec<_>>());
    }

    proptest! {
        #[test]
        fn hungarian_matches_brute_force(n in 1usize..7, seed in 0u64..5000) {
            let mut rng = RngStream::new(seed);
            let cost: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.uniform()).collect()).collect();
            let assign = hungarian(&cost);
            let total = |p: &[usize]| p.iter().enumerate().map(|(i, &j)| cost[i][j]).sum::<f64>();
            let best = permutations(n).iter().map(|p| total(p)).fold(f64::INFINITY, f64::min);
            prop_assert!((total(&assign) - best).abs() < 1e-12);
            let mut seen = assign.clone();
            seen.sort_unstable();
            prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
        }

        #[test]
        fn permuted_r2_dominates_fixed_assignments(seed in 0u64..5000) {
            let z = random(50, 3, seed);
            let zh = random(50, 3, seed + 1);
            let (s, _) = permuted_r2(&zh, &z).unwrap();
            let r2 = pairwise_r2(&zh, &z).unwrap();
            for p in permutations(3) {
                let fixed = p.iter().enumerate().map(|(j, &k)| r2[j][k]).sum::<f64>() / 3.0;
                prop_assert!(s >= fixed - 1e-12);
            }
            prop_assert!(s <= 1.0 + 1e-12);
        }
    }
}
