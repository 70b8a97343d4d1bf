//! Synthetic stand-ins for real tabular schemas, for exercising injection and
//! the full pipeline without bundled data.

use crate::dataset::{Dataset, DatasetMeta};
use crate::error::Result;
use crate::nncore::{RngStream, Tensor2};

/// Job-training schema: `E_1` treat, `E_2` age, `E_3` educ, `E_4` black,
/// `E_5` hispan, `E_6` married, `E_7` nodegree; proxies are 1974 and 1975
/// earnings; `Yobs` is `ln(1 + earnings78)`.
///
/// Rows mix a small trained sample with a large comparison sample, each with
/// its own demographic mix and earnings level, in the proportions of the
/// experimental-plus-survey construction (185 of 2675 trained). Earnings
/// share one latent capacity per unit, with a point mass at zero. Values are
/// raw (unstandardized).
pub fn jobs_schema(n: usize, seed: u64) -> Result<Dataset> {
    struct Sample {
        age: (f64, f64),
        educ: (f64, f64),
        black: f64,
        hispan: f64,
        married: f64,
        level: f64,
        zero74: f64,
        zero78: f64,
    }
    const TRAINED: Sample = Sample {
        age: (25.8, 7.2),
        educ: (10.3, 2.0),
        black: 0.84,
        hispan: 0.06,
        married: 0.19,
        level: -1.2,
        zero74: 0.71,
        zero78: 0.24,
    };
    const COMPARISON: Sample = Sample {
        age: (34.9, 10.4),
        educ: (12.1, 3.1),
        black: 0.25,
        hispan: 0.03,
        married: 0.87,
        level: 0.55,
        zero74: 0.09,
        zero78: 0.12,
    };

    let mut rng = RngStream::new(seed);
    let mut env = Tensor2::zeros(n, 7);
    let mut proxies = Tensor2::zeros(n, 2);
    let mut y_obs = Vec::with_capacity(n);

    let bern = |rng: &mut RngStream, p: f64| f64::from(u8::from(rng.uniform() < p));
    let earnings = |rng: &mut RngStream, zero: f64, capacity: f64, cap: f64| {
        if rng.uniform() < zero {
            0.0
        } else {
            (9.4 + capacity + 0.5 * rng.standard_normal()).exp().min(cap).round()
        }
    };

    for i in 0..n {
        let treat = bern(&mut rng, 185.0 / 2675.0);
        let s = if treat > 0.0 { &TRAINED } else { &COMPARISON };
        let age = (s.age.0 + s.age.1 * rng.standard_normal()).round().clamp(16.0, 55.0);
        let educ = (s.educ.0 + s.educ.1 * rng.standard_normal()).round().clamp(0.0, 18.0);
        let black = bern(&mut rng, s.black);
        let hispan = if black > 0.0 { 0.0 } else { bern(&mut rng, s.hispan / (1.0 - s.black)) };
        let married = bern(&mut rng, s.married);
        let nodegree = f64::from(u8::from(educ < 12.0));
        for (j, v) in [treat, age, educ, black, hispan, married, nodegree].into_iter().enumerate() {
            env.set(i, j, v);
        }

        let capacity = s.level + 0.08 * (educ - 12.0) + 0.03 * (age - 34.0) - 0.3 * black - 0.15 * hispan
            + 0.3 * married
            - 0.2 * nodegree
            + 0.5 * rng.standard_normal();
        proxies.set(i, 0, earnings(&mut rng, s.zero74, capacity, 35_040.0));
        proxies.set(i, 1, earnings(&mut rng, s.zero74, capacity, 25_142.0));
        let re78 = earnings(&mut rng, s.zero78, capacity + 0.2 * treat, 60_308.0);
        y_obs.push(re78.ln_1p());
    }

    Ok(Dataset {
        env,
        proxies,
        y_obs,
        z_true: None,
        a_true: None,
        y_true: None,
        group: None,
        meta: DatasetMeta {
            seed: Some(seed),
            source: "jobs_schema".into(),
            ..DatasetMeta::default()
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges_follow_the_schema() {
        let ds = jobs_schema(2000, 1).unwrap();
        ds.validate().unwrap();
        let col = |j: usize| ds.env.column(j);
        assert!(col(1).iter().all(|&a| (16.0..=55.0).contains(&a)));
        assert!(col(2).iter().all(|&e| (0.0..=18.0).contains(&e)));
        for j in [0, 3, 4, 5, 6] {
            assert!(col(j).iter().all(|&v| v == 0.0 || v == 1.0));
        }
        assert!(ds.proxies.column(0).iter().all(|&v| (0.0..=35_040.0).contains(&v)));
        assert!(ds.proxies.column(1).iter().all(|&v| (0.0..=25_142.0).contains(&v)));
        assert!(ds.y_obs.iter().all(|&y| (0.0..=11.01).contains(&y)));
        assert!(ds.y_obs.iter().any(|&y| y == 0.0));
    }

    #[test]
    fn same_seed_same_table() {
        assert_eq!(jobs_schema(50, 3).unwrap(), jobs_schema(50, 3).unwrap());
    }
}
