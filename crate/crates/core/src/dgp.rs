//! Linear-Gaussian synthetic benchmark with a known additive reporting bias.
//!
//! ```text
//! e ~ N(0, I)          z = W_zᵀ e + ε_z        A = 1{σ(w_aᵀ e + ε_a) > ½}
//! Y_true = w_yᵀ z + ε_y    Y_obs = Y_true + α A + ε_obs    Y_proxy_k = c_k Y_true + ε_proxy_k
//! ```
//!
//! Structural draws (`e`, `ε_z`, `ε_a`, `ε_y`) and measurement draws
//! (`ε_obs`, `ε_proxy`) come from separate streams, so changing the
//! measurement noise model or α leaves `(e, z, A, Y_true)` untouched.

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, DatasetMeta};
use crate::error::{Error, Result};
use crate::nncore::{RngStream, Tensor2};
use crate::stats::{self, Moments};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseModel {
    Gaussian,
    PoissonScaled,
}

/// Poisson rate behind [`NoiseModel::PoissonScaled`].
pub const POISSON_RATE: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpConfig {
    pub n: usize,
    pub d_e: usize,
    pub d_z: usize,
    pub m: usize,
    pub alpha: f64,
    pub noise_model: NoiseModel,
    pub sigma_z: f64,
    pub sigma_y: f64,
    pub sigma_obs: f64,
    pub sigma_proxy: f64,
    pub sigma_a: f64,
    pub seed: u64,
}

impl DgpConfig {
    /// Default noise scales and three proxies.
    pub fn new(n: usize, d_e: usize, d_z: usize, alpha: f64, seed: u64) -> Self {
        Self {
            n,
            d_e,
            d_z,
            m: 3,
            alpha,
            noise_model: NoiseModel::Gaussian,
            sigma_z: 1.0,
            sigma_y: 0.5,
            sigma_obs: 0.1,
            sigma_proxy: 0.1,
            sigma_a: 1.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 10 {
            return Err(Error::Parameter(format!("n must be at least 10, got {}", self.n)));
        }
        if self.d_e == 0 || self.d_z == 0 || self.m == 0 {
            return Err(Error::Parameter("d_e, d_z and m must all be positive".into()));
        }
        let sigmas = [
            ("sigma_z", self.sigma_z),
            ("sigma_y", self.sigma_y),
            ("sigma_obs", self.sigma_obs),
            ("sigma_proxy", self.sigma_proxy),
            ("sigma_a", self.sigma_a),
        ];
        // zero is accepted as the noiseless limit
        if let Some((name, v)) = sigmas.iter().find(|(_, v)| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Parameter(format!("{name} must be a non-negative finite scale, got {v}")));
        }
        if !self.alpha.is_finite() {
            return Err(Error::Parameter("alpha must be finite".into()));
        }
        Ok(())
    }
}

/// Linear coefficients of the generating process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpWeights {
    /// `d_e × d_z`.
    pub w_z: Tensor2,
    pub w_a: Vec<f64>,
    pub w_y: Vec<f64>,
    pub c: Vec<f64>,
}

impl DgpWeights {
    /// `W_z`, `w_a` ~ N(0, 1/d_e); `w_y` ~ N(0, 1/d_z); `c_k` ~ U(0.5, 1.5).
    pub fn draw(cfg: &DgpConfig, rng: &mut RngStream) -> Self {
        let se = 1.0 / (cfg.d_e as f64).sqrt();
        let sz = 1.0 / (cfg.d_z as f64).sqrt();
        let w_z = (0..cfg.d_e * cfg.d_z)
            .map(|_| se * rng.standard_normal())
            .collect();
        Self {
            w_z: Tensor2::from_vec(cfg.d_e, cfg.d_z, w_z).expect("sized above"),
            w_a: (0..cfg.d_e).map(|_| se * rng.standard_normal()).collect(),
            w_y: (0..cfg.d_z).map(|_| sz * rng.standard_normal()).collect(),
            c: (0..cfg.m).map(|_| rng.uniform_range(0.5, 1.5)).collect(),
        }
    }

    fn check(&self, cfg: &DgpConfig) -> Result<()> {
        if self.w_z.shape() != (cfg.d_e, cfg.d_z)
            || self.w_a.len() != cfg.d_e
            || self.w_y.len() != cfg.d_z
            || self.c.len() != cfg.m
        {
            return Err(Error::Parameter("weights do not match the configured dimensions".into()));
        }
        Ok(())
    }
}

/// Zero-mean noise with standard deviation `scale`.
///
/// `PoissonScaled` is `(Pois(λ) − λ)/√λ · scale` with λ = [`POISSON_RATE`]:
/// centered and variance-matched to the Gaussian, but skewed and discrete.
/// One underlying draw is consumed even when `scale` is zero.
pub fn noise_draw(model: NoiseModel, scale: f64, rng: &mut RngStream) -> f64 {
    match model {
        NoiseModel::Gaussian => scale * rng.standard_normal(),
        NoiseModel::PoissonScaled => {
            let k = rng.poisson(POISSON_RATE);
            (k - POISSON_RATE) / POISSON_RATE.sqrt() * scale
        }
    }
}

pub fn sample_dataset(cfg: &DgpConfig) -> Result<(Dataset, DgpWeights)> {
    cfg.validate()?;
    let weights = DgpWeights::draw(cfg, &mut RngStream::new(cfg.seed).child(1));
    let ds = sample_with_weights(cfg, &weights)?;
    Ok((ds, weights))
}

/// Samples with caller-supplied coefficients; all other draws follow `cfg.seed`.
pub fn sample_with_weights(cfg: &DgpConfig, w: &DgpWeights) -> Result<Dataset> {
    cfg.validate()?;
    w.check(cfg)?;
    let root = RngStream::new(cfg.seed);
    let mut structural = root.child(2);
    let mut obs_noise = root.child(3);
    let mut proxy_noise = root.child(4);

    let (n, d_e, d_z, m) = (cfg.n, cfg.d_e, cfg.d_z, cfg.m);
    let mut env = Tensor2::zeros(n, d_e);
    let mut z = Tensor2::zeros(n, d_z);
    let mut a = Vec::with_capacity(n);
    let mut y_true = Vec::with_capacity(n);
    let mut y_obs = Vec::with_capacity(n);
    let mut proxies = Tensor2::zeros(n, m);

    for i in 0..n {
        for j in 0..d_e {
            env.set(i, j, structural.standard_normal());
        }
        let e = env.row(i).to_vec();
        for k in 0..d_z {
            let lin: f64 = (0..d_e).map(|j| w.w_z.get(j, k) * e[j]).sum();
            z.set(i, k, lin + cfg.sigma_z * structural.standard_normal());
        }
        let logit: f64 = e.iter().zip(&w.w_a).map(|(x, b)| x * b).sum::<f64>()
            + cfg.sigma_a * structural.standard_normal();
        let ai = u8::from(sigmoid(logit) > 0.5);
        let yt: f64 = z.row(i).iter().zip(&w.w_y).map(|(x, b)| x * b).sum::<f64>()
            + cfg.sigma_y * structural.standard_normal();

        let yo = yt + cfg.alpha * f64::from(ai) + noise_draw(cfg.noise_model, cfg.sigma_obs, &mut obs_noise);
        for (k, &ck) in w.c.iter().enumerate() {
            proxies.set(i, k, ck * yt + noise_draw(cfg.noise_model, cfg.sigma_proxy, &mut proxy_noise));
        }
        a.push(ai);
        y_true.push(yt);
        y_obs.push(yo);
    }

    Ok(Dataset {
        env,
        proxies,
        y_obs,
        z_true: Some(z),
        a_true: Some(a),
        y_true: Some(y_true),
        group: None,
        meta: DatasetMeta {
            alpha: Some(cfg.alpha),
            seed: Some(cfg.seed),
            source: "synthetic".into(),
            scaler: None,
            weights: Some(w.clone()),
        },
    })
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Structural diagnostics of a dataset with ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SanityStats {
    pub r2_ytrue_given_z: f64,
    pub r2_yobs_given_ytrue: f64,
    /// `R²(Y_obs | Z, A) − R²(Y_obs | Z)`.
    pub delta_r2_bias: f64,
    /// `R²(Y_true | Z_j)` for each content dimension.
    pub per_dim_r2: Vec<f64>,
    pub bias_prevalence: f64,
    pub moments: Vec<Moments>,
    pub correlation_names: Vec<String>,
    pub correlation: Vec<Vec<f64>>,
}

pub fn sanity_report(ds: &Dataset) -> Result<SanityStats> {
    let (Some(z), Some(a), Some(y_true)) = (&ds.z_true, &ds.a_true, &ds.y_true) else {
        return Err(Error::Unsupported(
            "sanity diagnostics need Z, A and Ytrue columns".into(),
        ));
    };
    let a_f: Vec<f64> = a.iter().map(|&v| f64::from(v)).collect();
    let a_col = Tensor2::column_vector(&a_f)?;
    let yt_col = Tensor2::column_vector(y_true)?;

    let r2_ytrue_given_z = stats::ols(z, y_true)?.r2;
    let r2_yobs_given_ytrue = stats::ols(&yt_col, &ds.y_obs)?.r2;
    let r2_obs_z = stats::ols(z, &ds.y_obs)?.r2;
    let r2_obs_za = stats::ols(&Tensor2::hcat(&[z, &a_col])?, &ds.y_obs)?.r2;
    let per_dim_r2 = (0..z.cols())
        .map(|j| Ok(stats::ols(&Tensor2::column_vector(&z.column(j))?, y_true)?.r2))
        .collect::<Result<Vec<_>>>()?;

    let mut columns: Vec<(String, Vec<f64>)> = (0..z.cols())
        .map(|j| (format!("Z_{}", j + 1), z.column(j)))
        .collect();
    columns.push(("A".into(), a_f.clone()));
    columns.push(("Ytrue".into(), y_true.clone()));
    columns.push(("Yobs".into(), ds.y_obs.clone()));

    let mut moments: Vec<Moments> = (0..ds.d_e())
        .map(|j| stats::moments(&format!("E_{}", j + 1), &ds.env.column(j)))
        .collect();
    moments.extend((0..ds.m()).map(|k| stats::moments(&format!("Yproxy_{}", k + 1), &ds.proxies.column(k))));
    moments.extend(columns.iter().map(|(name, v)| stats::moments(name, v)));

    let correlation = columns
        .iter()
        .map(|(_, x)| columns.iter().map(|(_, y)| stats::pearson(x, y)).collect())
        .collect();

    Ok(SanityStats {
        r2_ytrue_given_z,
        r2_yobs_given_ytrue,
        delta_r2_bias: r2_obs_za - r2_obs_z,
        per_dim_r2,
        bias_prevalence: stats::mean(&a_f),
        moments,
        correlation_names: columns.into_iter().map(|(n, _)| n).collect(),
        correlation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noiseless(n: usize) -> DgpConfig {
        DgpConfig {
            sigma_z: 0.0,
            sigma_y: 0.0,
            sigma_obs: 0.0,
            sigma_proxy: 0.0,
            sigma_a: 0.0,
            ..DgpConfig::new(n, 4, 2, 0.0, 9)
        }
    }

    #[test]
    fn degenerate_noise_makes_proxies_exact() {
        let cfg = noiseless(200);
        let mut w = DgpWeights::draw(&cfg, &mut RngStream::new(1));
        w.c = vec![1.0; cfg.m];
        let ds = sample_with_weights(&cfg, &w).unwrap();
        let yt = ds.y_true.as_ref().unwrap();
        assert_eq!(&ds.y_obs, yt);
        for k in 0..cfg.m {
            assert_eq!(&ds.proxies.column(k), yt);
        }
    }

    #[test]
    fn zero_bias_weights_give_half_prevalence() {
        let cfg = DgpConfig::new(10_000, 5, 2, 1.0, 4);
        let mut w = DgpWeights::draw(&cfg, &mut RngStream::new(2));
        w.w_a = vec![0.0; cfg.d_e];
        let ds = sample_with_weights(&cfg, &w).unwrap();
        let p = stats::mean(&ds.a_true.unwrap().iter().map(|&v| f64::from(v)).collect::<Vec<_>>());
        let se = (0.25f64 / 10_000.0).sqrt();
        assert!((p - 0.5).abs() < 3.0 * se, "prevalence {p}");
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let cfg = DgpConfig::new(300, 10, 5, 5.0, 17);
        let (a, wa) = sample_dataset(&cfg).unwrap();
        let (b, wb) = sample_dataset(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(wa, wb);
    }

    #[test]
    fn noise_model_only_changes_measurements() {
        let cfg = DgpConfig::new(500, 10, 5, 5.0, 3);
        let pcfg = DgpConfig {
            noise_model: NoiseModel::PoissonScaled,
            ..cfg.clone()
        };
        let (g, _) = sample_dataset(&cfg).unwrap();
        let (p, _) = sample_dataset(&pcfg).unwrap();
        assert_eq!(g.env, p.env);
        assert_eq!(g.z_true, p.z_true);
        assert_eq!(g.a_true, p.a_true);
        assert_eq!(g.y_true, p.y_true);
        assert_ne!(g.y_obs, p.y_obs);
    }

    #[test]
    fn additive_bias_residual() {
        let cfg = DgpConfig::new(10_000, 10, 5, 5.0, 21);
        let (ds, _) = sample_dataset(&cfg).unwrap();
        let resid: Vec<f64> = (0..ds.n())
            .map(|i| {
                ds.y_obs[i] - ds.y_true.as_ref().unwrap()[i]
                    - cfg.alpha * f64::from(ds.a_true.as_ref().unwrap()[i])
            })
            .collect();
        let se = cfg.sigma_obs / (ds.n() as f64).sqrt();
        assert!(stats::mean(&resid).abs() < 4.0 * se);
        assert!((stats::std_dev(&resid) - cfg.sigma_obs).abs() < 0.05 * cfg.sigma_obs);
    }

    #[test]
    fn noise_scale_zero_gives_zero() {
        let mut rng = RngStream::new(0);
        assert_eq!(noise_draw(NoiseModel::Gaussian, 0.0, &mut rng), 0.0);
        assert_eq!(noise_draw(NoiseModel::PoissonScaled, 0.0, &mut rng), 0.0);
    }

    #[test]
    fn gaussian_noise_variance() {
        let mut rng = RngStream::new(8);
        let xs: Vec<f64> = (0..1_000_000).map(|_| noise_draw(NoiseModel::Gaussian, 0.3, &mut rng)).collect();
        let v = stats::std_dev(&xs).powi(2);
        assert!((v / 0.09 - 1.0).abs() < 0.01, "variance {v}");
    }

    #[test]
    fn poisson_scaled_noise_moments() {
        let mut rng = RngStream::new(9);
        let n = 1_000_000;
        let xs: Vec<f64> = (0..n).map(|_| noise_draw(NoiseModel::PoissonScaled, 0.3, &mut rng)).collect();
        let m = stats::mean(&xs);
        let v = stats::std_dev(&xs).powi(2);
        assert!(m.abs() < 3.0 * 0.3 / (n as f64).sqrt(), "mean {m}");
        assert!((v / 0.09 - 1.0).abs() < 0.02, "variance {v}");
    }

    #[test]
    fn sanity_on_noiseless_data() {
        let cfg = DgpConfig {
            sigma_z: 1.0,
            ..noiseless(500)
        };
        let (ds, _) = sample_dataset(&cfg).unwrap();
        let s = sanity_report(&ds).unwrap();
        assert!((s.r2_ytrue_given_z - 1.0).abs() < 1e-12);
        assert!((0.0..=1.0).contains(&s.bias_prevalence));
    }

    #[test]
    fn sanity_null_bias_has_no_delta() {
        let (ds, _) = sample_dataset(&DgpConfig::new(10_000, 10, 5, 0.0, 2)).unwrap();
        let s = sanity_report(&ds).unwrap();
        assert!(s.delta_r2_bias.abs() < 0.01);
    }

    #[test]
    fn sanity_requires_ground_truth() {
        let (mut ds, _) = sample_dataset(&DgpConfig::new(50, 3, 2, 1.0, 2)).unwrap();
        ds.z_true = None;
        assert!(matches!(sanity_report(&ds), Err(Error::Unsupported(_))));
    }
}
