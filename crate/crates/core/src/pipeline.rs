//! The two-stage estimator end to end, and its k-fold evaluation harness.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::avae::{self, AModel, AvaeOptions};
use crate::calibrate::{self, BiasGroups, CalibrationResult, DEFAULT_K};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::metrics;
use crate::nncore::{RngStream, Tensor2};
use crate::stats;
use crate::vae::VaeConfig;
use crate::zvae::{self, ZModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub folds: usize,
    pub k_neighbors: usize,
    pub seed: u64,
    pub stage1: VaeConfig,
    pub stage2: VaeConfig,
    /// Decoder of stage 2 receives zeros instead of `ẑ`.
    pub ablate_content: bool,
    /// Append standardized environment columns to `ẑ` for matching.
    pub match_on_env: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            folds: 10,
            k_neighbors: DEFAULT_K,
            seed: 0,
            stage1: VaeConfig::default(),
            stage2: VaeConfig {
                d_latent: 1,
                ..VaeConfig::default()
            },
            ablate_content: false,
            match_on_env: false,
        }
    }
}

impl PipelineConfig {
    /// Defaults with the stage-1 latent width set to `d_z`.
    pub fn for_latent(d_z: usize, seed: u64) -> Self {
        let mut cfg = Self {
            seed,
            ..Self::default()
        };
        cfg.stage1.d_latent = d_z;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::Parameter(format!("need at least 2 folds, got {}", self.folds)));
        }
        if self.k_neighbors == 0 {
            return Err(Error::Parameter("K must be at least 1".into()));
        }
        self.stage1.validate()?;
        self.stage2.validate()
    }
}

fn mix(seed: u64, tag: u64) -> u64 {
    let mut x = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Model seed for one fold; stage 1 and stage 2 draw separate child streams
/// from it.
pub fn fold_seed(seed: u64, fold: usize) -> u64 {
    mix(seed, fold as u64 + 1)
}

/// Unit-level folds from a seeded shuffle, cut into contiguous chunks whose
/// sizes differ by at most one. Depends only on `(n, k, seed)`.
pub fn assign_folds(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::Parameter(format!("need at least 2 folds, got {k}")));
    }
    if n < k {
        return Err(Error::Parameter(format!("{n} units cannot fill {k} folds")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    RngStream::new(seed).child(7).shuffle(&mut order);
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        let mut fold = order[start..start + len].to_vec();
        fold.sort_unstable();
        folds.push(fold);
        start += len;
    }
    Ok(folds)
}

/// Test, validation and training indices for fold `f`: the validation fold
/// is the next one round-robin, training is everything else. With two folds
/// the validation fold doubles as training data.
pub fn fold_split(folds: &[Vec<usize>], f: usize) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let k = folds.len();
    let v = (f + 1) % k;
    let test = folds[f].clone();
    let val = folds[v].clone();
    let mut train: Vec<usize> = folds
        .iter()
        .enumerate()
        .filter(|&(g, _)| g != f && (g != v || k == 2))
        .flat_map(|(_, idx)| idx.iter().copied())
        .collect();
    train.sort_unstable();
    (test, val, train)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoStageModel {
    pub z_model: ZModel,
    pub a_model: AModel,
}

/// Trains stage 1 on proxies, freezes `ẑ`, then trains stage 2.
pub fn fit_two_stage(train: &Dataset, cfg: &PipelineConfig) -> Result<TwoStageModel> {
    cfg.validate()?;
    train.validate()?;
    let s1 = VaeConfig {
        seed: mix(cfg.seed, 101),
        ..cfg.stage1.clone()
    };
    let s2 = VaeConfig {
        seed: mix(cfg.seed, 202),
        ..cfg.stage2.clone()
    };
    let z_model = zvae::train_zvae(train.proxy_view(), &s1)?;
    let z_hat = zvae::encode_z(&z_model, train.proxy_view())?;
    let a_model = avae::train_avae_with(
        train,
        &z_hat,
        &s2,
        AvaeOptions {
            ablate_content: cfg.ablate_content,
        },
    )?;
    Ok(TwoStageModel { z_model, a_model })
}

/// Frozen latents for a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Latents {
    pub z_hat: Tensor2,
    pub a_hat: Vec<f64>,
    /// Coordinates used for matching.
    pub match_space: Tensor2,
}

impl TwoStageModel {
    pub fn latents(&self, ds: &Dataset, match_on_env: bool) -> Result<Latents> {
        let z_hat = zvae::encode_z(&self.z_model, ds.proxy_view())?;
        let a_hat = avae::encode_a(&self.a_model, ds, &z_hat)?;
        let match_space = if match_on_env {
            Tensor2::hcat(&[&z_hat, &self.z_model.env_scaler.apply(&ds.env)?])?
        } else {
            z_hat.clone()
        };
        Ok(Latents {
            z_hat,
            a_hat,
            match_space,
        })
    }
}

/// Chooses groups on `val` and estimates α̂ on `eval`, drawing controls from
/// `eval` only.
pub fn calibrate_split(val: (&Dataset, &Latents), eval: (&Dataset, &Latents), k: usize) -> Result<CalibrationResult> {
    let (vds, vl) = val;
    let (eds, el) = eval;
    let val_idx: Vec<usize> = (0..vds.n()).collect();
    let chosen = calibrate::orient_and_threshold(&vl.a_hat, &vl.match_space, &vds.y_obs, &val_idx, k)?;
    let groups = chosen.apply(&el.a_hat)?;
    calibrate::estimate_alpha(&eds.y_obs, &el.match_space, &groups, k)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldRow {
    pub seed: u64,
    pub fold: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub alpha_hat: f64,
    pub threshold: f64,
    pub orientation: i8,
    pub n_treated: usize,
    pub validation_contrast: f64,
    pub baseline_proxy: f64,
    pub baseline_env: f64,
    pub rmse_proxies: f64,
    pub rmse_yobs: f64,
    pub permuted_r2_z: Option<f64>,
    pub z_mae: Option<f64>,
    pub a_mae: Option<f64>,
    /// Share of test units whose inferred group matches the true bias flag.
    pub group_accuracy: Option<f64>,
}

fn opt_metrics(test: &Dataset, lat: &Latents, groups: &BiasGroups) -> Result<(Option<f64>, Option<f64>, Option<f64>, Option<f64>)> {
    let (mut r2, mut zmae) = (None, None);
    if let Some(zt) = &test.z_true {
        if zt.cols() == lat.z_hat.cols() {
            r2 = Some(metrics::permuted_r2(&lat.z_hat, zt)?.0);
            zmae = Some(metrics::latent_mae(&lat.z_hat, zt)?);
        }
    }
    let (mut amae, mut acc) = (None, None);
    if let Some(at) = &test.a_true {
        let truth: Vec<f64> = at.iter().map(|&a| f64::from(a)).collect();
        let a_col = Tensor2::column_vector(&lat.a_hat)?;
        amae = Some(metrics::latent_mae(&a_col, &Tensor2::column_vector(&truth)?)?);
        let flags = groups.is_treated(test.n());
        let hits = flags.iter().zip(at).filter(|(f, a)| **f == (**a != 0)).count();
        acc = Some(hits as f64 / test.n() as f64);
    }
    Ok((r2, zmae, amae, acc))
}

/// Fits and evaluates fold `f`.
pub fn run_fold(ds: &Dataset, folds: &[Vec<usize>], f: usize, cfg: &PipelineConfig) -> Result<FoldRow> {
    let (test_idx, val_idx, train_idx) = fold_split(folds, f);
    let (train, val, test) = (ds.subset(&train_idx), ds.subset(&val_idx), ds.subset(&test_idx));
    let fold_cfg = PipelineConfig {
        seed: fold_seed(cfg.seed, f),
        ..cfg.clone()
    };
    let model = fit_two_stage(&train, &fold_cfg)?;
    let vl = model.latents(&val, cfg.match_on_env)?;
    let tl = model.latents(&test, cfg.match_on_env)?;
    let k = cfg.k_neighbors;
    let res = calibrate_split((&val, &vl), (&test, &tl), k).map_err(|e| match e {
        Error::Overlap(m) => Error::Overlap(format!("fold {f}: {m}")),
        Error::Parameter(m) => Error::Parameter(format!("fold {f}: {m}")),
        other => other,
    })?;

    let bp = calibrate::baseline_proxy_only(&train.proxies, &train.y_obs, &test.proxies, &test.y_obs, &res.groups)?;
    let be = calibrate::baseline_env_only(&train.env, &train.y_obs, &test.env, &res.groups)?;
    let rec_p = zvae::reconstruct_proxies(&model.z_model, test.proxy_view())?;
    let rec_y = avae::reconstruct_outcome(&model.a_model, &test, &tl.z_hat)?;
    let (permuted_r2_z, z_mae, a_mae, group_accuracy) = opt_metrics(&test, &tl, &res.groups)?;
    Ok(FoldRow {
        seed: cfg.seed,
        fold: f,
        n_train: train.n(),
        n_val: val.n(),
        n_test: test.n(),
        alpha_hat: res.alpha_hat,
        threshold: res.groups.threshold,
        orientation: res.groups.orientation,
        n_treated: res.groups.treated.len(),
        validation_contrast: res.groups.validation_contrast,
        baseline_proxy: bp.alpha_hat,
        baseline_env: be.alpha_hat,
        rmse_proxies: metrics::rmse_tensor(&rec_p, &test.proxies)?,
        rmse_yobs: metrics::rmse(&rec_y, &test.y_obs)?,
        permuted_r2_z,
        z_mae,
        a_mae,
        group_accuracy,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub alpha_true: Option<f64>,
    pub folds: usize,
    pub runs: usize,
    pub alpha_hat_mean: f64,
    pub alpha_hat_std: f64,
    pub baseline_proxy_mean: f64,
    pub baseline_env_mean: f64,
    pub permuted_r2_z: Option<f64>,
    pub z_mae: Option<f64>,
    pub a_mae: Option<f64>,
    pub rmse_proxies: f64,
    pub rmse_yobs: f64,
    pub per_fold: Vec<FoldRow>,
}

fn mean_opt(xs: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Option<Vec<f64>> = xs.collect();
    v.filter(|v| !v.is_empty()).map(|v| stats::mean(&v))
}

/// Means and spread over all fold rows (possibly from several seeds).
pub fn aggregate(alpha_true: Option<f64>, folds: usize, rows: Vec<FoldRow>) -> MetricsReport {
    let col = |f: fn(&FoldRow) -> f64| rows.iter().map(f).collect::<Vec<_>>();
    let alphas = col(|r| r.alpha_hat);
    let mut seeds: Vec<u64> = rows.iter().map(|r| r.seed).collect();
    seeds.dedup();
    MetricsReport {
        alpha_true,
        folds,
        runs: seeds.len(),
        alpha_hat_mean: stats::mean(&alphas),
        alpha_hat_std: stats::std_dev(&alphas),
        baseline_proxy_mean: stats::mean(&col(|r| r.baseline_proxy)),
        baseline_env_mean: stats::mean(&col(|r| r.baseline_env)),
        permuted_r2_z: mean_opt(rows.iter().map(|r| r.permuted_r2_z)),
        z_mae: mean_opt(rows.iter().map(|r| r.z_mae)),
        a_mae: mean_opt(rows.iter().map(|r| r.a_mae)),
        rmse_proxies: stats::mean(&col(|r| r.rmse_proxies)),
        rmse_yobs: stats::mean(&col(|r| r.rmse_yobs)),
        per_fold: rows,
    }
}

/// k-fold evaluation; folds run concurrently and are reported in fold order.
pub fn kfold_rows(ds: &Dataset, cfg: &PipelineConfig) -> Result<Vec<FoldRow>> {
    cfg.validate()?;
    ds.validate()?;
    let folds = assign_folds(ds.n(), cfg.folds, cfg.seed)?;
    (0..cfg.folds)
        .into_par_iter()
        .map(|f| run_fold(ds, &folds, f, cfg))
        .collect()
}

pub fn kfold_run(ds: &Dataset, cfg: &PipelineConfig) -> Result<MetricsReport> {
    let rows = kfold_rows(ds, cfg)?;
    Ok(aggregate(ds.meta.alpha, cfg.folds, rows))
}
