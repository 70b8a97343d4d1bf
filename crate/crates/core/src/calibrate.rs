//! Orientation and thresholding of the bias score, nearest-neighbour matching
//! in content space, and the two regression baselines.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nncore::Tensor2;
use crate::stats;

pub const DEFAULT_K: usize = 5;

/// Validation quantile levels searched for the threshold.
pub const THRESHOLD_LEVELS: [f64; 9] = [0.30, 0.35, 0.40, 0.45, 0.50, 0.55, 0.60, 0.65, 0.70];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasGroups {
    pub treated: Vec<usize>,
    pub control: Vec<usize>,
    pub threshold: f64,
    /// `+1` puts scores above the threshold in the treated set, `-1` below.
    pub orientation: i8,
    pub source: String,
    /// Matched contrast achieved on the validation units.
    pub validation_contrast: f64,
}

impl BiasGroups {
    /// Groups from an explicit indicator, e.g. the ground-truth bias column.
    pub fn from_indicator(indicator: &[u8]) -> Result<Self> {
        let treated: Vec<usize> = (0..indicator.len()).filter(|&i| indicator[i] != 0).collect();
        let control: Vec<usize> = (0..indicator.len()).filter(|&i| indicator[i] == 0).collect();
        check_overlap(&treated, &control)?;
        Ok(Self {
            treated,
            control,
            threshold: 0.5,
            orientation: 1,
            source: "indicator".into(),
            validation_contrast: f64::NAN,
        })
    }

    pub fn is_treated(&self, n: usize) -> Vec<bool> {
        let mut flags = vec![false; n];
        for &i in &self.treated {
            flags[i] = true;
        }
        flags
    }

    /// Applies the stored threshold and orientation to a fresh set of scores.
    pub fn apply(&self, a_hat: &[f64]) -> Result<Self> {
        let (treated, control) = split(a_hat, self.threshold, self.orientation);
        check_overlap(&treated, &control)?;
        Ok(Self {
            treated,
            control,
            ..self.clone()
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub unit: usize,
    /// Control indices ordered by distance, ties by index.
    pub controls: Vec<usize>,
    pub distances: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub alpha_hat: f64,
    /// Signed matched contrast per treated unit, in treated order.
    pub contrasts: Vec<f64>,
    /// Absolute matched contrast per treated unit.
    pub per_unit_tau: Vec<f64>,
    pub matches: Vec<Match>,
    pub groups: BiasGroups,
    pub k_neighbors: usize,
}

fn check_overlap(treated: &[usize], control: &[usize]) -> Result<()> {
    if treated.is_empty() || control.is_empty() {
        return Err(Error::Overlap(format!(
            "{} treated and {} control units; both groups must be non-empty",
            treated.len(),
            control.len()
        )));
    }
    Ok(())
}

fn split(a_hat: &[f64], threshold: f64, orientation: i8) -> (Vec<usize>, Vec<usize>) {
    let o = f64::from(orientation);
    (0..a_hat.len()).partition(|&i| o * a_hat[i] > o * threshold)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// The `k` controls closest to `unit` in `z`, by Euclidean distance with ties
/// broken by lower index.
pub fn nearest_controls(z: &Tensor2, unit: usize, controls: &[usize], k: usize) -> Match {
    let row = z.row(unit);
    let mut cand: Vec<(f64, usize)> = controls.iter().map(|&j| (sq_dist(row, z.row(j)), j)).collect();
    let by_key = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < cand.len() {
        cand.select_nth_unstable_by(k, by_key);
        cand.truncate(k);
    }
    cand.sort_by(by_key);
    Match {
        unit,
        controls: cand.iter().map(|c| c.1).collect(),
        distances: cand.iter().map(|c| c.0.sqrt()).collect(),
    }
}

/// `y_i` minus the mean matched outcome; matched outcomes are summed in index
/// order so the value depends only on the neighbour set.
fn contrast(y: &[f64], m: &Match) -> f64 {
    let mut ids = m.controls.clone();
    ids.sort_unstable();
    let sum: f64 = ids.iter().map(|&j| y[j]).sum();
    y[m.unit] - sum / ids.len() as f64
}

fn check_matching_inputs(y: &[f64], z: &Tensor2, groups: &BiasGroups, k: usize) -> Result<()> {
    if y.len() != z.rows() {
        return Err(Error::Shape(format!("{} outcomes for {} latent rows", y.len(), z.rows())));
    }
    if k == 0 {
        return Err(Error::Parameter("K must be at least 1".into()));
    }
    if groups.control.len() < k {
        return Err(Error::Parameter(format!(
            "{} control units cannot supply K = {k} neighbours",
            groups.control.len()
        )));
    }
    if groups.treated.iter().chain(&groups.control).any(|&i| i >= y.len()) {
        return Err(Error::Shape("group index out of range".into()));
    }
    Ok(())
}

/// Matched-neighbour estimate of the additive bias.
pub fn estimate_alpha(y_obs: &[f64], z_hat: &Tensor2, groups: &BiasGroups, k: usize) -> Result<CalibrationResult> {
    check_matching_inputs(y_obs, z_hat, groups, k)?;
    check_overlap(&groups.treated, &groups.control)?;
    let matches: Vec<Match> = groups
        .treated
        .par_iter()
        .map(|&i| nearest_controls(z_hat, i, &groups.control, k))
        .collect();
    let contrasts: Vec<f64> = matches.iter().map(|m| contrast(y_obs, m)).collect();
    Ok(CalibrationResult {
        alpha_hat: stats::mean(&contrasts),
        per_unit_tau: contrasts.iter().map(|c| c.abs()).collect(),
        contrasts,
        matches,
        groups: groups.clone(),
        k_neighbors: k,
    })
}

/// Per-unit absolute matched contrasts over the treated set.
pub fn estimate_cate(y_obs: &[f64], z_hat: &Tensor2, groups: &BiasGroups, k: usize) -> Result<Vec<f64>> {
    Ok(estimate_alpha(y_obs, z_hat, groups, k)?.per_unit_tau)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub mean_tau: f64,
    pub count: usize,
}

/// Mean τ̂ per group key over the treated units.
pub fn cate_by_group(result: &CalibrationResult, keys: &[String]) -> Result<BTreeMap<String, GroupSummary>> {
    let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for (m, tau) in result.matches.iter().zip(&result.per_unit_tau) {
        let key = keys
            .get(m.unit)
            .ok_or_else(|| Error::Shape(format!("no group key for unit {}", m.unit)))?;
        let e = acc.entry(key.clone()).or_insert((0.0, 0));
        e.0 += tau;
        e.1 += 1;
    }
    Ok(acc
        .into_iter()
        .map(|(k, (s, c))| {
            (
                k,
                GroupSummary {
                    mean_tau: s / c as f64,
                    count: c,
                },
            )
        })
        .collect())
}

/// Chooses threshold and orientation on the validation units.
///
/// Candidate cuts leave `round(q·v)` or `v − round(q·v)` validation units
/// below the threshold for each level `q`, with thresholds at midpoints of
/// sorted validation scores. Both orientations are scored by the matched
/// contrast among validation units and the largest contrast wins; ties go to
/// the smaller treated set, then to the lexicographically smaller one. The
/// candidate set maps onto itself under `â → −â`, so the resulting groups do
/// not depend on the sign of the score.
pub fn orient_and_threshold(
    a_hat: &[f64],
    z_hat: &Tensor2,
    y_obs: &[f64],
    validation_idx: &[usize],
    k: usize,
) -> Result<BiasGroups> {
    let n = a_hat.len();
    if y_obs.len() != n || z_hat.rows() != n {
        return Err(Error::Shape(format!(
            "{} scores, {} outcomes, {} latent rows",
            n,
            y_obs.len(),
            z_hat.rows()
        )));
    }
    if validation_idx.is_empty() {
        return Err(Error::Parameter("validation set is empty".into()));
    }
    if validation_idx.iter().any(|&i| i >= n) {
        return Err(Error::Shape("validation index out of range".into()));
    }
    if a_hat.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("bias score contains non-finite values".into()));
    }
    let vals = stats::sorted(&validation_idx.iter().map(|&i| a_hat[i]).collect::<Vec<_>>());
    let v = vals.len();
    if vals[v - 1] - vals[0] <= 0.0 {
        return Err(Error::Overlap("bias score is constant on the validation set".into()));
    }

    let mut cuts: Vec<usize> = THRESHOLD_LEVELS
        .iter()
        .flat_map(|q| {
            let c = (q * v as f64).round() as usize;
            [c, v - c]
        })
        .filter(|&c| c >= 1 && c < v)
        .collect();
    cuts.sort_unstable();
    cuts.dedup();

    let mut best: Option<(f64, Vec<usize>, f64, i8)> = None;
    for &c in &cuts {
        let t = (vals[c - 1] + vals[c]) * 0.5;
        for o in [1i8, -1] {
            let (treated, control): (Vec<usize>, Vec<usize>) = {
                let of = f64::from(o);
                validation_idx.iter().partition(|&&i| of * a_hat[i] > of * t)
            };
            if treated.is_empty() || control.len() < k {
                continue;
            }
            let contrasts: Vec<f64> = treated
                .iter()
                .map(|&i| contrast(y_obs, &nearest_controls(z_hat, i, &control, k)))
                .collect();
            let score = stats::mean(&contrasts);
            let mut key = treated;
            key.sort_unstable();
            let better = match &best {
                None => true,
                Some((bs, bk, _, _)) => {
                    score > *bs || (score == *bs && (key.len() < bk.len() || (key.len() == bk.len() && key < *bk)))
                }
            };
            if better {
                best = Some((score, key, t, o));
            }
        }
    }
    let (score, _, threshold, orientation) = best.ok_or_else(|| {
        Error::Overlap(format!("no threshold leaves {k} validation controls and a treated unit"))
    })?;
    let (treated, control) = split(a_hat, threshold, orientation);
    check_overlap(&treated, &control)?;
    Ok(BiasGroups {
        treated,
        control,
        threshold,
        orientation,
        source: "validation".into(),
        validation_contrast: score,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineEstimate {
    pub alpha_hat: f64,
    pub ridge_fallback: bool,
}

fn group_mean_difference(values: &[f64], groups: &BiasGroups) -> Result<f64> {
    check_overlap(&groups.treated, &groups.control)?;
    if groups.treated.iter().chain(&groups.control).any(|&i| i >= values.len()) {
        return Err(Error::Shape("group index out of range".into()));
    }
    let t: Vec<f64> = groups.treated.iter().map(|&i| values[i]).collect();
    let c: Vec<f64> = groups.control.iter().map(|&i| values[i]).collect();
    Ok(stats::mean(&t) - stats::mean(&c))
}

/// OLS of the outcome on proxies fitted on `train`; the estimate is the
/// treated-minus-control difference of mean residuals on `eval`.
pub fn baseline_proxy_only(
    train_proxies: &Tensor2,
    train_y: &[f64],
    eval_proxies: &Tensor2,
    eval_y: &[f64],
    groups: &BiasGroups,
) -> Result<BaselineEstimate> {
    if train_proxies.cols() == 0 {
        return Err(Error::Schema("proxy-only baseline needs proxy columns".into()));
    }
    let fit = stats::ols(train_proxies, train_y)?;
    let resid: Vec<f64> = eval_y
        .iter()
        .zip(fit.predict(eval_proxies))
        .map(|(y, p)| y - p)
        .collect();
    Ok(BaselineEstimate {
        alpha_hat: group_mean_difference(&resid, groups)?,
        ridge_fallback: fit.ridge_fallback,
    })
}

/// OLS of the outcome on environment columns fitted on `train`; the estimate
/// is the treated-minus-control difference of predicted outcomes on `eval`.
pub fn baseline_env_only(
    train_env: &Tensor2,
    train_y: &[f64],
    eval_env: &Tensor2,
    groups: &BiasGroups,
) -> Result<BaselineEstimate> {
    let fit = stats::ols(train_env, train_y)?;
    Ok(BaselineEstimate {
        alpha_hat: group_mean_difference(&fit.predict(eval_env), groups)?,
        ridge_fallback: fit.ridge_fallback,
    })
}
