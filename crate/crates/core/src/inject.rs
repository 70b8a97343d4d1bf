//! Semi-synthetic benchmarks: inject a known, environment-driven additive bias
//! into the standardized outcome of a real table.

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::dgp::sigmoid;
use crate::error::{Error, Result};
use crate::nncore::{RngStream, Tensor2};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleRule {
    Zscore,
    Log1pThenZscore,
    None,
}

/// Recorded transform of one column: `x' = (f(x) − shift) / scale` where `f`
/// is `log1p` under [`ScaleRule::Log1pThenZscore`] and the identity otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnScaler {
    pub column: String,
    pub rule: ScaleRule,
    pub shift: f64,
    pub scale: f64,
}

impl ColumnScaler {
    fn fit(column: &str, rule: ScaleRule, values: &[f64]) -> Result<Self> {
        let transformed = Self::pre(column, rule, values)?;
        let (shift, scale) = match rule {
            ScaleRule::None => (0.0, 1.0),
            ScaleRule::Zscore | ScaleRule::Log1pThenZscore => {
                let sd = stats::pop_std(&transformed);
                if !(sd > 0.0) {
                    return Err(Error::Data(format!(
                        "column {column} has zero variance and cannot be z-scored"
                    )));
                }
                (stats::mean(&transformed), sd)
            }
        };
        Ok(Self {
            column: column.to_string(),
            rule,
            shift,
            scale,
        })
    }

    fn pre(column: &str, rule: ScaleRule, values: &[f64]) -> Result<Vec<f64>> {
        if rule == ScaleRule::Log1pThenZscore {
            if let Some(i) = values.iter().position(|&v| v <= -1.0) {
                return Err(Error::Data(format!(
                    "column {column} row {i}: log1p needs values above -1, got {}",
                    values[i]
                )));
            }
            Ok(values.iter().map(|v| v.ln_1p()).collect())
        } else {
            Ok(values.to_vec())
        }
    }

    pub fn apply(&self, values: &[f64]) -> Result<Vec<f64>> {
        Ok(Self::pre(&self.column, self.rule, values)?
            .into_iter()
            .map(|v| (v - self.shift) / self.scale)
            .collect())
    }

    pub fn invert(&self, values: &[f64]) -> Vec<f64> {
        values
            .iter()
            .map(|&v| {
                let u = v * self.scale + self.shift;
                if self.rule == ScaleRule::Log1pThenZscore {
                    u.exp_m1()
                } else {
                    u
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScalerRecord {
    pub columns: Vec<ColumnScaler>,
}

/// Per-column rules keyed by canonical column name (`E_1`, `Yproxy_2`, `Yobs`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleSpec {
    pub rules: Vec<(String, ScaleRule)>,
}

impl ScaleSpec {
    /// One rule for all environment columns, one for proxies, one for the outcome.
    pub fn uniform(ds: &Dataset, env: ScaleRule, proxies: ScaleRule, y_obs: ScaleRule) -> Self {
        let mut rules: Vec<(String, ScaleRule)> =
            (0..ds.d_e()).map(|j| (format!("E_{}", j + 1), env)).collect();
        rules.extend((0..ds.m()).map(|k| (format!("Yproxy_{}", k + 1), proxies)));
        rules.push(("Yobs".into(), y_obs));
        Self { rules }
    }
}

enum Slot {
    Env(usize),
    Proxy(usize),
    Outcome,
}

fn locate(ds: &Dataset, name: &str) -> Result<Slot> {
    let index = |prefix: &str, limit: usize| -> Option<usize> {
        name.strip_prefix(prefix)
            .and_then(|s| s.parse::<usize>().ok())
            .filter(|&k| k >= 1 && k <= limit)
            .map(|k| k - 1)
    };
    if name == "Yobs" {
        Ok(Slot::Outcome)
    } else if let Some(j) = index("E_", ds.d_e()) {
        Ok(Slot::Env(j))
    } else if let Some(k) = index("Yproxy_", ds.m()) {
        Ok(Slot::Proxy(k))
    } else {
        Err(Error::Schema(format!("no column named {name}")))
    }
}

fn column_of(ds: &Dataset, slot: &Slot) -> Vec<f64> {
    match *slot {
        Slot::Env(j) => ds.env.column(j),
        Slot::Proxy(k) => ds.proxies.column(k),
        Slot::Outcome => ds.y_obs.clone(),
    }
}

fn write_column(ds: &mut Dataset, slot: &Slot, values: &[f64]) {
    match *slot {
        Slot::Env(j) => values.iter().enumerate().for_each(|(i, &v)| ds.env.set(i, j, v)),
        Slot::Proxy(k) => values.iter().enumerate().for_each(|(i, &v)| ds.proxies.set(i, k, v)),
        Slot::Outcome => ds.y_obs = values.to_vec(),
    }
}

/// Applies `spec`, returning the transformed dataset and the fitted scalers.
pub fn standardize_columns(ds: &Dataset, spec: &ScaleSpec) -> Result<(Dataset, ScalerRecord)> {
    let mut out = ds.clone();
    let mut record = ScalerRecord::default();
    for (name, rule) in &spec.rules {
        let slot = locate(ds, name)?;
        let scaler = ColumnScaler::fit(name, *rule, &column_of(ds, &slot))?;
        write_column(&mut out, &slot, &scaler.apply(&column_of(ds, &slot))?);
        record.columns.push(scaler);
    }
    Ok((out, record))
}

/// Undoes a [`standardize_columns`] transform.
pub fn invert_scaling(ds: &Dataset, record: &ScalerRecord) -> Result<Dataset> {
    let mut out = ds.clone();
    for scaler in &record.columns {
        let slot = locate(ds, &scaler.column)?;
        write_column(&mut out, &slot, &scaler.invert(&column_of(ds, &slot)));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectConfig {
    pub alpha: f64,
    pub seed: u64,
    pub prevalence: f64,
    pub outcome_rule: ScaleRule,
    /// Adds standard-normal noise inside the logistic, making `A` random given `E`.
    pub logistic_noise: bool,
}

impl InjectConfig {
    pub fn new(alpha: f64, seed: u64) -> Self {
        Self {
            alpha,
            seed,
            prevalence: 0.5,
            outcome_rule: ScaleRule::Zscore,
            logistic_noise: false,
        }
    }
}

pub const PREVALENCE_TOLERANCE: f64 = 0.02;
const BISECTION_STEPS: usize = 64;

/// Draws a bias indicator from the environment and shifts the standardized
/// outcome by `alpha` where it is active.
///
/// The returned dataset stores the standardized unbiased outcome as `Ytrue`
/// (so `Yobs = Ytrue + α·A` exactly) and the outcome scaler in its metadata.
/// Environment and proxy columns are returned unchanged.
pub fn inject_bias(ds: &Dataset, cfg: &InjectConfig) -> Result<Dataset> {
    if !(cfg.alpha >= 0.0 && cfg.alpha.is_finite()) {
        return Err(Error::Parameter(format!(
            "alpha must be a non-negative finite shift, got {}",
            cfg.alpha
        )));
    }
    if !(cfg.prevalence > 0.0 && cfg.prevalence < 1.0) {
        return Err(Error::Parameter(format!(
            "prevalence target must lie in (0, 1), got {}",
            cfg.prevalence
        )));
    }
    if ds.d_e() == 0 {
        return Err(Error::DegenerateBias("no environment columns".into()));
    }

    let n = ds.n();
    let mut env_std = Tensor2::zeros(n, ds.d_e());
    for j in 0..ds.d_e() {
        let col = ds.env.column(j);
        let sd = stats::pop_std(&col);
        if !(sd > 0.0) {
            return Err(Error::DegenerateBias(format!("environment column E_{} is constant", j + 1)));
        }
        let mu = stats::mean(&col);
        for (i, v) in col.iter().enumerate() {
            env_std.set(i, j, (v - mu) / sd);
        }
    }

    let mut rng = RngStream::new(cfg.seed).child(11);
    let w_scale = 1.0 / (ds.d_e() as f64).sqrt();
    let w: Vec<f64> = (0..ds.d_e()).map(|_| w_scale * rng.standard_normal()).collect();
    let mut noise_rng = RngStream::new(cfg.seed).child(12);
    let scores: Vec<f64> = (0..n)
        .map(|i| {
            let s: f64 = env_std.row(i).iter().zip(&w).map(|(x, b)| x * b).sum();
            if cfg.logistic_noise {
                s + noise_rng.standard_normal()
            } else {
                s
            }
        })
        .collect();

    let intercept = tune_intercept(&scores, cfg.prevalence)?;
    let a: Vec<u8> = scores
        .iter()
        .map(|&s| u8::from(sigmoid(s + intercept) > 0.5))
        .collect();

    let outcome = ColumnScaler::fit("Yobs", cfg.outcome_rule, &ds.y_obs)?;
    let y_true = outcome.apply(&ds.y_obs)?;
    let y_obs = y_true
        .iter()
        .zip(&a)
        .map(|(y, &ai)| y + cfg.alpha * f64::from(ai))
        .collect();

    let mut out = ds.clone();
    out.y_obs = y_obs;
    out.y_true = Some(y_true);
    out.a_true = Some(a);
    out.meta.alpha = Some(cfg.alpha);
    out.meta.seed = Some(cfg.seed);
    out.meta.source = if ds.meta.source.is_empty() {
        "injected".into()
    } else {
        format!("{}+injected", ds.meta.source)
    };
    out.meta.scaler = Some(ScalerRecord {
        columns: vec![outcome],
    });
    Ok(out)
}

fn prevalence_at(scores: &[f64], b: f64) -> f64 {
    scores.iter().filter(|&&s| sigmoid(s + b) > 0.5).count() as f64 / scores.len() as f64
}

/// Bisection on the logistic intercept; prevalence is non-decreasing in it.
fn tune_intercept(scores: &[f64], target: f64) -> Result<f64> {
    let span = scores.iter().fold(0.0f64, |m, s| m.max(s.abs())) + 1.0;
    let (mut lo, mut hi) = (-span, span);
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        let p = prevalence_at(scores, mid);
        if (p - target).abs() <= PREVALENCE_TOLERANCE {
            return Ok(mid);
        }
        if p < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::DegenerateBias(format!(
        "bias scores are too coarse to reach prevalence {target} within {PREVALENCE_TOLERANCE}"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{sample_dataset, DgpConfig};

    fn table(n: usize, seed: u64) -> Dataset {
        let (mut ds, _) = sample_dataset(&DgpConfig::new(n, 6, 2, 0.0, seed)).unwrap();
        ds.z_true = None;
        ds.a_true = None;
        ds.y_true = None;
        ds.meta = Default::default();
        ds
    }

    #[test]
    fn zero_alpha_is_pure_standardization() {
        let ds = table(400, 1);
        let out = inject_bias(&ds, &InjectConfig::new(0.0, 3)).unwrap();
        assert_eq!(&out.y_obs, out.y_true.as_ref().unwrap());
        assert!(out.a_true.is_some());
        assert!(stats::mean(&out.y_obs).abs() < 1e-12);
    }

    #[test]
    fn shift_is_exact_given_a() {
        let ds = table(1000, 2);
        let out = inject_bias(&ds, &InjectConfig::new(5.0, 4)).unwrap();
        let yt = out.y_true.as_ref().unwrap();
        for (i, &a) in out.a_true.as_ref().unwrap().iter().enumerate() {
            assert_eq!(out.y_obs[i], yt[i] + 5.0 * f64::from(a));
        }
        let prev = out.a_true.unwrap().iter().map(|&a| f64::from(a)).sum::<f64>() / 1000.0;
        assert!((prev - 0.5).abs() <= PREVALENCE_TOLERANCE);
        assert_eq!(out.meta.alpha, Some(5.0));
    }

    #[test]
    fn only_outcome_changes() {
        let ds = table(300, 5);
        let out = inject_bias(&ds, &InjectConfig { prevalence: 0.3, ..InjectConfig::new(2.0, 8) }).unwrap();
        assert_eq!(out.env, ds.env);
        assert_eq!(out.proxies, ds.proxies);
    }

    #[test]
    fn rejects_negative_alpha_and_constant_env() {
        let ds = table(100, 6);
        assert!(matches!(
            inject_bias(&ds, &InjectConfig::new(-1.0, 0)),
            Err(Error::Parameter(_))
        ));
        let mut flat = ds.clone();
        for i in 0..flat.n() {
            flat.env.set(i, 2, 1.0);
        }
        assert!(matches!(
            inject_bias(&flat, &InjectConfig::new(1.0, 0)),
            Err(Error::DegenerateBias(_))
        ));
    }

    #[test]
    fn prevalence_targets_are_met() {
        let ds = table(2000, 7);
        for target in [0.1, 0.25, 0.5, 0.8] {
            let cfg = InjectConfig {
                prevalence: target,
                logistic_noise: true,
                ..InjectConfig::new(1.0, 9)
            };
            let out = inject_bias(&ds, &cfg).unwrap();
            let p = out.a_true.unwrap().iter().map(|&a| f64::from(a)).sum::<f64>() / 2000.0;
            assert!((p - target).abs() <= PREVALENCE_TOLERANCE, "{p} vs {target}");
        }
    }

    #[test]
    fn standardized_column_is_unchanged() {
        let mut ds = table(500, 8);
        let (z, _) = standardize_columns(&ds, &ScaleSpec::uniform(&ds, ScaleRule::Zscore, ScaleRule::None, ScaleRule::None)).unwrap();
        ds.env = z.env.clone();
        let (again, _) = standardize_columns(&ds, &ScaleSpec::uniform(&ds, ScaleRule::Zscore, ScaleRule::None, ScaleRule::None)).unwrap();
        for (a, b) in again.env.data().iter().zip(z.env.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_column_under_none_and_zscore() {
        let mut ds = table(50, 9);
        for i in 0..ds.n() {
            ds.proxies.set(i, 0, 4.0);
        }
        let spec = ScaleSpec::uniform(&ds, ScaleRule::None, ScaleRule::None, ScaleRule::None);
        let (out, _) = standardize_columns(&ds, &spec).unwrap();
        assert_eq!(out.proxies, ds.proxies);
        let spec = ScaleSpec::uniform(&ds, ScaleRule::None, ScaleRule::Zscore, ScaleRule::None);
        match standardize_columns(&ds, &spec) {
            Err(Error::Data(msg)) => assert!(msg.contains("Yproxy_1")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn log1p_round_trip() {
        let mut ds = table(300, 10);
        let mut rng = RngStream::new(4);
        // earnings-like: zero-inflated, heavy right tail
        ds.y_obs = (0..300)
            .map(|_| if rng.uniform() < 0.3 { 0.0 } else { (8.0 + 1.5 * rng.standard_normal()).exp() })
            .collect();
        let spec = ScaleSpec::uniform(&ds, ScaleRule::Zscore, ScaleRule::Zscore, ScaleRule::Log1pThenZscore);
        let (scaled, record) = standardize_columns(&ds, &spec).unwrap();
        let back = invert_scaling(&scaled, &record).unwrap();
        let max_err = back
            .y_obs
            .iter()
            .zip(&ds.y_obs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_err < 1e-9, "{max_err}");
        for (a, b) in back.env.data().iter().zip(ds.env.data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
