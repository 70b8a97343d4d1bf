use serde::{Deserialize, Serialize};

use crate::dgp::DgpWeights;
use crate::error::{Error, Result};
use crate::inject::ScalerRecord;
use crate::nncore::Tensor2;

/// Dataset-level metadata carried in the sidecar manifest.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scaler: Option<ScalerRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<DgpWeights>,
}

/// Environment covariates, proxies, and the observed outcome, plus optional
/// ground truth (`Z`, `A`, `Y_true`) and an optional grouping key.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub env: Tensor2,
    pub proxies: Tensor2,
    pub y_obs: Vec<f64>,
    pub z_true: Option<Tensor2>,
    pub a_true: Option<Vec<u8>>,
    pub y_true: Option<Vec<f64>>,
    pub group: Option<Vec<String>>,
    pub meta: DatasetMeta,
}

/// The slice of a dataset Stage 1 is allowed to see. It has no outcome field,
/// so content learning cannot read the observed outcome.
#[derive(Debug, Clone, Copy)]
pub struct ProxyView<'a> {
    pub env: &'a Tensor2,
    pub proxies: &'a Tensor2,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.y_obs.len()
    }

    pub fn d_e(&self) -> usize {
        self.env.cols()
    }

    pub fn m(&self) -> usize {
        self.proxies.cols()
    }

    pub fn d_z(&self) -> Option<usize> {
        self.z_true.as_ref().map(Tensor2::cols)
    }

    pub fn proxy_view(&self) -> ProxyView<'_> {
        ProxyView {
            env: &self.env,
            proxies: &self.proxies,
        }
    }

    pub fn has_ground_truth(&self) -> bool {
        self.z_true.is_some() && self.a_true.is_some() && self.y_true.is_some()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        let check = |what: &str, rows: usize| {
            if rows != n {
                Err(Error::Schema(format!("{what} has {rows} rows, outcome has {n}")))
            } else {
                Ok(())
            }
        };
        check("environment", self.env.rows())?;
        check("proxies", self.proxies.rows())?;
        if let Some(z) = &self.z_true {
            check("Z", z.rows())?;
        }
        if let Some(a) = &self.a_true {
            check("A", a.len())?;
            if a.iter().any(|&v| v > 1) {
                return Err(Error::Data("A must be binary".into()));
            }
        }
        if let Some(y) = &self.y_true {
            check("Ytrue", y.len())?;
        }
        if let Some(g) = &self.group {
            check("group", g.len())?;
        }
        if let Some(i) = self.y_obs.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite Yobs at row {i}")));
        }
        Ok(())
    }

    /// Rows `idx` in order, with every optional column carried along.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            env: self.env.select_rows(idx),
            proxies: self.proxies.select_rows(idx),
            y_obs: idx.iter().map(|&i| self.y_obs[i]).collect(),
            z_true: self.z_true.as_ref().map(|z| z.select_rows(idx)),
            a_true: self.a_true.as_ref().map(|a| idx.iter().map(|&i| a[i]).collect()),
            y_true: self.y_true.as_ref().map(|y| idx.iter().map(|&i| y[i]).collect()),
            group: self.group.as_ref().map(|g| idx.iter().map(|&i| g[i].clone()).collect()),
            meta: self.meta.clone(),
        }
    }
}
