//! Exhaustive-enumeration check that `(E, Z)` is a valid adjustment set for
//! the effect of the binary bias `A` on the observed outcome.
//!
//! The model factorizes as `p(e) p(z|e) p(a|e) p(y|z,a)`. An optional table
//! `p(z|e,a)` adds an `A → Z` edge, which breaks the graph and with it the
//! adjustment identity.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nncore::RngStream;

pub const CPT_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteScm {
    pub p_e: Vec<f64>,
    /// `[e][z]`
    pub p_z_given_e: Vec<Vec<f64>>,
    /// `[e][a]`, two columns.
    pub p_a_given_e: Vec<Vec<f64>>,
    /// `[z][a][y]`
    pub p_y_given_za: Vec<Vec<Vec<f64>>>,
    /// Outcome value attached to each `y` level.
    pub y_values: Vec<f64>,
    /// `[e][a][z]`; when present it replaces `p_z_given_e`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_z_given_ea: Option<Vec<Vec<Vec<f64>>>>,
}

fn check_dist(name: &str, row: &[f64], len: usize) -> Result<()> {
    if row.len() != len {
        return Err(Error::Schema(format!("{name} has {} entries, expected {len}", row.len())));
    }
    if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::Schema(format!("{name} has a negative or non-finite probability")));
    }
    let s: f64 = row.iter().sum();
    if (s - 1.0).abs() > CPT_TOLERANCE {
        return Err(Error::Schema(format!("{name} sums to {s}, not 1")));
    }
    Ok(())
}

impl DiscreteScm {
    pub fn n_e(&self) -> usize {
        self.p_e.len()
    }

    pub fn n_z(&self) -> usize {
        self.p_z_given_e.first().map_or(0, Vec::len)
    }

    pub fn n_y(&self) -> usize {
        self.y_values.len()
    }

    pub fn validate(&self) -> Result<()> {
        let (ne, nz, ny) = (self.n_e(), self.n_z(), self.n_y());
        if ne == 0 || nz == 0 || ny == 0 {
            return Err(Error::Schema("every support must be non-empty".into()));
        }
        check_dist("p(E)", &self.p_e, ne)?;
        if self.p_z_given_e.len() != ne || self.p_a_given_e.len() != ne {
            return Err(Error::Schema(format!("conditional tables need {ne} rows, one per E level")));
        }
        for e in 0..ne {
            check_dist(&format!("p(Z|E={e})"), &self.p_z_given_e[e], nz)?;
            check_dist(&format!("p(A|E={e})"), &self.p_a_given_e[e], 2)?;
        }
        if self.p_y_given_za.len() != nz {
            return Err(Error::Schema(format!("p(Y|Z,A) needs {nz} Z rows")));
        }
        for z in 0..nz {
            if self.p_y_given_za[z].len() != 2 {
                return Err(Error::Schema(format!("p(Y|Z={z},A) needs 2 A rows")));
            }
            for a in 0..2 {
                check_dist(&format!("p(Y|Z={z},A={a})"), &self.p_y_given_za[z][a], ny)?;
            }
        }
        if self.y_values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Schema("outcome values must be finite".into()));
        }
        if let Some(t) = &self.p_z_given_ea {
            if t.len() != ne || t.iter().any(|r| r.len() != 2) {
                return Err(Error::Schema("p(Z|E,A) must be indexed [e][a]".into()));
            }
            for e in 0..ne {
                for a in 0..2 {
                    check_dist(&format!("p(Z|E={e},A={a})"), &t[e][a], nz)?;
                }
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let scm: Self = serde_json::from_str(text)?;
        scm.validate()?;
        Ok(scm)
    }

    pub fn respects_graph(&self) -> bool {
        self.p_z_given_ea.is_none()
    }

    fn p_z(&self, e: usize, a: usize, z: usize) -> f64 {
        match &self.p_z_given_ea {
            Some(t) => t[e][a][z],
            None => self.p_z_given_e[e][z],
        }
    }

    fn outcome_mean(&self, z: usize, a: usize) -> (f64, f64) {
        let py = &self.p_y_given_za[z][a];
        let mass: f64 = py.iter().sum();
        let num: f64 = py.iter().zip(&self.y_values).map(|(p, y)| p * y).sum();
        (num, mass)
    }

    fn check_levels(&self, a: usize, e: usize, z: usize) -> Result<()> {
        if a > 1 || e >= self.n_e() || z >= self.n_z() {
            return Err(Error::Parameter(format!("level (a={a}, e={e}, z={z}) is outside the supports")));
        }
        Ok(())
    }
}

/// `E[Y | do(A=a), E=e, Z=z]` from the truncated factorization.
pub fn interventional_mean(scm: &DiscreteScm, a: usize, e: usize, z: usize) -> Result<f64> {
    scm.check_levels(a, e, z)?;
    let w = scm.p_e[e] * scm.p_z(e, a, z);
    let (num, mass) = scm.outcome_mean(z, a);
    if w * mass <= 0.0 {
        return Err(Error::Support(format!("(e={e}, z={z}) has zero probability under do(A={a})")));
    }
    Ok(w * num / (w * mass))
}

/// `E[Y | A=a, E=e, Z=z]` by enumerating the observational joint.
pub fn conditional_mean(scm: &DiscreteScm, a: usize, e: usize, z: usize) -> Result<f64> {
    scm.check_levels(a, e, z)?;
    let w = scm.p_e[e] * scm.p_a_given_e[e][a] * scm.p_z(e, a, z);
    let (num, mass) = scm.outcome_mean(z, a);
    if w * mass <= 0.0 {
        return Err(Error::Support(format!("P(A={a}, E={e}, Z={z}) is zero")));
    }
    Ok(w * num / (w * mass))
}

/// `E[Y | do(A=a), E=e]`, marginalizing `Z` under the intervention.
pub fn interventional_mean_e(scm: &DiscreteScm, a: usize, e: usize) -> Result<f64> {
    scm.check_levels(a, e, 0)?;
    if scm.p_e[e] <= 0.0 {
        return Err(Error::Support(format!("P(E={e}) is zero")));
    }
    Ok((0..scm.n_z())
        .map(|z| {
            let (num, _) = scm.outcome_mean(z, a);
            scm.p_z(e, a, z) * num
        })
        .sum())
}

/// `Σ_z P(z | e) E[Y | A=a, E=e, Z=z]` with `P(z | e)` from the observational
/// joint.
pub fn adjusted_mean(scm: &DiscreteScm, a: usize, e: usize) -> Result<f64> {
    scm.check_levels(a, e, 0)?;
    let mut total = 0.0;
    for z in 0..scm.n_z() {
        let pz: f64 = (0..2).map(|a2| scm.p_a_given_e[e][a2] * scm.p_z(e, a2, z)).sum();
        if pz > 0.0 {
            total += pz * conditional_mean(scm, a, e, z)?;
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentReport {
    /// Max over `(a, e, z)` of `|E[Y|do(a),e,z] − E[Y|a,e,z]|`.
    pub pointwise: f64,
    /// Max over `(a, e)` of `|E[Y|do(a),e] − Σ_z P(z|e) E[Y|a,e,z]|`.
    pub adjustment: f64,
    pub cells_checked: usize,
}

impl IdentReport {
    pub fn discrepancy(&self) -> f64 {
        self.pointwise.max(self.adjustment)
    }
}

/// Both discrepancies over every cell with positive support.
pub fn verify_adjustment(scm: &DiscreteScm) -> IdentReport {
    let mut report = IdentReport {
        pointwise: 0.0,
        adjustment: 0.0,
        cells_checked: 0,
    };
    for e in 0..scm.n_e() {
        for a in 0..2 {
            for z in 0..scm.n_z() {
                if let (Ok(i), Ok(c)) = (interventional_mean(scm, a, e, z), conditional_mean(scm, a, e, z)) {
                    report.pointwise = report.pointwise.max((i - c).abs());
                    report.cells_checked += 1;
                }
            }
            let positive = (0..scm.n_z()).all(|z| {
                let pz: f64 = (0..2).map(|a2| scm.p_a_given_e[e][a2] * scm.p_z(e, a2, z)).sum();
                pz == 0.0 || conditional_mean(scm, a, e, z).is_ok()
            });
            if scm.p_e[e] > 0.0 && positive {
                if let (Ok(i), Ok(c)) = (interventional_mean_e(scm, a, e), adjusted_mean(scm, a, e)) {
                    report.adjustment = report.adjustment.max((i - c).abs());
                }
            }
        }
    }
    report
}

fn simplex(rng: &mut RngStream, len: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..len).map(|_| -(1.0 - rng.uniform()).ln()).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|v| v / s).collect()
}

/// A random model with the required graph and supports of size 2..=`max_support`.
pub fn random_scm(rng: &mut RngStream, max_support: usize) -> DiscreteScm {
    let max_support = max_support.max(2);
    let size = |rng: &mut RngStream| 2 + (rng.uniform() * (max_support - 1) as f64) as usize;
    let (ne, nz, ny) = (size(rng), size(rng), size(rng));
    DiscreteScm {
        p_e: simplex(rng, ne),
        p_z_given_e: (0..ne).map(|_| simplex(rng, nz)).collect(),
        p_a_given_e: (0..ne).map(|_| simplex(rng, 2)).collect(),
        p_y_given_za: (0..nz).map(|_| (0..2).map(|_| simplex(rng, ny)).collect()).collect(),
        y_values: rng.normal_vec(ny).iter().map(|v| 3.0 * v).collect(),
        p_z_given_ea: None,
    }
}

/// Worst discrepancy over `draws` random models.
pub fn verify_random(draws: usize, seed: u64, max_support: usize) -> IdentReport {
    let root = RngStream::new(seed);
    (0..draws)
        .into_par_iter()
        .map(|i| verify_adjustment(&random_scm(&mut root.child(i as u64), max_support)))
        .reduce(
            || IdentReport {
                pointwise: 0.0,
                adjustment: 0.0,
                cells_checked: 0,
            },
            |a, b| IdentReport {
                pointwise: a.pointwise.max(b.pointwise),
                adjustment: a.adjustment.max(b.adjustment),
                cells_checked: a.cells_checked + b.cells_checked,
            },
        )
}

/// Two environments, binary content, outcome `z + 2a`, and an `A → Z` edge
/// that makes biased units far more likely to have high content.
pub fn graph_violating_example() -> DiscreteScm {
    DiscreteScm {
        p_e: vec![0.5, 0.5],
        p_z_given_e: vec![vec![0.5, 0.5], vec![0.5, 0.5]],
        p_a_given_e: vec![vec![0.7, 0.3], vec![0.4, 0.6]],
        p_y_given_za: vec![
            vec![vec![1.0, 0.0, 0.0, 0.0], vec![0.0, 0.0, 1.0, 0.0]],
            vec![vec![0.0, 1.0, 0.0, 0.0], vec![0.0, 0.0, 0.0, 1.0]],
        ],
        y_values: vec![0.0, 1.0, 2.0, 3.0],
        p_z_given_ea: Some(vec![vec![vec![0.8, 0.2], vec![0.2, 0.8]], vec![vec![0.7, 0.3], vec![0.1, 0.9]]]),
    }
}
