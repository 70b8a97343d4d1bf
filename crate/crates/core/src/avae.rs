//! Stage 2: a scalar bias latent `a`, inferred from the observed outcome with
//! the content estimate `ẑ` held fixed.
//!
//! `ẑ` enters only as an input tensor, so no gradient ever reaches it. The
//! outcome is standardized internally for optimization; reconstructions are
//! returned in the original units.

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::nncore::{RngStream, Tensor2};
use crate::vae::{self, EpochLog, PriorMode, Standardizer, VaeConfig, VaeInputs, VaeNets};

pub const MODEL_KIND: &str = "avae";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AModel {
    pub config: VaeConfig,
    pub nets: VaeNets,
    pub env_scaler: Standardizer,
    pub z_scaler: Standardizer,
    pub y_scaler: Standardizer,
    /// The decoder sees zeros in place of `ẑ`.
    pub ablate_content: bool,
    pub training_log: Vec<EpochLog>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AvaeOptions {
    pub ablate_content: bool,
}

struct Scaled {
    env: Tensor2,
    z: Tensor2,
    y: Tensor2,
}

fn check_inputs(ds: &Dataset, z_hat: &Tensor2) -> Result<()> {
    if z_hat.rows() != ds.n() {
        return Err(Error::Schema(format!(
            "ẑ has {} rows, dataset has {}",
            z_hat.rows(),
            ds.n()
        )));
    }
    if z_hat.cols() == 0 {
        return Err(Error::Schema("ẑ has no columns".into()));
    }
    Ok(())
}

fn build_inputs(cfg: &VaeConfig, ablate: bool, s: &Scaled) -> Result<VaeInputs> {
    let encoder_in = if cfg.encoder_env {
        Tensor2::hcat(&[&s.y, &s.env, &s.z])?
    } else {
        Tensor2::hcat(&[&s.y, &s.z])?
    };
    let context = if ablate {
        Tensor2::zeros(s.z.rows(), s.z.cols())
    } else {
        s.z.clone()
    };
    Ok(VaeInputs {
        encoder_in,
        context: Some(context),
        target: s.y.clone(),
        prior_in: (cfg.prior_mode == PriorMode::EnvConditioned).then(|| s.env.clone()),
    })
}

/// Trains the outcome model. The latent is always scalar: `cfg.d_latent` is
/// replaced by 1.
pub fn train_avae(ds: &Dataset, z_hat: &Tensor2, cfg: &VaeConfig) -> Result<AModel> {
    train_avae_with(ds, z_hat, cfg, AvaeOptions::default())
}

pub fn train_avae_with(ds: &Dataset, z_hat: &Tensor2, cfg: &VaeConfig, opts: AvaeOptions) -> Result<AModel> {
    let cfg = VaeConfig {
        d_latent: 1,
        ..cfg.clone()
    };
    cfg.validate()?;
    check_inputs(ds, z_hat)?;
    let y = Tensor2::column_vector(&ds.y_obs)?;
    let env_scaler = Standardizer::fit(&ds.env);
    let z_scaler = Standardizer::fit(z_hat);
    let y_scaler = Standardizer::fit(&y);
    let scaled = Scaled {
        env: env_scaler.apply(&ds.env)?,
        z: z_scaler.apply(z_hat)?,
        y: y_scaler.apply(&y)?,
    };
    let data = build_inputs(&cfg, opts.ablate_content, &scaled)?;

    let rng = RngStream::new(cfg.seed).child(2);
    let prior_in = (cfg.prior_mode == PriorMode::EnvConditioned).then_some(scaled.env.cols());
    let mut nets = VaeNets::init(data.encoder_in.cols(), z_hat.cols(), 1, prior_in, &cfg, &rng)?;
    let training_log = vae::train(&mut nets, &data, &cfg, &rng)?;
    Ok(AModel {
        config: cfg,
        nets,
        env_scaler,
        z_scaler,
        y_scaler,
        ablate_content: opts.ablate_content,
        training_log,
    })
}

impl AModel {
    fn inputs(&self, ds: &Dataset, z_hat: &Tensor2) -> Result<VaeInputs> {
        check_inputs(ds, z_hat)?;
        let scaled = Scaled {
            env: self.env_scaler.apply(&ds.env)?,
            z: self.z_scaler.apply(z_hat)?,
            y: self.y_scaler.apply(&Tensor2::column_vector(&ds.y_obs)?)?,
        };
        build_inputs(&self.config, self.ablate_content, &scaled)
    }

    pub fn to_json(&self) -> Result<String> {
        vae::to_model_json(MODEL_KIND, self)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: Self = vae::from_model_json(MODEL_KIND, text)?;
        model.nets.validate()?;
        if model.nets.d_latent != 1 {
            return Err(Error::Schema(format!(
                "bias model has latent width {}, expected 1",
                model.nets.d_latent
            )));
        }
        Ok(model)
    }
}

/// Posterior mean of `a` per unit.
pub fn encode_a(model: &AModel, ds: &Dataset, z_hat: &Tensor2) -> Result<Vec<f64>> {
    let data = model.inputs(ds, z_hat)?;
    Ok(model.nets.encode(&data.encoder_in)?.0.into_data())
}

/// Decoder mean of `y_obs` at `(ẑ, â)`, in outcome units.
pub fn reconstruct_outcome(model: &AModel, ds: &Dataset, z_hat: &Tensor2) -> Result<Vec<f64>> {
    let data = model.inputs(ds, z_hat)?;
    let a = model.nets.encode(&data.encoder_in)?.0;
    let (mean, _) = model.nets.decode(data.context.as_ref(), &a)?;
    Ok(model.y_scaler.invert(&mean).into_data())
}
