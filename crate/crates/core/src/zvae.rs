//! Stage 1: the content latent `Z`, learned from proxies (and environment)
//! alone. Training takes a [`ProxyView`], which has no outcome column.

use serde::{Deserialize, Serialize};

use crate::dataset::ProxyView;
use crate::error::{Error, Result};
use crate::nncore::{RngStream, Tensor2};
use crate::vae::{self, EpochLog, PriorMode, Standardizer, VaeConfig, VaeInputs, VaeNets};

pub const MODEL_KIND: &str = "zvae";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZModel {
    pub config: VaeConfig,
    pub nets: VaeNets,
    pub env_scaler: Standardizer,
    pub proxy_scaler: Standardizer,
    pub training_log: Vec<EpochLog>,
}

/// One-sample ELBO estimate, averaged over the rows of a batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElboTerms {
    pub recon: f64,
    pub kl: f64,
    pub total: f64,
}

fn inputs(model_cfg: &VaeConfig, env: &Tensor2, proxies: &Tensor2) -> Result<VaeInputs> {
    let encoder_in = if model_cfg.encoder_env {
        Tensor2::hcat(&[proxies, env])?
    } else {
        proxies.clone()
    };
    Ok(VaeInputs {
        encoder_in,
        context: None,
        target: proxies.clone(),
        prior_in: (model_cfg.prior_mode == PriorMode::EnvConditioned).then(|| env.clone()),
    })
}

fn check_view(view: &ProxyView<'_>) -> Result<()> {
    if view.proxies.cols() == 0 {
        return Err(Error::Schema("content learning needs at least one proxy column".into()));
    }
    if view.env.rows() != view.proxies.rows() {
        return Err(Error::Schema(format!(
            "environment has {} rows, proxies have {}",
            view.env.rows(),
            view.proxies.rows()
        )));
    }
    Ok(())
}

pub fn train_zvae(view: ProxyView<'_>, cfg: &VaeConfig) -> Result<ZModel> {
    cfg.validate()?;
    check_view(&view)?;
    let env_scaler = Standardizer::fit(view.env);
    let proxy_scaler = Standardizer::fit(view.proxies);
    let env = env_scaler.apply(view.env)?;
    let proxies = proxy_scaler.apply(view.proxies)?;
    let data = inputs(cfg, &env, &proxies)?;

    let rng = RngStream::new(cfg.seed).child(1);
    let prior_in = (cfg.prior_mode == PriorMode::EnvConditioned).then_some(env.cols());
    let mut nets = VaeNets::init(data.encoder_in.cols(), 0, proxies.cols(), prior_in, cfg, &rng)?;
    let training_log = vae::train(&mut nets, &data, cfg, &rng)?;
    Ok(ZModel {
        config: cfg.clone(),
        nets,
        env_scaler,
        proxy_scaler,
        training_log,
    })
}

impl ZModel {
    fn scaled(&self, view: &ProxyView<'_>) -> Result<(Tensor2, Tensor2)> {
        check_view(view)?;
        Ok((self.env_scaler.apply(view.env)?, self.proxy_scaler.apply(view.proxies)?))
    }

    pub fn to_json(&self) -> Result<String> {
        vae::to_model_json(MODEL_KIND, self)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: Self = vae::from_model_json(MODEL_KIND, text)?;
        model.nets.validate()?;
        Ok(model)
    }
}

/// Posterior means `ẑ`, one row per unit.
pub fn encode_z(model: &ZModel, view: ProxyView<'_>) -> Result<Tensor2> {
    let (env, proxies) = model.scaled(&view)?;
    let data = inputs(&model.config, &env, &proxies)?;
    Ok(model.nets.encode(&data.encoder_in)?.0)
}

/// Decoder mean at `ẑ`, mapped back to the original proxy units.
pub fn reconstruct_proxies(model: &ZModel, view: ProxyView<'_>) -> Result<Tensor2> {
    let z = encode_z(model, view)?;
    let (mean, _) = model.nets.decode(None, &z)?;
    Ok(model.proxy_scaler.invert(&mean))
}

/// Single-sample reparameterized ELBO on the standardized proxies.
pub fn elbo_z(model: &ZModel, view: ProxyView<'_>, rng: &mut RngStream) -> Result<ElboTerms> {
    let (env, proxies) = model.scaled(&view)?;
    let data = inputs(&model.config, &env, &proxies)?;
    let eps = Tensor2::from_vec(data.len(), model.nets.d_latent, rng.normal_vec(data.len() * model.nets.d_latent))?;
    let (recon, kl) = model.nets.loss_terms(&data, &eps)?;
    Ok(ElboTerms {
        recon,
        kl,
        total: recon - model.config.kl_weight * kl,
    })
}
