//! Shared machinery for both stages: a Gaussian encoder, a Gaussian decoder
//! that may take extra context columns ahead of the latent, and either a
//! standard-normal or an environment-conditioned prior.
//!
//! Heads are emitted as `[mean | log_var]` column blocks; log-variances are
//! clamped to `[LOG_VAR_MIN, LOG_VAR_MAX]` and receive zero gradient outside.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nncore::gaussian::{kl_term, log_density};
use crate::nncore::{
    adam_step, clamp_log_var, mlp_backward_trace, mlp_forward, mlp_forward_trace, Activation,
    MlpGrads, MlpParams, OptState, RngStream, Tensor2, LOG_VAR_MAX, LOG_VAR_MIN,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorMode {
    StandardNormal,
    EnvConditioned,
}

/// Training configuration shared by both stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VaeConfig {
    pub d_latent: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// KL weight β.
    pub kl_weight: f64,
    pub prior_mode: PriorMode,
    /// Stage 1 only: feed environment covariates to the encoder alongside proxies.
    pub encoder_env: bool,
    pub seed: u64,
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self {
            d_latent: 5,
            hidden: 64,
            epochs: 50,
            batch_size: 512,
            learning_rate: 1e-3,
            kl_weight: 1.0,
            prior_mode: PriorMode::StandardNormal,
            encoder_env: true,
            seed: 0,
        }
    }
}

impl VaeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_latent == 0 || self.hidden == 0 || self.batch_size == 0 {
            return Err(Error::Parameter(
                "d_latent, hidden and batch_size must be positive".into(),
            ));
        }
        if !(self.kl_weight > 0.0 && self.kl_weight.is_finite()) {
            return Err(Error::Parameter(format!("KL weight must be positive, got {}", self.kl_weight)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Parameter("learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// Per-epoch means over training examples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean reconstruction log-likelihood.
    pub recon: f64,
    /// Mean KL to the prior.
    pub kl: f64,
    /// `recon − β·kl`.
    pub elbo: f64,
}

/// The three networks of one stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaeNets {
    pub encoder: MlpParams,
    pub decoder: MlpParams,
    /// Present iff the prior is environment-conditioned.
    pub prior: Option<MlpParams>,
    pub d_latent: usize,
    pub context_dim: usize,
}

/// Column blocks for a batch of examples.
#[derive(Debug, Clone)]
pub struct VaeInputs {
    pub encoder_in: Tensor2,
    /// Decoder columns placed ahead of the latent sample.
    pub context: Option<Tensor2>,
    pub target: Tensor2,
    pub prior_in: Option<Tensor2>,
}

impl VaeInputs {
    pub fn len(&self) -> usize {
        self.target.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            encoder_in: self.encoder_in.select_rows(idx),
            context: self.context.as_ref().map(|c| c.select_rows(idx)),
            target: self.target.select_rows(idx),
            prior_in: self.prior_in.as_ref().map(|p| p.select_rows(idx)),
        }
    }
}

/// Batch-mean loss components and gradients for every network.
#[derive(Debug, Clone)]
pub struct LossGrads {
    pub recon: f64,
    pub kl: f64,
    pub encoder: MlpGrads,
    pub decoder: MlpGrads,
    pub prior: Option<MlpGrads>,
}

/// `[mean | log_var]` block, raw log-variance retained for the clamp mask.
struct Heads {
    mean: Tensor2,
    log_var: Tensor2,
    raw_log_var: Tensor2,
}

fn split_heads(out: &Tensor2, d: usize) -> Heads {
    let raw_log_var = out.slice_cols(d, 2 * d);
    Heads {
        mean: out.slice_cols(0, d),
        log_var: raw_log_var.map(clamp_log_var),
        raw_log_var,
    }
}

#[inline]
fn clamp_mask(raw: f64) -> f64 {
    if (LOG_VAR_MIN..=LOG_VAR_MAX).contains(&raw) {
        1.0
    } else {
        0.0
    }
}

impl VaeNets {
    pub fn init(
        encoder_in: usize,
        context_dim: usize,
        target_dim: usize,
        prior_in: Option<usize>,
        cfg: &VaeConfig,
        rng: &RngStream,
    ) -> Result<Self> {
        let d = cfg.d_latent;
        let h = cfg.hidden;
        let encoder = MlpParams::init(&[encoder_in, h, 2 * d], Activation::Relu, &mut rng.child(101))?;
        let decoder =
            MlpParams::init(&[context_dim + d, h, 2 * target_dim], Activation::Relu, &mut rng.child(102))?;
        let prior = match prior_in {
            Some(p) => Some(MlpParams::init(&[p, h, 2 * d], Activation::Relu, &mut rng.child(103))?),
            None => None,
        };
        Ok(Self {
            encoder,
            decoder,
            prior,
            d_latent: d,
            context_dim,
        })
    }

    /// Posterior mean and clamped log-variance for each row.
    pub fn encode(&self, encoder_in: &Tensor2) -> Result<(Tensor2, Tensor2)> {
        let heads = split_heads(&mlp_forward(&self.encoder, encoder_in)?, self.d_latent);
        Ok((heads.mean, heads.log_var))
    }

    /// Decoder mean and clamped log-variance given `[context | latent]`.
    pub fn decode(&self, context: Option<&Tensor2>, latent: &Tensor2) -> Result<(Tensor2, Tensor2)> {
        let input = match context {
            Some(c) => Tensor2::hcat(&[c, latent])?,
            None => latent.clone(),
        };
        let out = mlp_forward(&self.decoder, &input)?;
        let heads = split_heads(&out, out.cols() / 2);
        Ok((heads.mean, heads.log_var))
    }

    fn prior_heads(&self, prior_in: Option<&Tensor2>, rows: usize) -> Result<Option<(Heads, crate::nncore::MlpTrace)>> {
        match (&self.prior, prior_in) {
            (Some(net), Some(x)) => {
                let trace = mlp_forward_trace(net, x)?;
                let heads = split_heads(trace.output(), self.d_latent);
                Ok(Some((heads, trace)))
            }
            (None, _) => Ok(None),
            (Some(_), None) => Err(Error::Schema(format!(
                "environment-conditioned prior needs environment columns for {rows} rows"
            ))),
        }
    }

    /// Batch-mean reconstruction log-likelihood and KL for fixed noise `eps`,
    /// with gradients of `−recon + β·kl`.
    pub fn loss_grads(&self, batch: &VaeInputs, eps: &Tensor2, beta: f64) -> Result<LossGrads> {
        let b = batch.len();
        let d = self.d_latent;
        let inv_b = 1.0 / b as f64;

        let enc_trace = mlp_forward_trace(&self.encoder, &batch.encoder_in)?;
        let q = split_heads(enc_trace.output(), d);
        let mut latent = Tensor2::zeros(b, d);
        for i in 0..b {
            for k in 0..d {
                let s = q.mean.get(i, k) + (0.5 * q.log_var.get(i, k)).exp() * eps.get(i, k);
                latent.set(i, k, s);
            }
        }
        let dec_in = match &batch.context {
            Some(c) => Tensor2::hcat(&[c, &latent])?,
            None => latent.clone(),
        };
        let dec_trace = mlp_forward_trace(&self.decoder, &dec_in)?;
        let t = batch.target.cols();
        let x = split_heads(dec_trace.output(), t);

        let mut recon = 0.0;
        let mut d_dec = Tensor2::zeros(b, 2 * t);
        for i in 0..b {
            for j in 0..t {
                let y = batch.target.get(i, j);
                let (mu, lv) = (x.mean.get(i, j), x.log_var.get(i, j));
                recon += log_density(y, mu, lv);
                let prec = (-lv).exp();
                let r = y - mu;
                d_dec.set(i, j, -r * prec * inv_b);
                d_dec.set(
                    i,
                    t + j,
                    0.5 * (1.0 - r * r * prec) * inv_b * clamp_mask(x.raw_log_var.get(i, j)),
                );
            }
        }
        let (decoder_grads, d_dec_in) = mlp_backward_trace(&self.decoder, &dec_trace, &d_dec)?;

        let prior = self.prior_heads(batch.prior_in.as_ref(), b)?;
        let mut kl = 0.0;
        let mut d_enc = Tensor2::zeros(b, 2 * d);
        let mut d_prior = prior.as_ref().map(|_| Tensor2::zeros(b, 2 * d));
        for i in 0..b {
            for k in 0..d {
                let (mq, lq) = (q.mean.get(i, k), q.log_var.get(i, k));
                let (mp, lp) = match &prior {
                    Some((p, _)) => (p.mean.get(i, k), p.log_var.get(i, k)),
                    None => (0.0, 0.0),
                };
                kl += kl_term(mq, lq, mp, lp);
                let g_s = d_dec_in.get(i, self.context_dim + k);
                let inv_vp = (-lp).exp();
                let diff = mq - mp;
                let sd_q = (0.5 * lq).exp();
                let g_mu = g_s + beta * inv_b * diff * inv_vp;
                let g_lv = g_s * eps.get(i, k) * 0.5 * sd_q + beta * inv_b * 0.5 * ((lq - lp).exp() - 1.0);
                d_enc.set(i, k, g_mu);
                d_enc.set(i, d + k, g_lv * clamp_mask(q.raw_log_var.get(i, k)));
                if let (Some(dp), Some((p, _))) = (d_prior.as_mut(), &prior) {
                    dp.set(i, k, -beta * inv_b * diff * inv_vp);
                    let g_lp = beta * inv_b * 0.5 * (1.0 - (lq.exp() + diff * diff) * inv_vp);
                    dp.set(i, d + k, g_lp * clamp_mask(p.raw_log_var.get(i, k)));
                }
            }
        }
        let (encoder_grads, _) = mlp_backward_trace(&self.encoder, &enc_trace, &d_enc)?;
        let prior_grads = match (&self.prior, &prior, &d_prior) {
            (Some(net), Some((_, trace)), Some(dp)) => Some(mlp_backward_trace(net, trace, dp)?.0),
            _ => None,
        };

        Ok(LossGrads {
            recon: recon * inv_b,
            kl: kl * inv_b,
            encoder: encoder_grads,
            decoder: decoder_grads,
            prior: prior_grads,
        })
    }

    /// Batch-mean `(recon, kl)` for fixed noise, without gradients.
    pub fn loss_terms(&self, batch: &VaeInputs, eps: &Tensor2) -> Result<(f64, f64)> {
        let b = batch.len() as f64;
        let (mq, lq) = self.encode(&batch.encoder_in)?;
        let mut latent = mq.clone();
        for (i, s) in latent.data_mut().iter_mut().enumerate() {
            *s += (0.5 * lq.data()[i]).exp() * eps.data()[i];
        }
        let (mx, lx) = self.decode(batch.context.as_ref(), &latent)?;
        let recon: f64 = batch
            .target
            .data()
            .iter()
            .zip(mx.data())
            .zip(lx.data())
            .map(|((&y, &m), &l)| log_density(y, m, l))
            .sum();
        let kl = match self.prior_heads(batch.prior_in.as_ref(), batch.len())? {
            Some((p, _)) => (0..mq.data().len())
                .map(|i| kl_term(mq.data()[i], lq.data()[i], p.mean.data()[i], p.log_var.data()[i]))
                .sum::<f64>(),
            None => (0..mq.data().len())
                .map(|i| kl_term(mq.data()[i], lq.data()[i], 0.0, 0.0))
                .sum::<f64>(),
        };
        Ok((recon / b, kl / b))
    }
}

/// Per-column z-scoring fitted on a training split. Constant columns are
/// centered but not rescaled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &Tensor2) -> Self {
        let (mean, std) = (0..x.cols())
            .map(|j| {
                let col = x.column(j);
                let sd = crate::stats::pop_std(&col);
                (crate::stats::mean(&col), if sd > 0.0 { sd } else { 1.0 })
            })
            .unzip();
        Self { mean, std }
    }

    pub fn apply(&self, x: &Tensor2) -> Result<Tensor2> {
        if x.cols() != self.mean.len() {
            return Err(Error::Schema(format!(
                "expected {} columns, got {}",
                self.mean.len(),
                x.cols()
            )));
        }
        let mut out = x.clone();
        for r in 0..out.rows() {
            for (j, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = (*v - self.mean[j]) / self.std[j];
            }
        }
        Ok(out)
    }

    pub fn invert(&self, x: &Tensor2) -> Tensor2 {
        let mut out = x.clone();
        for r in 0..out.rows() {
            for (j, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = *v * self.std[j] + self.mean[j];
            }
        }
        out
    }
}

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    format_version: u32,
    kind: String,
    #[serde(flatten)]
    model: T,
}

pub(crate) fn to_model_json<T: Serialize>(kind: &str, model: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(&Envelope {
        format_version: MODEL_FORMAT_VERSION,
        kind: kind.to_string(),
        model,
    })?)
}

pub(crate) fn from_model_json<T: serde::de::DeserializeOwned>(kind: &str, text: &str) -> Result<T> {
    let env: Envelope<T> = serde_json::from_str(text)?;
    if env.format_version != MODEL_FORMAT_VERSION {
        return Err(Error::Schema(format!(
            "model format version {} is not supported (expected {MODEL_FORMAT_VERSION})",
            env.format_version
        )));
    }
    if env.kind != kind {
        return Err(Error::Schema(format!("expected a {kind} model, found {}", env.kind)));
    }
    Ok(env.model)
}

impl VaeNets {
    pub(crate) fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.decoder.validate()?;
        if let Some(p) = &self.prior {
            p.validate()?;
        }
        if self.encoder.output_dim() != 2 * self.d_latent
            || self.decoder.input_dim() != self.context_dim + self.d_latent
        {
            return Err(Error::Schema("network shapes disagree with the latent size".into()));
        }
        Ok(())
    }
}

/// Mini-batch Adam on `−recon + β·kl`; returns the per-epoch log.
pub fn train(nets: &mut VaeNets, data: &VaeInputs, cfg: &VaeConfig, rng: &RngStream) -> Result<Vec<EpochLog>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Data("cannot train on an empty sample".into()));
    }
    let n = data.len();
    let mut enc_opt = OptState::new(&nets.encoder, cfg.learning_rate);
    let mut dec_opt = OptState::new(&nets.decoder, cfg.learning_rate);
    let mut prior_opt = nets.prior.as_ref().map(|p| OptState::new(p, cfg.learning_rate));
    let mut order_rng = rng.child(201);
    let mut noise_rng = rng.child(202);
    let mut order: Vec<usize> = (0..n).collect();
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order_rng.shuffle(&mut order);
        let (mut recon_sum, mut kl_sum) = (0.0, 0.0);
        for chunk in order.chunks(cfg.batch_size) {
            let batch = data.select(chunk);
            let eps = Tensor2::from_vec(chunk.len(), nets.d_latent, noise_rng.normal_vec(chunk.len() * nets.d_latent))?;
            let lg = nets.loss_grads(&batch, &eps, cfg.kl_weight)?;
            if !(lg.recon.is_finite() && lg.kl.is_finite()) {
                return Err(Error::Divergence(format!(
                    "non-finite loss at epoch {epoch} (recon {}, kl {})",
                    lg.recon, lg.kl
                )));
            }
            recon_sum += lg.recon * chunk.len() as f64;
            kl_sum += lg.kl * chunk.len() as f64;
            let wrap = |e: Error| match e {
                Error::Divergence(msg) => Error::Divergence(format!("epoch {epoch}: {msg}")),
                other => other,
            };
            adam_step(&mut nets.encoder, &lg.encoder, &mut enc_opt).map_err(wrap)?;
            adam_step(&mut nets.decoder, &lg.decoder, &mut dec_opt).map_err(wrap)?;
            if let (Some(p), Some(g), Some(o)) = (nets.prior.as_mut(), lg.prior.as_ref(), prior_opt.as_mut()) {
                adam_step(p, g, o).map_err(wrap)?;
            }
        }
        let recon = recon_sum / n as f64;
        let kl = kl_sum / n as f64;
        log.push(EpochLog {
            epoch,
            recon,
            kl,
            elbo: recon - cfg.kl_weight * kl,
        });
    }
    Ok(log)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// Relative error with a 1e-5 floor on the denominator, so gradients that
    /// are numerically zero are compared absolutely.
    pub(crate) fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-5)
    }

    fn objective(nets: &VaeNets, batch: &VaeInputs, eps: &Tensor2, beta: f64) -> f64 {
        let (r, k) = nets.loss_terms(batch, eps).unwrap();
        -r + beta * k
    }

    fn net_mut(nets: &mut VaeNets, which: usize) -> &mut MlpParams {
        match which {
            0 => &mut nets.encoder,
            1 => &mut nets.decoder,
            _ => nets.prior.as_mut().expect("prior network"),
        }
    }

    /// Central differences at step 1e-5 against every parameter of every
    /// network; returns the worst relative error.
    pub(crate) fn check_gradients(nets: &VaeNets, batch: &VaeInputs, beta: f64, seed: u64) -> f64 {
        let noise = RngStream::new(seed).normal_vec(batch.len() * nets.d_latent);
        let eps = Tensor2::from_vec(batch.len(), nets.d_latent, noise).unwrap();
        let lg = nets.loss_grads(batch, &eps, beta).unwrap();
        let h = 1e-5;
        let mut probe = nets.clone();
        let mut worst = 0.0f64;
        let mut analytic = vec![(0, &lg.encoder), (1, &lg.decoder)];
        if let Some(p) = &lg.prior {
            analytic.push((2, p));
        }
        for (which, grads) in analytic {
            for (bi, buf) in grads.buffers().into_iter().enumerate() {
                for (pi, &g) in buf.iter().enumerate() {
                    let orig = net_mut(&mut probe, which).buffers_mut()[bi][pi];
                    net_mut(&mut probe, which).buffers_mut()[bi][pi] = orig + h;
                    let up = objective(&probe, batch, &eps, beta);
                    net_mut(&mut probe, which).buffers_mut()[bi][pi] = orig - h;
                    let down = objective(&probe, batch, &eps, beta);
                    net_mut(&mut probe, which).buffers_mut()[bi][pi] = orig;
                    worst = worst.max(rel_err(g, (up - down) / (2.0 * h)));
                }
            }
        }
        worst
    }

    pub(crate) fn random_inputs(rows: usize, enc: usize, ctx: usize, target: usize, prior: Option<usize>, seed: u64) -> VaeInputs {
        let mut rng = RngStream::new(seed);
        let mut t = |c: usize| Tensor2::from_vec(rows, c, rng.normal_vec(rows * c)).unwrap();
        VaeInputs {
            encoder_in: t(enc),
            context: (ctx > 0).then(|| t(ctx)),
            target: t(target),
            prior_in: prior.map(|p| t(p)),
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let cases = [
            (4usize, 0usize, 2usize, None, 2usize),
            (4, 0, 2, Some(3usize), 2),
            (5, 2, 1, None, 1),
            (5, 2, 1, Some(3), 1),
        ];
        for (i, &(enc, ctx, target, prior, d)) in cases.iter().enumerate() {
            let cfg = VaeConfig {
                d_latent: d,
                hidden: 6,
                ..VaeConfig::default()
            };
            let nets = VaeNets::init(enc, ctx, target, prior, &cfg, &RngStream::new(i as u64)).unwrap();
            let batch = random_inputs(5, enc, ctx, target, prior, 50 + i as u64);
            let worst = check_gradients(&nets, &batch, 0.7, 90 + i as u64);
            assert!(worst <= 1e-4, "case {i}: worst relative error {worst}");
        }
    }

    #[test]
    fn loss_terms_agree_with_gradient_pass() {
        let cfg = VaeConfig { d_latent: 2, hidden: 8, ..VaeConfig::default() };
        let nets = VaeNets::init(3, 1, 2, Some(2), &cfg, &RngStream::new(4)).unwrap();
        let batch = random_inputs(7, 3, 1, 2, Some(2), 5);
        let eps = Tensor2::from_vec(7, 2, RngStream::new(6).normal_vec(14)).unwrap();
        let lg = nets.loss_grads(&batch, &eps, 1.0).unwrap();
        let (r, k) = nets.loss_terms(&batch, &eps).unwrap();
        assert!((lg.recon - r).abs() < 1e-12);
        assert!((lg.kl - k).abs() < 1e-12);
    }
}
