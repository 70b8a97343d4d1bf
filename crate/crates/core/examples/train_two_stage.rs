//! Fit both stages on one split and inspect what each latent recovered.

use proxycal::avae::{encode_a, reconstruct_outcome};
use proxycal::dgp::{sample_dataset, DgpConfig};
use proxycal::metrics::{permuted_r2, rmse, rmse_tensor};
use proxycal::pipeline::{fit_two_stage, PipelineConfig};
use proxycal::stats::spearman;
use proxycal::zvae::{encode_z, reconstruct_proxies};

fn main() -> proxycal::Result<()> {
    let (ds, _) = sample_dataset(&DgpConfig::new(5000, 10, 5, 10.0, 1))?;
    let idx: Vec<usize> = (0..ds.n()).collect();
    let (train, test) = (ds.subset(&idx[..4000]), ds.subset(&idx[4000..]));

    let cfg = PipelineConfig::for_latent(5, 1);
    let model = fit_two_stage(&train, &cfg)?;
    let last = model.z_model.training_log.last().expect("log");
    println!("stage 1 final ELBO {:.4} (KL {:.4})", last.elbo, last.kl);

    let z_hat = encode_z(&model.z_model, test.proxy_view())?;
    let rec_p = reconstruct_proxies(&model.z_model, test.proxy_view())?;
    let (r2, perm) = permuted_r2(&z_hat, test.z_true.as_ref().expect("Z"))?;
    println!("proxy RMSE {:.3}  permuted R²(z) {:.3}  assignment {:?}", rmse_tensor(&rec_p, &test.proxies)?, r2, perm);

    let a_hat = encode_a(&model.a_model, &test, &z_hat)?;
    let a_true: Vec<f64> = test.a_true.as_ref().expect("A").iter().map(|&a| f64::from(a)).collect();
    let rec_y = reconstruct_outcome(&model.a_model, &test, &z_hat)?;
    println!("ρ(â, A) {:.3}  outcome RMSE {:.3}", spearman(&a_hat, &a_true), rmse(&rec_y, &test.y_obs)?);
    Ok(())
}
