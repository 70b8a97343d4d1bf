//! Matched-neighbour bias estimate with ground-truth groups and content,
//! then per-group effects from a string key.

use proxycal::calibrate::{cate_by_group, estimate_alpha, BiasGroups};
use proxycal::dgp::{sample_dataset, DgpConfig};

fn main() -> proxycal::Result<()> {
    for alpha in [1.0, 5.0, 10.0] {
        let (ds, _) = sample_dataset(&DgpConfig::new(10_000, 10, 5, alpha, 3))?;
        let groups = BiasGroups::from_indicator(ds.a_true.as_ref().expect("A"))?;
        let res = estimate_alpha(&ds.y_obs, ds.z_true.as_ref().expect("Z"), &groups, 5)?;
        println!("α = {alpha:>4}: α̂ = {:.3} from {} treated units", res.alpha_hat, res.matches.len());

        if alpha == 5.0 {
            let keys: Vec<String> = (0..ds.n())
                .map(|i| if ds.env.get(i, 0) > 0.0 { "E1 high" } else { "E1 low" }.to_string())
                .collect();
            for (k, s) in cate_by_group(&res, &keys)? {
                println!("    {k}: mean τ̂ {:.3} over {}", s.mean_tau, s.count);
            }
        }
    }
    Ok(())
}
