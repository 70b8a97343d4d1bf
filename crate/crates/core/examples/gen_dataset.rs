//! Sample a synthetic dataset, write it as CSV plus manifest, and read it back.
//!
//! ```text
//! cargo run --release --example gen_dataset -- [out.csv]
//! ```

use std::path::PathBuf;

use proxycal::dgp::{sample_dataset, sanity_report, DgpConfig};
use proxycal::io::{read_dataset, write_dataset};

fn main() -> proxycal::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map_or_else(|| std::env::temp_dir().join("proxycal_gen.csv"), PathBuf::from);
    let (ds, weights) = sample_dataset(&DgpConfig::new(2000, 10, 5, 5.0, 7))?;
    let manifest = write_dataset(&ds, &out)?;
    let back = read_dataset(&out)?;
    assert_eq!(back.y_obs, ds.y_obs);

    let s = sanity_report(&back)?;
    println!("wrote {} and {}", out.display(), manifest.display());
    println!("proxy loadings c = {:?}", weights.c);
    println!(
        "R²(Ytrue|Z) {:.3}  R²(Yobs|Ytrue) {:.3}  ΔR² from A {:.3}  P(A=1) {:.3}",
        s.r2_ytrue_given_z, s.r2_yobs_given_ytrue, s.delta_r2_bias, s.bias_prevalence
    );
    Ok(())
}
