//! Rescaled random walk on the triangular lattice: first-layer covariance in
//! the Albanese frame, the second-layer mean against `tβ`, and Hölder
//! regularity of sample paths.

use nilwalk::graph_model::{triangular, TriangularParams};
use nilwalk::harmonic::{analyze, RealizationOverrides};
use nilwalk::stats::Estimate;
use nilwalk::walk_sim::{holder_stat, sample_walk};
use nilwalk::WalkConfig;

fn main() -> nilwalk::Result<()> {
    let g = triangular(TriangularParams::new(0.25, 0.15, 0.2, 0.1, 0.2, 0.1))?;
    let w = analyze(&g, &RealizationOverrides::default())?;
    let mut cfg = WalkConfig::new(1024, 20_000, 7);
    cfg.stride = 64;
    let ens = sample_walk(&g, &w.phi, &w.gamma, &cfg)?;
    println!("{} paths, {} recorded times", ens.num_paths(), ens.times().len());

    let last = ens.times().len() - 1;
    let frame: Vec<Vec<f64>> = ens
        .marginal(last)
        .iter()
        .map(|y| w.albanese.frame_coords(&y[..2]))
        .collect();
    for i in 0..2 {
        for j in 0..2 {
            let prod: Vec<f64> = frame.iter().map(|c| c[i] * c[j]).collect();
            let e = Estimate::from_samples(&prod);
            println!("E[W{}W{}] at t=1 = {:.4} ± {:.4}", i + 1, j + 1, e.value, e.se);
        }
    }
    let z = Estimate::from_samples(&ens.coordinate(last, 2));
    println!(
        "E[layer 2] = {:.4} ± {:.4} (beta = {:.4})",
        z.value, z.se, w.beta.beta[0]
    );

    for alpha in [0.3, 0.45] {
        let h: Vec<f64> = (0..20)
            .map(|p| holder_stat(&ens, p, alpha))
            .collect::<nilwalk::Result<_>>()?;
        println!(
            "alpha = {alpha}: largest Hölder quotient over 20 paths = {:.3}",
            h.iter().cloned().fold(0.0, f64::max)
        );
    }
    Ok(())
}
