//! Lévy-area anomaly: the walk's area in the Albanese frame exceeds the
//! Brownian area by `t·β̄` on average, matching a distorted Brownian rough path.

use nilwalk::graph_model::{triangular, TriangularParams};
use nilwalk::harmonic::{analyze, second_layer_frame, RealizationOverrides};
use nilwalk::stats::Estimate;
use nilwalk::tensor_free::distorted_bm;
use nilwalk::walk_sim::sample_walk;
use nilwalk::WalkConfig;

fn main() -> nilwalk::Result<()> {
    let g = triangular(TriangularParams::with_epsilon(0.4, 0.3, 0.3, 0.1))?;
    let w = analyze(&g, &RealizationOverrides::default())?;
    let beta12 = w.beta.beta_bar.as_ref().map_or(0.0, |b| b[(0, 1)]);
    let c = second_layer_frame(w.phi.algebra(), &w.albanese)[(0, 0)];

    let ens = sample_walk(
        &g,
        &w.phi,
        &w.gamma,
        &WalkConfig::new(2048, 40_000, 3).recording_at(&[0.5, 1.0]),
    )?;
    let grid = [0.0, 0.5, 1.0];
    let bb = [0.0, beta12, -beta12, 0.0];
    let (mut plain, mut distorted) = (vec![Vec::new(); 3], vec![Vec::new(); 3]);
    for p in 0..20_000u64 {
        let bm = distorted_bm(2, &[0.0; 4], &grid, p)?;
        let dbm = distorted_bm(2, &bb, &grid, 1_000_000 + p)?;
        for k in 1..3 {
            plain[k].push(bm.area(k)[1]);
            distorted[k].push(dbm.area(k)[1]);
        }
    }

    println!("beta_bar^12 = {beta12:.5}");
    for (k, t) in [(1, 0.5), (2, 1.0)] {
        let idx = ens.time_index(t).expect("recorded time");
        let walk: Vec<f64> = ens.marginal(idx).iter().map(|y| y[2] / c).collect();
        let walk = Estimate::from_samples(&walk);
        let bm = Estimate::from_samples(&plain[k]);
        let dbm = Estimate::from_samples(&distorted[k]);
        let anomaly = walk.minus(&bm);
        println!(
            "t = {t}: walk area {:+.4} ± {:.4}, BM {:+.4}, distorted BM {:+.4}, anomaly {:+.4} vs t·β̄ {:+.4}",
            walk.value,
            walk.se,
            bm.value,
            dbm.value,
            anomaly.value,
            t * beta12
        );
    }
    Ok(())
}
