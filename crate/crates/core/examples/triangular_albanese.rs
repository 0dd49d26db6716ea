//! Albanese metric and drift of the Heisenberg triangular lattice, for a
//! symmetric and a non-symmetric choice of transition probabilities.

use nalgebra::DMatrix;
use nilwalk::graph_model::{triangular, TriangularParams};
use nilwalk::harmonic::{analyze, RealizationOverrides};

fn main() -> nilwalk::Result<()> {
    for (label, params) in [
        ("symmetric", TriangularParams::with_epsilon(0.35, 0.3, 0.35, 0.0)),
        ("skewed", TriangularParams::new(0.25, 0.15, 0.2, 0.1, 0.2, 0.1)),
    ] {
        let g = triangular(params)?;
        let w = analyze(&g, &RealizationOverrides::default())?;
        println!("{label}: p = {:?}", params.to_vec());
        println!("  rho = {:?}", w.gamma.rho);
        println!("  gram = {:?}", rows(&w.albanese.gram));
        println!("  vol(Alb) = {:.6}", w.albanese.volume);
        println!("  beta = {:?}", w.beta.beta);
        if let Some(b) = &w.beta.beta_frame {
            println!("  beta in the frame = {b:?}");
        }
        println!("  harmonic residual = {:.1e}", w.phi.residual());
    }
    Ok(())
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter()
        .map(|r| r.iter().map(|x| (x * 1e12).round() / 1e12).collect())
        .collect()
}
