//! Exponential change of measure for a walk with non-zero asymptotic
//! direction: the tilted transition probabilities are centered, and the
//! limit diffusion of the tilted walk is built from their Albanese data.

use nilwalk::graph_model::{triangular, TriangularParams};
use nilwalk::harmonic::{analyze, RealizationOverrides};
use nilwalk::verify::measure_change;

fn main() -> nilwalk::Result<()> {
    let g = triangular(TriangularParams::new(0.3, 0.1, 0.2, 0.1, 0.15, 0.15))?;
    let w = analyze(&g, &RealizationOverrides::default())?;
    println!("rho = {:?}, centered: {}", w.gamma.rho, w.gamma.is_centered(1e-12));

    let tw = measure_change(&g, &w.phi, 11)?;
    println!("lambda* = {:?}", tw.lambda_star);
    println!(
        "Newton iterations {:?}, smallest Hessian eigenvalue {:.4}",
        tw.iterations, tw.min_hessian_eigenvalue
    );
    println!(
        "random-start spread {:.1e}, harmonicity residual {:.1e}",
        tw.start_spread, tw.residual
    );
    for (e, (p, q)) in g.edges().iter().zip(g.probabilities().iter().zip(&tw.twisted_p)) {
        println!("  {:>4}: p = {p:.4} -> {q:.6}", e.label);
    }
    let t = &tw.twisted;
    println!("tilted rho = {:?}", t.gamma.rho);
    println!("tilted gram = {:?}", t.albanese.gram.as_slice());
    println!("tilted beta = {:?}", t.beta.beta);
    Ok(())
}
