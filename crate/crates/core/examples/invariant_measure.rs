//! Invariant measure, homological direction and the modified harmonic
//! realization of a random voltage graph on the Heisenberg group.

use nilwalk::graph_model::{homological_direction, invariant_measure, random_heisenberg_graph};
use nilwalk::harmonic::{martingale_defect, solve_realization};

fn main() -> nilwalk::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let g = random_heisenberg_graph(seed, 4, 3)?;
    println!("{} vertices, {} edges", g.num_vertices(), g.edges().len());

    let m = invariant_measure(&g)?;
    println!("m = {:?}", m.m);
    println!("power iteration: {} steps, residual {:.1e}", m.iterations, m.residual);
    println!("m-symmetric: {}", g.is_m_symmetric(&m, 1e-12));

    let gamma = homological_direction(&g, &m)?;
    println!("rho = {:?}", gamma.rho);

    let phi = solve_realization(&g, &m, &gamma)?;
    for (x, o) in phi.offsets().iter().enumerate() {
        println!("  offset of {}: {:?}", g.vertices()[x], o.log());
    }
    println!("harmonicity residual {:.1e}", phi.residual());
    println!(
        "martingale defect over 3-step paths {:.1e}",
        martingale_defect(&g, &gamma, &phi, 3)
    );
    Ok(())
}
