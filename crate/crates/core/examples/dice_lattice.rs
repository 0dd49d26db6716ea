//! The Heisenberg dice lattice. Harmonicity leaves the central offsets
//! `κ1, κ2` of the two outer vertices free; for this centered walk neither
//! the drift `β` nor the Albanese volume depends on them.

use nilwalk::graph_model::{dice, DiceParams};
use nilwalk::harmonic::{analyze, RealizationOverrides};

fn main() -> nilwalk::Result<()> {
    let g = dice(DiceParams::new(0.2, 0.2, 0.1, 0.3, 0.3, 0.4))?;
    println!("vertices {:?}, {} edges", g.vertices(), g.edges().len());
    let m = nilwalk::graph_model::invariant_measure(&g)?;
    println!("invariant measure {:?}", m.m);

    for (k1, k2) in [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (-0.5, 2.0)] {
        let ov = RealizationOverrides {
            higher_layers: vec![(1, vec![k1]), (2, vec![-k2])],
        };
        let w = analyze(&g, &ov)?;
        println!(
            "kappa = ({k1:+.1}, {k2:+.1}): beta = {:+.6}, inv vol = {:.6}, residual {:.1e}",
            w.beta.beta[0],
            w.albanese.inv_volume(),
            w.phi.residual()
        );
    }
    Ok(())
}
