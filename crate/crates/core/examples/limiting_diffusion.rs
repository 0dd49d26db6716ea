//! The limiting diffusion of the triangular-lattice walk, simulated with the
//! Castell scheme and with an Euler scheme, compared moment by moment.

use nilwalk::diffusion::{castell_simulate, crosscheck, euler_simulate};
use nilwalk::graph_model::{triangular, TriangularParams};
use nilwalk::harmonic::{analyze, RealizationOverrides};
use nilwalk::{DiffusionSpec, DriftKind};

fn main() -> nilwalk::Result<()> {
    let g = triangular(TriangularParams::new(0.25, 0.15, 0.2, 0.1, 0.2, 0.1))?;
    let w = analyze(&g, &RealizationOverrides::default())?;
    let mut spec = DiffusionSpec::for_walk(&w, DriftKind::Beta)?;
    spec.paths = 20_000;
    spec.stride = 64;
    println!("frame {:?}", spec.frame());
    println!("drift {:?}, {} steps of {}", spec.drift(), spec.steps(), spec.h);

    let castell = castell_simulate(&spec)?;
    let mut other = spec.clone();
    other.seed += 1;
    let euler = euler_simulate(&other)?;
    let report = crosscheck(&castell, &euler)?;
    for e in report.entries.iter().filter(|e| e.t == 1.0) {
        println!(
            "t = {}: {:<10} castell {:+.4} euler {:+.4}  z = {:+.2}",
            e.t, e.quantity, e.a.value, e.b.value, e.z
        );
    }
    println!("agree within {} sigma: {}", report.sigmas, report.pass);
    Ok(())
}
