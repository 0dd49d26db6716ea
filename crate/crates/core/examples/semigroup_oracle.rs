//! Exact semigroup values `L^n P_{n^{-1/2}} f` for the triangular lattice
//! against a Monte-Carlo estimate of `E f(Y_1)` for the limit diffusion.

use std::time::Instant;

use nilwalk::diffusion::{castell_simulate, DiffusionSpec, DriftKind};
use nilwalk::graph_model::{triangular, TriangularParams};
use nilwalk::harmonic::{analyze, RealizationOverrides};
use nilwalk::verify::{ensemble_expectation, gaussian_bump, semigroup_dp, DpOptions};

fn main() -> nilwalk::Result<()> {
    let g = triangular(TriangularParams::with_epsilon(0.4, 0.3, 0.3, 0.1))?;
    let w = analyze(&g, &RealizationOverrides::default())?;
    let paths: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(100_000);

    let start = Instant::now();
    let mut spec = DiffusionSpec::for_walk(&w, DriftKind::Beta)?;
    spec.paths = paths;
    spec.seed = 5;
    spec.stride = spec.steps();
    let mc = ensemble_expectation(&castell_simulate(&spec)?, &gaussian_bump);
    println!(
        "E f(Y_1) = {:.6} ± {:.6}  ({paths} Castell paths, {:.1}s)",
        mc.value,
        mc.se,
        start.elapsed().as_secs_f64()
    );

    // States below 1e-22 are dropped; the discarded mass bounds the error.
    // The exact n = 64 support is just above the default guard.
    let opts = DpOptions {
        max_states: 20_000_000,
        ..DpOptions::default()
    };
    for n in [4, 16, 64] {
        let start = Instant::now();
        let v = semigroup_dp(&g, &w.phi, &w.gamma, n, &gaussian_bump, &opts)?;
        println!(
            "n = {n:3}: DP = {:.6}  gap = {:.2e}  states = {}  discarded = {:.1e}  ({:.1}s)",
            v.value,
            (v.value - mc.value).abs(),
            v.states,
            v.discarded,
            start.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
