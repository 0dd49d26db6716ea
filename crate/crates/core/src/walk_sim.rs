//! Monte-Carlo simulation of the rescaled random walk on the covering graph.
//!
//! A path starts at a fixed vertex of the fundamental domain and moves along
//! edges chosen with probabilities `p`. Its realized position is tracked by
//! multiplying the increments `dΦ(e)`, which is the same as evaluating
//! `Φ` at the lifted vertex. The recorded value at step `k` is
//! `τ_{n^{-1/2}}(ξ_k * exp(-kρ))`, or `τ_{n^{-1/2}}(ξ_k)` without centering.
//!
//! Every path owns a ChaCha8 stream indexed by its path number, so results
//! do not depend on how rayon splits the work.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::Distribution;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph_model::{HomologicalDirection, InvariantMeasure, VoltageGraph};
use crate::harmonic::Realization;
use crate::lie_core::{BchWorkspace, GradedLieAlgebra, GroupElement, Product};
use crate::stats::batch_means_se;

/// Parameters of [`sample_walk`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WalkConfig {
    /// Scaling parameter: `n` steps per unit time.
    pub n: usize,
    /// Time horizon `T`; the walk runs `round(nT)` steps.
    pub horizon: f64,
    pub paths: usize,
    pub seed: u64,
    /// Subtract the drift `kρ` before rescaling.
    pub center: bool,
    /// Record every `stride`-th step (the last step is always recorded).
    pub stride: usize,
    /// Starting vertex in the fundamental domain.
    pub start: usize,
}

impl WalkConfig {
    pub fn new(n: usize, paths: usize, seed: u64) -> Self {
        WalkConfig {
            n,
            horizon: 1.0,
            paths,
            seed,
            center: true,
            stride: 1,
            start: 0,
        }
    }

    pub fn steps(&self) -> usize {
        (self.n as f64 * self.horizon).round() as usize
    }

    /// Record only the given times (each rounded to the step grid).
    pub fn recording_at(mut self, times: &[f64]) -> Self {
        let steps: Vec<usize> = times
            .iter()
            .map(|t| (t * self.n as f64).round() as usize)
            .filter(|&k| k > 0)
            .collect();
        self.stride = steps.iter().copied().fold(0, gcd).max(1);
        self
    }

    fn recorded_steps(&self) -> Vec<usize> {
        let steps = self.steps();
        let mut ks: Vec<usize> = (0..=steps).step_by(self.stride.max(1)).collect();
        if *ks.last().unwrap() != steps {
            ks.push(steps);
        }
        ks
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Samples of a `G`-valued process on a common time grid, stored path-major.
#[derive(Clone, Debug)]
pub struct PathEnsemble {
    algebra: Arc<GradedLieAlgebra>,
    times: Vec<f64>,
    paths: usize,
    data: Vec<f64>,
}

impl PathEnsemble {
    /// `data[(p * times.len() + k) * dim + i]` is coordinate `i` of path `p`
    /// at `times[k]`.
    pub fn from_parts(algebra: Arc<GradedLieAlgebra>, times: Vec<f64>, paths: usize, data: Vec<f64>) -> Result<Self> {
        let expected = paths * times.len() * algebra.dim();
        if data.len() != expected {
            return Err(Error::Structural(format!(
                "ensemble data has {} values, expected {expected}",
                data.len()
            )));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Structural("ensemble times must increase".into()));
        }
        Ok(PathEnsemble {
            algebra,
            times,
            paths,
            data,
        })
    }

    pub fn algebra(&self) -> &Arc<GradedLieAlgebra> {
        &self.algebra
    }

    pub fn dim(&self) -> usize {
        self.algebra.dim()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn num_paths(&self) -> usize {
        self.paths
    }

    pub fn raw(&self) -> &[f64] {
        &self.data
    }

    /// Coordinates of path `p` at grid index `k`.
    pub fn point(&self, p: usize, k: usize) -> &[f64] {
        let d = self.dim();
        let at = (p * self.times.len() + k) * d;
        &self.data[at..at + d]
    }

    pub fn element(&self, p: usize, k: usize) -> GroupElement {
        GroupElement::exp(&self.algebra, self.point(p, k)).expect("dimension checked on construction")
    }

    /// Grid index of time `t`, if it is on the grid (to `1e-12`).
    pub fn time_index(&self, t: f64) -> Option<usize> {
        self.times.iter().position(|s| (s - t).abs() <= 1e-12)
    }

    /// All samples at grid index `k`.
    pub fn marginal(&self, k: usize) -> Vec<Vec<f64>> {
        (0..self.paths).map(|p| self.point(p, k).to_vec()).collect()
    }

    /// Samples at time `t`, which must lie on the grid.
    pub fn marginal_at(&self, t: f64) -> Result<Vec<Vec<f64>>> {
        let k = self
            .time_index(t)
            .ok_or_else(|| Error::Domain(format!("time {t} is not on the recorded grid")))?;
        Ok(self.marginal(k))
    }

    /// One coordinate across paths at grid index `k`.
    pub fn coordinate(&self, k: usize, i: usize) -> Vec<f64> {
        (0..self.paths).map(|p| self.point(p, k)[i]).collect()
    }
}

/// Simulates `config.paths` independent walks.
///
/// The increments are read from `phi`, which need not be harmonic.
pub fn sample_walk(
    g: &VoltageGraph,
    phi: &Realization,
    gamma: &HomologicalDirection,
    config: &WalkConfig,
) -> Result<PathEnsemble> {
    let sampler = WalkSampler::new(g, phi, gamma)?;
    if config.n == 0 || config.paths == 0 {
        return Err(Error::Domain("n and paths must be positive".into()));
    }
    if !(config.horizon > 0.0) {
        return Err(Error::Domain(format!(
            "horizon must be positive, got {}",
            config.horizon
        )));
    }
    if config.start >= g.num_vertices() {
        return Err(Error::Domain(format!("start vertex {} out of range", config.start)));
    }
    let recorded = config.recorded_steps();
    let times: Vec<f64> = recorded.iter().map(|&k| k as f64 / config.n as f64).collect();
    let chunks: Vec<Vec<f64>> = (0..config.paths)
        .into_par_iter()
        .map(|p| sampler.run_path(config, p as u64, &recorded))
        .collect();
    let data = chunks.concat();
    PathEnsemble::from_parts(g.algebra().clone(), times, config.paths, data)
}

/// Precomputed tables for fast path generation.
struct WalkSampler {
    algebra: Arc<GradedLieAlgebra>,
    alias: Vec<WeightedAliasIndex<f64>>,
    out: Vec<Vec<usize>>,
    terminus: Vec<usize>,
    increments: Vec<Vec<f64>>,
    rho: Vec<f64>,
}

impl WalkSampler {
    fn new(g: &VoltageGraph, phi: &Realization, gamma: &HomologicalDirection) -> Result<Self> {
        let algebra = g.algebra().clone();
        if phi.increments().len() != g.edges().len() {
            return Err(Error::Structural("realization does not belong to this graph".into()));
        }
        let mut alias = Vec::with_capacity(g.num_vertices());
        let mut out = Vec::with_capacity(g.num_vertices());
        for x in 0..g.num_vertices() {
            let edges = g.out_edges(x).to_vec();
            let weights: Vec<f64> = edges.iter().map(|&e| g.edge(e).p).collect();
            alias.push(WeightedAliasIndex::new(weights).map_err(|e| Error::Structural(format!("vertex {x}: {e}")))?);
            out.push(edges);
        }
        let mut rho = vec![0.0; algebra.dim()];
        rho[algebra.layer_range(1)].copy_from_slice(&gamma.rho);
        Ok(WalkSampler {
            terminus: g.edges().iter().map(|e| e.terminus).collect(),
            increments: phi.increments().iter().map(|g| g.coords().to_vec()).collect(),
            algebra,
            alias,
            out,
            rho,
        })
    }

    fn run_path(&self, config: &WalkConfig, path: u64, recorded: &[usize]) -> Vec<f64> {
        let alg = &*self.algebra;
        let dim = alg.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(path);
        let mut ws = BchWorkspace::new(dim);
        let mut xi = vec![0.0; dim];
        let mut next = vec![0.0; dim];
        let mut drift = vec![0.0; dim];
        let mut centered = vec![0.0; dim];
        let mut record = Vec::with_capacity(recorded.len() * dim);
        let scale = (config.n as f64).powf(-0.5);
        let mut x = config.start;
        let mut k = 0;
        for &target in recorded {
            while k < target {
                let e = self.out[x][self.alias[x].sample(&mut rng)];
                alg.bch_with(&xi, &self.increments[e], Product::Original, &mut next, &mut ws);
                std::mem::swap(&mut xi, &mut next);
                x = self.terminus[e];
                k += 1;
            }
            let base = if config.center {
                for (d, r) in drift.iter_mut().zip(&self.rho) {
                    *d = -(k as f64) * r;
                }
                alg.bch_with(&xi, &drift, Product::Limit, &mut centered, &mut ws);
                &centered
            } else {
                &xi
            };
            let at = record.len();
            record.resize(at + dim, 0.0);
            alg.dilate_into(base, scale, &mut record[at..]);
        }
        record
    }
}

/// A single walk with its quotient vertices, edges, deck transformations
/// and realized positions.
#[derive(Clone, Debug)]
pub struct WalkTrace {
    pub vertices: Vec<usize>,
    pub edges: Vec<usize>,
    /// Deck element `γ_k` of the lifted vertex `(x_k, γ_k)`.
    pub deck: Vec<GroupElement>,
    /// `Φ(x_k, γ_k)`.
    pub positions: Vec<GroupElement>,
}

/// Runs one walk of `steps` steps from `(start, 𝟏_G)`, tracking the deck
/// element and the realized position separately.
pub fn trace_walk(g: &VoltageGraph, phi: &Realization, start: usize, steps: usize, seed: u64) -> Result<WalkTrace> {
    if start >= g.num_vertices() {
        return Err(Error::Domain(format!("start vertex {start} out of range")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = start;
    let mut gamma = GroupElement::identity(g.algebra());
    let mut pos = phi.position(x, &gamma)?;
    let mut trace = WalkTrace {
        vertices: vec![x],
        edges: Vec::with_capacity(steps),
        deck: vec![gamma.clone()],
        positions: vec![pos.clone()],
    };
    for _ in 0..steps {
        let out = g.out_edges(x);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut e = *out.last().unwrap();
        for &cand in out {
            acc += g.edge(cand).p;
            if u < acc {
                e = cand;
                break;
            }
        }
        gamma = gamma.cbh_product(&g.edge(e).voltage, Product::Original)?;
        pos = pos.cbh_product(phi.increment(e), Product::Original)?;
        x = g.edge(e).terminus;
        trace.vertices.push(x);
        trace.edges.push(e);
        trace.deck.push(gamma.clone());
        trace.positions.push(pos.clone());
    }
    Ok(trace)
}

/// Recovers the quotient vertex of every step from `γ_k^{-1} · position_k`,
/// which must equal one of the offsets `Φ(x)` to `tol`.
pub fn recover_vertices(phi: &Realization, trace: &WalkTrace, tol: f64) -> Result<Vec<usize>> {
    trace
        .deck
        .iter()
        .zip(&trace.positions)
        .enumerate()
        .map(|(k, (gamma, pos))| {
            let local = gamma.inverse().cbh_product(pos, Product::Original)?;
            phi.offsets()
                .iter()
                .position(|off| {
                    off.coords()
                        .iter()
                        .zip(local.coords())
                        .all(|(a, b)| (a - b).abs() <= tol)
                })
                .ok_or_else(|| Error::Numerical(format!("step {k}: position matches no vertex offset")))
        })
        .collect()
}

/// Geodesic interpolation `g_k * exp(θ log(g_k^{-1} * g_{k+1}))` between
/// the grid points around `t`.
pub fn interpolate(ens: &PathEnsemble, path: usize, t: f64) -> Result<GroupElement> {
    let times = ens.times();
    let (first, last) = (times[0], *times.last().unwrap());
    if !(t >= first && t <= last) {
        return Err(Error::Domain(format!("time {t} outside [{first}, {last}]")));
    }
    if path >= ens.num_paths() {
        return Err(Error::Domain(format!("path {path} out of range")));
    }
    let k = times
        .partition_point(|&s| s <= t)
        .saturating_sub(1)
        .min(times.len().saturating_sub(2));
    if times.len() == 1 {
        return Ok(ens.element(path, 0));
    }
    let theta = (t - times[k]) / (times[k + 1] - times[k]);
    let gk = ens.element(path, k);
    let step = gk.inverse().cbh_product(&ens.element(path, k + 1), Product::Limit)?;
    let scaled: Vec<f64> = step.coords().iter().map(|v| theta * v).collect();
    gk.cbh_product(&GroupElement::exp(ens.algebra(), &scaled)?, Product::Limit)
}

/// `max_{s<t} ‖Y_s^{-1} * Y_t‖_Hom / (t - s)^α` over the recorded grid of one path.
pub fn holder_stat(ens: &PathEnsemble, path: usize, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(Error::Domain(format!(
            "Hölder exponent must lie in (0, 1/2), got {alpha}"
        )));
    }
    if path >= ens.num_paths() {
        return Err(Error::Domain(format!("path {path} out of range")));
    }
    let alg = ens.algebra();
    let dim = alg.dim();
    let times = ens.times();
    let mut ws = BchWorkspace::new(dim);
    let mut inv = vec![0.0; dim];
    let mut diff = vec![0.0; dim];
    let mut best: f64 = 0.0;
    for s in 0..times.len() {
        for (v, c) in inv.iter_mut().zip(ens.point(path, s)) {
            *v = -c;
        }
        for t in (s + 1)..times.len() {
            alg.bch_with(&inv, ens.point(path, t), Product::Limit, &mut diff, &mut ws);
            let ratio = alg.hom_norm_coords(&diff) / (times[t] - times[s]).powf(alpha);
            best = best.max(ratio);
        }
    }
    Ok(best)
}

/// Time average of an edge functional along one long trajectory, with the
/// stationary value `Σ m̃(e) f(e)` for comparison.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErgodicAverage {
    pub trajectory: f64,
    pub stationary: f64,
    /// Batch-means standard error of the trajectory average.
    pub se: f64,
    pub steps: usize,
}

/// Runs the chain for `steps` steps from `start` and averages `f(e_k)`.
pub fn ergodic_average(
    g: &VoltageGraph,
    m: &InvariantMeasure,
    f: &[f64],
    steps: usize,
    start: usize,
    seed: u64,
) -> Result<ErgodicAverage> {
    if f.len() != g.edges().len() {
        return Err(Error::Structural(format!(
            "functional has {} values for {} edges",
            f.len(),
            g.edges().len()
        )));
    }
    if steps == 0 || start >= g.num_vertices() {
        return Err(Error::Domain("need a positive step count and a valid start".into()));
    }
    let series: Vec<f64> = edge_chain(g, start, steps, seed)?.into_iter().map(|e| f[e]).collect();
    Ok(ErgodicAverage {
        trajectory: series.iter().sum::<f64>() / steps as f64,
        stationary: m.edge.iter().zip(f).map(|(a, b)| a * b).sum(),
        se: batch_means_se(&series, 50),
        steps,
    })
}

/// The sequence of edges traversed by one run of the chain.
pub fn edge_chain(g: &VoltageGraph, start: usize, steps: usize, seed: u64) -> Result<Vec<usize>> {
    let mut alias = Vec::with_capacity(g.num_vertices());
    for x in 0..g.num_vertices() {
        let weights: Vec<f64> = g.out_edges(x).iter().map(|&e| g.edge(e).p).collect();
        alias.push(WeightedAliasIndex::new(weights).map_err(|e| Error::Structural(e.to_string()))?);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = start;
    Ok((0..steps)
        .map(|_| {
            let e = g.out_edges(x)[alias[x].sample(&mut rng)];
            x = g.edge(e).terminus;
            e
        })
        .collect())
}
