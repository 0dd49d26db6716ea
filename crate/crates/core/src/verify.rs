//! Limit-level checks: an exact semigroup oracle by dynamic programming,
//! functional CLT moment tests, the non-harmonic comparison and the
//! exponential measure change for non-centered walks.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::diffusion::{castell_simulate, euler_simulate, DiffusionSpec, DriftKind, CASTELL_MAX_STEP};
use crate::error::{Error, Result};
use crate::graph_model::{
    homological_direction, invariant_measure, HomologicalDirection, InvariantMeasure, VoltageGraph,
};
use crate::harmonic::{albanese, drift_beta, Realization, WalkData};
use crate::lie_core::{BchWorkspace, GradedLieAlgebra, Product};
use crate::stats::{energy_permutation_test, loglog_slope, moments, EnergyTest, Estimate};
use crate::walk_sim::{ergodic_average, sample_walk, ErgodicAverage, PathEnsemble, WalkConfig};

// ---------------------------------------------------------------------------
// Semigroup oracle

/// Default cap on the number of DP states.
pub const DP_STATE_LIMIT: usize = 10_000_000;

/// Per-layer denominators of the deck lattice: layer `k` coordinates of
/// every reachable deck element are multiples of `1 / scale[k-1]`.
pub const DEFAULT_LATTICE_SCALE: [f64; 5] = [1.0, 2.0, 12.0, 24.0, 720.0];

const VERTEX_BITS: u32 = 16;

/// Packs `(vertex, integer lattice coordinates)` into one `u128`.
struct LatticeCodec {
    scale: Vec<f64>,
    bits: u32,
}

impl LatticeCodec {
    fn new(alg: &GradedLieAlgebra, vertices: usize) -> Result<Self> {
        let n = alg.dim();
        if vertices >= 1 << VERTEX_BITS {
            return Err(Error::Resource {
                states: vertices,
                limit: 1 << VERTEX_BITS,
            });
        }
        let bits = (128 - VERTEX_BITS) / n as u32;
        if bits < 16 {
            return Err(Error::Unsupported(format!(
                "group of dimension {n} is too large for packed lattice keys"
            )));
        }
        let scale = (0..n).map(|i| DEFAULT_LATTICE_SCALE[alg.layer_of(i) - 1]).collect();
        Ok(LatticeCodec { scale, bits })
    }

    fn encode(&self, x: usize, coords: &[f64]) -> Result<u128> {
        let half = 1i64 << (self.bits - 1);
        let mut key = x as u128;
        for (c, s) in coords.iter().zip(&self.scale) {
            let v = c * s;
            let r = v.round();
            if (v - r).abs() > 1e-6 {
                return Err(Error::Precondition(format!(
                    "deck element coordinate {c} is not on the lattice with denominator {s}"
                )));
            }
            let r = r as i64;
            if r.abs() >= half {
                return Err(Error::Resource {
                    states: r.unsigned_abs() as usize,
                    limit: half as usize,
                });
            }
            key = (key << self.bits) | (r + half) as u128;
        }
        Ok(key)
    }

    fn decode(&self, mut key: u128, coords: &mut [f64]) -> usize {
        let half = 1i64 << (self.bits - 1);
        let mask = (1u128 << self.bits) - 1;
        for (c, s) in coords.iter_mut().zip(&self.scale).rev() {
            *c = (((key & mask) as i64) - half) as f64 / s;
            key >>= self.bits;
        }
        key as usize
    }
}

/// Exact value of `L_p^n P_{n^{-1/2}} f` at the base point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SemigroupValue {
    pub n: usize,
    pub value: f64,
    /// Support size of the final distribution.
    pub states: usize,
    /// Total probability mass kept (1 up to rounding when nothing is pruned).
    pub mass: f64,
    /// Mass of pruned states; bounds the error of `value` by `sup |f|` times it.
    pub discarded: f64,
}

/// Limits of [`semigroup_dp`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DpOptions {
    pub max_states: usize,
    /// States whose probability falls below this are dropped after each
    /// step; `0` keeps the computation exact.
    pub prune_below: f64,
}

impl Default for DpOptions {
    fn default() -> Self {
        DpOptions {
            max_states: DP_STATE_LIMIT,
            prune_below: 0.0,
        }
    }
}

/// Forward DP over `(vertex, deck element)` with exact lattice keys; the
/// walk starts at `(0, 𝟏_G)` and `f` is evaluated at
/// `τ_{n^{-1/2}}(Φ(x, γ) * exp(-nρ))`.
///
/// Step-2 groups with a one-dimensional second layer use dense fibers over
/// the second-layer lattice, since a step only translates them.
pub fn semigroup_dp(
    g: &VoltageGraph,
    phi: &Realization,
    gamma: &HomologicalDirection,
    n: usize,
    f: &dyn Fn(&[f64]) -> f64,
    opts: &DpOptions,
) -> Result<SemigroupValue> {
    let alg = g.algebra();
    if alg.step() == 2 && alg.layer_dims()[1] == 1 && opts.prune_below == 0.0 {
        dp_fibers(g, phi, gamma, n, f, opts)
    } else {
        dp_hash(g, phi, gamma, n, f, opts)
    }
}

/// Evaluates `f` at the read-out of every `(vertex, deck coords, mass)`.
struct Readout<'a> {
    alg: &'a GradedLieAlgebra,
    phi: &'a Realization,
    drift: Vec<f64>,
    scale: f64,
    ws: BchWorkspace,
    pos: Vec<f64>,
    centered: Vec<f64>,
    scaled: Vec<f64>,
    value: f64,
    mass: f64,
}

impl<'a> Readout<'a> {
    fn new(alg: &'a GradedLieAlgebra, phi: &'a Realization, gamma: &HomologicalDirection, n: usize) -> Self {
        let dim = alg.dim();
        let mut drift = vec![0.0; dim];
        for (d, r) in drift[alg.layer_range(1)].iter_mut().zip(&gamma.rho) {
            *d = -(n as f64) * r;
        }
        Readout {
            alg,
            phi,
            drift,
            scale: if n == 0 { 1.0 } else { (n as f64).powf(-0.5) },
            ws: BchWorkspace::new(dim),
            pos: vec![0.0; dim],
            centered: vec![0.0; dim],
            scaled: vec![0.0; dim],
            value: 0.0,
            mass: 0.0,
        }
    }

    fn add(&mut self, x: usize, coords: &[f64], q: f64, f: &dyn Fn(&[f64]) -> f64) {
        let alg = self.alg;
        alg.bch_with(
            coords,
            self.phi.offset(x).coords(),
            Product::Original,
            &mut self.pos,
            &mut self.ws,
        );
        alg.bch_with(&self.pos, &self.drift, Product::Limit, &mut self.centered, &mut self.ws);
        alg.dilate_into(&self.centered, self.scale, &mut self.scaled);
        self.value += q * f(&self.scaled);
        self.mass += q;
    }
}

fn dp_hash(
    g: &VoltageGraph,
    phi: &Realization,
    gamma: &HomologicalDirection,
    n: usize,
    f: &dyn Fn(&[f64]) -> f64,
    opts: &DpOptions,
) -> Result<SemigroupValue> {
    let alg = g.algebra().clone();
    let dim = alg.dim();
    let codec = LatticeCodec::new(&alg, g.num_vertices())?;
    let voltages: Vec<Vec<f64>> = g.edges().iter().map(|e| e.voltage.coords().to_vec()).collect();
    let mut ws = BchWorkspace::new(dim);
    let mut cur: FxHashMap<u128, f64> = FxHashMap::default();
    cur.insert(codec.encode(0, &vec![0.0; dim])?, 1.0);
    let mut coords = vec![0.0; dim];
    let mut prod = vec![0.0; dim];
    let mut discarded = 0.0;
    for _ in 0..n {
        let mut next: FxHashMap<u128, f64> = FxHashMap::default();
        next.reserve(cur.len() * 2);
        // Sorted traversal keeps the floating-point accumulation order fixed.
        let mut keys: Vec<u128> = cur.keys().copied().collect();
        keys.sort_unstable();
        for key in keys {
            let q = cur[&key];
            let x = codec.decode(key, &mut coords);
            for &e in g.out_edges(x) {
                let edge = g.edge(e);
                if edge.p == 0.0 {
                    continue;
                }
                alg.bch_with(&coords, &voltages[e], Product::Original, &mut prod, &mut ws);
                *next.entry(codec.encode(edge.terminus, &prod)?).or_insert(0.0) += q * edge.p;
            }
        }
        if opts.prune_below > 0.0 {
            next.retain(|_, q| {
                let keep = *q >= opts.prune_below;
                if !keep {
                    discarded += *q;
                }
                keep
            });
        }
        if next.len() > opts.max_states {
            return Err(Error::Resource {
                states: next.len(),
                limit: opts.max_states,
            });
        }
        cur = next;
    }
    let mut out = Readout::new(&alg, phi, gamma, n);
    let mut keys: Vec<u128> = cur.keys().copied().collect();
    keys.sort_unstable();
    for key in keys {
        let x = codec.decode(key, &mut coords);
        out.add(x, &coords, cur[&key], f);
    }
    Ok(SemigroupValue {
        n,
        value: out.value,
        states: cur.len(),
        mass: out.mass,
        discarded,
    })
}

/// Dense probabilities over consecutive second-layer lattice points.
#[derive(Clone, Debug, Default)]
struct Fiber {
    offset: i64,
    data: Vec<f64>,
}

impl Fiber {
    /// `self[z + shift] += w · src[z]`.
    fn add_shifted(&mut self, src: &Fiber, shift: i64, w: f64) {
        let lo = src.offset + shift;
        let hi = lo + src.data.len() as i64;
        if self.data.is_empty() {
            self.offset = lo;
            self.data = vec![0.0; src.data.len()];
        } else {
            if lo < self.offset {
                let grow = (self.offset - lo) as usize;
                self.data.splice(0..0, std::iter::repeat_n(0.0, grow));
                self.offset = lo;
            }
            let end = self.offset + self.data.len() as i64;
            if hi > end {
                self.data.resize(self.data.len() + (hi - end) as usize, 0.0);
            }
        }
        let at = (lo - self.offset) as usize;
        for (t, s) in self.data[at..at + src.data.len()].iter_mut().zip(&src.data) {
            *t += w * s;
        }
    }

    fn support(&self) -> usize {
        self.data.iter().filter(|q| **q != 0.0).count()
    }
}

fn lattice_int(v: f64, scale: f64) -> Result<i64> {
    let s = v * scale;
    let r = s.round();
    if (s - r).abs() > 1e-9 {
        return Err(Error::Precondition(format!(
            "coordinate {v} is not on the lattice with denominator {scale}"
        )));
    }
    Ok(r as i64)
}

fn dp_fibers(
    g: &VoltageGraph,
    phi: &Realization,
    gamma: &HomologicalDirection,
    n: usize,
    f: &dyn Fn(&[f64]) -> f64,
    opts: &DpOptions,
) -> Result<SemigroupValue> {
    let alg = g.algebra().clone();
    let dim = alg.dim();
    let d1 = alg.layer_dims()[0];
    let z_scale = DEFAULT_LATTICE_SCALE[1];
    let mut v1 = Vec::with_capacity(g.edges().len());
    let mut v2 = Vec::with_capacity(g.edges().len());
    for e in g.edges() {
        let c = e.voltage.coords();
        v1.push(
            c[..d1]
                .iter()
                .map(|&x| lattice_int(x, 1.0))
                .collect::<Result<Vec<i64>>>()?,
        );
        v2.push(c[d1]);
    }
    let mut cur: FxHashMap<(usize, Vec<i64>), Fiber> = FxHashMap::default();
    cur.insert(
        (0, vec![0; d1]),
        Fiber {
            offset: 0,
            data: vec![1.0],
        },
    );
    let mut a = vec![0.0; dim];
    let mut b = vec![0.0; dim];
    let mut br = vec![0.0; dim];
    for _ in 0..n {
        let mut next: FxHashMap<(usize, Vec<i64>), Fiber> = FxHashMap::default();
        let mut keys: Vec<(usize, Vec<i64>)> = cur.keys().cloned().collect();
        keys.sort_unstable();
        for key in keys {
            let fiber = &cur[&key];
            let (x, k1) = &key;
            for &e in g.out_edges(*x) {
                let edge = g.edge(e);
                if edge.p == 0.0 {
                    continue;
                }
                // (γ_1, z) · (v_1, v_2) = (γ_1 + v_1, z + v_2 + ½[γ_1, v_1]).
                a.iter_mut().for_each(|v| *v = 0.0);
                b.iter_mut().for_each(|v| *v = 0.0);
                for i in 0..d1 {
                    a[i] = k1[i] as f64;
                    b[i] = v1[e][i] as f64;
                }
                alg.bracket_into(&a, &b, Product::Original, &mut br);
                let shift = lattice_int(v2[e] + 0.5 * br[d1], z_scale)?;
                let target: Vec<i64> = k1.iter().zip(&v1[e]).map(|(p, q)| p + q).collect();
                next.entry((edge.terminus, target))
                    .or_default()
                    .add_shifted(fiber, shift, edge.p);
            }
        }
        let states: usize = next.values().map(Fiber::support).sum();
        if states > opts.max_states {
            return Err(Error::Resource {
                states,
                limit: opts.max_states,
            });
        }
        cur = next;
    }
    let mut out = Readout::new(&alg, phi, gamma, n);
    let mut keys: Vec<(usize, Vec<i64>)> = cur.keys().cloned().collect();
    keys.sort_unstable();
    let mut coords = vec![0.0; dim];
    let mut states = 0;
    for key in keys {
        let fiber = &cur[&key];
        for i in 0..d1 {
            coords[i] = key.1[i] as f64;
        }
        for (j, &q) in fiber.data.iter().enumerate() {
            if q != 0.0 {
                coords[d1] = (fiber.offset + j as i64) as f64 / z_scale;
                out.add(key.0, &coords, q, f);
                states += 1;
            }
        }
    }
    Ok(SemigroupValue {
        n,
        value: out.value,
        states,
        mass: out.mass,
        discarded: 0.0,
    })
}

/// The test function `exp(-|y|²/2)` on first-kind coordinates.
pub fn gaussian_bump(y: &[f64]) -> f64 {
    (-0.5 * y.iter().map(|v| v * v).sum::<f64>()).exp()
}

/// Monte-Carlo estimate of `E f(Y_T)` from the final marginal.
pub fn ensemble_expectation(ens: &PathEnsemble, f: &dyn Fn(&[f64]) -> f64) -> Estimate {
    let k = ens.times().len() - 1;
    let vals: Vec<f64> = (0..ens.num_paths()).map(|p| f(ens.point(p, k))).collect();
    Estimate::from_samples(&vals)
}

// ---------------------------------------------------------------------------
// Functional CLT moments

/// A single named comparison with its Monte-Carlo interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub estimate: f64,
    pub target: f64,
    pub se: f64,
    pub ci: [f64; 2],
    pub pass: bool,
}

impl Check {
    fn new(name: String, est: Estimate, target: f64, sigmas: f64) -> Self {
        Check {
            name,
            estimate: est.value,
            target,
            se: est.se,
            ci: [est.value - sigmas * est.se, est.value + sigmas * est.se],
            pass: est.within(target, sigmas),
        }
    }
}

/// Limit moments: the coframe maps first-layer coordinates to frame
/// coordinates, `beta` is the second-layer drift.
#[derive(Clone, Debug, PartialEq)]
pub struct CltTargets {
    pub coframe: DMatrix<f64>,
    pub beta: Vec<f64>,
}

impl CltTargets {
    /// Targets of a centered walk; non-centered walks need
    /// [`measure_change`] first.
    pub fn new(data: &WalkData) -> Result<Self> {
        if !data.gamma.is_centered(1e-10) {
            return Err(Error::Precondition(format!(
                "the walk is not centered (ρ = {:?}); apply the measure change first",
                data.gamma.rho
            )));
        }
        Ok(CltTargets {
            coframe: data.albanese.coframe.clone(),
            beta: data.beta.beta.clone(),
        })
    }

    pub fn with_beta(&self, beta: Vec<f64>) -> Self {
        CltTargets {
            coframe: self.coframe.clone(),
            beta,
        }
    }
}

/// Tuning of [`functional_clt`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CltConfig {
    pub n: usize,
    pub paths: usize,
    pub times: Vec<f64>,
    pub seed: u64,
    pub diffusion_paths: usize,
    pub h: f64,
    pub energy_subsample: usize,
    pub permutations: usize,
    /// Rejection level of the energy test.
    pub level: f64,
    pub sigmas: f64,
    /// Starting vertex of the walk.
    #[serde(default)]
    pub start: usize,
}

impl Default for CltConfig {
    fn default() -> Self {
        CltConfig {
            n: 4096,
            paths: 100_000,
            times: vec![0.5, 1.0],
            seed: 1,
            diffusion_paths: 2000,
            h: crate::diffusion::DEFAULT_STEP,
            energy_subsample: 1000,
            permutations: 1000,
            level: 0.01,
            sigmas: 3.0,
            start: 0,
        }
    }
}

/// Moment checks and the energy test at one time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CltReport {
    pub t: f64,
    pub checks: Vec<Check>,
    pub energy: Option<EnergyTest>,
    pub pass: bool,
}

/// Compares the walk marginal at `t` with the limit: first-layer frame
/// coordinates have mean 0 and covariance `tI`, the second layer has mean
/// `tβ`, and (when given) the diffusion marginal is not distinguishable by
/// the energy permutation test.
pub fn clt_moment_test(
    walk: &PathEnsemble,
    targets: &CltTargets,
    diffusion: Option<&PathEnsemble>,
    t: f64,
    cfg: &CltConfig,
) -> Result<CltReport> {
    let alg = walk.algebra().clone();
    let d1 = alg.layer_dims()[0];
    if targets.coframe.nrows() != d1 {
        return Err(Error::Structural("targets do not match the walk's group".into()));
    }
    let sample = walk.marginal_at(t)?;
    let frame: Vec<Vec<f64>> = sample
        .iter()
        .map(|y| {
            let v = &targets.coframe * DVector::from_column_slice(&y[..d1]);
            v.iter().copied().collect()
        })
        .collect();
    let m = moments(&frame);
    let mut checks = Vec::new();
    for i in 0..d1 {
        checks.push(Check::new(
            format!("layer1 frame mean[{i}]"),
            m.mean[i],
            0.0,
            cfg.sigmas,
        ));
    }
    for i in 0..d1 {
        for j in i..d1 {
            let target = if i == j { t } else { 0.0 };
            checks.push(Check::new(
                format!("layer1 frame cov[{i}][{j}]"),
                m.cov[i * d1 + j],
                target,
                cfg.sigmas,
            ));
        }
    }
    if alg.step() >= 2 {
        for (k, idx) in alg.layer_range(2).enumerate() {
            let est = Estimate::from_samples(&sample.iter().map(|y| y[idx]).collect::<Vec<_>>());
            checks.push(Check::new(
                format!("layer2 mean[{k}]"),
                est,
                t * targets.beta[k],
                cfg.sigmas,
            ));
        }
    }
    let energy = match diffusion {
        Some(diff) => {
            let other = diff.marginal_at(t)?;
            let a: Vec<Vec<f64>> = sample.iter().take(cfg.energy_subsample).cloned().collect();
            let b: Vec<Vec<f64>> = other.into_iter().take(cfg.energy_subsample).collect();
            Some(energy_permutation_test(
                &a,
                &b,
                cfg.permutations,
                cfg.seed ^ 0x0e4e_6779,
            ))
        }
        None => None,
    };
    let pass = checks.iter().all(|c| c.pass) && energy.is_none_or(|e| e.p_value >= cfg.level);
    Ok(CltReport {
        t,
        checks,
        energy,
        pass,
    })
}

/// [`clt_moment_test`] at every configured time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FunctionalCltReport {
    pub n: usize,
    pub paths: usize,
    pub reports: Vec<CltReport>,
    pub pass: bool,
}

/// Runs the moment battery on precomputed ensembles.
pub fn functional_clt_from(
    walk: &PathEnsemble,
    targets: &CltTargets,
    diffusion: Option<&PathEnsemble>,
    n: usize,
    cfg: &CltConfig,
) -> Result<FunctionalCltReport> {
    let reports = cfg
        .times
        .iter()
        .map(|&t| clt_moment_test(walk, targets, diffusion, t, cfg))
        .collect::<Result<Vec<_>>>()?;
    let pass = reports.iter().all(|r| r.pass);
    Ok(FunctionalCltReport {
        n,
        paths: walk.num_paths(),
        reports,
        pass,
    })
}

/// Simulates the scaled walk recorded at `cfg.times`.
pub fn clt_walk(
    g: &VoltageGraph,
    phi: &Realization,
    gamma: &HomologicalDirection,
    cfg: &CltConfig,
) -> Result<PathEnsemble> {
    let horizon = cfg.times.iter().copied().fold(0.0, f64::max);
    let wc = WalkConfig {
        horizon,
        start: cfg.start,
        ..WalkConfig::new(cfg.n, cfg.paths, cfg.seed)
    }
    .recording_at(&cfg.times);
    sample_walk(g, phi, gamma, &wc)
}

/// Simulates the limit diffusion recorded at `cfg.times`, by Castell's
/// representation when the step allows it and by the Euler scheme otherwise.
pub fn clt_diffusion(spec: &DiffusionSpec, cfg: &CltConfig) -> Result<PathEnsemble> {
    let horizon = cfg.times.iter().copied().fold(0.0, f64::max);
    let mut spec = spec.clone();
    spec.horizon = horizon;
    spec.h = cfg.h;
    spec.paths = cfg.diffusion_paths;
    spec.seed = cfg.seed.wrapping_add(0x9e37_79b9);
    let spec = spec.recording_at(&cfg.times);
    if spec.algebra().step() <= CASTELL_MAX_STEP {
        castell_simulate(&spec)
    } else {
        euler_simulate(&spec)
    }
}

/// Full battery: simulate the walk driven by `phi` and the diffusion of
/// `data`, then test every configured time.
pub fn functional_clt(
    g: &VoltageGraph,
    phi: &Realization,
    data: &WalkData,
    cfg: &CltConfig,
) -> Result<FunctionalCltReport> {
    let targets = CltTargets::new(data)?;
    let walk = clt_walk(g, phi, &data.gamma, cfg)?;
    let diff = clt_diffusion(&DiffusionSpec::for_walk(data, DriftKind::Beta)?, cfg)?;
    functional_clt_from(&walk, &targets, Some(&diff), cfg.n, cfg)
}

// ---------------------------------------------------------------------------
// Non-harmonic realizations

/// Random first-layer perturbations of size at most `scale` for every
/// vertex except the base vertex.
pub fn random_offset_perturbation(g: &VoltageGraph, scale: f64, seed: u64) -> Vec<Vec<f64>> {
    let d1 = g.algebra().layer_dims()[0];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..g.num_vertices())
        .map(|x| {
            (0..d1)
                .map(|_| {
                    let u: f64 = rng.random::<f64>() * 2.0 - 1.0;
                    if x == 0 {
                        0.0
                    } else {
                        scale * u
                    }
                })
                .collect()
        })
        .collect()
}

/// Mean over paths of `max_k ‖Y_k^{-1} * Ȳ_k‖_Hom` for walks driven by
/// the same edges through two realizations.
pub fn sup_gap(
    g: &VoltageGraph,
    phi: &Realization,
    phi_bar: &Realization,
    gamma: &HomologicalDirection,
    n: usize,
    paths: usize,
    seed: u64,
) -> Result<Estimate> {
    let cfg = WalkConfig::new(n, paths, seed);
    let a = sample_walk(g, phi, gamma, &cfg)?;
    let b = sample_walk(g, phi_bar, gamma, &cfg)?;
    let alg = g.algebra().clone();
    let dim = alg.dim();
    let mut ws = BchWorkspace::new(dim);
    let mut inv = vec![0.0; dim];
    let mut diff = vec![0.0; dim];
    let sups: Vec<f64> = (0..paths)
        .map(|p| {
            let mut best: f64 = 0.0;
            for k in 0..a.times().len() {
                for (v, c) in inv.iter_mut().zip(a.point(p, k)) {
                    *v = -c;
                }
                alg.bch_with(&inv, b.point(p, k), Product::Limit, &mut diff, &mut ws);
                best = best.max(alg.hom_norm_coords(&diff));
            }
            best
        })
        .collect();
    Ok(Estimate::from_samples(&sups))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapPoint {
    pub n: usize,
    pub gap: Estimate,
}

/// Largest acceptable fitted decay exponent of the sup-gap.
pub const GAP_EXPONENT_BOUND: f64 = -0.4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NonharmonicReport {
    pub clt: FunctionalCltReport,
    pub gaps: Vec<GapPoint>,
    pub exponent: f64,
    /// Fitted `C` in `gap ≈ C n^{exponent}`.
    pub constant: f64,
    pub pass: bool,
}

/// Reruns the CLT battery with the walk read through `phi_bar` and fits the
/// decay of the sup-gap between the two lifts over `gap_ns`.
pub fn nonharmonic_test(
    g: &VoltageGraph,
    phi_bar: &Realization,
    data: &WalkData,
    cfg: &CltConfig,
    gap_ns: &[usize],
    gap_paths: usize,
) -> Result<NonharmonicReport> {
    let clt = functional_clt(g, phi_bar, data, cfg)?;
    let gaps = gap_ns
        .iter()
        .map(|&n| {
            Ok(GapPoint {
                n,
                gap: sup_gap(g, &data.phi, phi_bar, &data.gamma, n, gap_paths, cfg.seed)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let xs: Vec<f64> = gaps.iter().map(|p| p.n as f64).collect();
    let ys: Vec<f64> = gaps.iter().map(|p| p.gap.value).collect();
    let exponent = loglog_slope(&xs, &ys);
    let lx = xs.iter().map(|v| v.ln()).sum::<f64>() / xs.len() as f64;
    let ly = ys.iter().map(|v| v.ln()).sum::<f64>() / ys.len() as f64;
    let constant = (ly - exponent * lx).exp();
    let pass = clt.pass && exponent <= GAP_EXPONENT_BOUND;
    Ok(NonharmonicReport {
        clt,
        gaps,
        exponent,
        constant,
        pass,
    })
}

// ---------------------------------------------------------------------------
// Measure change

/// Gradient tolerance of the Newton iteration on `log F_x`.
pub const NEWTON_TOL: f64 = 1e-12;
const NEWTON_CAP: usize = 200;
/// Tolerance of the twisted harmonicity residual.
pub const TWIST_RESIDUAL_TOL: f64 = 1e-10;
/// Agreement required between Newton runs from different starts.
pub const START_AGREEMENT: f64 = 1e-8;

/// Result of [`measure_change`].
#[derive(Clone, Debug)]
pub struct TwistData {
    /// `λ*(x)` per vertex, in the dual basis of `g^(1)`.
    pub lambda_star: Vec<Vec<f64>>,
    pub twisted_p: Vec<f64>,
    pub graph: VoltageGraph,
    /// Measure, direction, realization, Albanese data and `β` under `𝔭`.
    pub twisted: WalkData,
    /// `max_x |Σ 𝔭(e) log dΦ_0(e)|_1|`.
    pub residual: f64,
    /// Largest distance of a random-start Newton limit from `λ*`.
    pub start_spread: f64,
    pub iterations: Vec<usize>,
    /// Smallest Hessian eigenvalue of `F_x` at `λ*` over vertices.
    pub min_hessian_eigenvalue: f64,
}

#[derive(Clone, Debug)]
struct NewtonOutcome {
    lambda: Vec<f64>,
    iterations: usize,
}

/// Minimizes `log F(λ) = log Σ p_e exp(⟨λ, a_e⟩)` by damped Newton.
fn newton_log_f(p: &[f64], a: &[Vec<f64>], start: &[f64], vertex: usize) -> Result<NewtonOutcome> {
    let d = start.len();
    let eval = |lam: &[f64]| -> (f64, DVector<f64>, DMatrix<f64>) {
        let s: Vec<f64> = a
            .iter()
            .map(|ae| ae.iter().zip(lam).map(|(x, l)| x * l).sum())
            .collect();
        let mx = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = p.iter().zip(&s).map(|(pe, se)| pe * (se - mx).exp()).collect();
        let z: f64 = w.iter().sum();
        let mut mean = DVector::zeros(d);
        let mut second = DMatrix::zeros(d, d);
        for (we, ae) in w.iter().zip(a) {
            let v = DVector::from_column_slice(ae);
            mean += &v * (we / z);
            second += &v * v.transpose() * (we / z);
        }
        let hess = second - &mean * mean.transpose();
        (mx + z.ln(), mean, hess)
    };
    let mut lam = start.to_vec();
    let mut trace = Vec::new();
    for it in 0..NEWTON_CAP {
        let (val, grad, hess) = eval(&lam);
        let gnorm = grad.amax();
        trace.push(gnorm);
        if gnorm <= NEWTON_TOL {
            return Ok(NewtonOutcome {
                lambda: lam,
                iterations: it,
            });
        }
        let step = hess
            .clone()
            .cholesky()
            .map(|c| c.solve(&(-&grad)))
            .ok_or_else(|| Error::Numerical(format!("vertex {vertex}: Hessian of F is not positive definite")))?;
        let slope = grad.dot(&step);
        let mut t = 1.0;
        loop {
            let cand: Vec<f64> = lam.iter().zip(step.iter()).map(|(l, s)| l + t * s).collect();
            let (cv, cg, _) = eval(&cand);
            // Near the minimum the decrease in log F is below rounding, so a
            // smaller gradient also accepts the step.
            if cv <= val + 1e-4 * t * slope || cg.amax() < gnorm || t < 1e-12 {
                lam = cand;
                break;
            }
            t *= 0.5;
        }
    }
    Err(Error::Numerical(format!(
        "vertex {vertex}: Newton did not converge in {NEWTON_CAP} steps; gradient trace {trace:?}"
    )))
}

/// Exponential tilt making `Φ_0` harmonic for new transition
/// probabilities `𝔭`, with `λ*(x)` the minimizer of
/// `F_x(λ) = Σ_{e∈E_x} p(e) exp(⟨λ, log dΦ_0(e)|_1⟩)`.
pub fn measure_change(g: &VoltageGraph, phi0: &Realization, seed: u64) -> Result<TwistData> {
    if let Some(e) = g.edges().iter().position(|e| e.p <= 0.0) {
        return Err(Error::Precondition(format!(
            "the measure change needs strictly positive probabilities; edge {e} has p = 0"
        )));
    }
    let alg = g.algebra().clone();
    let d1 = alg.layer_dims()[0];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lambda_star = Vec::with_capacity(g.num_vertices());
    let mut iterations = Vec::new();
    let mut start_spread: f64 = 0.0;
    let mut min_eig = f64::INFINITY;
    let mut twisted_p = vec![0.0; g.edges().len()];
    for x in 0..g.num_vertices() {
        let out = g.out_edges(x);
        let p: Vec<f64> = out.iter().map(|&e| g.edge(e).p).collect();
        let a: Vec<Vec<f64>> = out.iter().map(|&e| phi0.increment(e).layer(1).to_vec()).collect();
        let main = newton_log_f(&p, &a, &vec![0.0; d1], x)?;
        for _ in 0..5 {
            let start: Vec<f64> = (0..d1).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
            let probe = newton_log_f(&p, &a, &start, x)?;
            let gap = probe
                .lambda
                .iter()
                .zip(&main.lambda)
                .fold(0.0f64, |m, (u, v)| m.max((u - v).abs()));
            start_spread = start_spread.max(gap);
        }
        let lam = main.lambda;
        let weights: Vec<f64> = p
            .iter()
            .zip(&a)
            .map(|(pe, ae)| pe * ae.iter().zip(&lam).map(|(u, l)| u * l).sum::<f64>().exp())
            .collect();
        let f: f64 = weights.iter().sum();
        let mut hess = DMatrix::<f64>::zeros(d1, d1);
        for (w, ae) in weights.iter().zip(&a) {
            let v = DVector::from_column_slice(ae);
            hess += &v * v.transpose() * *w;
        }
        min_eig = min_eig.min(hess.symmetric_eigenvalues().min());
        for (&e, w) in out.iter().zip(&weights) {
            twisted_p[e] = w / f;
        }
        iterations.push(main.iterations);
        lambda_star.push(lam);
    }
    let graph = g.with_probabilities(&twisted_p)?;
    let mut residual: f64 = 0.0;
    for x in 0..g.num_vertices() {
        let mut s = vec![0.0; d1];
        for &e in graph.out_edges(x) {
            for (si, v) in s.iter_mut().zip(phi0.increment(e).layer(1)) {
                *si += twisted_p[e] * v;
            }
        }
        residual = residual.max(s.iter().fold(0.0, |m, v| m.max(v.abs())));
    }
    if residual > TWIST_RESIDUAL_TOL {
        return Err(Error::Numerical(format!(
            "twisted walk is not harmonic: residual {residual:e}"
        )));
    }
    let measure = invariant_measure(&graph)?;
    let gamma = homological_direction(&graph, &measure)?;
    let phi = Realization::from_offsets(&graph, &gamma, phi0.offsets().to_vec())?;
    let alb = albanese(&graph, &measure, &gamma, &phi)?;
    let beta = drift_beta(&graph, &measure, &gamma, &phi, &alb)?;
    Ok(TwistData {
        lambda_star,
        twisted_p,
        graph,
        twisted: WalkData {
            measure,
            gamma,
            phi,
            albanese: alb,
            beta,
        },
        residual,
        start_spread,
        iterations,
        min_hessian_eigenvalue: min_eig,
    })
}

/// `β^(𝔭)` component `k` as the stationary mean of an edge functional, to
/// compare against the direct sum by an ergodic average.
pub fn beta_edge_functional(phi: &Realization, k: usize) -> Vec<f64> {
    let alg = phi.algebra();
    let idx = alg.layer_range(2).start + k;
    phi.increments().iter().map(|inc| inc.coords()[idx]).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwistedCltReport {
    pub residual: f64,
    pub start_spread: f64,
    pub lambda_star: Vec<Vec<f64>>,
    pub beta_direct: Vec<f64>,
    pub beta_ergodic: Vec<ErgodicAverage>,
    pub beta_agree: bool,
    pub clt: FunctionalCltReport,
    pub pass: bool,
}

/// Measure change followed by the CLT battery for the `𝔭`-walk against the
/// diffusion built from `g_0^(𝔭)` and `β^(𝔭)`.
pub fn twisted_clt_test(
    g: &VoltageGraph,
    phi0: &Realization,
    cfg: &CltConfig,
    ergodic_steps: usize,
) -> Result<TwistedCltReport> {
    let twist = measure_change(g, phi0, cfg.seed)?;
    let data = &twist.twisted;
    let mut beta_ergodic = Vec::new();
    let mut beta_agree = true;
    // ρ_𝔭 = 0, so log(dΦ_0 · exp(-ρ))|_2 is just the layer-2 increment.
    for (k, &b) in data.beta.beta.iter().enumerate() {
        let f = beta_edge_functional(&data.phi, k);
        let avg = ergodic_average(&twist.graph, &data.measure, &f, ergodic_steps, 0, cfg.seed ^ 0xe60d)?;
        beta_agree &= (avg.trajectory - b).abs() <= 4.0 * avg.se && (avg.stationary - b).abs() <= 1e-12;
        beta_ergodic.push(avg);
    }
    let clt = functional_clt(&twist.graph, &data.phi, data, cfg)?;
    let pass = twist.residual <= TWIST_RESIDUAL_TOL && twist.start_spread <= START_AGREEMENT && beta_agree && clt.pass;
    Ok(TwistedCltReport {
        residual: twist.residual,
        start_spread: twist.start_spread,
        lambda_star: twist.lambda_star.clone(),
        beta_direct: data.beta.beta.clone(),
        beta_ergodic,
        beta_agree,
        clt,
        pass,
    })
}

/// Stationary check used by tests: `Σ m̃(e) f(e)`.
pub fn stationary_mean(m: &InvariantMeasure, f: &[f64]) -> f64 {
    m.edge.iter().zip(f).map(|(a, b)| a * b).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph_model::{dice, triangular, DiceParams, TriangularParams};
    use crate::harmonic::{analyze, RealizationOverrides};
    use crate::lie_core::GroupElement;
    use approx::assert_abs_diff_eq;

    fn tri() -> (VoltageGraph, WalkData) {
        let g = triangular(TriangularParams::new(0.25, 0.15, 0.2, 0.1, 0.2, 0.1)).unwrap();
        let w = analyze(&g, &RealizationOverrides::default()).unwrap();
        (g, w)
    }

    #[test]
    fn codec_round_trips() {
        let alg = GradedLieAlgebra::heisenberg();
        let codec = LatticeCodec::new(&alg, 3).unwrap();
        let key = codec.encode(2, &[-3.0, 5.0, -2.5]).unwrap();
        let mut c = vec![0.0; 3];
        assert_eq!(codec.decode(key, &mut c), 2);
        assert_eq!(c, vec![-3.0, 5.0, -2.5]);
        assert!(codec.encode(0, &[0.3, 0.0, 0.0]).is_err());
    }

    #[test]
    fn dp_zero_and_one_step() {
        let (g, w) = tri();
        let f = |y: &[f64]| y[0] + 2.0 * y[1] + 3.0 * y[2] + gaussian_bump(y);
        let v0 = semigroup_dp(&g, &w.phi, &w.gamma, 0, &f, &DpOptions::default()).unwrap();
        assert_eq!(v0.value, f(&[0.0, 0.0, 0.0]));
        let v1 = semigroup_dp(&g, &w.phi, &w.gamma, 1, &f, &DpOptions::default()).unwrap();
        let direct: f64 = g
            .out_edges(0)
            .iter()
            .map(|&e| g.edge(e).p * f(w.phi.increment(e).coords()))
            .sum();
        assert_abs_diff_eq!(v1.value, direct, epsilon = 1e-15);
    }

    #[test]
    fn fiber_and_hash_dp_agree() {
        let g = crate::graph_model::dice(DiceParams::new(0.2, 0.15, 0.15, 0.25, 0.4, 0.35)).unwrap();
        let w = analyze(&g, &RealizationOverrides::default()).unwrap();
        let f = |y: &[f64]| gaussian_bump(y) * (1.0 + y[2]);
        let a = dp_fibers(&g, &w.phi, &w.gamma, 10, &f, &DpOptions::default()).unwrap();
        let b = dp_hash(&g, &w.phi, &w.gamma, 10, &f, &DpOptions::default()).unwrap();
        assert_eq!(a.states, b.states);
        assert_abs_diff_eq!(a.value, b.value, epsilon = 1e-14);
    }

    #[test]
    fn dp_mass_is_one_and_guard_trips() {
        let (g, w) = tri();
        let v = semigroup_dp(&g, &w.phi, &w.gamma, 12, &gaussian_bump, &DpOptions::default()).unwrap();
        assert_abs_diff_eq!(v.mass, 1.0, epsilon = 1e-12);
        assert!(matches!(
            semigroup_dp(
                &g,
                &w.phi,
                &w.gamma,
                12,
                &gaussian_bump,
                &DpOptions {
                    max_states: 100,
                    prune_below: 0.0
                }
            ),
            Err(Error::Resource { .. })
        ));
    }

    #[test]
    fn dp_agrees_with_monte_carlo_at_sixteen() {
        let (g, w) = tri();
        let dp = semigroup_dp(&g, &w.phi, &w.gamma, 16, &gaussian_bump, &DpOptions::default()).unwrap();
        let ens = sample_walk(
            &g,
            &w.phi,
            &w.gamma,
            &WalkConfig {
                stride: 16,
                ..WalkConfig::new(16, 200_000, 8)
            },
        )
        .unwrap();
        let mc = ensemble_expectation(&ens, &gaussian_bump);
        assert!(mc.within(dp.value, 4.0), "{dp:?} {mc:?}");
    }

    #[test]
    fn clt_requires_centering() {
        let g = dice(DiceParams::new(0.2, 0.2, 0.1, 0.3, 0.3, 0.4)).unwrap();
        let w = analyze(&g, &RealizationOverrides::default()).unwrap();
        assert!(matches!(CltTargets::new(&w), Err(Error::Precondition(_))));
    }

    #[test]
    fn small_clt_passes_and_flipped_beta_fails() {
        let (g, w) = tri();
        let cfg = CltConfig {
            n: 256,
            paths: 20_000,
            diffusion_paths: 500,
            energy_subsample: 500,
            permutations: 200,
            h: 1.0 / 256.0,
            ..CltConfig::default()
        };
        let rep = functional_clt(&g, &w.phi, &w, &cfg).unwrap();
        assert!(rep.pass, "{rep:#?}");
        let walk = clt_walk(&g, &w.phi, &w.gamma, &cfg).unwrap();
        let targets = CltTargets::new(&w).unwrap().with_beta(vec![-0.05]);
        let bad = functional_clt_from(&walk, &targets, None, cfg.n, &cfg).unwrap();
        assert!(!bad.pass);
    }

    #[test]
    fn harmonic_input_gives_zero_twist() {
        let (g, w) = tri();
        let t = measure_change(&g, &w.phi, 3).unwrap();
        for lam in &t.lambda_star {
            assert!(lam.iter().all(|v| v.abs() < 1e-12));
        }
        for (a, b) in t.twisted_p.iter().zip(g.probabilities()) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn dice_twist_centers_and_round_trips() {
        let g = dice(DiceParams::new(0.2, 0.2, 0.1, 0.3, 0.3, 0.4)).unwrap();
        let w = analyze(&g, &RealizationOverrides::default()).unwrap();
        assert!(!w.gamma.is_centered(1e-6));
        let t = measure_change(&g, &w.phi, 9).unwrap();
        assert!(t.residual <= TWIST_RESIDUAL_TOL);
        assert!(t.start_spread <= START_AGREEMENT);
        assert!(t.min_hessian_eigenvalue > 0.0);
        assert!(t.twisted.gamma.is_centered(1e-10));
        let again = measure_change(&t.graph, &t.twisted.phi, 9).unwrap();
        for lam in &again.lambda_star {
            assert!(lam.iter().all(|v| v.abs() < 1e-8));
        }
        for (a, b) in again.twisted_p.iter().zip(&t.twisted_p) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn twist_rejects_zero_probability() {
        let g = triangular(TriangularParams::new(0.5, 0.0, 0.25, 0.0, 0.25, 0.0)).unwrap();
        let m = invariant_measure(&g).unwrap();
        let gamma = homological_direction(&g, &m).unwrap();
        let phi = Realization::trivial(&g, &gamma).unwrap();
        assert!(matches!(measure_change(&g, &phi, 0), Err(Error::Precondition(_))));
    }

    #[test]
    fn identical_lifts_have_zero_gap() {
        let (g, w) = tri();
        let gap = sup_gap(&g, &w.phi, &w.phi, &w.gamma, 64, 10, 1).unwrap();
        assert_eq!(gap.value, 0.0);
        let _ = GroupElement::identity(g.algebra());
    }
}
