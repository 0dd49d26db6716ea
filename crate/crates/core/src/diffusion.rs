//! The limiting `G`-valued diffusion
//! `dY = Σ V_i(Y) ∘ dB^i + V_0(Y) dt` with left-invariant fields, simulated
//! by a group Euler scheme and by Castell's exponential representation.
//!
//! Both schemes work in the limit group `(G, *)`. The Castell form needs
//! the Stratonovich iterated integrals of `(t, B^1, …, B^d)`; these are taken
//! from the piecewise-linear interpolation of the Brownian path on a
//! `h / substeps` mesh, which makes them exact signatures of that polygon.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harmonic::WalkData;
use crate::lie_core::{BchWorkspace, GradedLieAlgebra, Product};
use crate::stats::{moments, Estimate};
use crate::walk_sim::PathEnsemble;

/// Default time step `2^-10`.
pub const DEFAULT_STEP: f64 = 1.0 / 1024.0;

/// Largest step for which the Castell coefficients are implemented.
pub const CASTELL_MAX_STEP: usize = 3;

/// Which vector enters as the drift field `V_0`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DriftKind {
    /// `β(Φ₀) ∈ g^(2)`.
    Beta,
    /// The asymptotic direction `ρ ∈ g^(1)`.
    Rho,
}

/// A diffusion to simulate: frame, drift and discretization.
#[derive(Clone, Debug)]
pub struct DiffusionSpec {
    algebra: Arc<GradedLieAlgebra>,
    frame: Vec<Vec<f64>>,
    drift: Vec<f64>,
    pub horizon: f64,
    pub h: f64,
    pub paths: usize,
    pub seed: u64,
    /// Record every `stride`-th step.
    pub stride: usize,
    /// Sub-mesh refinement for the Castell iterated integrals.
    pub substeps: usize,
}

impl DiffusionSpec {
    /// `frame` holds `V_1, …, V_{d_1}` as full coordinate vectors supported
    /// in `g^(1)`; `drift` is `V_0`.
    pub fn new(algebra: Arc<GradedLieAlgebra>, frame: Vec<Vec<f64>>, drift: Vec<f64>) -> Result<Self> {
        let n = algebra.dim();
        let d1 = algebra.layer_dims()[0];
        if frame.len() != d1 || frame.iter().any(|v| v.len() != n) || drift.len() != n {
            return Err(Error::Structural(format!(
                "need {d1} frame vectors and a drift, all of dimension {n}"
            )));
        }
        let layer1 = algebra.layer_range(1);
        if frame.iter().any(|v| v[layer1.end..].iter().any(|c| *c != 0.0)) {
            return Err(Error::Domain("frame vectors must lie in the first layer".into()));
        }
        let m = DMatrix::from_fn(d1, d1, |i, j| frame[j][i]);
        if m.rank(1e-12) < d1 {
            return Err(Error::Degenerate("frame does not span the first layer".into()));
        }
        Ok(DiffusionSpec {
            algebra,
            frame,
            drift,
            horizon: 1.0,
            h: DEFAULT_STEP,
            paths: 1000,
            seed: 0,
            stride: 1,
            substeps: 1,
        })
    }

    /// The diffusion attached to a harmonic walk: frame from the Albanese
    /// data and drift `β(Φ₀)` or `ρ`.
    pub fn for_walk(data: &WalkData, kind: DriftKind) -> Result<Self> {
        let alg = data.phi.algebra().clone();
        let d1 = alg.layer_dims()[0];
        let n = alg.dim();
        let frame = (0..d1)
            .map(|j| {
                let mut v = vec![0.0; n];
                for i in 0..d1 {
                    v[i] = data.albanese.frame[(i, j)];
                }
                v
            })
            .collect();
        let mut drift = vec![0.0; n];
        match kind {
            DriftKind::Beta => {
                if alg.step() >= 2 {
                    drift[alg.layer_range(2)].copy_from_slice(&data.beta.beta);
                }
            }
            DriftKind::Rho => drift[alg.layer_range(1)].copy_from_slice(&data.gamma.rho),
        }
        Self::new(alg, frame, drift)
    }

    pub fn algebra(&self) -> &Arc<GradedLieAlgebra> {
        &self.algebra
    }

    pub fn frame(&self) -> &[Vec<f64>] {
        &self.frame
    }

    pub fn drift(&self) -> &[f64] {
        &self.drift
    }

    /// Same spec with the drift replaced.
    pub fn with_drift(&self, drift: Vec<f64>) -> Result<Self> {
        if drift.len() != self.algebra.dim() {
            return Err(Error::Structural("drift has the wrong dimension".into()));
        }
        Ok(DiffusionSpec { drift, ..self.clone() })
    }

    /// Record exactly at the given times (rounded to the step grid).
    pub fn recording_at(mut self, times: &[f64]) -> Self {
        let steps: Vec<usize> = times
            .iter()
            .map(|t| (t / self.h).round() as usize)
            .filter(|&k| k > 0)
            .collect();
        self.stride = steps.iter().copied().fold(0, gcd).max(1);
        self
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.h).round() as usize
    }

    fn validate(&self) -> Result<()> {
        if !(self.h > 0.0) || !(self.horizon > 0.0) || self.steps() == 0 {
            return Err(Error::Domain(format!(
                "need 0 < h <= horizon, got h = {}, horizon = {}",
                self.h, self.horizon
            )));
        }
        if self.paths == 0 || self.substeps == 0 || self.stride == 0 {
            return Err(Error::Domain("paths, substeps and stride must be positive".into()));
        }
        Ok(())
    }

    fn recorded_steps(&self) -> Vec<usize> {
        let steps = self.steps();
        let mut ks: Vec<usize> = (0..=steps).step_by(self.stride).collect();
        if *ks.last().unwrap() != steps {
            ks.push(steps);
        }
        ks
    }

    fn times(&self, recorded: &[usize]) -> Vec<f64> {
        let dt = self.horizon / self.steps() as f64;
        recorded.iter().map(|&k| k as f64 * dt).collect()
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn path_rng(seed: u64, path: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path);
    rng
}

/// Group Euler scheme `Y_{k+1} = Y_k * exp(Σ ΔB^i V_i + h V_0)`.
pub fn euler_simulate(spec: &DiffusionSpec) -> Result<PathEnsemble> {
    spec.validate()?;
    let recorded = spec.recorded_steps();
    let alg = &*spec.algebra;
    let n = alg.dim();
    let dt = spec.horizon / spec.steps() as f64;
    let sq = dt.sqrt();
    let chunks: Vec<Vec<f64>> = (0..spec.paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = path_rng(spec.seed, p as u64);
            let mut ws = BchWorkspace::new(n);
            let mut y = vec![0.0; n];
            let mut next = vec![0.0; n];
            let mut z = vec![0.0; n];
            let mut out = Vec::with_capacity(recorded.len() * n);
            let mut k = 0;
            for &target in &recorded {
                while k < target {
                    for (zi, di) in z.iter_mut().zip(&spec.drift) {
                        *zi = dt * di;
                    }
                    for v in &spec.frame {
                        let g: f64 = StandardNormal.sample(&mut rng);
                        let db = sq * g;
                        for (zi, vi) in z.iter_mut().zip(v) {
                            *zi += db * vi;
                        }
                    }
                    alg.bch_with(&y, &z, Product::Limit, &mut next, &mut ws);
                    std::mem::swap(&mut y, &mut next);
                    k += 1;
                }
                out.extend_from_slice(&y);
            }
            out
        })
        .collect();
    PathEnsemble::from_parts(spec.algebra.clone(), spec.times(&recorded), spec.paths, chunks.concat())
}

/// Running signature of a path in `R^letters`, truncated at level 3 or less.
#[derive(Clone, Debug)]
struct RunningSums {
    letters: usize,
    depth: usize,
    s1: Vec<f64>,
    s2: Vec<f64>,
    s3: Vec<f64>,
}

impl RunningSums {
    fn new(letters: usize, depth: usize) -> Self {
        let l = letters;
        RunningSums {
            letters,
            depth,
            s1: vec![0.0; l],
            s2: vec![0.0; if depth >= 2 { l * l } else { 0 }],
            s3: vec![0.0; if depth >= 3 { l * l * l } else { 0 }],
        }
    }

    /// Appends a linear segment with increment `v` (Chen's identity).
    fn push(&mut self, v: &[f64]) {
        let l = self.letters;
        if self.depth >= 3 {
            for a in 0..l {
                for b in 0..l {
                    let s2ab = self.s2[a * l + b];
                    let half = self.s1[a] * v[b] / 2.0 + v[a] * v[b] / 6.0;
                    for c in 0..l {
                        self.s3[(a * l + b) * l + c] += (s2ab + half) * v[c];
                    }
                }
            }
        }
        if self.depth >= 2 {
            for a in 0..l {
                let base = self.s1[a] + v[a] / 2.0;
                for b in 0..l {
                    self.s2[a * l + b] += base * v[b];
                }
            }
        }
        for (s, x) in self.s1.iter_mut().zip(v) {
            *s += x;
        }
    }

    fn level(&self, k: usize) -> &[f64] {
        match k {
            1 => &self.s1,
            2 => &self.s2,
            3 => &self.s3,
            _ => &[],
        }
    }
}

/// Stratonovich iterated integrals `B^I` of `(B^0 = t, B^1, …, B^d)` for
/// words of length at most 3.
#[derive(Clone, Debug, PartialEq)]
pub struct IteratedIntegrals {
    letters: usize,
    depth: usize,
    levels: Vec<Vec<f64>>,
}

impl IteratedIntegrals {
    fn from_sums(s: &RunningSums) -> Self {
        IteratedIntegrals {
            letters: s.letters,
            depth: s.depth,
            levels: (1..=s.depth).map(|k| s.level(k).to_vec()).collect(),
        }
    }

    /// Builds the integrals of an explicit polygon in `R^letters`
    /// (letter 0 need not be time here).
    pub fn of_polygon(increments: &[Vec<f64>], depth: usize) -> Result<Self> {
        if depth == 0 || depth > CASTELL_MAX_STEP {
            return Err(Error::Unsupported(format!(
                "iterated integrals are implemented up to depth {CASTELL_MAX_STEP}, got {depth}"
            )));
        }
        let letters = increments.first().map_or(0, |v| v.len());
        if letters == 0 || increments.iter().any(|v| v.len() != letters) {
            return Err(Error::Structural(
                "polygon increments must share a positive dimension".into(),
            ));
        }
        let mut s = RunningSums::new(letters, depth);
        for v in increments {
            s.push(v);
        }
        Ok(Self::from_sums(&s))
    }

    pub fn letters(&self) -> usize {
        self.letters
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// `B^I` for the word `I`.
    pub fn get(&self, word: &[usize]) -> f64 {
        if word.is_empty() {
            return 1.0;
        }
        let idx = word.iter().fold(0, |acc, &l| acc * self.letters + l);
        self.levels[word.len() - 1][idx]
    }

    /// `½ (B^{ij} - B^{ji})`.
    pub fn levy_area(&self, i: usize, j: usize) -> f64 {
        0.5 * (self.get(&[i, j]) - self.get(&[j, i]))
    }

    /// Castell's coefficient
    /// `c^I = Σ_σ (-1)^{e(σ)} / (|I|² C(|I|-1, e(σ))) B^{I_{σ^{-1}}}`.
    pub fn castell_coefficient(&self, word: &[usize]) -> f64 {
        permutations(word.len())
            .into_iter()
            .map(|sigma| castell_weight(&sigma) * self.get(&permuted_word(word, &sigma)))
            .sum()
    }
}

/// Simulates one Brownian path with `d` components on `[0, horizon]` using
/// `steps · substeps` linear pieces, and returns its iterated integrals with
/// time as letter 0.
pub fn iterated_integrals(
    d: usize,
    depth: usize,
    horizon: f64,
    steps: usize,
    substeps: usize,
    seed: u64,
) -> Result<IteratedIntegrals> {
    if depth == 0 || depth > CASTELL_MAX_STEP {
        return Err(Error::Unsupported(format!(
            "iterated integrals are implemented up to depth {CASTELL_MAX_STEP}, got {depth}"
        )));
    }
    if steps == 0 || substeps == 0 || !(horizon > 0.0) {
        return Err(Error::Domain("need a positive horizon and mesh".into()));
    }
    let mut rng = path_rng(seed, 0);
    let mut s = RunningSums::new(d + 1, depth);
    let dt = horizon / (steps * substeps) as f64;
    let mut v = vec![0.0; d + 1];
    for _ in 0..steps * substeps {
        fill_increment(&mut v, dt, &mut rng);
        s.push(&v);
    }
    Ok(IteratedIntegrals::from_sums(&s))
}

fn fill_increment(v: &mut [f64], dt: f64, rng: &mut ChaCha8Rng) {
    v[0] = dt;
    let sq = dt.sqrt();
    for x in &mut v[1..] {
        let z: f64 = StandardNormal.sample(rng);
        *x = sq * z;
    }
}

/// All permutations of `0..k` as images `σ(0), …, σ(k-1)`.
fn permutations(k: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                rec(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut vec![false; k], &mut out);
    out
}

/// Number of descents `#{i : σ(i) > σ(i+1)}`.
fn descents(sigma: &[usize]) -> usize {
    sigma.windows(2).filter(|w| w[0] > w[1]).count()
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn castell_weight(sigma: &[usize]) -> f64 {
    let k = sigma.len();
    let e = descents(sigma);
    let sign = if e.is_multiple_of(2) { 1.0 } else { -1.0 };
    sign / ((k * k) as f64 * binomial(k - 1, e))
}

/// `I_{σ^{-1}}`: position `m` holds `I[σ^{-1}(m)]`.
fn permuted_word(word: &[usize], sigma: &[usize]) -> Vec<usize> {
    let mut out = vec![0; word.len()];
    for (i, &s) in sigma.iter().enumerate() {
        out[s] = word[i];
    }
    out
}

/// The linear map from iterated integrals to `log Y`:
/// `log Y = Σ_I c^I V^I = Σ_J B^J W_J`.
#[derive(Clone, Debug)]
pub struct CastellMap {
    letters: usize,
    depth: usize,
    /// `(level, word index, W_J)` for every nonzero `W_J`.
    terms: Vec<(usize, usize, Vec<f64>)>,
    dim: usize,
}

impl CastellMap {
    /// `fields[a]` is `U_a` for letter `a`; brackets use `product`.
    pub fn new(alg: &GradedLieAlgebra, fields: &[Vec<f64>], product: Product) -> Result<Self> {
        let depth = alg.step();
        if depth > CASTELL_MAX_STEP {
            return Err(Error::Unsupported(format!(
                "Castell coefficients are implemented up to step {CASTELL_MAX_STEP}, the algebra has step {depth}"
            )));
        }
        let letters = fields.len();
        let n = alg.dim();
        let mut terms = Vec::new();
        for k in 1..=depth {
            let count = letters.pow(k as u32);
            let mut w = vec![vec![0.0; n]; count];
            let perms = permutations(k);
            for idx in 0..count {
                let word = decode(idx, k, letters);
                let v = nested_bracket(alg, fields, &word, product);
                if v.iter().all(|c| *c == 0.0) {
                    continue;
                }
                for sigma in &perms {
                    let j = permuted_word(&word, sigma);
                    let jdx = j.iter().fold(0, |acc, &l| acc * letters + l);
                    let c = castell_weight(sigma);
                    for (a, b) in w[jdx].iter_mut().zip(&v) {
                        *a += c * b;
                    }
                }
            }
            for (idx, v) in w.into_iter().enumerate() {
                if v.iter().any(|c| *c != 0.0) {
                    terms.push((k, idx, v));
                }
            }
        }
        Ok(CastellMap {
            letters,
            depth,
            terms,
            dim: n,
        })
    }

    /// `log Y` in first-kind coordinates.
    pub fn apply(&self, b: &IteratedIntegrals) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.apply_levels(|k| &b.levels[k - 1], &mut out);
        out
    }

    fn apply_levels<'a>(&self, level: impl Fn(usize) -> &'a [f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (k, idx, w) in &self.terms {
            let c = level(*k)[*idx];
            if c != 0.0 {
                for (o, x) in out.iter_mut().zip(w) {
                    *o += c * x;
                }
            }
        }
    }
}

fn decode(mut idx: usize, k: usize, letters: usize) -> Vec<usize> {
    let mut w = vec![0; k];
    for slot in w.iter_mut().rev() {
        *slot = idx % letters;
        idx /= letters;
    }
    w
}

/// `U^I = [U_{i_1}, [U_{i_2}, …, [U_{i_{k-1}}, U_{i_k}]…]]`.
fn nested_bracket(alg: &GradedLieAlgebra, fields: &[Vec<f64>], word: &[usize], product: Product) -> Vec<f64> {
    let mut acc = fields[*word.last().unwrap()].clone();
    for &a in word[..word.len() - 1].iter().rev() {
        acc = alg.bracket(&fields[a], &acc, product);
    }
    acc
}

/// Castell's representation `Y_t = exp(Σ_I c_t^I V^I)` evaluated from
/// simulated iterated integrals, with the drift as letter 0.
pub fn castell_simulate(spec: &DiffusionSpec) -> Result<PathEnsemble> {
    spec.validate()?;
    let alg = &*spec.algebra;
    let mut fields = vec![spec.drift.clone()];
    fields.extend(spec.frame.iter().cloned());
    let map = CastellMap::new(alg, &fields, Product::Limit)?;
    let recorded = spec.recorded_steps();
    let n = alg.dim();
    let letters = fields.len();
    let dt = spec.horizon / (spec.steps() * spec.substeps) as f64;
    let chunks: Vec<Vec<f64>> = (0..spec.paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = path_rng(spec.seed, p as u64);
            let mut sums = RunningSums::new(letters, map.depth);
            let mut v = vec![0.0; letters];
            let mut y = vec![0.0; n];
            let mut out = Vec::with_capacity(recorded.len() * n);
            let mut k = 0;
            for &target in &recorded {
                while k < target {
                    for _ in 0..spec.substeps {
                        fill_increment(&mut v, dt, &mut rng);
                        sums.push(&v);
                    }
                    k += 1;
                }
                map.apply_levels(|lvl| sums.level(lvl), &mut y);
                out.extend_from_slice(&y);
            }
            out
        })
        .collect();
    debug_assert_eq!(map.letters, letters);
    PathEnsemble::from_parts(spec.algebra.clone(), spec.times(&recorded), spec.paths, chunks.concat())
}

/// One compared moment in a [`crosscheck`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossEntry {
    pub t: f64,
    pub quantity: String,
    pub a: Estimate,
    pub b: Estimate,
    pub z: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrosscheckReport {
    pub entries: Vec<CrossEntry>,
    pub sigmas: f64,
    pub pass: bool,
}

/// Crosscheck threshold in combined standard errors.
pub const CROSSCHECK_SIGMAS: f64 = 4.0;

/// Compares means and covariances of all coordinates of two ensembles at
/// `t ∈ {T/4, T/2, T}`.
pub fn crosscheck(a: &PathEnsemble, b: &PathEnsemble) -> Result<CrosscheckReport> {
    if a.dim() != b.dim() {
        return Err(Error::Structural("ensembles live on different groups".into()));
    }
    let (ta, tb) = (*a.times().last().unwrap(), *b.times().last().unwrap());
    if (ta - tb).abs() > 1e-12 {
        return Err(Error::Structural(format!("horizons differ: {ta} vs {tb}")));
    }
    let mut entries = Vec::new();
    for frac in [0.25, 0.5, 1.0] {
        let t = frac * ta;
        let (ma, mb) = (moments(&a.marginal_at(t)?), moments(&b.marginal_at(t)?));
        let n = a.dim();
        let mut push = |quantity: String, x: Estimate, y: Estimate| {
            let z = x.minus(&y).z_score(0.0);
            entries.push(CrossEntry {
                t,
                quantity,
                a: x,
                b: y,
                z,
                pass: z <= CROSSCHECK_SIGMAS,
            });
        };
        for i in 0..n {
            push(format!("mean[{i}]"), ma.mean[i], mb.mean[i]);
        }
        for i in 0..n {
            for j in i..n {
                push(format!("cov[{i}][{j}]"), ma.cov[i * n + j], mb.cov[i * n + j]);
            }
        }
    }
    let pass = entries.iter().all(|e| e.pass);
    Ok(CrosscheckReport {
        entries,
        sigmas: CROSSCHECK_SIGMAS,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor_free::{signature, FreeNilpotent};
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn heis_spec(beta: f64) -> DiffusionSpec {
        let alg = Arc::new(GradedLieAlgebra::heisenberg());
        DiffusionSpec::new(
            alg,
            vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]],
            vec![0.0, 0.0, beta],
        )
        .unwrap()
    }

    #[test]
    fn castell_weights_low_order() {
        assert_eq!(castell_weight(&[0]), 1.0);
        assert_eq!(castell_weight(&[0, 1]), 0.25);
        assert_eq!(castell_weight(&[1, 0]), -0.25);
        // k = 3: identity 1/9, one descent -1/18, two descents 1/9.
        assert_abs_diff_eq!(castell_weight(&[0, 1, 2]), 1.0 / 9.0);
        assert_abs_diff_eq!(castell_weight(&[0, 2, 1]), -1.0 / 18.0);
        assert_abs_diff_eq!(castell_weight(&[2, 1, 0]), 1.0 / 9.0);
    }

    #[test]
    fn castell_matches_log_signature_in_free_algebra() {
        // Oracle: the tensor logarithm of the signature of a random polygon,
        // decomposed on the Lyndon basis of the free step-3 algebra.
        let free = FreeNilpotent::new(3, 3).unwrap();
        let alg = free.algebra().clone();
        let fields: Vec<Vec<f64>> = (0..3)
            .map(|i| {
                let mut v = vec![0.0; alg.dim()];
                v[i] = 1.0;
                v
            })
            .collect();
        let map = CastellMap::new(&alg, &fields, Product::Original).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let incs: Vec<Vec<f64>> = (0..7)
            .map(|_| (0..3).map(|_| rng.random::<f64>() - 0.5).collect())
            .collect();
        let mut pts = vec![vec![0.0; 3]];
        for v in &incs {
            let last = pts.last().unwrap();
            pts.push(last.iter().zip(v).map(|(a, b)| a + b).collect());
        }
        let sig = signature(&pts, 3).unwrap();
        let expect = free.tensor_to_lie(&sig.log().unwrap()).unwrap();
        let b = IteratedIntegrals::of_polygon(&incs, 3).unwrap();
        let got = map.apply(&b);
        for (g, e) in got.iter().zip(&expect) {
            assert_abs_diff_eq!(g, e, epsilon = 1e-12);
        }
    }

    #[test]
    fn running_sums_match_tensor_signature() {
        let incs = vec![vec![0.3, -0.2], vec![0.1, 0.5], vec![-0.4, 0.2]];
        let mut pts = vec![vec![0.0, 0.0]];
        for v in &incs {
            let last = pts.last().unwrap();
            pts.push(last.iter().zip(v).map(|(a, b)| a + b).collect());
        }
        let sig = signature(&pts, 3).unwrap();
        let b = IteratedIntegrals::of_polygon(&incs, 3).unwrap();
        for k in 1..=3 {
            for (x, y) in sig.level(k).iter().zip(&b.levels[k - 1]) {
                assert_abs_diff_eq!(x, y, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn low_order_coefficients() {
        let b = iterated_integrals(2, 3, 1.0, 64, 4, 3).unwrap();
        assert_abs_diff_eq!(b.castell_coefficient(&[1]), b.get(&[1]));
        assert_abs_diff_eq!(b.castell_coefficient(&[0]), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(b.castell_coefficient(&[2, 2]), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(b.castell_coefficient(&[1, 2]), 0.5 * b.levy_area(1, 2), epsilon = 1e-15);
        // Shuffle identity.
        assert_abs_diff_eq!(
            b.get(&[1]) * b.get(&[2]),
            b.get(&[1, 2]) + b.get(&[2, 1]),
            epsilon = 1e-12
        );
        assert!(iterated_integrals(2, 4, 1.0, 4, 1, 0).is_err());
    }

    #[test]
    fn one_euler_step_is_exponential() {
        let mut spec = heis_spec(0.0);
        spec.h = 1.0;
        spec.paths = 1;
        let ens = euler_simulate(&spec).unwrap();
        let mut rng = path_rng(0, 0);
        let a: f64 = StandardNormal.sample(&mut rng);
        let b: f64 = StandardNormal.sample(&mut rng);
        assert_eq!(ens.point(0, 1), &[a, b, 0.0]);
    }

    #[test]
    fn castell_rejects_step_four() {
        let free = FreeNilpotent::new(2, 4).unwrap();
        let alg = free.algebra().clone();
        let n = alg.dim();
        let frame = (0..2)
            .map(|i| {
                let mut v = vec![0.0; n];
                v[i] = 1.0;
                v
            })
            .collect();
        let spec = DiffusionSpec::new(alg, frame, vec![0.0; n]).unwrap();
        assert!(matches!(castell_simulate(&spec), Err(Error::Unsupported(_))));
        assert!(euler_simulate(&DiffusionSpec {
            paths: 2,
            h: 0.25,
            ..spec
        })
        .is_ok());
    }

    #[test]
    fn castell_second_layer_mean_is_drift() {
        let mut spec = heis_spec(0.3);
        spec.h = 1.0 / 64.0;
        spec.paths = 20_000;
        let ens = castell_simulate(&spec).unwrap();
        let k = ens.times().len() - 1;
        let z = Estimate::from_samples(&ens.coordinate(k, 2));
        assert!(z.within(0.3, 3.0), "{z:?}");
        let x = Estimate::from_samples(&ens.coordinate(k, 0).iter().map(|v| v * v).collect::<Vec<_>>());
        assert!(x.within(1.0, 3.0), "{x:?}");
    }

    #[test]
    fn euler_and_castell_agree_and_sign_flip_is_caught() {
        let mut spec = heis_spec(0.5);
        spec.h = 1.0 / 64.0;
        spec.paths = 20_000;
        spec.stride = 16;
        let e = euler_simulate(&spec).unwrap();
        let c = castell_simulate(&DiffusionSpec {
            seed: 1,
            ..spec.clone()
        })
        .unwrap();
        assert!(crosscheck(&e, &c).unwrap().pass);
        let flipped = castell_simulate(&DiffusionSpec {
            seed: 1,
            ..spec.with_drift(vec![0.0, 0.0, -0.5]).unwrap()
        })
        .unwrap();
        assert!(!crosscheck(&e, &flipped).unwrap().pass);
    }

    #[test]
    fn rho_drift_uses_time_letter() {
        // With V_0 in the first layer, [V_0, V_i] contributes ∫(t dB - B dt)/2.
        let spec = heis_spec(0.0).with_drift(vec![1.0, 0.0, 0.0]).unwrap();
        let spec = DiffusionSpec {
            h: 1.0 / 32.0,
            paths: 4,
            ..spec
        };
        let e = euler_simulate(&spec).unwrap();
        let c = castell_simulate(&spec).unwrap();
        // Same noise, same polygon: both schemes produce the identical group element.
        let k = e.times().len() - 1;
        for p in 0..4 {
            for (a, b) in e.point(p, k).iter().zip(c.point(p, k)) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-12);
            }
        }
    }
}
