//! Truncated tensor algebra `T^(r)(R^d)`, free nilpotent Lie algebras,
//! path signatures and level-2 rough paths.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::lie_core::{GradedLieAlgebra, GroupElement};

/// An element of `T^(r)(R^d)`: levels `0..=r`, level `k` dense of size `d^k`.
///
/// Index of the word `(i_1, ..., i_k)` in level `k` is the base-`d` number
/// `i_1 i_2 ... i_k` (first letter most significant), so numeric order within
/// a level is lexicographic order on words.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorElement {
    d: usize,
    r: usize,
    levels: Vec<Vec<f64>>,
}

impl TensorElement {
    pub fn zero(d: usize, r: usize) -> Self {
        let levels = (0..=r).map(|k| vec![0.0; d.pow(k as u32)]).collect();
        TensorElement { d, r, levels }
    }

    /// The unit `𝟏 = (1, 0, ..., 0)`.
    pub fn one(d: usize, r: usize) -> Self {
        let mut t = Self::zero(d, r);
        t.levels[0][0] = 1.0;
        t
    }

    /// The algebra element `(0, v, 0, ..., 0)`.
    pub fn from_level1(v: &[f64], r: usize) -> Self {
        let mut t = Self::zero(v.len(), r);
        if r >= 1 {
            t.levels[1].copy_from_slice(v);
        }
        t
    }

    /// Builds an element from explicit levels, checking their sizes.
    pub fn from_levels(d: usize, levels: Vec<Vec<f64>>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::Structural("a tensor needs at least level 0".into()));
        }
        for (k, l) in levels.iter().enumerate() {
            if l.len() != d.pow(k as u32) {
                return Err(Error::Structural(format!(
                    "level {k} has {} entries, expected {}",
                    l.len(),
                    d.pow(k as u32)
                )));
            }
        }
        let r = levels.len() - 1;
        Ok(TensorElement { d, r, levels })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn depth(&self) -> usize {
        self.r
    }

    pub fn level(&self, k: usize) -> &[f64] {
        &self.levels[k]
    }

    pub fn level_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.levels[k]
    }

    pub fn scalar(&self) -> f64 {
        self.levels[0][0]
    }

    /// Entry of the word `w` (empty word = scalar level).
    pub fn coeff(&self, w: &[usize]) -> f64 {
        self.levels[w.len()][word_index(w, self.d)]
    }

    fn check_same(&self, other: &Self) -> Result<()> {
        if self.d != other.d || self.r != other.r {
            return Err(Error::Structural(format!(
                "tensor shapes differ: (d={}, r={}) vs (d={}, r={})",
                self.d, self.r, other.d, other.r
            )));
        }
        Ok(())
    }

    /// `a ⊗_r b`.
    pub fn tensor_product(&self, other: &Self) -> Result<Self> {
        self.check_same(other)?;
        let mut out = Self::zero(self.d, self.r);
        for k in 0..=self.r {
            for a in 0..=k {
                let b = k - a;
                let (la, lb) = (&self.levels[a], &other.levels[b]);
                let nb = lb.len();
                let dst = &mut out.levels[k];
                for (i, &x) in la.iter().enumerate() {
                    if x == 0.0 {
                        continue;
                    }
                    let row = &mut dst[i * nb..(i + 1) * nb];
                    for (o, &y) in row.iter_mut().zip(lb) {
                        *o += x * y;
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same(other)?;
        let mut out = self.clone();
        for (lo, li) in out.levels.iter_mut().zip(&other.levels) {
            for (o, i) in lo.iter_mut().zip(li) {
                *o += i;
            }
        }
        Ok(out)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.add(&other.scale(-1.0))
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.levels.iter_mut().flatten().for_each(|v| *v *= s);
        out
    }

    /// Commutator `ab - ba`.
    pub fn commutator(&self, other: &Self) -> Result<Self> {
        self.tensor_product(other)?.sub(&other.tensor_product(self)?)
    }

    /// `exp(A) = 𝟏 + Σ_{k≤r} A^k / k!` for `A` with zero scalar part.
    pub fn exp(&self) -> Result<Self> {
        if self.scalar() != 0.0 {
            return Err(Error::Domain(format!(
                "exp needs a zero scalar level, got {}",
                self.scalar()
            )));
        }
        let mut out = Self::one(self.d, self.r);
        let mut power = Self::one(self.d, self.r);
        for k in 1..=self.r {
            power = power.tensor_product(self)?.scale(1.0 / k as f64);
            out = out.add(&power)?;
        }
        Ok(out)
    }

    /// `log(g) = Σ_{k≤r} (-1)^{k+1} (g - 𝟏)^k / k` for `g` with unit scalar part.
    pub fn log(&self) -> Result<Self> {
        let a = self.minus_one()?;
        let mut out = Self::zero(self.d, self.r);
        let mut power = Self::one(self.d, self.r);
        for k in 1..=self.r {
            power = power.tensor_product(&a)?;
            let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
            out = out.add(&power.scale(sign / k as f64))?;
        }
        Ok(out)
    }

    /// `g^{-1} = Σ_k (-1)^k (g - 𝟏)^k`.
    pub fn inverse(&self) -> Result<Self> {
        let a = self.minus_one()?;
        let mut out = Self::one(self.d, self.r);
        let mut power = Self::one(self.d, self.r);
        for k in 1..=self.r {
            power = power.tensor_product(&a)?;
            let sign = if k % 2 == 1 { -1.0 } else { 1.0 };
            out = out.add(&power.scale(sign))?;
        }
        Ok(out)
    }

    fn minus_one(&self) -> Result<Self> {
        if (self.scalar() - 1.0).abs() > 1e-12 {
            return Err(Error::Domain(format!(
                "expected a group element with scalar level 1, got {}",
                self.scalar()
            )));
        }
        let mut a = self.clone();
        a.levels[0][0] = 0.0;
        Ok(a)
    }

    /// Keeps levels `0..=r`.
    pub fn truncate(&self, r: usize) -> Self {
        let mut levels = self.levels.clone();
        levels.truncate(r + 1);
        while levels.len() < r + 1 {
            levels.push(vec![0.0; self.d.pow(levels.len() as u32)]);
        }
        TensorElement { d: self.d, r, levels }
    }

    /// In place `self ← self ⊗ exp(v)` for a level-1 vector `v` (Horner form).
    pub fn mul_exp_segment(&mut self, v: &[f64]) {
        let d = self.d;
        for k in (1..=self.r).rev() {
            // new_k = Σ_j X_j v^{⊗(k-j)} / (k-j)!, evaluated as
            // ((X_0 v/k + X_1) v/(k-1) + X_2) ... + X_k.
            let mut acc = self.levels[0].clone();
            for j in 1..=k {
                let f = 1.0 / (k - j + 1) as f64;
                let mut next = self.levels[j].clone();
                for (i, &a) in acc.iter().enumerate() {
                    if a == 0.0 {
                        continue;
                    }
                    for (l, &vl) in v.iter().enumerate() {
                        next[i * d + l] += a * vl * f;
                    }
                }
                acc = next;
            }
            self.levels[k] = acc;
        }
    }

    /// Homogeneous size `Σ_k ‖level k‖^{1/k}` (levels ≥ 1).
    pub fn hom_size(&self) -> f64 {
        (1..=self.r)
            .map(|k| {
                let s: f64 = self.levels[k].iter().map(|v| v * v).sum();
                s.sqrt().powf(1.0 / k as f64)
            })
            .sum()
    }

    /// Largest absolute difference over all entries.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.levels
            .iter()
            .flatten()
            .zip(other.levels.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Distance from the free Lie algebra: by Dynkin–Specht–Wever, a
    /// homogeneous `P` of degree `k` is Lie iff `D(P) = kP`, where `D` is
    /// right-normed bracketing. Returns `max |D(P_k) - k P_k|` over levels.
    pub fn lie_residual(&self) -> f64 {
        let mut worst = self.scalar().abs();
        for k in 1..=self.r {
            let level = &self.levels[k];
            let mut dp = vec![0.0; level.len()];
            for (idx, &c) in level.iter().enumerate() {
                if c == 0.0 {
                    continue;
                }
                let w = index_word(idx, k, self.d);
                for (word, coef) in right_normed(&w) {
                    dp[word_index(&word, self.d)] += c * coef as f64;
                }
            }
            for (a, b) in dp.iter().zip(level) {
                worst = worst.max((a - k as f64 * b).abs());
            }
        }
        worst
    }
}

/// Expansion of `[...[[w_1, w_2], w_3], ..., w_k]` as words with integer coefficients.
fn right_normed(w: &[usize]) -> Vec<(Vec<usize>, i64)> {
    let mut terms: Vec<(Vec<usize>, i64)> = vec![(vec![w[0]], 1)];
    for &letter in &w[1..] {
        let mut next = Vec::with_capacity(terms.len() * 2);
        for (word, c) in &terms {
            let mut a = word.clone();
            a.push(letter);
            next.push((a, *c));
            let mut b = vec![letter];
            b.extend_from_slice(word);
            next.push((b, -c));
        }
        terms = next;
    }
    terms
}

pub(crate) fn word_index(w: &[usize], d: usize) -> usize {
    w.iter().fold(0, |acc, &l| acc * d + l)
}

pub(crate) fn index_word(mut idx: usize, k: usize, d: usize) -> Vec<usize> {
    let mut w = vec![0; k];
    for slot in w.iter_mut().rev() {
        *slot = idx % d;
        idx /= d;
    }
    w
}

/// Signature up to level `r` of the piecewise-linear path through `points`.
pub fn signature(points: &[Vec<f64>], r: usize) -> Result<TensorElement> {
    if points.len() < 2 {
        return Err(Error::Domain("a path needs at least one segment (two points)".into()));
    }
    let d = points[0].len();
    if points.iter().any(|p| p.len() != d) {
        return Err(Error::Structural("path points have differing dimensions".into()));
    }
    let mut sig = TensorElement::one(d, r);
    let mut inc = vec![0.0; d];
    for pair in points.windows(2) {
        for i in 0..d {
            inc[i] = pair[1][i] - pair[0][i];
        }
        sig.mul_exp_segment(&inc);
    }
    Ok(sig)
}

/// Lyndon words of length `1..=r` over `{0, ..., d-1}`, by length then lexicographically.
pub fn lyndon_words(d: usize, r: usize) -> Vec<Vec<usize>> {
    // Duval's algorithm enumerates Lyndon words of length ≤ r in lexicographic order.
    let mut out = Vec::new();
    if d == 0 || r == 0 {
        return out;
    }
    let mut w: Vec<usize> = vec![0];
    loop {
        out.push(w.clone());
        let m = w.len();
        while w.len() < r {
            let c = w[w.len() - m];
            w.push(c);
        }
        while let Some(&last) = w.last() {
            if last == d - 1 {
                w.pop();
            } else {
                break;
            }
        }
        match w.last_mut() {
            Some(last) => *last += 1,
            None => break,
        }
    }
    out.sort_by(|a, b| a.len().cmp(&b.len()).then(a.cmp(b)));
    out
}

fn is_lyndon(w: &[usize]) -> bool {
    (1..w.len()).all(|i| w < &w[i..])
}

/// The free step-`r` nilpotent Lie algebra on `d` generators, with the
/// Lyndon (standard-bracketing) basis and its embedding in `T^(r)(R^d)`.
#[derive(Clone, Debug)]
pub struct FreeNilpotent {
    d: usize,
    r: usize,
    algebra: Arc<GradedLieAlgebra>,
    words: Vec<Vec<usize>>,
    images: Vec<TensorElement>,
}

impl FreeNilpotent {
    pub fn new(d: usize, r: usize) -> Result<Self> {
        if d == 0 || r == 0 {
            return Err(Error::Domain("free algebra needs d ≥ 1 and r ≥ 1".into()));
        }
        let words = lyndon_words(d, r);
        let mut images: Vec<TensorElement> = Vec::with_capacity(words.len());
        for w in &words {
            let img = if w.len() == 1 {
                let mut v = vec![0.0; d];
                v[w[0]] = 1.0;
                TensorElement::from_level1(&v, r)
            } else {
                // Standard factorization: v is the longest proper Lyndon suffix.
                let split = (1..w.len()).find(|&i| is_lyndon(&w[i..])).unwrap();
                let (u, v) = (&w[..split], &w[split..]);
                let pu = &images[words.iter().position(|x| x == u).unwrap()];
                let pv = &images[words.iter().position(|x| x == v).unwrap()];
                pu.commutator(pv)?
            };
            images.push(img);
        }
        let mut layer_dims = vec![0; r];
        for w in &words {
            layer_dims[w.len() - 1] += 1;
        }
        if layer_dims.contains(&0) {
            // d = 1: the free algebra is abelian and stops at step 1.
            return Err(Error::Domain(format!(
                "the free algebra on {d} generator(s) has no layer {r}"
            )));
        }
        let mut constants = Vec::new();
        let n = words.len();
        for i in 0..n {
            for j in (i + 1)..n {
                if words[i].len() + words[j].len() > r {
                    continue;
                }
                let br = images[i].commutator(&images[j])?;
                let coords = decompose(&words, &images, &br, d)?;
                for (k, c) in coords.into_iter().enumerate() {
                    if c != 0.0 {
                        constants.push((i, j, k, c));
                    }
                }
            }
        }
        let algebra = Arc::new(GradedLieAlgebra::from_structure_constants(&layer_dims, &constants)?);
        Ok(FreeNilpotent {
            d,
            r,
            algebra,
            words,
            images,
        })
    }

    pub fn algebra(&self) -> &Arc<GradedLieAlgebra> {
        &self.algebra
    }

    /// Lyndon word of each basis vector.
    pub fn words(&self) -> &[Vec<usize>] {
        &self.words
    }

    pub fn generators(&self) -> usize {
        self.d
    }

    pub fn step(&self) -> usize {
        self.r
    }

    /// The tensor image `Σ c_i P(w_i)` of a Lie element.
    pub fn lie_to_tensor(&self, coords: &[f64]) -> TensorElement {
        let mut out = TensorElement::zero(self.d, self.r);
        for (c, img) in coords.iter().zip(&self.images) {
            if *c != 0.0 {
                out = out.add(&img.scale(*c)).expect("same shape");
            }
        }
        out
    }

    /// Coordinates of a Lie element given in the tensor algebra.
    pub fn tensor_to_lie(&self, t: &TensorElement) -> Result<Vec<f64>> {
        if t.dim() != self.d || t.depth() != self.r {
            return Err(Error::Structural("tensor shape does not match the free algebra".into()));
        }
        decompose(&self.words, &self.images, t, self.d)
    }

    /// `exp` of a group element's log into `T^(r)`.
    pub fn group_to_tensor(&self, g: &GroupElement) -> Result<TensorElement> {
        self.lie_to_tensor(g.coords()).exp()
    }

    pub fn tensor_to_group(&self, t: &TensorElement) -> Result<GroupElement> {
        GroupElement::exp(&self.algebra, &self.tensor_to_lie(&t.log()?)?)
    }
}

/// Writes a Lie element in the Lyndon basis. Each `P(w)` has coefficient 1 on
/// `w` and is otherwise supported on lexicographically larger words, so
/// elimination in increasing order is exact.
fn decompose(words: &[Vec<usize>], images: &[TensorElement], t: &TensorElement, d: usize) -> Result<Vec<f64>> {
    let mut rest = t.clone();
    let mut coords = vec![0.0; words.len()];
    for (k, w) in words.iter().enumerate() {
        let c = rest.level(w.len())[word_index(w, d)];
        if c != 0.0 {
            coords[k] = c;
            let img = &images[k];
            let lvl = w.len();
            for (o, v) in rest.levels[lvl].iter_mut().zip(&img.levels[lvl]) {
                *o -= c * v;
            }
        }
    }
    let scale = 1.0 + t.levels.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let resid = rest.levels.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    if resid > 1e-9 * scale {
        return Err(Error::Numerical(format!(
            "element is not in the free Lie algebra (residual {resid:e})"
        )));
    }
    Ok(coords)
}

/// A level-2 geometric rough path sampled on a time grid: `values[k]` is
/// `X_{0,t_k} ∈ T^(2)(R^d)`.
#[derive(Clone, Debug)]
pub struct Level2RoughPath {
    times: Vec<f64>,
    values: Vec<TensorElement>,
}

const CHEN_TOL: f64 = 1e-10;

impl Level2RoughPath {
    /// Validates that the path starts at `𝟏` and that every increment
    /// `X_{t_k}^{-1} ⊗ X_{t_{k+1}}` is group-like (`Sym(level 2) = x⊗x/2`).
    pub fn new(times: Vec<f64>, values: Vec<TensorElement>) -> Result<Self> {
        if times.len() != values.len() || times.is_empty() {
            return Err(Error::Structural("rough path needs one value per grid time".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Domain("grid times must increase strictly".into()));
        }
        let d = values[0].dim();
        for v in &values {
            if v.depth() != 2 || v.dim() != d {
                return Err(Error::Structural("rough path values must live in T^(2)(R^d)".into()));
            }
        }
        if values[0].max_abs_diff(&TensorElement::one(d, 2)) > CHEN_TOL {
            return Err(Error::Validation {
                pointer: "/values/0".into(),
                message: "rough path must start at the unit".into(),
            });
        }
        let rp = Level2RoughPath { times, values };
        for k in 0..rp.intervals() {
            let inc = rp.increment(k)?;
            let x = inc.level(1);
            let a = inc.level(2);
            for i in 0..d {
                for j in 0..d {
                    let sym = 0.5 * (a[i * d + j] + a[j * d + i]);
                    if (sym - 0.5 * x[i] * x[j]).abs() > CHEN_TOL * (1.0 + x[i].abs() * x[j].abs()) {
                        return Err(Error::Validation {
                            pointer: format!("/values/{}", k + 1),
                            message: "Chen/geometricity check failed on this increment".into(),
                        });
                    }
                }
            }
        }
        Ok(rp)
    }

    /// The level-2 lift of a piecewise-linear path given at the grid times.
    pub fn from_path(times: Vec<f64>, points: &[Vec<f64>]) -> Result<Self> {
        if points.len() != times.len() || points.is_empty() {
            return Err(Error::Structural("need one point per grid time".into()));
        }
        let d = points[0].len();
        let mut values = vec![TensorElement::one(d, 2)];
        let mut cur = TensorElement::one(d, 2);
        for pair in points.windows(2) {
            let inc: Vec<f64> = pair[1].iter().zip(&pair[0]).map(|(a, b)| a - b).collect();
            cur.mul_exp_segment(&inc);
            values.push(cur.clone());
        }
        Self::new(times, values)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[TensorElement] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values[0].dim()
    }

    pub fn intervals(&self) -> usize {
        self.times.len() - 1
    }

    /// `X_{t_k, t_{k+1}}`.
    pub fn increment(&self, k: usize) -> Result<TensorElement> {
        self.values[k].inverse()?.tensor_product(&self.values[k + 1])
    }

    /// Antisymmetric part of the level-2 value at grid index `k`, as the
    /// `d×d` row-major matrix `(A - Aᵀ)/2`.
    pub fn area(&self, k: usize) -> Vec<f64> {
        let d = self.dim();
        let a = self.values[k].level(2);
        let mut out = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                out[i * d + j] = 0.5 * (a[i * d + j] - a[j * d + i]);
            }
        }
        out
    }

    /// CSV rows: `t`, level-1 coordinates, level-2 entries row-major.
    pub fn csv_rows(&self) -> Vec<Vec<f64>> {
        self.times
            .iter()
            .zip(&self.values)
            .map(|(t, v)| {
                let mut row = vec![*t];
                row.extend_from_slice(v.level(1));
                row.extend_from_slice(v.level(2));
                row
            })
            .collect()
    }
}

/// Result of [`lyons_extend`].
#[derive(Clone, Debug)]
pub struct LyonsExtension {
    /// `X_{0,t_k}` at level `r`, `values[0] = 𝟏`.
    pub values: Vec<TensorElement>,
    /// Dyadic refinement depth used for each interval.
    pub refinements: Vec<u32>,
}

const LYONS_TOL: f64 = 1e-9;
const LYONS_MAX_REFINE: u32 = 60;

/// Extends a level-2 rough path to level `r`.
///
/// On each grid interval the increment is replaced by `2^j` identical
/// log-linear pieces carrying only their levels 1 and 2 (higher levels set
/// to zero); their product, computed by `j` squarings, converges to the
/// unique multiplicative extension as `j → ∞`. Refinement stops when
/// successive products differ by less than `1e-9` entrywise.
pub fn lyons_extend(rp: &Level2RoughPath, r: usize) -> Result<LyonsExtension> {
    let d = rp.dim();
    if r < 2 {
        return Err(Error::Domain("extension level must be at least 2".into()));
    }
    let mut cur = TensorElement::one(d, r);
    let mut values = vec![cur.clone()];
    let mut refinements = Vec::with_capacity(rp.intervals());
    for k in 0..rp.intervals() {
        let l2 = rp.increment(k)?.log()?;
        let l = l2.truncate(r);
        let piece = |j: u32| -> Result<TensorElement> {
            let p = l.scale(0.5f64.powi(j as i32)).exp()?;
            let mut acc = p.truncate(2).truncate(r);
            for _ in 0..j {
                acc = acc.tensor_product(&acc)?;
            }
            Ok(acc)
        };
        let mut prev = piece(0)?;
        let mut used = 0;
        for j in 1..=LYONS_MAX_REFINE {
            let next = piece(j)?;
            let diff = next.max_abs_diff(&prev);
            prev = next;
            used = j;
            if diff < LYONS_TOL {
                break;
            }
        }
        if used == LYONS_MAX_REFINE {
            return Err(Error::Numerical(format!(
                "Lyons extension did not stabilise on interval {k}"
            )));
        }
        // Levels 1 and 2 of the limit are exactly those of the input.
        let mut inc = prev;
        let exact = rp.increment(k)?;
        inc.levels[1].copy_from_slice(exact.level(1));
        inc.levels[2].copy_from_slice(exact.level(2));
        cur = cur.tensor_product(&inc)?;
        values.push(cur.clone());
        refinements.push(used);
    }
    Ok(LyonsExtension { values, refinements })
}

/// Number of Brownian sub-steps per reported interval in [`distorted_bm`].
pub const BM_SUBSTEPS: usize = 64;

/// Samples a "distorted" Brownian rough path: Stratonovich enhanced Brownian
/// motion on `grid` (levels 1-2 by piecewise-linear refinement with
/// [`BM_SUBSTEPS`] sub-steps per interval) with `Δt·β̄` added to level 2 on
/// every interval.
pub fn distorted_bm(d: usize, beta_bar: &[f64], grid: &[f64], seed: u64) -> Result<Level2RoughPath> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    distorted_bm_with(d, beta_bar, grid, &mut rng, BM_SUBSTEPS)
}

/// [`distorted_bm`] with a caller-supplied RNG stream and sub-step count.
pub fn distorted_bm_with<R: rand::Rng>(
    d: usize,
    beta_bar: &[f64],
    grid: &[f64],
    rng: &mut R,
    substeps: usize,
) -> Result<Level2RoughPath> {
    check_antisymmetric(d, beta_bar)?;
    if grid.len() < 2 {
        return Err(Error::Domain("grid needs at least two times".into()));
    }
    let mut values = vec![TensorElement::one(d, 2)];
    let mut cur = TensorElement::one(d, 2);
    let mut step = vec![0.0; d];
    for w in grid.windows(2) {
        let dt = w[1] - w[0];
        let sd = (dt / substeps as f64).sqrt();
        let mut inc = TensorElement::one(d, 2);
        for _ in 0..substeps {
            for s in step.iter_mut() {
                let z: f64 = StandardNormal.sample(rng);
                *s = sd * z;
            }
            inc.mul_exp_segment(&step);
        }
        for (a, b) in inc.levels[2].iter_mut().zip(beta_bar) {
            *a += dt * b;
        }
        cur = cur.tensor_product(&inc)?;
        values.push(cur.clone());
    }
    // Adding an antisymmetric matrix keeps every increment geometric.
    Level2RoughPath::new(grid.to_vec(), values)
}

pub(crate) fn check_antisymmetric(d: usize, m: &[f64]) -> Result<()> {
    if m.len() != d * d {
        return Err(Error::Structural(format!(
            "expected a {d}x{d} matrix, got {} entries",
            m.len()
        )));
    }
    for i in 0..d {
        for j in 0..d {
            if (m[i * d + j] + m[j * d + i]).abs() > 1e-12 {
                return Err(Error::Domain(format!("matrix is not antisymmetric at ({i}, {j})")));
            }
        }
    }
    Ok(())
}
