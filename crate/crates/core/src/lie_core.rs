//! Graded nilpotent Lie algebras and their simply connected groups.
//!
//! Group elements are stored in canonical coordinates of the first kind, so
//! `log` and `exp` are the identity on coordinate vectors and every group
//! operation is a truncated Campbell-Baker-Hausdorff evaluation. Two products
//! are available: the original product `·` built from the full bracket, and
//! the limit product `*` built from the graded bracket (the component of
//! `[g^(k), g^(l)]` lying in layer `k + l`).

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Largest supported step; the truncated series below is exact up to depth 5.
pub const MAX_STEP: usize = 5;

const JACOBI_TOL: f64 = 1e-12;

/// Which group law to use.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Product {
    /// The original product `·` of `G`.
    Original,
    /// The limit product `*` of the stratified group `G_∞`.
    Limit,
}

impl Product {
    pub fn from_graded(graded: bool) -> Self {
        if graded {
            Product::Limit
        } else {
            Product::Original
        }
    }
}

/// One nonzero structure constant: `[X_i, X_j]` has coefficient `coef` on `X_k`.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Entry {
    i: usize,
    j: usize,
    k: usize,
    coef: f64,
}

/// `((layer, index), (layer, index), [(index, layer, coef)])`, zero-based.
pub type BracketRule = ((usize, usize), (usize, usize), Vec<(usize, usize, f64)>);

/// Structure constants of a step-`r` nilpotent Lie algebra with a chosen
/// layer decomposition `g = g^(1) ⊕ ... ⊕ g^(r)`.
///
/// Basis vectors are indexed globally, layer by layer. Construction validates
/// antisymmetry, the filtration condition (brackets of layers `k` and `l`
/// only reach layers `≥ k + l`) and the Jacobi identity; invalid tables are
/// rejected.
#[derive(Clone, Debug, PartialEq)]
pub struct GradedLieAlgebra {
    layer_dims: Vec<usize>,
    offsets: Vec<usize>,
    layer_of: Vec<usize>,
    full: Vec<Entry>,
    graded: Vec<Entry>,
}

impl GradedLieAlgebra {
    /// Builds an algebra from global-index structure constants
    /// `(i, j, k, c)` meaning `[X_i, X_j] ∋ c X_k`.
    ///
    /// Only one of `(i, j)` and `(j, i)` needs to be listed; if both are,
    /// they must be antisymmetric.
    pub fn from_structure_constants(layer_dims: &[usize], constants: &[(usize, usize, usize, f64)]) -> Result<Self> {
        if layer_dims.is_empty() || layer_dims.len() > MAX_STEP {
            return Err(Error::InvalidAlgebra(format!(
                "step must be between 1 and {MAX_STEP}, got {}",
                layer_dims.len()
            )));
        }
        if layer_dims.contains(&0) {
            return Err(Error::InvalidAlgebra("every layer must be nonempty".into()));
        }
        let mut offsets = vec![0];
        for &d in layer_dims {
            offsets.push(offsets.last().unwrap() + d);
        }
        let dim = *offsets.last().unwrap();
        let layer_of: Vec<usize> = (0..dim)
            .map(|g| offsets.iter().rposition(|&o| o <= g).unwrap())
            .collect();

        let mut table = vec![0.0; dim * dim * dim];
        let mut given = vec![false; dim * dim * dim];
        let at = |i: usize, j: usize, k: usize| (i * dim + j) * dim + k;
        for &(i, j, k, c) in constants {
            if i >= dim || j >= dim || k >= dim {
                return Err(Error::InvalidAlgebra(format!(
                    "structure constant index ({i}, {j}, {k}) out of range for dimension {dim}"
                )));
            }
            if i == j && c != 0.0 {
                return Err(Error::InvalidAlgebra(format!(
                    "[X_{i}, X_{i}] must vanish (antisymmetry)"
                )));
            }
            table[at(i, j, k)] += c;
            given[at(i, j, k)] = true;
        }
        // Antisymmetric completion.
        for i in 0..dim {
            for j in 0..dim {
                for k in 0..dim {
                    let (a, b) = (at(i, j, k), at(j, i, k));
                    match (given[a], given[b]) {
                        (true, false) => {
                            table[b] = -table[a];
                            given[b] = true;
                        }
                        (true, true) if (table[a] + table[b]).abs() > JACOBI_TOL => {
                            return Err(Error::InvalidAlgebra(format!(
                                "antisymmetry fails for [X_{i}, X_{j}] on X_{k}"
                            )));
                        }
                        _ => {}
                    }
                }
            }
        }

        let mut full = Vec::new();
        let mut graded = Vec::new();
        for i in 0..dim {
            for j in 0..dim {
                for k in 0..dim {
                    let coef = table[at(i, j, k)];
                    if coef == 0.0 {
                        continue;
                    }
                    let (li, lj, lk) = (layer_of[i] + 1, layer_of[j] + 1, layer_of[k] + 1);
                    if lk < li + lj {
                        return Err(Error::InvalidAlgebra(format!(
                            "nilpotency/filtration fails: [X_{i}, X_{j}] (layers {li}, {lj}) has a component on X_{k} in layer {lk}"
                        )));
                    }
                    let e = Entry { i, j, k, coef };
                    full.push(e);
                    if lk == li + lj {
                        graded.push(e);
                    }
                }
            }
        }
        let alg = GradedLieAlgebra {
            layer_dims: layer_dims.to_vec(),
            offsets,
            layer_of,
            full,
            graded,
        };
        alg.check_jacobi(Product::Original)?;
        alg.check_jacobi(Product::Limit)?;
        Ok(alg)
    }

    /// Builds an algebra from layer-local bracket rules.
    pub fn from_layered_brackets(layer_dims: &[usize], rules: &[BracketRule]) -> Result<Self> {
        let mut offsets = vec![0];
        for &d in layer_dims {
            offsets.push(offsets.last().unwrap() + d);
        }
        let global = |layer: usize, idx: usize| -> Result<usize> {
            if layer >= layer_dims.len() || idx >= layer_dims[layer] {
                return Err(Error::InvalidAlgebra(format!(
                    "basis element ({idx}, layer {}) does not exist",
                    layer + 1
                )));
            }
            Ok(offsets[layer] + idx)
        };
        let mut constants = Vec::new();
        for ((li, i), (lj, j), terms) in rules {
            let gi = global(*li, *i)?;
            let gj = global(*lj, *j)?;
            for &(k, lk, c) in terms {
                constants.push((gi, gj, global(lk, k)?, c));
            }
        }
        Self::from_structure_constants(layer_dims, &constants)
    }

    /// The 3-dimensional Heisenberg algebra, `[X_1, X_2] = X_3`.
    pub fn heisenberg() -> Self {
        Self::from_structure_constants(&[2, 1], &[(0, 1, 2, 1.0)]).expect("Heisenberg structure constants are valid")
    }

    /// The abelian algebra `R^d` (step 1).
    pub fn abelian(d: usize) -> Result<Self> {
        Self::from_structure_constants(&[d], &[])
    }

    pub fn step(&self) -> usize {
        self.layer_dims.len()
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    /// Total dimension `N = d_1 + ... + d_r`.
    pub fn dim(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    /// Index range of layer `k` (1-based) in global coordinates.
    pub fn layer_range(&self, k: usize) -> std::ops::Range<usize> {
        self.offsets[k - 1]..self.offsets[k]
    }

    /// Layer (1-based) of a global basis index.
    pub fn layer_of(&self, index: usize) -> usize {
        self.layer_of[index] + 1
    }

    /// Nonzero structure constants as `(i, j, k, c)`.
    pub fn structure_constants(&self, product: Product) -> Vec<(usize, usize, usize, f64)> {
        self.entries(product).iter().map(|e| (e.i, e.j, e.k, e.coef)).collect()
    }

    fn entries(&self, product: Product) -> &[Entry] {
        match product {
            Product::Original => &self.full,
            Product::Limit => &self.graded,
        }
    }

    /// `out = [x, y]`.
    pub fn bracket_into(&self, x: &[f64], y: &[f64], product: Product, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for e in self.entries(product) {
            out[e.k] += e.coef * x[e.i] * y[e.j];
        }
    }

    pub fn bracket(&self, x: &[f64], y: &[f64], product: Product) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.bracket_into(x, y, product, &mut out);
        out
    }

    /// `log(exp(x) exp(y))`, truncated at bracket depth `r`.
    pub fn bch(&self, x: &[f64], y: &[f64], product: Product) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.bch_into(x, y, product, &mut out);
        out
    }

    /// In-place variant of [`bch`](Self::bch); `out` must not alias the inputs.
    pub fn bch_into(&self, x: &[f64], y: &[f64], product: Product, out: &mut [f64]) {
        let mut ws = BchWorkspace::new(self.dim());
        self.bch_with(x, y, product, out, &mut ws);
    }

    /// Allocation-free [`bch_into`](Self::bch_into) for hot loops.
    pub fn bch_with(&self, x: &[f64], y: &[f64], product: Product, out: &mut [f64], ws: &mut BchWorkspace) {
        let n = self.dim();
        for i in 0..n {
            out[i] = x[i] + y[i];
        }
        let r = self.step();
        if r < 2 {
            return;
        }
        let BchWorkspace { xy, x_xy, y_xy, a, b } = ws;
        self.bracket_into(x, y, product, xy);
        axpy(out, 0.5, xy);
        if r < 3 {
            return;
        }
        self.bracket_into(x, xy, product, x_xy);
        self.bracket_into(y, xy, product, y_xy);
        axpy(out, 1.0 / 12.0, x_xy);
        axpy(out, -1.0 / 12.0, y_xy);
        if r < 4 {
            return;
        }
        self.bracket_into(y, x_xy, product, a);
        axpy(out, -1.0 / 24.0, a);
        if r < 5 {
            return;
        }
        // Each quintic term is [u,[v,w]] with w one of x_xy, y_xy.
        // [Y,[Y,[Y,[Y,X]]]] = -[Y,[Y,y_xy]],  [X,[X,[X,[X,Y]]]] = [X,[X,x_xy]]
        // [X,[Y,[Y,[Y,X]]]] = -[X,[Y,y_xy]],  [Y,[X,[X,[X,Y]]]] = [Y,[X,x_xy]]
        // [Y,[X,[Y,[X,Y]]]] = [Y,[X,y_xy]],   [X,[Y,[X,[Y,X]]]] = -[X,[Y,x_xy]]
        let terms: [(&[f64], &[f64], &[f64], f64); 6] = [
            (y, y, y_xy, 1.0 / 720.0),
            (x, x, x_xy, -1.0 / 720.0),
            (x, y, y_xy, -1.0 / 360.0),
            (y, x, x_xy, 1.0 / 360.0),
            (y, x, y_xy, 1.0 / 120.0),
            (x, y, x_xy, -1.0 / 120.0),
        ];
        for (u, v, w, c) in terms {
            self.bracket_into(v, w, product, a);
            self.bracket_into(u, a, product, b);
            axpy(out, c, b);
        }
    }

    /// `τ_ε` on coordinates: layer `k` is scaled by `ε^k`.
    pub fn dilate_into(&self, x: &[f64], eps: f64, out: &mut [f64]) {
        let mut scale = 1.0;
        for k in 1..=self.step() {
            scale *= eps;
            for i in self.layer_range(k) {
                out[i] = scale * x[i];
            }
        }
    }

    /// `‖x‖_g = Σ_k ‖x^(k)‖^{1/k}` with Euclidean layer norms.
    pub fn hom_norm_coords(&self, x: &[f64]) -> f64 {
        (1..=self.step())
            .map(|k| {
                let s: f64 = x[self.layer_range(k)].iter().map(|v| v * v).sum();
                s.sqrt().powf(1.0 / k as f64)
            })
            .sum()
    }

    /// Maximum violation of the Jacobi identity over all basis triples.
    pub fn jacobi_defect(&self, product: Product) -> f64 {
        let n = self.dim();
        let basis = |i: usize| {
            let mut v = vec![0.0; n];
            v[i] = 1.0;
            v
        };
        let mut worst: f64 = 0.0;
        for a in 0..n {
            for b in (a + 1)..n {
                for c in (b + 1)..n {
                    let (xa, xb, xc) = (basis(a), basis(b), basis(c));
                    let t1 = self.bracket(&xa, &self.bracket(&xb, &xc, product), product);
                    let t2 = self.bracket(&xb, &self.bracket(&xc, &xa, product), product);
                    let t3 = self.bracket(&xc, &self.bracket(&xa, &xb, product), product);
                    for k in 0..n {
                        worst = worst.max((t1[k] + t2[k] + t3[k]).abs());
                    }
                }
            }
        }
        worst
    }

    fn check_jacobi(&self, product: Product) -> Result<()> {
        let defect = self.jacobi_defect(product);
        if defect > JACOBI_TOL {
            return Err(Error::InvalidAlgebra(format!(
                "Jacobi identity fails by {defect:e} ({product:?} bracket)"
            )));
        }
        Ok(())
    }

    /// Whether `·` and `*` coincide (the algebra is already stratified).
    pub fn is_graded(&self) -> bool {
        self.full == self.graded
    }
}

/// Scratch buffers for [`GradedLieAlgebra::bch_with`].
#[derive(Clone, Debug)]
pub struct BchWorkspace {
    xy: Vec<f64>,
    x_xy: Vec<f64>,
    y_xy: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
}

impl BchWorkspace {
    pub fn new(dim: usize) -> Self {
        let z = vec![0.0; dim];
        BchWorkspace {
            xy: z.clone(),
            x_xy: z.clone(),
            y_xy: z.clone(),
            a: z.clone(),
            b: z,
        }
    }
}

fn axpy(out: &mut [f64], a: f64, x: &[f64]) {
    for (o, v) in out.iter_mut().zip(x) {
        *o += a * v;
    }
}

/// A nonnegative value of a homogeneous norm.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct HomogeneousNorm(f64);

impl HomogeneousNorm {
    pub fn value(self) -> f64 {
        self.0
    }
}

impl fmt::Display for HomogeneousNorm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// A point of `G` in canonical coordinates of the first kind.
#[derive(Clone, Debug)]
pub struct GroupElement {
    algebra: Arc<GradedLieAlgebra>,
    coords: Vec<f64>,
}

impl PartialEq for GroupElement {
    fn eq(&self, other: &Self) -> bool {
        same_algebra(&self.algebra, &other.algebra) && self.coords == other.coords
    }
}

fn same_algebra(a: &Arc<GradedLieAlgebra>, b: &Arc<GradedLieAlgebra>) -> bool {
    Arc::ptr_eq(a, b) || **a == **b
}

impl GroupElement {
    pub fn identity(algebra: &Arc<GradedLieAlgebra>) -> Self {
        GroupElement {
            algebra: algebra.clone(),
            coords: vec![0.0; algebra.dim()],
        }
    }

    /// `exp(Z)` for a Lie algebra element given by its coordinates.
    pub fn exp(algebra: &Arc<GradedLieAlgebra>, z: &[f64]) -> Result<Self> {
        if z.len() != algebra.dim() {
            return Err(Error::Structural(format!(
                "expected {} coordinates, got {}",
                algebra.dim(),
                z.len()
            )));
        }
        Ok(GroupElement {
            algebra: algebra.clone(),
            coords: z.to_vec(),
        })
    }

    /// Builds an element from its layer vectors `(g^(1), ..., g^(r))`.
    pub fn from_layers(algebra: &Arc<GradedLieAlgebra>, layers: &[Vec<f64>]) -> Result<Self> {
        if layers.len() != algebra.step() {
            return Err(Error::Structural(format!(
                "expected {} layers, got {}",
                algebra.step(),
                layers.len()
            )));
        }
        let mut coords = Vec::with_capacity(algebra.dim());
        for (k, layer) in layers.iter().enumerate() {
            if layer.len() != algebra.layer_dims()[k] {
                return Err(Error::Structural(format!(
                    "layer {} has length {}, expected {}",
                    k + 1,
                    layer.len(),
                    algebra.layer_dims()[k]
                )));
            }
            coords.extend_from_slice(layer);
        }
        Ok(GroupElement {
            algebra: algebra.clone(),
            coords,
        })
    }

    pub fn algebra(&self) -> &Arc<GradedLieAlgebra> {
        &self.algebra
    }

    /// `log(g)`; trivial in first-kind coordinates.
    pub fn log(&self) -> &[f64] {
        &self.coords
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    /// `log(g)|_{g^(k)}` for 1-based `k`.
    pub fn layer(&self, k: usize) -> &[f64] {
        &self.coords[self.algebra.layer_range(k)]
    }

    pub fn layers(&self) -> Vec<Vec<f64>> {
        (1..=self.algebra.step()).map(|k| self.layer(k).to_vec()).collect()
    }

    pub fn is_identity(&self) -> bool {
        self.coords.iter().all(|&c| c == 0.0)
    }

    fn check_same(&self, other: &Self) -> Result<()> {
        if !same_algebra(&self.algebra, &other.algebra) {
            return Err(Error::Structural("group elements belong to different algebras".into()));
        }
        Ok(())
    }

    /// `a · b` (original) or `a * b` (limit) via the truncated CBH series.
    pub fn cbh_product(&self, other: &Self, product: Product) -> Result<Self> {
        self.check_same(other)?;
        Ok(GroupElement {
            algebra: self.algebra.clone(),
            coords: self.algebra.bch(&self.coords, &other.coords, product),
        })
    }

    /// The inverse, identical for both products: `exp(Z)^{-1} = exp(-Z)`.
    pub fn inverse(&self) -> Self {
        GroupElement {
            algebra: self.algebra.clone(),
            coords: self.coords.iter().map(|v| -v).collect(),
        }
    }

    /// `τ_ε(g)`.
    pub fn dilate(&self, eps: f64) -> Result<Self> {
        if !(eps >= 0.0) {
            return Err(Error::Domain(format!("dilation factor must be nonnegative, got {eps}")));
        }
        let mut coords = vec![0.0; self.coords.len()];
        self.algebra.dilate_into(&self.coords, eps, &mut coords);
        Ok(GroupElement {
            algebra: self.algebra.clone(),
            coords,
        })
    }

    /// `‖g‖_Hom = Σ_k ‖log(g)^(k)‖^{1/k}` with Euclidean layer norms.
    pub fn hom_norm(&self) -> HomogeneousNorm {
        HomogeneousNorm(self.algebra.hom_norm_coords(&self.coords))
    }

    /// `‖g‖_Hom` with layer `k` measured by `sqrt(v^T M_k v)`.
    pub fn hom_norm_with(&self, metrics: &[DMatrix<f64>]) -> Result<HomogeneousNorm> {
        if metrics.len() != self.algebra.step() {
            return Err(Error::Structural(format!(
                "need one metric per layer ({}), got {}",
                self.algebra.step(),
                metrics.len()
            )));
        }
        let mut total = 0.0;
        for (k, m) in metrics.iter().enumerate() {
            let v = self.layer(k + 1);
            if m.nrows() != v.len() || m.ncols() != v.len() {
                return Err(Error::Structural(format!(
                    "metric for layer {} has shape {}x{}, expected {}",
                    k + 1,
                    m.nrows(),
                    m.ncols(),
                    v.len()
                )));
            }
            let mut q = 0.0;
            for a in 0..v.len() {
                for b in 0..v.len() {
                    q += v[a] * m[(a, b)] * v[b];
                }
            }
            total += q.max(0.0).sqrt().powf(1.0 / (k + 1) as f64);
        }
        Ok(HomogeneousNorm(total))
    }

    /// `‖a^{-1} * b‖_Hom`: a left-invariant homogeneous quasi-distance used in
    /// place of the Carnot-Carathéodory distance. It is symmetric because
    /// `‖g^{-1}‖_Hom = ‖g‖_Hom` in first-kind coordinates.
    pub fn quasi_distance(&self, other: &Self) -> Result<f64> {
        Ok(self.inverse().cbh_product(other, Product::Limit)?.hom_norm().value())
    }

    /// Canonical coordinates of the second kind for the given product, with
    /// the factor order `exp(g_{d_r}^(r) X) ··· exp(g_1^(1) X_1^(1))`.
    pub fn to_second_kind(&self, product: Product) -> Vec<f64> {
        let alg = &self.algebra;
        let n = alg.dim();
        let mut rest = self.coords.clone();
        let mut out = vec![0.0; n];
        let mut unit = vec![0.0; n];
        // Peel factors off the right end, innermost first.
        for i in 0..n {
            let c = rest[i];
            out[i] = c;
            unit.iter_mut().for_each(|v| *v = 0.0);
            unit[i] = -c;
            rest = alg.bch(&rest, &unit, product);
        }
        out
    }

    /// Inverse of [`to_second_kind`](Self::to_second_kind).
    pub fn from_second_kind(algebra: &Arc<GradedLieAlgebra>, coords: &[f64], product: Product) -> Result<Self> {
        let n = algebra.dim();
        if coords.len() != n {
            return Err(Error::Structural(format!(
                "expected {n} coordinates, got {}",
                coords.len()
            )));
        }
        let mut acc = vec![0.0; n];
        let mut unit = vec![0.0; n];
        for i in (0..n).rev() {
            unit.iter_mut().for_each(|v| *v = 0.0);
            unit[i] = coords[i];
            acc = algebra.bch(&acc, &unit, product);
        }
        GroupElement::exp(algebra, &acc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn heis() -> Arc<GradedLieAlgebra> {
        Arc::new(GradedLieAlgebra::heisenberg())
    }

    fn mat_mul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
        let mut c = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    c[i][j] += a[i][k] * b[k][j];
                }
            }
        }
        c
    }

    // Unipotent 3x3 matrices: exp(xX1 + yX2 + zX3) = I + A + A^2/2, and the
    // matrix log is A = (M - I) - (M - I)^2 / 2.
    fn to_matrix(c: &[f64]) -> [[f64; 3]; 3] {
        [[1.0, c[0], c[2] + c[0] * c[1] / 2.0], [0.0, 1.0, c[1]], [0.0, 0.0, 1.0]]
    }

    fn from_matrix(m: &[[f64; 3]; 3]) -> Vec<f64> {
        let (x, y) = (m[0][1], m[1][2]);
        let n2 = x * y; // (M - I)^2 has only the (0,2) entry x*y
        vec![x, y, m[0][2] - n2 / 2.0]
    }

    #[test]
    fn identity_is_neutral() {
        let alg = heis();
        let b = GroupElement::exp(&alg, &[0.3, -1.2, 2.0]).unwrap();
        let e = GroupElement::identity(&alg);
        for p in [Product::Original, Product::Limit] {
            assert_eq!(e.cbh_product(&b, p).unwrap(), b);
            assert_eq!(b.cbh_product(&e, p).unwrap(), b);
        }
    }

    #[test]
    fn heisenberg_product_matches_matrix_multiplication() {
        let alg = heis();
        let pairs = [
            ([1.0, 2.0, 3.0], [-0.5, 0.25, 1.0]),
            ([0.3, -0.7, 0.1], [2.0, 1.5, -3.0]),
        ];
        for (a, b) in pairs {
            let ga = GroupElement::exp(&alg, &a).unwrap();
            let gb = GroupElement::exp(&alg, &b).unwrap();
            let got = ga.cbh_product(&gb, Product::Original).unwrap();
            let want = from_matrix(&mat_mul(&to_matrix(&a), &to_matrix(&b)));
            for k in 0..3 {
                assert_abs_diff_eq!(got.coords()[k], want[k], epsilon = 1e-12);
            }
            // Closed form in first-kind coordinates.
            assert_abs_diff_eq!(
                got.coords()[2],
                a[2] + b[2] + (a[0] * b[1] - b[0] * a[1]) / 2.0,
                epsilon = 1e-14
            );
        }
    }

    #[test]
    fn heisenberg_second_kind_is_matrix_coordinates() {
        // (x, y, z) with (x,y,z)⋆(x',y',z') = (x+x', y+y', z+z'+xy').
        let alg = heis();
        let g = GroupElement::from_second_kind(&alg, &[1.5, -2.0, 0.75], Product::Original).unwrap();
        let m = to_matrix(g.coords());
        assert_abs_diff_eq!(m[0][1], 1.5, epsilon = 1e-14);
        assert_abs_diff_eq!(m[1][2], -2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(m[0][2], 0.75, epsilon = 1e-14);
        let back = g.to_second_kind(Product::Original);
        for (a, b) in back.iter().zip([1.5, -2.0, 0.75]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-14);
        }
    }

    #[test]
    fn inverse_matches_matrix_inverse() {
        let alg = heis();
        let a = [0.7, -1.1, 0.4];
        let g = GroupElement::exp(&alg, &a).unwrap();
        let inv = g.inverse();
        assert_eq!(inv.coords(), &[-0.7, 1.1, -0.4]);
        // Inverse of a unipotent upper triangular matrix.
        let m = to_matrix(&a);
        let minv = [
            [1.0, -m[0][1], m[0][1] * m[1][2] - m[0][2]],
            [0.0, 1.0, -m[1][2]],
            [0.0, 0.0, 1.0],
        ];
        let want = from_matrix(&minv);
        for k in 0..3 {
            assert_abs_diff_eq!(inv.coords()[k], want[k], epsilon = 1e-14);
        }
        for p in [Product::Original, Product::Limit] {
            assert!(g.cbh_product(&inv, p).unwrap().hom_norm().value() < 1e-12);
        }
        assert!(GroupElement::identity(&alg).inverse().is_identity());
    }

    #[test]
    fn dilation_edge_cases() {
        let alg = heis();
        let g = GroupElement::exp(&alg, &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(g.dilate(1.0).unwrap(), g);
        assert!(g.dilate(0.0).unwrap().is_identity());
        assert_eq!(g.dilate(2.0).unwrap().coords(), &[2.0, 4.0, 12.0]);
        assert!(matches!(g.dilate(-0.1), Err(Error::Domain(_))));
    }

    #[test]
    fn hom_norm_of_three_four_five() {
        let alg = heis();
        let g = GroupElement::exp(&alg, &[3.0, 4.0, 5.0]).unwrap();
        assert_abs_diff_eq!(g.hom_norm().value(), 5.0 + 5f64.sqrt(), epsilon = 1e-14);
        assert_abs_diff_eq!(g.hom_norm().value(), 7.236_067_977_499_79, epsilon = 1e-12);
        assert_eq!(GroupElement::identity(&alg).hom_norm().value(), 0.0);
    }

    #[test]
    fn hom_norm_with_identity_metric_agrees() {
        let alg = heis();
        let g = GroupElement::exp(&alg, &[3.0, 4.0, 5.0]).unwrap();
        let metrics = vec![DMatrix::identity(2, 2), DMatrix::identity(1, 1)];
        assert_abs_diff_eq!(
            g.hom_norm_with(&metrics).unwrap().value(),
            g.hom_norm().value(),
            epsilon = 1e-14
        );
        assert!(g.hom_norm_with(&metrics[..1]).is_err());
    }

    #[test]
    fn rejects_invalid_algebras() {
        // Jacobi fails: [X1,X2]=X3, [X2,X3]=X1 is not nilpotent-filtered.
        let bad = GradedLieAlgebra::from_structure_constants(&[2, 1], &[(0, 1, 2, 1.0), (1, 2, 0, 1.0)]);
        assert!(matches!(bad, Err(Error::InvalidAlgebra(_))));
        // Bracket of two layer-1 elements landing in layer 1.
        let bad = GradedLieAlgebra::from_structure_constants(&[2, 1], &[(0, 1, 0, 1.0)]);
        assert!(matches!(bad, Err(Error::InvalidAlgebra(_))));
        // Inconsistent antisymmetry.
        let bad = GradedLieAlgebra::from_structure_constants(&[2, 1], &[(0, 1, 2, 1.0), (1, 0, 2, 1.0)]);
        assert!(matches!(bad, Err(Error::InvalidAlgebra(_))));
        // Jacobi failure inside a filtered algebra: layers [3,1,1],
        // [X1,X2]=X4, [X1,X3]=X4... built so that [X1,[X2,X3]] cycles fail.
        let bad =
            GradedLieAlgebra::from_structure_constants(&[3, 1, 1], &[(0, 1, 3, 1.0), (3, 2, 4, 1.0), (1, 2, 3, 1.0)]);
        assert!(matches!(bad, Err(Error::InvalidAlgebra(_))));
    }

    #[test]
    fn non_graded_algebra_products_differ_in_layer_three() {
        // Layers [2,1,1]: [X1,X2] = X3 + X4 (non-graded part on X4),
        // [X1,X3] = X4. Filtration holds; Jacobi is trivial for these triples.
        let alg = Arc::new(
            GradedLieAlgebra::from_structure_constants(&[2, 1, 1], &[(0, 1, 2, 1.0), (0, 1, 3, 1.0), (0, 2, 3, 1.0)])
                .unwrap(),
        );
        assert!(!alg.is_graded());
        let a = GroupElement::exp(&alg, &[1.0, 0.5, 0.2, 0.0]).unwrap();
        let b = GroupElement::exp(&alg, &[-0.3, 2.0, 0.1, 0.4]).unwrap();
        let dot = a.cbh_product(&b, Product::Original).unwrap();
        let star = a.cbh_product(&b, Product::Limit).unwrap();
        assert_eq!(dot.layer(1), star.layer(1));
        assert_eq!(dot.layer(2), star.layer(2));
        assert!((dot.layer(3)[0] - star.layer(3)[0]).abs() > 1e-3);
    }

    #[test]
    fn layered_rules_build_heisenberg() {
        let alg = GradedLieAlgebra::from_layered_brackets(&[2, 1], &[((0, 0), (0, 1), vec![(0, 1, 1.0)])]).unwrap();
        assert_eq!(alg, GradedLieAlgebra::heisenberg());
    }
}
