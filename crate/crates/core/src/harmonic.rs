//! Periodic realizations, the modified harmonic realization `Φ_0`, the
//! Albanese metric and the second-layer drift `β(Φ_0)`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::graph_model::{HomologicalDirection, InvariantMeasure, VoltageGraph};
use crate::lie_core::{GradedLieAlgebra, GroupElement, Product};

/// Largest per-vertex harmonicity residual accepted as "modified harmonic".
pub const HARMONIC_TOL: f64 = 1e-10;

/// A periodic realization `Φ(x, γ) = γ · Φ(x)` given by its values on the
/// fundamental domain, with the edge increments
/// `dΦ(e) = Φ(o(e))^{-1} · voltage(e) · Φ(t(e))`.
#[derive(Clone, Debug)]
pub struct Realization {
    offsets: Vec<GroupElement>,
    increments: Vec<GroupElement>,
    probabilities: Vec<f64>,
    residual: f64,
    is_modified_harmonic: bool,
}

impl Realization {
    /// Builds the realization with the given vertex offsets and evaluates
    /// its harmonicity residual for the walk on `g`.
    pub fn from_offsets(g: &VoltageGraph, gamma: &HomologicalDirection, offsets: Vec<GroupElement>) -> Result<Self> {
        if offsets.len() != g.num_vertices() {
            return Err(Error::Structural(format!(
                "need {} vertex offsets, got {}",
                g.num_vertices(),
                offsets.len()
            )));
        }
        let mut increments = Vec::with_capacity(g.edges().len());
        for e in g.edges() {
            let inc = offsets[e.origin]
                .inverse()
                .cbh_product(&e.voltage, Product::Original)?
                .cbh_product(&offsets[e.terminus], Product::Original)?;
            increments.push(inc);
        }
        let mut phi = Realization {
            offsets,
            increments,
            probabilities: g.probabilities(),
            residual: 0.0,
            is_modified_harmonic: false,
        };
        phi.residual = phi.harmonicity_residuals(g, gamma).into_iter().fold(0.0, f64::max);
        phi.is_modified_harmonic = phi.residual <= HARMONIC_TOL;
        Ok(phi)
    }

    /// The realization given by the voltages alone (all offsets `𝟏_G`).
    pub fn trivial(g: &VoltageGraph, gamma: &HomologicalDirection) -> Result<Self> {
        let offsets = vec![GroupElement::identity(g.algebra()); g.num_vertices()];
        Self::from_offsets(g, gamma, offsets)
    }

    pub fn algebra(&self) -> &Arc<GradedLieAlgebra> {
        self.offsets[0].algebra()
    }

    pub fn offsets(&self) -> &[GroupElement] {
        &self.offsets
    }

    pub fn offset(&self, x: usize) -> &GroupElement {
        &self.offsets[x]
    }

    pub fn increments(&self) -> &[GroupElement] {
        &self.increments
    }

    pub fn increment(&self, e: usize) -> &GroupElement {
        &self.increments[e]
    }

    /// Largest harmonicity residual over the vertices.
    pub fn residual(&self) -> f64 {
        self.residual
    }

    pub fn is_modified_harmonic(&self) -> bool {
        self.is_modified_harmonic
    }

    /// `‖dΦ‖_∞ = max_e ‖dΦ(e)‖_Hom`.
    pub fn sup_increment(&self) -> f64 {
        self.increments.iter().map(|g| g.hom_norm().value()).fold(0.0, f64::max)
    }

    /// `Φ(x, γ) = γ · Φ(x)`.
    pub fn position(&self, x: usize, gamma: &GroupElement) -> Result<GroupElement> {
        gamma.cbh_product(&self.offsets[x], Product::Original)
    }

    /// Per-vertex `max_i |Σ_{e∈E_x} p(e) log(dΦ(e))|_{g^(1)} - ρ_R(γ_p)|_i`.
    pub fn harmonicity_residuals(&self, g: &VoltageGraph, gamma: &HomologicalDirection) -> Vec<f64> {
        (0..g.num_vertices())
            .map(|x| {
                let mut s = gamma.rho.iter().map(|r| -r).collect::<Vec<_>>();
                for &e in g.out_edges(x) {
                    let p = g.edge(e).p;
                    for (si, v) in s.iter_mut().zip(self.increments[e].layer(1)) {
                        *si += p * v;
                    }
                }
                s.iter().fold(0.0f64, |m, v| m.max(v.abs()))
            })
            .collect()
    }

    /// Adds `delta[x]` to the first-layer coordinates of each offset, leaving
    /// higher layers untouched (a non-harmonic perturbation in general).
    pub fn perturbed(&self, g: &VoltageGraph, gamma: &HomologicalDirection, delta: &[Vec<f64>]) -> Result<Self> {
        if delta.len() != self.offsets.len() {
            return Err(Error::Structural("one perturbation per vertex required".into()));
        }
        let alg = self.algebra().clone();
        let range = alg.layer_range(1);
        let mut offsets = Vec::with_capacity(delta.len());
        for (off, d) in self.offsets.iter().zip(delta) {
            if d.len() != range.len() {
                return Err(Error::Structural("perturbation must live in g^(1)".into()));
            }
            let mut c = off.coords().to_vec();
            for (ci, di) in c[range.clone()].iter_mut().zip(d) {
                *ci += di;
            }
            offsets.push(GroupElement::exp(&alg, &c)?);
        }
        Self::from_offsets(g, gamma, offsets)
    }

    /// `Φ'(x) = Φ(x) · exp(c)` for every vertex. Right translation keeps
    /// Γ-equivariance and modified harmonicity.
    pub fn right_translated(&self, g: &VoltageGraph, gamma: &HomologicalDirection, c: &[f64]) -> Result<Self> {
        let alg = self.algebra().clone();
        let shift = GroupElement::exp(&alg, c)?;
        let offsets = self
            .offsets
            .iter()
            .map(|o| o.cbh_product(&shift, Product::Original))
            .collect::<Result<Vec<_>>>()?;
        Self::from_offsets(g, gamma, offsets)
    }
}

/// Optional overrides of the layer `≥ 2` coordinates of `Φ_0` on the
/// fundamental domain (the part of `Φ_0` harmonicity leaves free).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RealizationOverrides {
    /// `(vertex, coordinates of layers 2..=r concatenated)`.
    pub higher_layers: Vec<(usize, Vec<f64>)>,
}

/// Solves for the modified harmonic realization with the base vertex pinned
/// to `𝟏_G` and higher-layer offsets `0`.
pub fn solve_realization(g: &VoltageGraph, m: &InvariantMeasure, gamma: &HomologicalDirection) -> Result<Realization> {
    solve_realization_with(g, m, gamma, &RealizationOverrides::default())
}

/// [`solve_realization`] with higher-layer offsets taken from `overrides`.
pub fn solve_realization_with(
    g: &VoltageGraph,
    _m: &InvariantMeasure,
    gamma: &HomologicalDirection,
    overrides: &RealizationOverrides,
) -> Result<Realization> {
    let alg = g.algebra().clone();
    let n = g.num_vertices();
    let d1 = alg.layer_dims()[0];
    // Σ_{e∈E_x} p(e) (v(t(e)) - v(x)) = ρ - Σ_{e∈E_x} p(e) log(voltage(e))|_1,
    // with row 0 replaced by v(0) = 0.
    let mut a = g.transition_matrix() - DMatrix::identity(n, n);
    for j in 0..n {
        a[(0, j)] = if j == 0 { 1.0 } else { 0.0 };
    }
    let lu = a.clone().lu();
    let mut layer1 = vec![vec![0.0; d1]; n];
    for i in 0..d1 {
        let mut b = DVector::zeros(n);
        for x in 1..n {
            let mut s = gamma.rho[i];
            for &e in g.out_edges(x) {
                s -= g.edge(e).p * g.edge(e).voltage.layer(1)[i];
            }
            b[x] = s;
        }
        let mut v = lu
            .solve(&b)
            .ok_or_else(|| Error::Numerical("harmonicity system is singular".into()))?;
        // One round of iterative refinement.
        if let Some(dv) = lu.solve(&(&b - &a * &v)) {
            v += dv;
        }
        for x in 0..n {
            layer1[x][i] = v[x];
        }
    }
    let higher = alg.dim() - d1;
    let mut offsets: Vec<GroupElement> = Vec::with_capacity(n);
    for l1 in &layer1 {
        let mut c = l1.clone();
        c.extend(std::iter::repeat_n(0.0, higher));
        offsets.push(GroupElement::exp(&alg, &c)?);
    }
    for (x, hi) in &overrides.higher_layers {
        if *x >= n {
            return Err(Error::Structural(format!("override for missing vertex {x}")));
        }
        if *x == 0 {
            return Err(Error::Domain("the base vertex is pinned to the identity".into()));
        }
        if hi.len() != higher {
            return Err(Error::Structural(format!(
                "override for vertex {x} needs {higher} higher-layer coordinates"
            )));
        }
        let mut c = offsets[*x].coords().to_vec();
        c[d1..].copy_from_slice(hi);
        offsets[*x] = GroupElement::exp(&alg, &c)?;
    }
    let phi = Realization::from_offsets(g, gamma, offsets)?;
    if !phi.is_modified_harmonic() {
        return Err(Error::Numerical(format!(
            "solved realization has harmonicity residual {:e}",
            phi.residual()
        )));
    }
    Ok(phi)
}

/// Worst conditional-mean defect of the centered first-layer increments over
/// exhaustive paths of length `≤ steps` from every vertex: for each prefix,
/// `E[log dΦ(e_k)|_1 - ρ | e_1, ..., e_{k-1}]` should vanish.
pub fn martingale_defect(g: &VoltageGraph, gamma: &HomologicalDirection, phi: &Realization, steps: usize) -> f64 {
    fn walk(g: &VoltageGraph, gamma: &HomologicalDirection, phi: &Realization, x: usize, left: usize, worst: &mut f64) {
        if left == 0 {
            return;
        }
        let mut mean = gamma.rho.iter().map(|r| -r).collect::<Vec<_>>();
        for &e in g.out_edges(x) {
            let p = g.edge(e).p;
            for (mi, v) in mean.iter_mut().zip(phi.increment(e).layer(1)) {
                *mi += p * v;
            }
            walk(g, gamma, phi, g.edge(e).terminus, left - 1, worst);
        }
        for v in mean {
            *worst = worst.max(v.abs());
        }
    }
    let mut worst = 0.0;
    for x in 0..g.num_vertices() {
        walk(g, gamma, phi, x, steps, &mut worst);
    }
    worst
}

/// Albanese data of the walk: the Gram matrix `⟨⟨u_i, u_j⟩⟩_p` of the dual
/// basis, the metric `g_0 = gram^{-1}`, the `g_0`-orthonormal frame and
/// `vol(Alb^Γ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct AlbaneseData {
    pub gram: DMatrix<f64>,
    pub metric: DMatrix<f64>,
    /// Columns are `V_1, ..., V_{d_1}` in the `X_i^(1)` basis.
    pub frame: DMatrix<f64>,
    /// Rows are `v_1, ..., v_{d_1}` in the `u_i` basis (`coframe = frame^{-1}`).
    pub coframe: DMatrix<f64>,
    pub volume: f64,
}

impl AlbaneseData {
    /// `vol(Alb^Γ)^{-1} = sqrt(det gram)`.
    pub fn inv_volume(&self) -> f64 {
        1.0 / self.volume
    }

    /// Coordinates of `x ∈ g^(1)` in the frame `{V_i}`.
    pub fn frame_coords(&self, x: &[f64]) -> Vec<f64> {
        let v = &self.coframe * DVector::from_column_slice(x);
        v.iter().copied().collect()
    }

    /// `Σ_i c_i V_i` in the `X_i^(1)` basis.
    pub fn from_frame_coords(&self, c: &[f64]) -> Vec<f64> {
        let v = &self.frame * DVector::from_column_slice(c);
        v.iter().copied().collect()
    }
}

/// Builds the Albanese data from a modified harmonic realization.
pub fn albanese(
    g: &VoltageGraph,
    m: &InvariantMeasure,
    gamma: &HomologicalDirection,
    phi: &Realization,
) -> Result<AlbaneseData> {
    if !phi.is_modified_harmonic() {
        return Err(Error::Precondition(format!(
            "the Albanese metric needs the modified harmonic realization (residual {:e})",
            phi.residual()
        )));
    }
    let d1 = g.algebra().layer_dims()[0];
    let mut gram = DMatrix::<f64>::zeros(d1, d1);
    for (e, inc) in phi.increments().iter().enumerate() {
        let a = inc.layer(1);
        for i in 0..d1 {
            for j in 0..d1 {
                gram[(i, j)] += m.edge[e] * a[i] * a[j];
            }
        }
    }
    for i in 0..d1 {
        for j in 0..d1 {
            gram[(i, j)] -= gamma.rho[i] * gamma.rho[j];
        }
    }
    let scale = gram.amax().max(f64::MIN_POSITIVE);
    let chol = gram
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Degenerate("Albanese Gram matrix is not positive definite".into()))?;
    let c = chol.l();
    let det: f64 = c.diagonal().iter().map(|v| v * v).product();
    if det <= 1e-14 * scale.powi(d1 as i32) {
        return Err(Error::Degenerate(format!(
            "Albanese Gram matrix is singular (det {det:e})"
        )));
    }
    // Gram-Schmidt of u_1, u_2, ... in order: v = L u with L = C^{-1}, where
    // gram = C Cᵀ; the dual frame is V = C (columns).
    let coframe = c
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Degenerate("Cholesky factor is singular".into()))?;
    let metric = chol.inverse();
    Ok(AlbaneseData {
        gram,
        metric,
        frame: c,
        coframe,
        volume: 1.0 / det.sqrt(),
    })
}

/// The second-layer drift `β(Φ_0)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DriftBeta {
    /// Coordinates in the `X_i^(2)` basis.
    pub beta: Vec<f64>,
    /// `β^{ij}` for `i < j` (lexicographic pairs) in the basis `[[V_i, V_j]]`,
    /// when those brackets form a basis of `g^(2)`.
    pub beta_frame: Option<Vec<f64>>,
    /// The antisymmetric `d_1 × d_1` matrix `β̄` with entries `β^{ij}`.
    pub beta_bar: Option<DMatrix<f64>>,
}

/// Index pairs `(i, j)`, `i < j < d`, in lexicographic order.
pub fn frame_pairs(d: usize) -> Vec<(usize, usize)> {
    (0..d).flat_map(|i| ((i + 1)..d).map(move |j| (i, j))).collect()
}

/// `[[V_i, V_j]]` as columns in the `X^(2)` basis, one per pair `i < j`.
pub fn second_layer_frame(alg: &GradedLieAlgebra, alb: &AlbaneseData) -> DMatrix<f64> {
    let d1 = alg.layer_dims()[0];
    let r2 = if alg.step() >= 2 { alg.layer_range(2) } else { 0..0 };
    let pairs = frame_pairs(d1);
    let mut out = DMatrix::<f64>::zeros(r2.len(), pairs.len());
    let n = alg.dim();
    for (col, &(i, j)) in pairs.iter().enumerate() {
        let mut vi = vec![0.0; n];
        let mut vj = vec![0.0; n];
        for k in 0..d1 {
            vi[k] = alb.frame[(k, i)];
            vj[k] = alb.frame[(k, j)];
        }
        let br = alg.bracket(&vi, &vj, Product::Limit);
        for (row, k) in r2.clone().enumerate() {
            out[(row, col)] = br[k];
        }
    }
    out
}

/// `β(Φ_0) = Σ_e m̃(e) log(dΦ_0(e) · exp(-ρ_R(γ_p)))|_{g^(2)}`.
pub fn drift_beta(
    g: &VoltageGraph,
    m: &InvariantMeasure,
    gamma: &HomologicalDirection,
    phi: &Realization,
    alb: &AlbaneseData,
) -> Result<DriftBeta> {
    let alg = g.algebra().clone();
    if alg.step() < 2 {
        return Ok(DriftBeta {
            beta: Vec::new(),
            beta_frame: None,
            beta_bar: None,
        });
    }
    let mut neg_rho = vec![0.0; alg.dim()];
    for (i, r) in gamma.rho.iter().enumerate() {
        neg_rho[i] = -r;
    }
    let r2 = alg.layer_range(2);
    let mut beta = vec![0.0; r2.len()];
    for (e, inc) in phi.increments().iter().enumerate() {
        let z = alg.bch(inc.coords(), &neg_rho, Product::Original);
        for (b, v) in beta.iter_mut().zip(&z[r2.clone()]) {
            *b += m.edge[e] * v;
        }
    }
    let (beta_frame, beta_bar) = frame_beta(&alg, alb, &beta);
    Ok(DriftBeta {
        beta,
        beta_frame,
        beta_bar,
    })
}

/// Expresses a layer-2 vector in the `[[V_i, V_j]]` basis when it is one.
pub fn frame_beta(
    alg: &GradedLieAlgebra,
    alb: &AlbaneseData,
    beta: &[f64],
) -> (Option<Vec<f64>>, Option<DMatrix<f64>>) {
    let b = second_layer_frame(alg, alb);
    if b.nrows() != b.ncols() || b.nrows() == 0 {
        return (None, None);
    }
    let Some(coef) = b.lu().solve(&DVector::from_column_slice(beta)) else {
        return (None, None);
    };
    let d1 = alg.layer_dims()[0];
    let mut bar = DMatrix::zeros(d1, d1);
    for (k, &(i, j)) in frame_pairs(d1).iter().enumerate() {
        bar[(i, j)] = coef[k];
        bar[(j, i)] = -coef[k];
    }
    (Some(coef.iter().copied().collect()), Some(bar))
}

/// `β(Φ_0) - β(Φ̂_0) = -[ρ_R(γ_p), log(Φ_0(x)^{-1} · Φ̂_0(x))]|_{g^(2)}` for two
/// modified harmonic realizations of the same walk.
pub fn beta_shift(
    g: &VoltageGraph,
    gamma: &HomologicalDirection,
    phi: &Realization,
    phi_hat: &Realization,
) -> Result<Vec<f64>> {
    if phi.probabilities != phi_hat.probabilities || phi.probabilities != g.probabilities() {
        return Err(Error::Structural("realizations belong to different walks".into()));
    }
    if !phi.is_modified_harmonic() || !phi_hat.is_modified_harmonic() {
        return Err(Error::Precondition(
            "both realizations must be modified harmonic".into(),
        ));
    }
    let alg = g.algebra().clone();
    let d1 = alg.layer_dims()[0];
    let c = phi
        .offset(0)
        .inverse()
        .cbh_product(phi_hat.offset(0), Product::Original)?;
    let mut c1 = vec![0.0; alg.dim()];
    c1[..d1].copy_from_slice(c.layer(1));
    let mut rho = vec![0.0; alg.dim()];
    rho[..d1].copy_from_slice(&gamma.rho);
    if alg.step() < 2 {
        return Ok(Vec::new());
    }
    let br = alg.bracket(&rho, &c1, Product::Original);
    Ok(br[alg.layer_range(2)].iter().map(|v| -v).collect())
}

/// The `g^(1)`-corrector `Cor(x) = log Φ(x)|_1 - log Φ_0(x)|_1` on the
/// fundamental domain; the realizations must agree on layers `≥ 2`.
pub fn corrector(phi: &Realization, phi0: &Realization) -> Result<Vec<Vec<f64>>> {
    if phi.offsets.len() != phi0.offsets.len() {
        return Err(Error::Structural("realizations of different graphs".into()));
    }
    let alg = phi.algebra().clone();
    let d1 = alg.layer_dims()[0];
    let mut out = Vec::with_capacity(phi.offsets.len());
    for (x, (a, b)) in phi.offsets.iter().zip(&phi0.offsets).enumerate() {
        let (ca, cb) = (a.coords(), b.coords());
        if ca[d1..].iter().zip(&cb[d1..]).any(|(u, v)| (u - v).abs() > 1e-12) {
            return Err(Error::Structural(format!(
                "realizations disagree on layers ≥ 2 at vertex {x}"
            )));
        }
        out.push(ca[..d1].iter().zip(&cb[..d1]).map(|(u, v)| u - v).collect());
    }
    Ok(out)
}

/// `max_x ‖Cor(x)‖` (Euclidean in the `X^(1)` basis).
pub fn corrector_bound(cor: &[Vec<f64>]) -> f64 {
    cor.iter()
        .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
}

/// Everything derived from a walk in one place.
#[derive(Clone, Debug)]
pub struct WalkData {
    pub measure: InvariantMeasure,
    pub gamma: HomologicalDirection,
    pub phi: Realization,
    pub albanese: AlbaneseData,
    pub beta: DriftBeta,
}

/// Runs the full pipeline: measure, direction, `Φ_0`, Albanese data, `β`.
pub fn analyze(g: &VoltageGraph, overrides: &RealizationOverrides) -> Result<WalkData> {
    let measure = crate::graph_model::invariant_measure(g)?;
    let gamma = crate::graph_model::homological_direction(g, &measure)?;
    let phi = solve_realization_with(g, &measure, &gamma, overrides)?;
    let albanese = albanese(g, &measure, &gamma, &phi)?;
    let beta = drift_beta(g, &measure, &gamma, &phi, &albanese)?;
    Ok(WalkData {
        measure,
        gamma,
        phi,
        albanese,
        beta,
    })
}
