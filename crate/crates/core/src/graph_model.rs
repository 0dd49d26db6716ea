//! Voltage graphs: the finite quotient `X_0` with deck-group labels on its
//! directed edges, the transition probability, the invariant measure and the
//! homological direction.
//!
//! A vertex of the covering `X` is a pair `(x, γ)` with `x ∈ V_0`, `γ ∈ Γ`;
//! the lift of `e` starting at `(o(e), γ)` ends at `(t(e), γ · voltage(e))`.

use std::collections::VecDeque;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::lie_core::{GradedLieAlgebra, GroupElement, Product};

const STOCHASTIC_TOL: f64 = 1e-12;

/// A directed edge of `X_0`.
#[derive(Clone, Debug)]
pub struct Edge {
    pub label: String,
    pub origin: usize,
    pub terminus: usize,
    /// Index of the reversed edge `ē`.
    pub inverse: usize,
    pub voltage: GroupElement,
    pub p: f64,
}

#[derive(Clone, Debug)]
pub struct VoltageGraph {
    algebra: Arc<GradedLieAlgebra>,
    vertices: Vec<String>,
    edges: Vec<Edge>,
    out: Vec<Vec<usize>>,
}

impl VoltageGraph {
    /// Validates and builds a voltage graph.
    pub fn new(algebra: Arc<GradedLieAlgebra>, vertices: Vec<String>, edges: Vec<Edge>) -> Result<Self> {
        let nv = vertices.len();
        if nv == 0 {
            return Err(Error::Structural("graph has no vertices".into()));
        }
        let ne = edges.len();
        for (i, e) in edges.iter().enumerate() {
            if e.origin >= nv || e.terminus >= nv {
                return Err(Error::Structural(format!(
                    "edge {i} ({}) refers to a missing vertex",
                    e.label
                )));
            }
            if e.inverse >= ne {
                return Err(Error::InversePairing {
                    edge: i,
                    message: format!("inverse index {} out of range", e.inverse),
                });
            }
            if !(0.0..=1.0).contains(&e.p) {
                return Err(Error::Domain(format!(
                    "edge {i} ({}) has probability {} outside [0, 1]",
                    e.label, e.p
                )));
            }
            if e.voltage.algebra().as_ref() != algebra.as_ref() {
                return Err(Error::Structural(format!(
                    "edge {i} voltage lives in a different algebra"
                )));
            }
        }
        for (i, e) in edges.iter().enumerate() {
            let inv = &edges[e.inverse];
            if e.inverse == i {
                return Err(Error::InversePairing {
                    edge: i,
                    message: "an edge cannot be its own inverse".into(),
                });
            }
            if inv.inverse != i {
                return Err(Error::InversePairing {
                    edge: i,
                    message: format!("inverse of the inverse is {}, not {i}", inv.inverse),
                });
            }
            if inv.origin != e.terminus || inv.terminus != e.origin {
                return Err(Error::InversePairing {
                    edge: i,
                    message: "inverse edge does not reverse origin and terminus".into(),
                });
            }
            let prod = e.voltage.cbh_product(&inv.voltage, Product::Original)?;
            let scale = 1.0 + e.voltage.coords().iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if prod.coords().iter().any(|c| c.abs() > 1e-12 * scale) {
                return Err(Error::InversePairing {
                    edge: i,
                    message: "voltage of the inverse edge is not the inverse voltage".into(),
                });
            }
            if !(e.p + inv.p > 0.0) {
                return Err(Error::Domain(format!(
                    "edge {i} ({}) and its inverse both have probability 0",
                    e.label
                )));
            }
        }
        let mut out = vec![Vec::new(); nv];
        for (i, e) in edges.iter().enumerate() {
            out[e.origin].push(i);
        }
        for (x, es) in out.iter().enumerate() {
            let sum: f64 = es.iter().map(|&i| edges[i].p).sum();
            if (sum - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::Stochasticity { vertex: x, sum });
            }
        }
        let g = VoltageGraph {
            algebra,
            vertices,
            edges,
            out,
        };
        g.check_irreducible()?;
        Ok(g)
    }

    fn check_irreducible(&self) -> Result<()> {
        let nv = self.vertices.len();
        for forward in [true, false] {
            let mut seen = vec![false; nv];
            seen[0] = true;
            let mut queue = VecDeque::from([0]);
            while let Some(x) = queue.pop_front() {
                for e in &self.edges {
                    let (a, b) = if forward {
                        (e.origin, e.terminus)
                    } else {
                        (e.terminus, e.origin)
                    };
                    if a == x && e.p > 0.0 && !seen[b] {
                        seen[b] = true;
                        queue.push_back(b);
                    }
                }
            }
            if let Some(u) = seen.iter().position(|s| !s) {
                return Err(if forward {
                    Error::Reducible {
                        from: 0,
                        unreachable: u,
                    }
                } else {
                    Error::Reducible {
                        from: u,
                        unreachable: 0,
                    }
                });
            }
        }
        Ok(())
    }

    pub fn algebra(&self) -> &Arc<GradedLieAlgebra> {
        &self.algebra
    }

    pub fn vertices(&self) -> &[String] {
        &self.vertices
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, e: usize) -> &Edge {
        &self.edges[e]
    }

    /// Edges leaving `x` (`E_x`).
    pub fn out_edges(&self, x: usize) -> &[usize] {
        &self.out[x]
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.edges.iter().map(|e| e.p).collect()
    }

    /// The same graph with new transition probabilities (validated again).
    pub fn with_probabilities(&self, p: &[f64]) -> Result<Self> {
        if p.len() != self.edges.len() {
            return Err(Error::Structural("one probability per edge required".into()));
        }
        let mut edges = self.edges.clone();
        for (e, &q) in edges.iter_mut().zip(p) {
            e.p = q;
        }
        VoltageGraph::new(self.algebra.clone(), self.vertices.clone(), edges)
    }

    /// `P[x][y] = Σ_{e: x→y} p(e)`.
    pub fn transition_matrix(&self) -> DMatrix<f64> {
        let n = self.num_vertices();
        let mut p = DMatrix::zeros(n, n);
        for e in &self.edges {
            p[(e.origin, e.terminus)] += e.p;
        }
        p
    }

    /// `m̃(e) = m̃(ē)` for every edge, to `tol`.
    pub fn is_m_symmetric(&self, m: &InvariantMeasure, tol: f64) -> bool {
        self.edges
            .iter()
            .enumerate()
            .all(|(i, e)| (m.edge[i] - m.edge[e.inverse]).abs() <= tol)
    }

    /// Whether every edge has positive probability.
    pub fn is_positive(&self) -> bool {
        self.edges.iter().all(|e| e.p > 0.0)
    }
}

/// Parameters `(ξ, ξ', η, η', ζ, ζ')` of the Heisenberg triangular lattice.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TriangularParams {
    pub xi: f64,
    pub xi_p: f64,
    pub eta: f64,
    pub eta_p: f64,
    pub zeta: f64,
    pub zeta_p: f64,
}

impl TriangularParams {
    pub fn new(xi: f64, xi_p: f64, eta: f64, eta_p: f64, zeta: f64, zeta_p: f64) -> Self {
        TriangularParams {
            xi,
            xi_p,
            eta,
            eta_p,
            zeta,
            zeta_p,
        }
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        match v {
            [a, b, c, d, e, f] => Ok(Self::new(*a, *b, *c, *d, *e, *f)),
            _ => Err(Error::Domain(format!(
                "triangular lattice needs 6 parameters, got {}",
                v.len()
            ))),
        }
    }

    /// Symmetric-in-ε family: `ξ = a + ε/2, ξ' = a - ε/2`, etc.
    pub fn with_epsilon(xi_hat: f64, eta_hat: f64, zeta_hat: f64, eps: f64) -> Self {
        Self::new(
            (xi_hat + eps) / 2.0,
            (xi_hat - eps) / 2.0,
            (eta_hat + eps) / 2.0,
            (eta_hat - eps) / 2.0,
            (zeta_hat + eps) / 2.0,
            (zeta_hat - eps) / 2.0,
        )
    }

    pub fn to_vec(self) -> Vec<f64> {
        vec![self.xi, self.xi_p, self.eta, self.eta_p, self.zeta, self.zeta_p]
    }
}

/// Parameters `(ξ, η, ζ, α, β, γ)` of the Heisenberg dice lattice.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiceParams {
    pub xi: f64,
    pub eta: f64,
    pub zeta: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl DiceParams {
    pub fn new(xi: f64, eta: f64, zeta: f64, alpha: f64, beta: f64, gamma: f64) -> Self {
        DiceParams {
            xi,
            eta,
            zeta,
            alpha,
            beta,
            gamma,
        }
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        match v {
            [a, b, c, d, e, f] => Ok(Self::new(*a, *b, *c, *d, *e, *f)),
            _ => Err(Error::Domain(format!(
                "dice lattice needs 6 parameters, got {}",
                v.len()
            ))),
        }
    }

    pub fn to_vec(self) -> Vec<f64> {
        vec![self.xi, self.eta, self.zeta, self.alpha, self.beta, self.gamma]
    }
}

/// Heisenberg element from matrix coordinates `(x, y, z)` with
/// `(x,y,z)⋆(x',y',z') = (x+x', y+y', z+z'+xy')`.
pub fn heisenberg_from_matrix(alg: &Arc<GradedLieAlgebra>, x: f64, y: f64, z: f64) -> GroupElement {
    GroupElement::exp(alg, &[x, y, z - x * y / 2.0]).expect("Heisenberg has dimension 3")
}

/// Inverse of [`heisenberg_from_matrix`].
pub fn heisenberg_to_matrix(g: &GroupElement) -> [f64; 3] {
    let c = g.coords();
    [c[0], c[1], c[2] + c[0] * c[1] / 2.0]
}

fn paired_edges(specs: Vec<(String, usize, usize, GroupElement, f64, f64)>) -> Vec<Edge> {
    let mut edges = Vec::with_capacity(2 * specs.len());
    for (label, o, t, v, p, p_bar) in specs {
        let i = edges.len();
        edges.push(Edge {
            label: label.clone(),
            origin: o,
            terminus: t,
            inverse: i + 1,
            voltage: v.clone(),
            p,
        });
        edges.push(Edge {
            label: format!("{label}bar"),
            origin: t,
            terminus: o,
            inverse: i,
            voltage: v.inverse(),
            p: p_bar,
        });
    }
    edges
}

/// The 3-bouquet graph covered by the Heisenberg triangular lattice,
/// generated by `γ_1 = (1,0,0)`, `γ_2 = (0,1,0)`, `γ_3 = (-1,1,0)` in matrix
/// coordinates. Edge order: `e1, ē1, e2, ē2, e3, ē3`.
pub fn triangular(params: TriangularParams) -> Result<VoltageGraph> {
    let alg = Arc::new(GradedLieAlgebra::heisenberg());
    let TriangularParams {
        xi,
        xi_p,
        eta,
        eta_p,
        zeta,
        zeta_p,
    } = params;
    let specs = vec![
        (
            "e1".to_string(),
            0,
            0,
            heisenberg_from_matrix(&alg, 1.0, 0.0, 0.0),
            xi,
            xi_p,
        ),
        (
            "e2".to_string(),
            0,
            0,
            heisenberg_from_matrix(&alg, 0.0, 1.0, 0.0),
            eta_p,
            eta,
        ),
        (
            "e3".to_string(),
            0,
            0,
            heisenberg_from_matrix(&alg, -1.0, 1.0, 0.0),
            zeta,
            zeta_p,
        ),
    ];
    VoltageGraph::new(alg, vec!["x".into()], paired_edges(specs))
}

/// The 3-vertex quotient of the Heisenberg dice lattice. Vertices `x, y, z`;
/// edges `e1..e3: x→y` (voltages `1, γ_1^{-1}, γ_2^{-1}`) and `e4..e6: x→z`
/// (voltages `1, γ_1, γ_2`), each followed by its inverse.
pub fn dice(params: DiceParams) -> Result<VoltageGraph> {
    let alg = Arc::new(GradedLieAlgebra::heisenberg());
    let DiceParams {
        xi,
        eta,
        zeta,
        alpha,
        beta,
        gamma,
    } = params;
    let g1 = heisenberg_from_matrix(&alg, 1.0, 0.0, 0.0);
    let g2 = heisenberg_from_matrix(&alg, 0.0, 1.0, 0.0);
    let one = GroupElement::identity(&alg);
    let specs = vec![
        ("e1".to_string(), 0, 1, one.clone(), xi, gamma),
        ("e2".to_string(), 0, 1, g1.inverse(), eta, beta),
        ("e3".to_string(), 0, 1, g2.inverse(), zeta, alpha),
        ("e4".to_string(), 0, 2, one, zeta, alpha),
        ("e5".to_string(), 0, 2, g1, eta, beta),
        ("e6".to_string(), 0, 2, g2, xi, gamma),
    ];
    VoltageGraph::new(alg, vec!["x".into(), "y".into(), "z".into()], paired_edges(specs))
}

/// The vertex offsets `𝟏, g_1, g_2` used to draw the dice lattice, with
/// `g_1 = (1/3, 1/3, 1/3)` and `g_2 = (-1/3, -1/3, -1/3)` in matrix coordinates.
pub fn dice_drawing_offsets(g: &VoltageGraph) -> Vec<GroupElement> {
    let alg = g.algebra();
    vec![
        GroupElement::identity(alg),
        heisenberg_from_matrix(alg, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0),
        heisenberg_from_matrix(alg, -1.0 / 3.0, -1.0 / 3.0, -1.0 / 3.0),
    ]
}

/// A random irreducible voltage graph on the Heisenberg group with integer
/// voltages (a cycle through all vertices plus `extra` random edges, loops
/// allowed) and positive random probabilities.
pub fn random_heisenberg_graph(seed: u64, vertices: usize, extra: usize) -> Result<VoltageGraph> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let alg = Arc::new(GradedLieAlgebra::heisenberg());
    let mut pairs = Vec::new();
    let random_voltage = |rng: &mut ChaCha8Rng| {
        let a = rng.random_range(-2..=2) as f64;
        let b = rng.random_range(-2..=2) as f64;
        let c = rng.random_range(-2..=2) as f64;
        heisenberg_from_matrix(&alg, a, b, c)
    };
    for x in 0..vertices {
        let y = (x + 1) % vertices;
        let v = random_voltage(&mut rng);
        pairs.push((x, y, v));
    }
    // Guarantee rank-2 first-layer voltages via two loops at vertex 0.
    pairs.push((0, 0, heisenberg_from_matrix(&alg, 1.0, 0.0, 0.0)));
    pairs.push((0, 0, heisenberg_from_matrix(&alg, 0.0, 1.0, 0.0)));
    for _ in 0..extra {
        let x = rng.random_range(0..vertices);
        let y = rng.random_range(0..vertices);
        let v = random_voltage(&mut rng);
        pairs.push((x, y, v));
    }
    let mut edges = paired_edges(
        pairs
            .into_iter()
            .enumerate()
            .map(|(i, (x, y, v))| (format!("e{}", i + 1), x, y, v, 1.0, 1.0))
            .collect(),
    );
    let mut out = vec![Vec::new(); vertices];
    for (i, e) in edges.iter().enumerate() {
        out[e.origin].push(i);
    }
    for es in out {
        let w: Vec<f64> = es.iter().map(|_| rng.random_range(0.1..1.0)).collect();
        let s: f64 = w.iter().sum();
        for (&i, wi) in es.iter().zip(w) {
            edges[i].p = wi / s;
        }
    }
    VoltageGraph::new(alg, (0..vertices).map(|i| format!("v{i}")).collect(), edges)
}

/// The stationary distribution `m` and the edge measure `m̃(e) = p(e) m(o(e))`.
#[derive(Clone, Debug, PartialEq)]
pub struct InvariantMeasure {
    pub m: Vec<f64>,
    pub edge: Vec<f64>,
    /// Power-iteration steps taken.
    pub iterations: usize,
    /// Final `‖mP - m‖_∞`.
    pub residual: f64,
}

const POWER_TOL: f64 = 1e-13;
const POWER_CAP: usize = 1_000_000;

/// Stationary row vector of the transition matrix by power iteration on the
/// lazy chain `(P + I)/2` (same stationary vector, aperiodic), cross-checked
/// against a direct LU solve.
pub fn invariant_measure(g: &VoltageGraph) -> Result<InvariantMeasure> {
    let n = g.num_vertices();
    let p = g.transition_matrix();
    let pt = p.transpose();
    let mut m = DVector::from_element(n, 1.0 / n as f64);
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < POWER_CAP {
        let mp = &pt * &m;
        residual = (&mp - &m).amax();
        if residual < POWER_TOL {
            break;
        }
        m = (&mp + &m) * 0.5;
        m /= m.sum();
        iterations += 1;
    }
    if residual >= POWER_TOL {
        return Err(Error::Numerical(format!(
            "power iteration did not converge in {POWER_CAP} steps (residual {residual:e})"
        )));
    }
    // Downstream solvability conditions inherit this residual, so iterate on
    // towards the rounding floor while it keeps improving.
    let mut stalled = 0;
    let mut cur = m.clone();
    while residual > f64::EPSILON && stalled < 100 && iterations < POWER_CAP {
        cur = (&pt * &cur + &cur) * 0.5;
        cur /= cur.sum();
        let r = (&pt * &cur - &cur).amax();
        iterations += 1;
        if r < residual {
            residual = r;
            m.copy_from(&cur);
            stalled = 0;
        } else {
            stalled += 1;
        }
    }
    let direct = stationary_direct(&p)?;
    let gap = (&direct - &m).amax();
    if gap > 1e-10 {
        return Err(Error::Numerical(format!(
            "power iteration and direct solve disagree by {gap:e}"
        )));
    }
    let m: Vec<f64> = m.iter().copied().collect();
    let edge = g.edges().iter().map(|e| e.p * m[e.origin]).collect();
    Ok(InvariantMeasure {
        m,
        edge,
        iterations,
        residual,
    })
}

fn stationary_direct(p: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = p.nrows();
    let mut a = p.transpose() - DMatrix::identity(n, n);
    let mut b = DVector::zeros(n);
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    b[n - 1] = 1.0;
    a.lu()
        .solve(&b)
        .ok_or_else(|| Error::Numerical("stationary linear system is singular".into()))
}

/// The 1-cycle `γ_p` (stored as `m̃(e) - m̃(ē)`) and its image `ρ_R(γ_p) ∈ g^(1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct HomologicalDirection {
    pub chain: Vec<f64>,
    pub rho: Vec<f64>,
}

impl HomologicalDirection {
    /// `γ_p = 0` as a chain, to `tol`.
    pub fn is_zero_chain(&self, tol: f64) -> bool {
        self.chain.iter().all(|c| c.abs() <= tol)
    }

    /// `ρ_R(γ_p) = 0`, to `tol`.
    pub fn is_centered(&self, tol: f64) -> bool {
        self.rho.iter().all(|c| c.abs() <= tol)
    }
}

/// `γ_p = Σ m̃(e) e` and `ρ_R(γ_p) = Σ m̃(e) log(voltage(e))|_{g^(1)}`.
///
/// Vertex offsets of any periodic realization telescope out of the sum
/// because `∂γ_p = 0`, so voltages alone determine `ρ_R(γ_p)`.
pub fn homological_direction(g: &VoltageGraph, m: &InvariantMeasure) -> Result<HomologicalDirection> {
    let chain: Vec<f64> = g
        .edges()
        .iter()
        .enumerate()
        .map(|(i, e)| m.edge[i] - m.edge[e.inverse])
        .collect();
    // ∂γ_p: inflow minus outflow at each vertex, counting each pair once.
    let mut balance = vec![0.0; g.num_vertices()];
    for (i, e) in g.edges().iter().enumerate() {
        balance[e.terminus] += m.edge[i];
        balance[e.origin] -= m.edge[i];
    }
    let worst = balance.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    if worst > 1e-12 {
        return Err(Error::Numerical(format!(
            "homological direction is not a cycle (imbalance {worst:e})"
        )));
    }
    let d1 = g.algebra().layer_dims()[0];
    let mut rho = vec![0.0; d1];
    for (i, e) in g.edges().iter().enumerate() {
        for (r, v) in rho.iter_mut().zip(e.voltage.layer(1)) {
            *r += m.edge[i] * v;
        }
    }
    Ok(HomologicalDirection { chain, rho })
}
