//! Group law on the Heisenberg group: the graded product versus the limit
//! product, dilations and the homogeneous norm.

use std::sync::Arc;

use nilwalk::graph_model::{heisenberg_from_matrix, heisenberg_to_matrix};
use nilwalk::{GradedLieAlgebra, GroupElement, Product};

fn main() -> nilwalk::Result<()> {
    let alg = Arc::new(GradedLieAlgebra::heisenberg());
    let x = GroupElement::exp(&alg, &[1.0, 0.0, 0.0])?;
    let y = GroupElement::exp(&alg, &[0.0, 1.0, 0.0])?;

    let xy = x.cbh_product(&y, Product::Original)?;
    let yx = y.cbh_product(&x, Product::Original)?;
    println!("log(x*y) = {:?}", xy.log());
    println!("log(y*x) = {:?}", yx.log());

    // The commutator x y x^-1 y^-1 lands in the centre.
    let comm = xy
        .cbh_product(&x.inverse(), Product::Original)?
        .cbh_product(&y.inverse(), Product::Original)?;
    println!("commutator = {:?}", comm.log());

    // Matrix coordinates (x, y, z) of the upper unitriangular model.
    let m = heisenberg_from_matrix(&alg, 1.0, 2.0, 3.0);
    println!(
        "matrix (1,2,3) has log {:?}, back to {:?}",
        m.log(),
        heisenberg_to_matrix(&m)
    );

    // Dilations are automorphisms of the graded product.
    let lam = 0.5;
    let lhs = xy.dilate(lam)?;
    let rhs = x.dilate(lam)?.cbh_product(&y.dilate(lam)?, Product::Original)?;
    println!("dilate(x*y) = {:?}, dilate(x)*dilate(y) = {:?}", lhs.log(), rhs.log());
    println!(
        "|x*y| = {:.6}, |dilate(x*y)| = {:.6}",
        xy.hom_norm().value(),
        lhs.hom_norm().value()
    );

    // A filtered, non-graded algebra: [X1, X2] = X3 + X4 with X4 in layer 3.
    // The limit product keeps only the degree-preserving part of the bracket.
    let filtered = Arc::new(GradedLieAlgebra::from_layered_brackets(
        &[2, 1, 1],
        &[((0, 0), (0, 1), vec![(0, 1, 1.0), (0, 2, 1.0)])],
    )?);
    let p = GroupElement::exp(&filtered, &[1.0, 0.0, 0.0, 0.0])?;
    let q = GroupElement::exp(&filtered, &[0.0, 1.0, 0.0, 0.0])?;
    println!("graded: {}", filtered.is_graded());
    println!("original: {:?}", p.cbh_product(&q, Product::Original)?.log());
    println!("limit:    {:?}", p.cbh_product(&q, Product::Limit)?.log());
    Ok(())
}
