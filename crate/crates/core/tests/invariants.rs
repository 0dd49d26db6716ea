//! Property tests of the algebraic and graph-level invariants.

use std::sync::Arc;

use proptest::prelude::*;

use nilwalk::graph_model::{homological_direction, invariant_measure, random_heisenberg_graph};
use nilwalk::harmonic::{analyze, martingale_defect, solve_realization, RealizationOverrides};
use nilwalk::tensor_free::{signature, FreeNilpotent};
use nilwalk::{GradedLieAlgebra, GraphSpecFile, GroupElement, Product};

fn free_2_3() -> Arc<GradedLieAlgebra> {
    FreeNilpotent::new(2, 3).unwrap().algebra().clone()
}

fn coords(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0..2.0f64, n)
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

proptest! {
    #[test]
    fn product_is_associative(x in coords(5), y in coords(5), z in coords(5)) {
        let alg = free_2_3();
        let (x, y, z) = (
            GroupElement::exp(&alg, &x).unwrap(),
            GroupElement::exp(&alg, &y).unwrap(),
            GroupElement::exp(&alg, &z).unwrap(),
        );
        let left = x.cbh_product(&y, Product::Original).unwrap().cbh_product(&z, Product::Original).unwrap();
        let right = x.cbh_product(&y.cbh_product(&z, Product::Original).unwrap(), Product::Original).unwrap();
        prop_assert!(max_diff(left.log(), right.log()) < 1e-9);
    }

    #[test]
    fn inverse_cancels(x in coords(5)) {
        let alg = free_2_3();
        let g = GroupElement::exp(&alg, &x).unwrap();
        prop_assert!(g.cbh_product(&g.inverse(), Product::Original).unwrap().is_identity());
    }

    #[test]
    fn dilation_is_an_automorphism(x in coords(5), y in coords(5), lam in 0.05..3.0f64) {
        let alg = free_2_3();
        let (x, y) = (GroupElement::exp(&alg, &x).unwrap(), GroupElement::exp(&alg, &y).unwrap());
        let lhs = x.cbh_product(&y, Product::Original).unwrap().dilate(lam).unwrap();
        let rhs = x.dilate(lam).unwrap().cbh_product(&y.dilate(lam).unwrap(), Product::Original).unwrap();
        prop_assert!(max_diff(lhs.log(), rhs.log()) < 1e-9);
    }

    #[test]
    fn norm_is_homogeneous(x in coords(5), lam in 0.05..3.0f64) {
        let alg = free_2_3();
        let g = GroupElement::exp(&alg, &x).unwrap();
        let scaled = g.dilate(lam).unwrap().hom_norm().value();
        prop_assert!((scaled - lam * g.hom_norm().value()).abs() <= 1e-12 * (1.0 + scaled));
    }

    #[test]
    fn tensor_model_is_a_homomorphism(x in coords(5), y in coords(5)) {
        let free = FreeNilpotent::new(2, 3).unwrap();
        let alg = free.algebra().clone();
        let (x, y) = (GroupElement::exp(&alg, &x).unwrap(), GroupElement::exp(&alg, &y).unwrap());
        let xy = free.group_to_tensor(&x.cbh_product(&y, Product::Original).unwrap()).unwrap();
        let prod = free.group_to_tensor(&x).unwrap().tensor_product(&free.group_to_tensor(&y).unwrap()).unwrap();
        prop_assert!(xy.max_abs_diff(&prod) < 1e-10);
    }

    #[test]
    fn chen_identity(points in prop::collection::vec(coords(3), 3..8), cut in 1usize..6) {
        let cut = cut.min(points.len() - 2);
        let whole = signature(&points, 4).unwrap();
        let head = signature(&points[..=cut], 4).unwrap();
        let tail = signature(&points[cut..], 4).unwrap();
        prop_assert!(head.tensor_product(&tail).unwrap().max_abs_diff(&whole) < 1e-10);
    }

    #[test]
    fn log_signature_is_lie(points in prop::collection::vec(coords(2), 2..8)) {
        let sig = signature(&points, 4).unwrap();
        let log = sig.log().unwrap();
        prop_assert!(log.lie_residual() < 1e-10);
        prop_assert!(log.exp().unwrap().max_abs_diff(&sig) < 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn random_graphs_have_harmonic_realizations(seed in 0u64..10_000, vertices in 2usize..6, extra in 1usize..5) {
        let g = random_heisenberg_graph(seed, vertices, extra).unwrap();
        let m = invariant_measure(&g).unwrap();
        prop_assert!((m.m.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let gamma = homological_direction(&g, &m).unwrap();
        let phi = solve_realization(&g, &m, &gamma).unwrap();
        prop_assert!(phi.is_modified_harmonic());
        prop_assert!(martingale_defect(&g, &gamma, &phi, 2) < 1e-10);
        prop_assert!(phi.offset(0).is_identity());
    }

    #[test]
    fn albanese_metric_is_positive(seed in 0u64..10_000) {
        let g = random_heisenberg_graph(seed, 3, 2).unwrap();
        let w = analyze(&g, &RealizationOverrides::default()).unwrap();
        let gram = &w.albanese.gram;
        prop_assert!((gram - gram.transpose()).abs().max() < 1e-12);
        prop_assert!(gram.clone().cholesky().is_some());
        prop_assert!((w.albanese.volume * gram.determinant().sqrt() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn spec_files_round_trip(seed in 0u64..10_000) {
        let g = random_heisenberg_graph(seed, 3, 2).unwrap();
        let spec = GraphSpecFile::from_graph(&g, &RealizationOverrides::default());
        let back = GraphSpecFile::parse(&spec.to_json().unwrap()).unwrap();
        prop_assert_eq!(&back, &spec);
        let (h, _) = back.build().unwrap();
        prop_assert_eq!(h.probabilities(), g.probabilities());
    }
}
