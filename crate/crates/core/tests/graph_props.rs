use dgd_core::graph::{consensus_vector, Graph, TOL_SPECTRAL};
use nalgebra::DVector;
use proptest::prelude::*;

/// Random simple graph on `2..=12` nodes as a node count plus 1-based edges.
fn graph_strategy() -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
    (2usize..=12).prop_flat_map(|n| {
        let pairs: Vec<(usize, usize)> = (1..=n).flat_map(|i| (i + 1..=n).map(move |j| (i, j))).collect();
        let k = pairs.len();
        (Just(n), proptest::sample::subsequence(pairs, 0..=k))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn laplacian_rows_sum_to_zero((n, edges) in graph_strategy()) {
        let g = Graph::new(n, &edges).unwrap();
        let l = g.laplacian_matrix();
        for i in 0..n {
            prop_assert_eq!(l.row(i).sum(), 0.0);
            prop_assert_eq!(l[(i, i)], g.degree(i) as f64);
        }
        prop_assert_eq!(&l, &l.transpose());
    }

    #[test]
    fn connectivity_matches_lambda2((n, edges) in graph_strategy()) {
        let g = Graph::new(n, &edges).unwrap();
        let l2 = g.laplacian().unwrap().lambda2().unwrap();
        prop_assert_eq!(g.is_connected(), l2 > TOL_SPECTRAL, "lambda2 = {}", l2);
        prop_assert!(l2 > -1e-12);
    }

    #[test]
    fn kron_laplacian_annihilates_consensus(
        (n, edges) in graph_strategy(),
        d in 1usize..=3,
        a in proptest::collection::vec(-10.0f64..10.0, 3),
    ) {
        let g = Graph::new(n, &edges).unwrap();
        let a = &a[..d];
        let x = consensus_vector(a, n);
        let y = g.kron_laplacian(d) * &x;
        prop_assert!(y.norm() <= 1e-12 * DVector::from_column_slice(a).norm().max(1e-300));
    }

    #[test]
    fn eigenvalues_lie_in_gershgorin_range((n, edges) in graph_strategy()) {
        let g = Graph::new(n, &edges).unwrap();
        let spec = g.laplacian().unwrap();
        let max_deg = (0..n).map(|i| g.degree(i)).max().unwrap() as f64;
        prop_assert!(spec.eigenvalues[0].abs() < 1e-12);
        for w in spec.eigenvalues.as_slice().windows(2) {
            prop_assert!(w[0] <= w[1] + 1e-12);
        }
        prop_assert!(*spec.eigenvalues.as_slice().last().unwrap() <= 2.0 * max_deg + 1e-9);
    }
}

#[test]
fn named_topologies_have_known_lambda2() {
    let pi = std::f64::consts::PI;
    for n in 3..=10 {
        let ring = Graph::ring(n).unwrap().laplacian().unwrap().lambda2().unwrap();
        assert!((ring - 2.0 * (1.0 - (2.0 * pi / n as f64).cos())).abs() < 1e-10);
        let path = Graph::path(n).unwrap().laplacian().unwrap().lambda2().unwrap();
        assert!((path - 2.0 * (1.0 - (pi / n as f64).cos())).abs() < 1e-10);
        let complete = Graph::complete(n).unwrap().laplacian().unwrap().lambda2().unwrap();
        assert!((complete - n as f64).abs() < 1e-10);
        let star = Graph::star(n).unwrap().laplacian().unwrap().lambda2().unwrap();
        assert!((star - 1.0).abs() < 1e-10);
    }
}

#[test]
fn invalid_edges_are_rejected() {
    assert!(Graph::new(3, &[(1, 4)]).is_err());
    assert!(Graph::new(3, &[(0, 1)]).is_err());
    assert!(Graph::new(3, &[(2, 2)]).is_err());
    assert!(Graph::new(0, &[]).is_err());
    let g = Graph::new(3, &[(1, 2), (2, 1)]).unwrap();
    assert_eq!(g.edge_count(), 1);
    assert!(!g.is_connected());
}
