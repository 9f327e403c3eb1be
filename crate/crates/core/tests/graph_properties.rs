use airsurrogate::graph::{build_graph, haversine_km, SpatialGraph, Station};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn stations() -> impl Strategy<Value = Vec<Station>> {
    prop::collection::vec((38.0..42.0f64, 114.0..119.0f64), 1..20).prop_map(|pts| {
        pts.into_iter()
            .enumerate()
            .map(|(i, (lat, lon))| Station::new(format!("s{i}"), lat, lon))
            .collect()
    })
}

fn dense(g: &SpatialGraph) -> DMatrix<f64> {
    let n = g.len();
    DMatrix::from_fn(n, n, |i, j| g.laplacian().get(&[i, j]))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn laplacian_is_symmetric_with_bounded_spectrum(st in stations()) {
        let g = build_graph(st, 200.0).unwrap();
        let l = dense(&g);
        prop_assert_eq!(&l, &l.transpose());
        let eig = l.clone().symmetric_eigen().eigenvalues;
        for e in eig.iter() {
            prop_assert!(*e >= -1e-9 && *e <= 2.0 + 1e-9, "eigenvalue {e}");
        }
        // Unit diagonal holds for isolated nodes too.
        for i in 0..g.len() {
            prop_assert_eq!(l[(i, i)], 1.0);
        }
    }

    #[test]
    fn edges_match_the_distance_threshold(st in stations(), thr in 20.0..300.0f64) {
        let g = build_graph(st.clone(), thr).unwrap();
        for i in 0..st.len() {
            for j in 0..st.len() {
                let d = haversine_km(&st[i], &st[j]).unwrap();
                let a = g.adjacency().get(&[i, j]);
                prop_assert_eq!(a, if d > 0.0 && d <= thr { 1.0 } else { 0.0 });
                prop_assert!((d - haversine_km(&st[j], &st[i]).unwrap()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn relabelling_stations_permutes_the_laplacian(st in stations(), shift in 0usize..20) {
        let n = st.len();
        let perm: Vec<usize> = (0..n).map(|i| (i + shift) % n).collect();
        let g = build_graph(st.clone(), 200.0).unwrap();
        let moved: Vec<Station> = perm.iter().map(|&p| st[p].clone()).collect();
        let h = build_graph(moved, 200.0).unwrap();
        for i in 0..n {
            for j in 0..n {
                prop_assert_eq!(h.laplacian().get(&[i, j]), g.laplacian().get(&[perm[i], perm[j]]));
            }
        }
    }
}

#[test]
fn triangle_inequality_on_a_few_cities() {
    let s = [
        Station::new("bj", 39.9, 116.4),
        Station::new("tj", 39.1, 117.2),
        Station::new("sjz", 38.0, 114.5),
    ];
    let d = |a: usize, b: usize| haversine_km(&s[a], &s[b]).unwrap();
    assert!(d(0, 2) <= d(0, 1) + d(1, 2));
    assert!((d(0, 1) - 113.0).abs() < 5.0, "{}", d(0, 1));
}
