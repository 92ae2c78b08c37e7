use proptest::prelude::*;

use qemlab::filtration::{assign_basin, filtration_order, Node};
use qemlab::io::{read_matrix, write_matrix, MatrixFormat};
use qemlab::ulam::MatrixMeta;
use qemlab::{AnnealedMatrix, ConnectionGraph, Error};

/// Random DAG: nodes `1..=n` with distinct pressures, edges only from lower to
/// higher position in a hidden permutation.
fn dag() -> impl Strategy<Value = ConnectionGraph> {
    (2usize..9)
        .prop_flat_map(|n| {
            (
                Just(n),
                Just((1..=n as u32).collect::<Vec<_>>()).prop_shuffle(),
                proptest::collection::vec(any::<bool>(), n * (n - 1) / 2),
                Just((0..n).collect::<Vec<_>>()).prop_shuffle(),
            )
        })
        .prop_map(|(n, topo, coins, pressure_rank)| {
            let nodes = (0..n)
                .map(|k| Node {
                    id: k as u32 + 1,
                    pressure: -0.1 * (pressure_rank[k] as f64 + 1.0),
                })
                .collect();
            let mut edges = Vec::new();
            let mut c = coins.iter();
            for a in 0..n {
                for b in a + 1..n {
                    if *c.next().unwrap() {
                        edges.push([topo[a], topo[b]]);
                    }
                }
            }
            ConnectionGraph::new(nodes, edges).unwrap()
        })
}

fn position(seq: &[u32], id: u32) -> usize {
    seq.iter().position(|&x| x == id).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn order_is_a_linear_extension(g in dag()) {
        let o = filtration_order(&g).unwrap();
        let mut sorted = o.sequence.clone();
        sorted.sort_unstable();
        prop_assert_eq!(sorted, (1..=g.nodes.len() as u32).collect::<Vec<_>>());
        for [a, b] in &g.edges {
            prop_assert!(position(&o.sequence, *a) < position(&o.sequence, *b));
        }
        prop_assert_eq!(o.subgraphs.concat(), o.sequence.clone());
        prop_assert!(o.indices.windows(2).all(|w| w[0] > w[1]));
        prop_assert_eq!(*o.indices.last().unwrap(), 1);
    }

    #[test]
    fn order_ignores_input_permutation(g in dag(), rot in 0usize..16) {
        let mut h = g.clone();
        h.nodes.reverse();
        let k = rot % h.nodes.len();
        h.nodes.rotate_left(k);
        h.edges.reverse();
        prop_assert_eq!(filtration_order(&g).unwrap(), filtration_order(&h).unwrap());
    }

    #[test]
    fn transitive_edges_do_not_change_the_order(g in dag()) {
        let base = filtration_order(&g).unwrap();
        let mut extra = g.edges.clone();
        for [a, b] in &g.edges {
            for [c, d] in &g.edges {
                if b == c && !extra.contains(&[*a, *d]) {
                    extra.push([*a, *d]);
                }
            }
        }
        let h = ConnectionGraph::new(g.nodes.clone(), extra).unwrap();
        prop_assert_eq!(base, filtration_order(&h).unwrap());
    }

    #[test]
    fn basins_are_monotone(g in dag()) {
        let o = filtration_order(&g).unwrap();
        let n = o.n();
        let basins: Vec<usize> = (1..=n).map(|j| assign_basin(&o, j).unwrap()).collect();
        // ranks increase, basin indices decrease
        prop_assert!(basins.windows(2).all(|w| w[0] >= w[1]));
        prop_assert_eq!(basins[n - 1], 0);
        prop_assert_eq!(basins[0], o.t());
        for (k, &i) in o.indices.iter().enumerate() {
            prop_assert_eq!(assign_basin(&o, i).unwrap(), k);
        }
        let out_of_range = matches!(assign_basin(&o, n + 1), Err(Error::InvalidRank { .. }));
        prop_assert!(out_of_range);
    }

    #[test]
    fn a_back_edge_creates_a_cycle(g in dag()) {
        prop_assume!(!g.edges.is_empty());
        let [a, b] = g.edges[0];
        let mut edges = g.edges.clone();
        edges.push([b, a]);
        let h = ConnectionGraph::new(g.nodes.clone(), edges).unwrap();
        match filtration_order(&h) {
            Err(Error::Cycle(w)) => {
                prop_assert!(w.len() >= 2);
                for k in 0..w.len() {
                    let e = [w[k], w[(k + 1) % w.len()]];
                    prop_assert!(h.edges.contains(&e), "{:?} not an edge", e);
                }
            }
            other => prop_assert!(false, "expected a cycle, got {:?}", other),
        }
    }

    #[test]
    fn matrices_round_trip(
        n in 1usize..12,
        entries in proptest::collection::vec((0usize..12, 0usize..12, 1e-300f64..1e3), 0..60),
        seed in any::<u64>(),
    ) {
        let mut rows = vec![Vec::new(); n];
        for (i, j, v) in entries {
            if i < n && j < n && !rows[i].iter().any(|&(c, _)| c == j) {
                rows[i].push((j, v));
            }
        }
        let meta = MatrixMeta {
            system: "random".into(),
            epsilon: 1e-3,
            weight: "zero".into(),
            region: "all".into(),
            resolution: n,
            samples_per_cell: 4,
            seed,
        };
        let cells: Vec<usize> = (0..n).map(|k| 2 * k).collect();
        let m = AnnealedMatrix::from_rows(rows, vec![1.0; n], cells, meta).unwrap();
        for f in [MatrixFormat::Text, MatrixFormat::Binary] {
            let mut buf = Vec::new();
            write_matrix(&m, f, &mut buf).unwrap();
            prop_assert_eq!(&read_matrix(&mut buf.as_slice()).unwrap(), &m);
        }
    }

    #[test]
    fn adjoint_duality(
        n in 1usize..10,
        entries in proptest::collection::vec((0usize..10, 0usize..10, 0.0f64..1.0), 0..50),
        u in proptest::collection::vec(-1.0f64..1.0, 10),
        v in proptest::collection::vec(-1.0f64..1.0, 10),
    ) {
        let mut dense = vec![vec![0.0; n]; n];
        for (i, j, x) in entries {
            if i < n && j < n {
                dense[i][j] = x;
            }
        }
        let m = AnnealedMatrix::from_dense(&dense).unwrap();
        let (u, v) = (&u[..n], &v[..n]);
        let mv = m.apply(v).unwrap();
        let mtu = m.apply_adjoint(u).unwrap();
        let lhs: f64 = u.iter().zip(&mv).map(|(a, b)| a * b).sum();
        let rhs: f64 = mtu.iter().zip(v).map(|(a, b)| a * b).sum();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
    }
}
