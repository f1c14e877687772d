use std::sync::Arc;

use super::Dataset;
use crate::tensor::{SparseMatrix, SparseOperator};

pub const DEFAULT_GROUP_ITEM_CAP: usize = 30;

/// Symmetrically normalised user × item adjacency of the training graph:
/// edge `(u, v)` weighs `1 / (sqrt(deg u) * sqrt(deg v))`.
#[derive(Clone, Debug)]
pub struct NormAdjacency {
    matrix: SparseMatrix,
    operator: Arc<SparseOperator>,
}

impl NormAdjacency {
    pub fn from_edges(n_users: usize, n_items: usize, edges: &[(usize, usize)]) -> Self {
        let mut du = vec![0usize; n_users];
        let mut dv = vec![0usize; n_items];
        for &(u, v) in edges {
            du[u] += 1;
            dv[v] += 1;
        }
        let triples =
            edges.iter().map(|&(u, v)| (u, v, 1.0 / ((du[u] as f64).sqrt() * (dv[v] as f64).sqrt()))).collect();
        let matrix = SparseMatrix::from_triples(n_users, n_items, triples).expect("edges in range");
        let operator = SparseOperator::new(&matrix);
        Self { matrix, operator }
    }

    pub fn matrix(&self) -> &SparseMatrix {
        &self.matrix
    }

    /// Operator for `A x` (items to users); its adjoint maps users to items.
    pub fn operator(&self) -> &Arc<SparseOperator> {
        &self.operator
    }

    pub fn n_users(&self) -> usize {
        self.matrix.rows()
    }

    pub fn n_items(&self) -> usize {
        self.matrix.cols()
    }
}

/// Adjacency over the training user–item edges only.
pub fn build_norm_adjacency(dataset: &Dataset) -> NormAdjacency {
    let edges = dataset.user_items.edges_in(super::Split::Train);
    NormAdjacency::from_edges(dataset.n_users(), dataset.n_items(), &edges)
}

/// Group–item edges made from the `cap` items most frequent among each
/// group's members' training interactions, ties broken by smaller item id.
pub fn synthesize_group_items(dataset: &Dataset, cap: usize) -> Vec<(usize, usize)> {
    let train = dataset.user_items.items_by_anchor(super::Split::Train);
    let mut out = Vec::new();
    let mut counts = vec![0usize; dataset.n_items()];
    for (g, members) in dataset.members().iter().enumerate() {
        let mut touched = Vec::new();
        for &u in members {
            for &i in &train[u] {
                if counts[i] == 0 {
                    touched.push(i);
                }
                counts[i] += 1;
            }
        }
        let mut ranked: Vec<(usize, usize)> = touched.iter().map(|&i| (i, counts[i])).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        out.extend(ranked.iter().take(cap).map(|&(i, _)| (g, i)));
        for i in touched {
            counts[i] = 0;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::LabeledEdges;
    use proptest::prelude::*;

    fn dataset(n_users: usize, n_items: usize, ui: Vec<(usize, usize)>, members: Vec<Vec<usize>>) -> Dataset {
        let ng = members.len();
        Dataset::new(
            "t",
            n_users,
            n_items,
            LabeledEdges::new(n_users, n_items, ui).unwrap(),
            LabeledEdges::empty(ng, n_items),
            members,
        )
        .unwrap()
    }

    #[test]
    fn single_edge_weight_one() {
        let a = NormAdjacency::from_edges(1, 1, &[(0, 0)]);
        assert_eq!(a.matrix().entries(), &[(0, 0, 1.0)]);
    }

    #[test]
    fn two_leaf_items() {
        let a = NormAdjacency::from_edges(1, 2, &[(0, 0), (0, 1)]);
        for e in a.matrix().entries() {
            assert!((e.2 - 1.0 / 2f64.sqrt()).abs() < 1e-15);
        }
    }

    #[test]
    fn held_out_edges_are_excluded() {
        let mut d = dataset(2, 3, vec![(0, 0), (0, 1), (1, 2)], vec![vec![0]]);
        d.user_items
            .set_labels(vec![crate::data::Split::Train, crate::data::Split::Test, crate::data::Split::Valid])
            .unwrap();
        let a = build_norm_adjacency(&d);
        assert_eq!(a.matrix().entries(), &[(0, 0, 1.0)]);
    }

    #[test]
    fn group_items_ranked_by_member_frequency() {
        // items a=0, b=1, c=2
        let d = dataset(2, 3, vec![(0, 0), (0, 1), (1, 1), (1, 2)], vec![vec![0, 1], vec![1]]);
        let gi = synthesize_group_items(&d, 30);
        assert_eq!(gi, vec![(0, 1), (0, 0), (0, 2), (1, 1), (1, 2)]);
    }

    #[test]
    fn group_items_cap_keeps_smallest_ids_on_ties() {
        let ui: Vec<_> = (0..40).map(|i| (i % 4, 39 - i)).collect();
        let d = dataset(4, 40, ui, vec![vec![0, 1, 2, 3]]);
        let gi = synthesize_group_items(&d, 30);
        assert_eq!(gi, (0..30).map(|i| (0, i)).collect::<Vec<_>>());
    }

    #[test]
    fn memberless_interactions_give_empty_row() {
        let d = dataset(2, 3, vec![(0, 0)], vec![vec![1]]);
        assert!(synthesize_group_items(&d, 30).is_empty());
    }

    proptest! {
        #[test]
        fn row_sums_match_brute_force(seed in 0u64..300) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let (nu, ni) = (25, 25);
            let edges: Vec<(usize, usize)> = (0..nu).flat_map(|u| (0..ni).map(move |v| (u, v)))
                .filter(|_| rng.random::<f64>() < 0.15).collect();
            let a = NormAdjacency::from_edges(nu, ni, &edges);
            for u in 0..nu {
                let deg_u = edges.iter().filter(|e| e.0 == u).count() as f64;
                let expected: f64 = edges.iter().filter(|e| e.0 == u).map(|e| {
                    let deg_v = edges.iter().filter(|f| f.1 == e.1).count() as f64;
                    1.0 / (deg_u.sqrt() * deg_v.sqrt())
                }).sum();
                let got: f64 = a.matrix().entries().iter().filter(|e| e.0 == u).map(|e| e.2).sum();
                prop_assert!((got - expected).abs() < 1e-12);
            }
        }

        #[test]
        fn synthesized_rows_respect_cap(seed in 0u64..100, cap in 1usize..6) {
            let world = crate::data::generate_synthetic(&crate::data::SyntheticSpec {
                n_users: 40, n_items: 30, n_groups: 8, seed, ..Default::default()
            }).unwrap();
            let gi = synthesize_group_items(&world.dataset, cap);
            for g in 0..8 {
                prop_assert!(gi.iter().filter(|e| e.0 == g).count() <= cap);
            }
        }
    }
}
