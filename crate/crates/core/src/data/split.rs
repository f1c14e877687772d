use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{LabeledEdges, Split};

/// `(train, valid, test)` sizes for an anchor with `n` interactions.
///
/// Anchors with fewer than three interactions keep everything for training;
/// otherwise validation and test each get a tenth (rounded down, at least
/// one) and the remainder trains.
pub fn split_counts(n: usize) -> (usize, usize, usize) {
    if n < 3 {
        return (n, 0, 0);
    }
    let held = (n / 10).max(1);
    (n - 2 * held, held, held)
}

/// Randomly assigns split labels per anchor. Anchors are visited in
/// ascending order, so one seed always yields the same labelling.
pub fn split_holdout(edges: &LabeledEdges, seed: u64) -> Vec<Split> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels = vec![Split::Train; edges.len()];
    let all = edges.edges();
    let mut start = 0;
    while start < all.len() {
        let anchor = all[start].0;
        let end = start + all[start..].iter().take_while(|e| e.0 == anchor).count();
        let mut order: Vec<usize> = (start..end).collect();
        order.shuffle(&mut rng);
        let (_, n_valid, n_test) = split_counts(order.len());
        for &i in &order[..n_valid] {
            labels[i] = Split::Valid;
        }
        for &i in &order[n_valid..n_valid + n_test] {
            labels[i] = Split::Test;
        }
        start = end;
    }
    labels
}
