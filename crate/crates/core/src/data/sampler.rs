use rand::Rng;

use super::{LabeledEdges, Split};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BprTriple {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

/// Draws `(anchor, positive, negative)` triples from training edges.
///
/// Anchors are drawn uniformly among those with at least one training item,
/// positives uniformly from the anchor's training items, and negatives
/// uniformly from the remaining items by rejection.
#[derive(Clone, Debug)]
pub struct BprSampler {
    positives: Vec<Vec<usize>>,
    eligible: Vec<usize>,
    n_items: usize,
}

impl BprSampler {
    pub fn new(edges: &LabeledEdges) -> Self {
        let positives = edges.items_by_anchor(Split::Train);
        let n_items = edges.n_items();
        let mut eligible = Vec::new();
        for (a, items) in positives.iter().enumerate() {
            if items.is_empty() {
                continue;
            }
            if items.len() >= n_items {
                log::warn!("anchor {a} interacts with every item; skipped for negative sampling");
                continue;
            }
            eligible.push(a);
        }
        Self { positives, eligible, n_items }
    }

    pub fn eligible_anchors(&self) -> &[usize] {
        &self.eligible
    }

    pub fn is_empty(&self) -> bool {
        self.eligible.is_empty()
    }

    pub fn positives(&self, anchor: usize) -> &[usize] {
        &self.positives[anchor]
    }

    fn triple_for(&self, anchor: usize, rng: &mut impl Rng) -> BprTriple {
        let pos = &self.positives[anchor];
        let positive = pos[rng.random_range(0..pos.len())];
        let negative = loop {
            let j = rng.random_range(0..self.n_items);
            if pos.binary_search(&j).is_err() {
                break j;
            }
        };
        BprTriple { anchor, positive, negative }
    }

    pub fn sample(&self, batch_size: usize, rng: &mut impl Rng) -> Vec<BprTriple> {
        if self.eligible.is_empty() {
            return Vec::new();
        }
        (0..batch_size)
            .map(|_| {
                let anchor = self.eligible[rng.random_range(0..self.eligible.len())];
                self.triple_for(anchor, rng)
            })
            .collect()
    }

    /// Triples for one fixed anchor.
    pub fn sample_anchor(&self, anchor: usize, n: usize, rng: &mut impl Rng) -> Vec<BprTriple> {
        if self.positives[anchor].is_empty() || self.positives[anchor].len() >= self.n_items {
            return Vec::new();
        }
        (0..n).map(|_| self.triple_for(anchor, rng)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn negative_avoids_positive() {
        let e = LabeledEdges::new(1, 3, vec![(0, 0)]).unwrap();
        let s = BprSampler::new(&e);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for t in s.sample(500, &mut rng) {
            assert_eq!(t.positive, 0);
            assert!(t.negative == 1 || t.negative == 2);
        }
    }

    #[test]
    fn positives_are_uniform() {
        let e = LabeledEdges::new(1, 10, vec![(0, 2), (0, 7)]).unwrap();
        let s = BprSampler::new(&e);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let batch = s.sample(10_000, &mut rng);
        let freq = batch.iter().filter(|t| t.positive == 2).count() as f64 / 10_000.0;
        // binomial sd = 0.005, so 0.05 is a 10-sigma band
        assert!((freq - 0.5).abs() < 0.05, "{freq}");
    }

    #[test]
    fn reproducible_and_skips_saturated_anchors() {
        let e = LabeledEdges::new(3, 2, vec![(0, 0), (1, 0), (1, 1)]).unwrap();
        let s = BprSampler::new(&e);
        assert_eq!(s.eligible_anchors(), &[0]);
        let a = s.sample(20, &mut ChaCha8Rng::seed_from_u64(5));
        let b = s.sample(20, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
    }

    #[test]
    fn no_collisions_over_many_samples() {
        let world = crate::data::generate_synthetic(&crate::data::SyntheticSpec::default()).unwrap();
        let s = BprSampler::new(&world.dataset.user_items);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let batch = s.sample(100_000, &mut rng);
        assert!(batch.iter().all(|t| s.positives(t.anchor).binary_search(&t.negative).is_err()));
        assert!(batch.iter().all(|t| s.positives(t.anchor).binary_search(&t.positive).is_ok()));
    }
}
