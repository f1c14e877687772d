use std::collections::BTreeSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{split_holdout, Dataset, LabeledEdges};
use crate::error::{Error, Result};

/// Parameters of a planted-interest world.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n_users: usize,
    pub n_items: usize,
    pub n_groups: usize,
    /// Number of planted interests; items are cut into this many blocks.
    pub n_interests: usize,
    /// Probability that an interaction ignores the planted interests.
    pub noise: f64,
    pub seed: u64,
    pub items_per_user: usize,
    pub items_per_group: usize,
    pub min_group_size: usize,
    pub max_group_size: usize,
    /// Probability that a user carries a second interest.
    pub second_interest_prob: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_users: 300,
            n_items: 120,
            n_groups: 60,
            n_interests: 4,
            noise: 0.05,
            seed: 0,
            items_per_user: 12,
            items_per_group: 8,
            min_group_size: 3,
            max_group_size: 8,
            second_interest_prob: 0.5,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticWorld {
    pub dataset: Dataset,
    pub user_interests: Vec<Vec<usize>>,
    pub group_interest: Vec<usize>,
    pub item_interest: Vec<usize>,
}

impl SyntheticWorld {
    pub fn block(&self, interest: usize) -> Vec<usize> {
        (0..self.item_interest.len()).filter(|&i| self.item_interest[i] == interest).collect()
    }
}

/// Builds a dataset with planted interests and splits it.
///
/// Items are cut into `n_interests` contiguous blocks. Every user gets a
/// primary interest (round robin, so each interest is represented) and maybe
/// a second one; interactions come from the user's blocks except with
/// probability `noise`. Each group picks one interest, recruits members that
/// hold it and interacts with that interest's block.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticWorld> {
    let m = spec.n_interests;
    if m < 2 {
        return Err(Error::InvalidArgument("need at least two planted interests".into()));
    }
    if spec.n_items < 2 * m || spec.n_users < m || spec.n_groups == 0 {
        return Err(Error::InvalidArgument(format!(
            "infeasible world: {} users, {} items, {} groups for {m} interests",
            spec.n_users, spec.n_items, spec.n_groups
        )));
    }
    if !(0.0..=1.0).contains(&spec.noise) || spec.min_group_size == 0 || spec.min_group_size > spec.max_group_size {
        return Err(Error::InvalidArgument("noise must be in [0, 1] and group sizes ordered".into()));
    }
    let block_size = spec.n_items / m;
    let per_user = spec.items_per_user.min(block_size);
    let per_group = spec.items_per_group.min(block_size);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let item_interest: Vec<usize> = (0..spec.n_items).map(|i| (i / block_size).min(m - 1)).collect();
    let blocks: Vec<Vec<usize>> =
        (0..m).map(|c| (0..spec.n_items).filter(|&i| item_interest[i] == c).collect()).collect();

    let mut primaries: Vec<usize> = (0..spec.n_users).map(|u| u % m).collect();
    primaries.shuffle(&mut rng);
    let user_interests: Vec<Vec<usize>> = primaries
        .iter()
        .map(|&p| {
            if rng.random::<f64>() < spec.second_interest_prob {
                let mut s = rng.random_range(0..m - 1);
                if s >= p {
                    s += 1;
                }
                vec![p, s]
            } else {
                vec![p]
            }
        })
        .collect();

    let draw = |interests: &[usize], count: usize, rng: &mut ChaCha8Rng| -> Vec<usize> {
        let mut chosen = BTreeSet::new();
        let mut attempts = 0;
        while chosen.len() < count && attempts < count * 50 {
            attempts += 1;
            let item = if rng.random::<f64>() < spec.noise {
                rng.random_range(0..spec.n_items)
            } else {
                let c = *interests.choose(rng).unwrap();
                *blocks[c].choose(rng).unwrap()
            };
            chosen.insert(item);
        }
        chosen.into_iter().collect()
    };

    let mut ui = Vec::new();
    for (u, ints) in user_interests.iter().enumerate() {
        ui.extend(draw(ints, per_user, &mut rng).into_iter().map(|i| (u, i)));
    }

    let holders: Vec<Vec<usize>> =
        (0..m).map(|c| (0..spec.n_users).filter(|&u| user_interests[u].contains(&c)).collect()).collect();
    let mut members = Vec::with_capacity(spec.n_groups);
    let mut group_interest = Vec::with_capacity(spec.n_groups);
    let mut gi = Vec::new();
    for g in 0..spec.n_groups {
        let c = g % m;
        let size = rng.random_range(spec.min_group_size..=spec.max_group_size).min(holders[c].len());
        let mut pool = holders[c].clone();
        pool.shuffle(&mut rng);
        pool.truncate(size);
        members.push(pool);
        group_interest.push(c);
        gi.extend(draw(&[c], per_group, &mut rng).into_iter().map(|i| (g, i)));
    }

    let mut user_items = LabeledEdges::new(spec.n_users, spec.n_items, ui)?;
    user_items.set_labels(split_holdout(&user_items, spec.seed ^ 0x5eed))?;
    let mut group_items = LabeledEdges::new(spec.n_groups, spec.n_items, gi)?;
    group_items.set_labels(split_holdout(&group_items, spec.seed ^ 0x9e0d))?;
    let dataset =
        Dataset::new(format!("synthetic-{}", spec.seed), spec.n_users, spec.n_items, user_items, group_items, members)?;
    Ok(SyntheticWorld { dataset, user_interests, group_interest, item_interest })
}
