//! Observable parts of the multi-interest graph: user–item interactions,
//! group–item interactions and group memberships, with per-edge split
//! labels.

mod graph;
mod io;
mod sampler;
mod split;
mod synthetic;

pub use graph::{build_norm_adjacency, synthesize_group_items, NormAdjacency, DEFAULT_GROUP_ITEM_CAP};
pub use io::{
    load_dataset, load_group_members, load_interactions, load_meta, load_splits, load_unsplit_dataset, write_dataset,
    write_splits, Meta, GROUP_ITEMS_FILE, GROUP_MEMBERS_FILE, META_FILE, SPLIT_FILE, USER_ITEMS_FILE,
};
pub use sampler::{BprSampler, BprTriple};
pub use split::{split_counts, split_holdout};
pub use synthetic::{generate_synthetic, SyntheticSpec, SyntheticWorld};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::SparseMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidArgument(format!("unknown split label {other:?}"))),
        }
    }
}

/// Which side of the model an anchor belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnchorKind {
    User,
    Group,
}

impl fmt::Display for AnchorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AnchorKind::User => "user",
            AnchorKind::Group => "group",
        })
    }
}

impl FromStr for AnchorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "user" => Ok(AnchorKind::User),
            "group" => Ok(AnchorKind::Group),
            other => Err(Error::InvalidArgument(format!("unknown anchor kind {other:?}"))),
        }
    }
}

/// Anchor–item edges (anchor = user or group) with one split label each.
/// Edges are unique and sorted by `(anchor, item)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledEdges {
    n_anchors: usize,
    n_items: usize,
    edges: Vec<(usize, usize)>,
    labels: Vec<Split>,
}

impl LabeledEdges {
    /// All edges labelled train.
    pub fn new(n_anchors: usize, n_items: usize, mut edges: Vec<(usize, usize)>) -> Result<Self> {
        for &(a, i) in &edges {
            if a >= n_anchors || i >= n_items {
                return Err(Error::Dataset(format!("edge ({a}, {i}) outside {n_anchors}x{n_items}")));
            }
        }
        edges.sort_unstable();
        edges.dedup();
        let labels = vec![Split::Train; edges.len()];
        Ok(Self { n_anchors, n_items, edges, labels })
    }

    pub fn empty(n_anchors: usize, n_items: usize) -> Self {
        Self { n_anchors, n_items, edges: Vec::new(), labels: Vec::new() }
    }

    pub fn n_anchors(&self) -> usize {
        self.n_anchors
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn labels(&self) -> &[Split] {
        &self.labels
    }

    pub fn set_labels(&mut self, labels: Vec<Split>) -> Result<()> {
        if labels.len() != self.edges.len() {
            return Err(Error::Dataset(format!("{} labels for {} edges", labels.len(), self.edges.len())));
        }
        self.labels = labels;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, Split)> + '_ {
        self.edges.iter().zip(&self.labels).map(|(&(a, i), &s)| (a, i, s))
    }

    pub fn edges_in(&self, split: Split) -> Vec<(usize, usize)> {
        self.iter().filter(|e| e.2 == split).map(|e| (e.0, e.1)).collect()
    }

    /// Sorted item lists per anchor for one split.
    pub fn items_by_anchor(&self, split: Split) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_anchors];
        for (a, i, s) in self.iter() {
            if s == split {
                out[a].push(i);
            }
        }
        out
    }

    pub fn count(&self, split: Split) -> usize {
        self.labels.iter().filter(|&&s| s == split).count()
    }

    pub fn to_sparse(&self, split: Split) -> SparseMatrix {
        let triples = self.iter().filter(|e| e.2 == split).map(|(a, i, _)| (a, i, 1.0)).collect();
        SparseMatrix::from_triples(self.n_anchors, self.n_items, triples).expect("edges validated on construction")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    n_users: usize,
    n_items: usize,
    n_groups: usize,
    pub user_items: LabeledEdges,
    pub group_items: LabeledEdges,
    members: Vec<Vec<usize>>,
}

impl Dataset {
    /// Validates shapes and memberships. `members[g]` is `U(g)`; it is sorted
    /// and deduplicated here.
    pub fn new(
        name: impl Into<String>,
        n_users: usize,
        n_items: usize,
        user_items: LabeledEdges,
        group_items: LabeledEdges,
        mut members: Vec<Vec<usize>>,
    ) -> Result<Self> {
        if user_items.n_anchors() != n_users || user_items.n_items() != n_items {
            return Err(Error::Dataset("user–item matrix shape disagrees with counts".into()));
        }
        let n_groups = members.len();
        if group_items.n_anchors() != n_groups || group_items.n_items() != n_items {
            return Err(Error::Dataset("group–item matrix shape disagrees with counts".into()));
        }
        for (g, m) in members.iter_mut().enumerate() {
            m.sort_unstable();
            m.dedup();
            if m.is_empty() {
                return Err(Error::Dataset(format!("group {g} has no members")));
            }
            if let Some(&u) = m.iter().find(|&&u| u >= n_users) {
                return Err(Error::Dataset(format!("group {g} lists user {u} but n_users = {n_users}")));
            }
        }
        Ok(Self { name: name.into(), n_users, n_items, n_groups, user_items, group_items, members })
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn n_groups(&self) -> usize {
        self.n_groups
    }

    /// `U(g)` for every group.
    pub fn members(&self) -> &[Vec<usize>] {
        &self.members
    }

    /// `G(u)` for every user.
    pub fn user_groups(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_users];
        for (g, m) in self.members.iter().enumerate() {
            for &u in m {
                out[u].push(g);
            }
        }
        out
    }

    /// Binary group × user membership matrix `S`.
    pub fn membership_matrix(&self) -> SparseMatrix {
        let triples = self.members.iter().enumerate().flat_map(|(g, m)| m.iter().map(move |&u| (g, u, 1.0))).collect();
        SparseMatrix::from_triples(self.n_groups, self.n_users, triples).expect("members validated")
    }

    pub fn interactions(&self, kind: AnchorKind) -> &LabeledEdges {
        match kind {
            AnchorKind::User => &self.user_items,
            AnchorKind::Group => &self.group_items,
        }
    }

    pub fn meta(&self) -> Meta {
        Meta { n_users: self.n_users, n_items: self.n_items, n_groups: self.n_groups }
    }

    /// SHA-256 over counts, memberships and labelled edges.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(format!("{} {} {}\n", self.n_users, self.n_items, self.n_groups));
        for (tag, e) in [("u", &self.user_items), ("g", &self.group_items)] {
            for (a, i, s) in e.iter() {
                h.update(format!("{tag} {a} {i} {s}\n"));
            }
        }
        for (g, m) in self.members.iter().enumerate() {
            h.update(format!("m {g} {m:?}\n"));
        }
        hex::encode(h.finalize())
    }

    /// Relabels every edge with a fresh seeded split. With `synthesize_cap`
    /// set, group–item edges are first rebuilt from the members' training
    /// items; this is refused when the dataset already has group–item edges.
    pub fn resplit(mut self, synthesize_cap: Option<usize>, seed: u64) -> Result<Dataset> {
        self.user_items.set_labels(split_holdout(&self.user_items, seed))?;
        if let Some(cap) = synthesize_cap {
            if !self.group_items.is_empty() {
                return Err(Error::Dataset(
                    "group–item interactions already present; refusing to synthesize over them".into(),
                ));
            }
            let gi = synthesize_group_items(&self, cap);
            self.group_items = LabeledEdges::new(self.n_groups, self.n_items, gi)?;
        }
        self.group_items.set_labels(split_holdout(&self.group_items, seed.wrapping_add(1)))?;
        Ok(self)
    }

    /// Keeps a seeded random `fraction` of users (at least one), renumbering
    /// them densely. Groups left without members are dropped; items keep
    /// their ids.
    pub fn subsample_users(&self, fraction: f64, seed: u64) -> Result<Dataset> {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::InvalidArgument(format!("subsample fraction {fraction}")));
        }
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut users: Vec<usize> = (0..self.n_users).collect();
        users.shuffle(&mut rng);
        let keep = ((self.n_users as f64 * fraction).round() as usize).clamp(1, self.n_users.max(1));
        users.truncate(keep);
        users.sort_unstable();
        let mut remap = vec![usize::MAX; self.n_users];
        for (new, &old) in users.iter().enumerate() {
            remap[old] = new;
        }
        let mut ui = Vec::new();
        let mut ui_labels = Vec::new();
        for (u, i, s) in self.user_items.iter() {
            if remap[u] != usize::MAX {
                ui.push((remap[u], i));
                ui_labels.push(s);
            }
        }
        let mut members = Vec::new();
        let mut group_remap = vec![usize::MAX; self.n_groups];
        for (g, m) in self.members.iter().enumerate() {
            let kept: Vec<usize> = m.iter().filter(|&&u| remap[u] != usize::MAX).map(|&u| remap[u]).collect();
            if !kept.is_empty() {
                group_remap[g] = members.len();
                members.push(kept);
            }
        }
        let mut gi = Vec::new();
        let mut gi_labels = Vec::new();
        for (g, i, s) in self.group_items.iter() {
            if group_remap[g] != usize::MAX {
                gi.push((group_remap[g], i));
                gi_labels.push(s);
            }
        }
        // edges stay sorted because remapping is monotone
        let mut user_items = LabeledEdges::new(keep, self.n_items, ui)?;
        user_items.set_labels(ui_labels)?;
        let mut group_items = LabeledEdges::new(members.len(), self.n_items, gi)?;
        group_items.set_labels(gi_labels)?;
        Dataset::new(format!("{}-sub", self.name), keep, self.n_items, user_items, group_items, members)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_rejects_empty_and_out_of_range_groups() {
        let ui = LabeledEdges::new(3, 2, vec![(0, 0)]).unwrap();
        let gi = LabeledEdges::empty(1, 2);
        assert!(Dataset::new("t", 3, 2, ui.clone(), gi.clone(), vec![vec![]]).is_err());
        assert!(Dataset::new("t", 3, 2, ui.clone(), gi.clone(), vec![vec![5]]).is_err());
        let d = Dataset::new("t", 3, 2, ui, gi, vec![vec![2, 1, 2]]).unwrap();
        assert_eq!(d.members()[0], vec![1, 2]);
        assert_eq!(d.user_groups(), vec![vec![], vec![0], vec![0]]);
    }

    #[test]
    fn labeled_edges_dedup_and_validate() {
        let e = LabeledEdges::new(2, 3, vec![(1, 2), (0, 1), (1, 2)]).unwrap();
        assert_eq!(e.edges(), &[(0, 1), (1, 2)]);
        assert!(LabeledEdges::new(2, 3, vec![(2, 0)]).is_err());
    }

    #[test]
    fn resplit_is_seeded_and_guards_group_items() {
        let world = generate_synthetic(&SyntheticSpec::default()).unwrap();
        let a = world.dataset.clone().resplit(None, 9).unwrap();
        let b = world.dataset.clone().resplit(None, 9).unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert!(world.dataset.clone().resplit(Some(30), 9).is_err());

        let mut bare = world.dataset.clone();
        bare.group_items = LabeledEdges::empty(bare.n_groups(), bare.n_items());
        let s = bare.resplit(Some(5), 9).unwrap();
        assert!(!s.group_items.is_empty());
        assert!(s
            .group_items
            .items_by_anchor(Split::Train)
            .iter()
            .zip(s.group_items.items_by_anchor(Split::Test))
            .all(|(tr, te)| tr.len() + te.len() <= 5));
    }

    #[test]
    fn subsample_keeps_consistent_ids() {
        let world =
            generate_synthetic(&SyntheticSpec { n_users: 200, n_groups: 30, ..SyntheticSpec::default() }).unwrap();
        let sub = world.dataset.subsample_users(0.1, 3).unwrap();
        assert_eq!(sub.n_users(), 20);
        assert!(sub.members().iter().all(|m| !m.is_empty() && m.iter().all(|&u| u < 20)));
        assert_eq!(sub.user_items.labels().len(), sub.user_items.len());
        assert_eq!(sub.fingerprint(), world.dataset.subsample_users(0.1, 3).unwrap().fingerprint());
    }
}
