//! The composed recommender: parameters, graph context and the taped
//! forward pass `disentangle -> aggregate -> fuse -> propagate`.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Segments, Tape, Var};
use crate::config::{GumbelMode, InterestGenerator, ModelKind, Pooling, TrainConfig, Variant};
use crate::data::{build_norm_adjacency, Dataset, NormAdjacency};
use crate::disentangle::{gate_on_tape, linear_on_tape};
use crate::error::{Error, Result};
use crate::tensor::{SparseMatrix, SparseOperator, Tensor};

/// Named trainable tensors in a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self { names: Vec::new(), tensors: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) -> usize {
        self.names.push(name.into());
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalars.
    pub fn size(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn sum_squares(&self) -> f64 {
        self.tensors.iter().map(Tensor::sum_squares).sum()
    }

    /// SHA-256 of names, shapes and little-endian values.
    pub fn checksum(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for (n, t) in self.names.iter().zip(&self.tensors) {
            h.update(n.as_bytes());
            h.update((t.rows() as u64).to_le_bytes());
            h.update((t.cols() as u64).to_le_bytes());
            for v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

impl Default for ParamSet {
    fn default() -> Self {
        Self::new()
    }
}

/// Interest generator parameters by index into the [`ParamSet`].
#[derive(Clone, Debug, PartialEq)]
enum GeneratorSlots {
    Gate { w: Vec<usize>, b: Vec<usize> },
    Linear { w: Vec<usize>, b: Vec<usize> },
    TwoLayer { w1: Vec<usize>, b1: Vec<usize>, w2: Vec<usize>, b2: Vec<usize> },
    Free { tables: Vec<usize> },
}

#[derive(Clone, Debug, PartialEq)]
struct Layout {
    user: usize,
    item: usize,
    group: Option<usize>,
    attention: Option<usize>,
    generator: Option<GeneratorSlots>,
}

/// Dataset-derived structure the forward pass needs.
pub struct GraphContext {
    pub n_users: usize,
    pub n_items: usize,
    pub n_groups: usize,
    adjacency: NormAdjacency,
    member_index: Arc<[usize]>,
    member_segments: Arc<Segments>,
    /// `|G| x |U|`, row `g` averages `U(g)`.
    group_mean: Arc<SparseOperator>,
    /// `|U| x |G|`, half-weighted pooling of `G(u)`.
    user_pool_mean: Arc<SparseOperator>,
    user_pool_sum: Arc<SparseOperator>,
    user_group_index: Arc<[usize]>,
    user_group_segments: Arc<Segments>,
    /// 0.5 for users in some group, 1 otherwise.
    user_self_weight: Tensor,
    members: Vec<Vec<usize>>,
}

impl GraphContext {
    pub fn new(dataset: &Dataset) -> Self {
        let (nu, ng) = (dataset.n_users(), dataset.n_groups());
        let members = dataset.members().to_vec();
        let user_groups = dataset.user_groups();
        let member_index: Arc<[usize]> = members.iter().flatten().copied().collect();
        let member_segments = Arc::new(Segments::from_lengths(members.iter().map(Vec::len)));
        let group_mean = SparseMatrix::from_triples(
            ng,
            nu,
            members
                .iter()
                .enumerate()
                .flat_map(|(g, m)| m.iter().map(move |&u| (g, u, 1.0 / m.len() as f64)))
                .collect(),
        )
        .expect("members in range");
        let pool = |mean: bool| {
            let triples = user_groups
                .iter()
                .enumerate()
                .flat_map(|(u, gs)| {
                    let w = if mean { 0.5 / gs.len() as f64 } else { 0.5 };
                    gs.iter().map(move |&g| (u, g, w))
                })
                .collect();
            SparseOperator::new(&SparseMatrix::from_triples(nu, ng, triples).expect("groups in range"))
        };
        let user_self_weight =
            Tensor::column(&user_groups.iter().map(|gs| if gs.is_empty() { 1.0 } else { 0.5 }).collect::<Vec<_>>());
        Self {
            n_users: nu,
            n_items: dataset.n_items(),
            n_groups: ng,
            adjacency: build_norm_adjacency(dataset),
            member_index,
            member_segments,
            group_mean: SparseOperator::new(&group_mean),
            user_pool_mean: pool(true),
            user_pool_sum: pool(false),
            user_group_index: user_groups.iter().flatten().copied().collect(),
            user_group_segments: Arc::new(Segments::from_lengths(user_groups.iter().map(Vec::len))),
            user_self_weight,
            members,
        }
    }

    pub fn adjacency(&self) -> &NormAdjacency {
        &self.adjacency
    }

    pub fn members(&self) -> &[Vec<usize>] {
        &self.members
    }
}

/// How Gumbel noise enters a forward pass.
pub enum Noise<'a> {
    /// Deterministic: plain softmax of the scores.
    Off,
    /// A fixed `|G| x M` noise matrix.
    Fixed(&'a Tensor),
}

/// Tape handles produced by one forward pass.
pub struct ForwardVars {
    pub params: Vec<Var>,
    /// Layer-summed user embeddings.
    pub users: Var,
    /// Layer-summed item embeddings.
    pub items: Var,
    /// Group vectors used for group–item scoring.
    pub groups: Var,
    /// One `|U| x d` matrix per interest.
    pub interests: Vec<Var>,
    /// `|G| x M` mixture weights.
    pub omega: Option<Var>,
}

/// Plain tensors from a noiseless forward pass.
#[derive(Clone, Debug)]
pub struct Embeddings {
    pub users: Tensor,
    pub items: Tensor,
    pub groups: Tensor,
    pub interests: Vec<Tensor>,
    pub omega: Option<Tensor>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    config: TrainConfig,
    params: ParamSet,
    layout: Layout,
}

fn normal_tensor(rows: usize, cols: usize, std: f64, rng: &mut impl Rng) -> Tensor {
    if std == 0.0 {
        return Tensor::zeros(rows, cols);
    }
    let normal = Normal::new(0.0, std).expect("finite std");
    Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| normal.sample(rng)).collect()).expect("sized")
}

impl Model {
    /// Fresh parameters for `config` (after its variant overrides) sized to
    /// the given counts.
    pub fn init(
        config: &TrainConfig,
        n_users: usize,
        n_items: usize,
        n_groups: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        config.validate()?;
        let config = config.effective();
        let d = config.dim;
        let m = config.n_interests;
        let std = config.init_std;
        let mut params = ParamSet::new();
        let user = params.push("user_emb", normal_tensor(n_users, d, std, rng));
        let item = params.push("item_emb", normal_tensor(n_items, d, std, rng));
        let (mut group, mut attention, mut generator) = (None, None, None);
        if config.uses_groups() {
            group = Some(params.push("group_emb", normal_tensor(n_groups, d, std, rng)));
            if config.variant != Variant::A {
                attention = Some(params.push("attention", normal_tensor(d, 1, std, rng)));
                let fc_std = 1.0 / (d as f64).sqrt();
                generator = Some(match config.interest_generator {
                    InterestGenerator::SelfGating => {
                        let (mut w, mut b) = (Vec::new(), Vec::new());
                        for n in 0..m {
                            w.push(params.push(format!("gate_w.{n}"), normal_tensor(d, d, config.gate_init_std, rng)));
                            b.push(params.push(format!("gate_b.{n}"), Tensor::zeros(1, d)));
                        }
                        GeneratorSlots::Gate { w, b }
                    }
                    InterestGenerator::Fc1 => {
                        let (mut w, mut b) = (Vec::new(), Vec::new());
                        for n in 0..m {
                            w.push(params.push(format!("fc_w.{n}"), normal_tensor(d, d, fc_std, rng)));
                            b.push(params.push(format!("fc_b.{n}"), Tensor::zeros(1, d)));
                        }
                        GeneratorSlots::Linear { w, b }
                    }
                    InterestGenerator::Fc2 => {
                        let (mut w1, mut b1, mut w2, mut b2) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
                        for n in 0..m {
                            w1.push(params.push(format!("fc1_w.{n}"), normal_tensor(d, d, fc_std, rng)));
                            b1.push(params.push(format!("fc1_b.{n}"), Tensor::zeros(1, d)));
                            w2.push(params.push(format!("fc2_w.{n}"), normal_tensor(d, d, fc_std, rng)));
                            b2.push(params.push(format!("fc2_b.{n}"), Tensor::zeros(1, d)));
                        }
                        GeneratorSlots::TwoLayer { w1, b1, w2, b2 }
                    }
                    InterestGenerator::FreeEmbedding => GeneratorSlots::Free {
                        tables: (0..m)
                            .map(|n| params.push(format!("interest.{n}"), normal_tensor(n_users, d, std, rng)))
                            .collect(),
                    },
                });
            }
        }
        Ok(Self { config, params, layout: Layout { user, item, group, attention, generator } })
    }

    /// Rebuilds a model from stored tensors, checking names and shapes
    /// against a fresh layout for `config`.
    pub fn from_params(config: &TrainConfig, params: ParamSet) -> Result<Self> {
        let n_users = params.get("user_emb").map(Tensor::rows).unwrap_or(0);
        let n_items = params.get("item_emb").map(Tensor::rows).unwrap_or(0);
        let n_groups = params.get("group_emb").map(Tensor::rows).unwrap_or(0);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut model = Self::init(config, n_users, n_items, n_groups, &mut rng)?;
        if model.params.names() != params.names() {
            return Err(Error::Checkpoint(format!(
                "parameter names {:?} do not match the configured model {:?}",
                params.names(),
                model.params.names()
            )));
        }
        for ((n, a), b) in params.names().iter().zip(params.tensors()).zip(model.params.tensors()) {
            if a.shape() != b.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {n} has shape {:?}, expected {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
        }
        model.params = params;
        Ok(model)
    }

    /// Effective configuration (variant overrides applied).
    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn n_users(&self) -> usize {
        self.params.tensors()[self.layout.user].rows()
    }

    pub fn n_items(&self) -> usize {
        self.params.tensors()[self.layout.item].rows()
    }

    /// Number of scalars in the interest generator.
    pub fn generator_size(&self) -> usize {
        let t = self.params.tensors();
        match &self.layout.generator {
            None => 0,
            Some(GeneratorSlots::Gate { w, b }) | Some(GeneratorSlots::Linear { w, b }) => {
                w.iter().chain(b).map(|&i| t[i].len()).sum()
            }
            Some(GeneratorSlots::TwoLayer { w1, b1, w2, b2 }) => {
                w1.iter().chain(b1).chain(w2).chain(b2).map(|&i| t[i].len()).sum()
            }
            Some(GeneratorSlots::Free { tables }) => tables.iter().map(|&i| t[i].len()).sum(),
        }
    }

    pub fn check_context(&self, ctx: &GraphContext) -> Result<()> {
        let groups = self.layout.group.map(|g| self.params.tensors()[g].rows());
        if self.n_users() != ctx.n_users || self.n_items() != ctx.n_items || groups.is_some_and(|g| g != ctx.n_groups) {
            return Err(Error::Shape(format!(
                "model sized {} users / {} items / {:?} groups, dataset has {} / {} / {}",
                self.n_users(),
                self.n_items(),
                groups,
                ctx.n_users,
                ctx.n_items,
                ctx.n_groups
            )));
        }
        Ok(())
    }

    /// Records the forward pass on `tape`. Parameters are registered as
    /// trainable leaves in [`ParamSet`] order.
    pub fn forward(&self, tape: &mut Tape, ctx: &GraphContext, noise: Noise<'_>) -> Result<ForwardVars> {
        let params: Vec<Var> = self.params.tensors().iter().map(|t| tape.param(t.clone())).collect();
        self.forward_with(tape, ctx, noise, &params)
    }

    /// Forward pass over leaves already on the tape, one per parameter in
    /// [`ParamSet`] order. Their values stand in for the stored ones.
    pub fn forward_with(
        &self,
        tape: &mut Tape,
        ctx: &GraphContext,
        noise: Noise<'_>,
        params: &[Var],
    ) -> Result<ForwardVars> {
        self.check_context(ctx)?;
        if params.len() != self.params.len() {
            return Err(Error::Shape(format!("{} leaves for {} parameters", params.len(), self.params.len())));
        }
        let c = &self.config;
        let params = params.to_vec();
        let e_u = params[self.layout.user];
        let e_v = params[self.layout.item];

        let mut interests = Vec::new();
        let mut omega = None;
        let mut fused_groups = None;
        if let Some(gi) = self.layout.group {
            let e_g = params[gi];
            let group_interest = match (&self.layout.generator, self.layout.attention) {
                (Some(slots), Some(att)) => {
                    interests = self.interests_on_tape(tape, slots, &params, e_u);
                    let pooled: Vec<Var> = interests
                        .iter()
                        .map(|&i| {
                            let gathered = tape.gather_rows(i, ctx.member_index.clone());
                            let logits = tape.matmul(gathered, params[att]);
                            let gamma = tape.segment_softmax(logits, ctx.member_segments.clone());
                            let weighted = tape.mul_rows(gathered, gamma);
                            tape.segment_sum(weighted, ctx.member_segments.clone())
                        })
                        .collect();
                    let (mixed, w) = self.mix(tape, e_g, &pooled, noise)?;
                    omega = Some(w);
                    mixed
                }
                _ => tape.spmm(&ctx.group_mean, e_u, false),
            };
            let sum = tape.add(e_g, group_interest);
            let e_star = tape.scale(sum, 0.5);
            fused_groups = Some(e_star);
        }

        let users0 = match fused_groups {
            Some(e_star) => {
                let self_w = tape.constant(ctx.user_self_weight.clone());
                let own = tape.mul_rows(e_u, self_w);
                let pooled = match c.pooling {
                    Pooling::Mean => tape.spmm(&ctx.user_pool_mean, e_star, false),
                    Pooling::Sum => tape.spmm(&ctx.user_pool_sum, e_star, false),
                    Pooling::Max => {
                        let g = tape.gather_rows(e_star, ctx.user_group_index.clone());
                        let m = tape.segment_max(g, ctx.user_group_segments.clone());
                        tape.scale(m, 0.5)
                    }
                };
                tape.add(own, pooled)
            }
            None => e_u,
        };

        let layers = if c.model == ModelKind::Mf { 0 } else { c.layers };
        let op = ctx.adjacency.operator().clone();
        let (mut u_k, mut v_k) = (users0, e_v);
        let (mut u_sum, mut v_sum) = (users0, e_v);
        for _ in 0..layers {
            let u_next = tape.spmm(&op, v_k, false);
            let v_next = tape.spmm(&op, u_k, true);
            u_sum = tape.add(u_sum, u_next);
            v_sum = tape.add(v_sum, v_next);
            (u_k, v_k) = (u_next, v_next);
        }
        let groups = match fused_groups {
            Some(g) => g,
            None => tape.spmm(&ctx.group_mean, u_sum, false),
        };
        Ok(ForwardVars { params, users: u_sum, items: v_sum, groups, interests, omega })
    }

    fn interests_on_tape(&self, tape: &mut Tape, slots: &GeneratorSlots, p: &[Var], e_u: Var) -> Vec<Var> {
        match slots {
            GeneratorSlots::Gate { w, b } => {
                w.iter().zip(b).map(|(&w, &b)| gate_on_tape(tape, e_u, p[w], p[b])).collect()
            }
            GeneratorSlots::Linear { w, b } => {
                w.iter().zip(b).map(|(&w, &b)| linear_on_tape(tape, e_u, p[w], p[b])).collect()
            }
            GeneratorSlots::TwoLayer { w1, b1, w2, b2 } => (0..w1.len())
                .map(|n| {
                    let h = linear_on_tape(tape, e_u, p[w1[n]], p[b1[n]]);
                    let h = tape.relu(h);
                    linear_on_tape(tape, h, p[w2[n]], p[b2[n]])
                })
                .collect(),
            GeneratorSlots::Free { tables } => tables.iter().map(|&t| p[t]).collect(),
        }
    }

    /// Mixture weights over the pooled interests and the resulting group
    /// interest vector.
    fn mix(&self, tape: &mut Tape, e_g: Var, pooled: &[Var], noise: Noise<'_>) -> Result<(Var, Var)> {
        let c = &self.config;
        let m = pooled.len();
        let n_groups = tape.value(e_g).rows();
        let omega = if c.variant == Variant::B {
            tape.constant(Tensor::full(n_groups, m, 1.0 / m as f64))
        } else {
            let scores: Vec<Var> = pooled.iter().map(|&i| tape.row_dot(e_g, i)).collect();
            let mut logits = tape.concat_cols(&scores);
            if let Noise::Fixed(g) = noise {
                if g.shape() != [n_groups, m] {
                    return Err(Error::Shape(format!("noise {:?}, expected [{n_groups}, {m}]", g.shape())));
                }
                let g = tape.constant(g.clone());
                logits = tape.add(logits, g);
            }
            let soft = tape.softmax_rows(logits, c.tau);
            match c.gumbel {
                GumbelMode::Soft => soft,
                GumbelMode::Hard => tape.straight_through_one_hot(soft),
            }
        };
        let mut mixed = None;
        for (n, &i) in pooled.iter().enumerate() {
            let w = tape.column(omega, n);
            let term = tape.mul_rows(i, w);
            mixed = Some(match mixed {
                None => term,
                Some(acc) => tape.add(acc, term),
            });
        }
        Ok((mixed.expect("at least one interest"), omega))
    }

    /// Noiseless forward pass for evaluation.
    pub fn embed(&self, ctx: &GraphContext) -> Result<Embeddings> {
        let mut tape = Tape::new();
        let f = self.forward(&mut tape, ctx, Noise::Off)?;
        Ok(Embeddings {
            users: tape.value(f.users).clone(),
            items: tape.value(f.items).clone(),
            groups: tape.value(f.groups).clone(),
            interests: f.interests.iter().map(|&v| tape.value(v).clone()).collect(),
            omega: f.omega.map(|v| tape.value(v).clone()),
        })
    }
}
