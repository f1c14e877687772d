//! Training and evaluation engine for a group-aware, interest-disentangled
//! recommender.
//!
//! A user embedding is split into several interest vectors by self-gating
//! units; each group pools its members' interests with attention and mixes
//! them through a Gumbel-Softmax selector; users are fused with their groups
//! and propagated over the user–item graph with LightGCN; user–item and
//! group–item BPR losses are optimised jointly.

pub mod aggregate;
pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod disentangle;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod gradcheck;
pub mod model;
pub mod ops;
pub mod optim;
pub mod propagate;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
