//! Interest disentangler: one self-gating unit per interest carves an
//! interest vector out of a user embedding,
//! `i_u^n = e_u ⊙ σ(e_u W^n + b^n)`.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{sigmoid_scalar, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Gate weights `W^n` (`d x d`) and biases `b^n` (`1 x d`) for every
/// interest.
#[derive(Clone, Debug, PartialEq)]
pub struct GateParams {
    pub weights: Vec<Tensor>,
    pub biases: Vec<Tensor>,
}

impl GateParams {
    /// Weights drawn from `N(0, std^2)`, zero biases.
    pub fn init(n_interests: usize, dim: usize, std: f64, rng: &mut impl Rng) -> Self {
        let normal = Normal::new(0.0, std.max(f64::MIN_POSITIVE)).expect("valid std");
        let weights = (0..n_interests)
            .map(|_| {
                let v = (0..dim * dim).map(|_| if std > 0.0 { normal.sample(rng) } else { 0.0 }).collect();
                Tensor::from_vec(dim, dim, v).expect("square")
            })
            .collect();
        let biases = (0..n_interests).map(|_| Tensor::zeros(1, dim)).collect();
        Self { weights, biases }
    }

    pub fn n_interests(&self) -> usize {
        self.weights.len()
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().chain(&self.biases).map(Tensor::len).sum()
    }
}

/// One interest of one user. `interest` is 0-based.
pub fn self_gate(e_u: &[f64], gates: &GateParams, interest: usize) -> Result<Vec<f64>> {
    if interest >= gates.n_interests() {
        return Err(Error::InvalidArgument(format!(
            "interest {interest} out of range for {} gates",
            gates.n_interests()
        )));
    }
    let w = &gates.weights[interest];
    let b = gates.biases[interest].data();
    let d = e_u.len();
    if w.rows() != d {
        return Err(Error::Shape(format!("embedding of length {d} against {}x{} gate", w.rows(), w.cols())));
    }
    Ok((0..d)
        .map(|j| {
            let pre: f64 = (0..d).map(|k| e_u[k] * w.get(k, j)).sum::<f64>() + b[j];
            e_u[j] * sigmoid_scalar(pre)
        })
        .collect())
}

/// Interests of every user: element `n` of the result is the `|U| x d`
/// matrix of everyone's `n`-th interest.
pub fn disentangle_all(user_table: &Tensor, gates: &GateParams) -> Result<Vec<Tensor>> {
    let mut tape = Tape::new();
    let e = tape.constant(user_table.clone());
    let w: Vec<Var> = gates.weights.iter().map(|t| tape.constant(t.clone())).collect();
    let b: Vec<Var> = gates.biases.iter().map(|t| tape.constant(t.clone())).collect();
    if let Some(w0) = gates.weights.first() {
        if w0.rows() != user_table.cols() {
            return Err(Error::Shape(format!("user table {:?} against gate {:?}", user_table.shape(), w0.shape())));
        }
    }
    Ok((0..gates.n_interests())
        .map(|n| {
            let v = gate_on_tape(&mut tape, e, w[n], b[n]);
            tape.value(v).clone()
        })
        .collect())
}

/// Taped self-gating for a whole embedding matrix.
pub fn gate_on_tape(tape: &mut Tape, emb: Var, w: Var, b: Var) -> Var {
    let pre = tape.matmul(emb, w);
    let pre = tape.add_row(pre, b);
    let gate = tape.sigmoid(pre);
    tape.mul(emb, gate)
}

/// Taped linear layer `x W + b`.
pub fn linear_on_tape(tape: &mut Tape, x: Var, w: Var, b: Var) -> Var {
    let y = tape.matmul(x, w);
    tape.add_row(y, b)
}
