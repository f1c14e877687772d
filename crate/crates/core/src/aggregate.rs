//! Interest aggregator. Members' interests are pooled per group with a
//! shared attention vector, then mixed through a Gumbel-Softmax selector
//! driven by the group embedding.

use rand::Rng;

use crate::config::GumbelMode;
use crate::error::{Error, Result};
use crate::ops::softmax_temperature;
use crate::tensor::{dot, Tensor};

/// Uniform draws are clamped to this distance from 0 and 1.
pub const GUMBEL_CLAMP: f64 = 1e-10;

/// `sum_u softmax_u(w_att . i_u) i_u` over the members' interest vectors.
pub fn attention_readout(member_interests: &[&[f64]], w_att: &[f64]) -> Result<Vec<f64>> {
    let Some(first) = member_interests.first() else {
        return Err(Error::InvalidArgument("attention readout over an empty member list".into()));
    };
    let d = first.len();
    if w_att.len() != d || member_interests.iter().any(|m| m.len() != d) {
        return Err(Error::Shape("member interests and attention vector differ in length".into()));
    }
    let logits = Tensor::row(&member_interests.iter().map(|m| dot(m, w_att)).collect::<Vec<_>>());
    let gamma = softmax_temperature(&logits, 1.0)?;
    let mut out = vec![0.0; d];
    for (m, g) in member_interests.iter().zip(gamma.data()) {
        for (o, x) in out.iter_mut().zip(m.iter()) {
            *o += g * x;
        }
    }
    Ok(out)
}

/// Gumbel(0, 1) noise from a uniform draw `eps`.
pub fn gumbel_from_uniform(eps: f64) -> f64 {
    let eps = eps.clamp(GUMBEL_CLAMP, 1.0 - GUMBEL_CLAMP);
    -(-eps.ln()).ln()
}

pub fn gumbel_noise(rng: &mut impl Rng) -> f64 {
    gumbel_from_uniform(rng.random::<f64>())
}

/// A `rows x cols` matrix of independent Gumbel draws.
pub fn gumbel_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    let v = (0..rows * cols).map(|_| gumbel_noise(rng)).collect();
    Tensor::from_vec(rows, cols, v).expect("sized")
}

/// Mixture weights over a group's interests. `noise` holds one Gumbel draw
/// per interest; pass zeros for the deterministic softmax.
pub fn gumbel_softmax_weights(
    e_g: &[f64],
    interests: &[Vec<f64>],
    tau: f64,
    mode: GumbelMode,
    noise: &[f64],
) -> Result<Vec<f64>> {
    if noise.len() != interests.len() {
        return Err(Error::Shape(format!("{} noise values for {} interests", noise.len(), interests.len())));
    }
    if interests.iter().any(|i| i.len() != e_g.len()) {
        return Err(Error::Shape("interest and group vectors differ in length".into()));
    }
    let logits: Vec<f64> = interests.iter().zip(noise).map(|(i, g)| dot(e_g, i) + g).collect();
    let soft = softmax_temperature(&Tensor::row(&logits), tau)?.into_vec();
    Ok(match mode {
        GumbelMode::Soft => soft,
        GumbelMode::Hard => {
            let best = argmax(&soft);
            (0..soft.len()).map(|j| if j == best { 1.0 } else { 0.0 }).collect()
        }
    })
}

/// `sum_n weights[n] * interests[n]`.
pub fn aggregate_group_interest(weights: &[f64], interests: &[Vec<f64>]) -> Result<Vec<f64>> {
    if weights.len() != interests.len() || interests.is_empty() {
        return Err(Error::Shape(format!("{} weights for {} interests", weights.len(), interests.len())));
    }
    let d = interests[0].len();
    let mut out = vec![0.0; d];
    for (w, i) in weights.iter().zip(interests) {
        if i.len() != d {
            return Err(Error::Shape("interests differ in length".into()));
        }
        for (o, x) in out.iter_mut().zip(i) {
            *o += w * x;
        }
    }
    Ok(out)
}

/// First index of the maximum.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (j, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = j;
        }
    }
    best
}
