//! LightGCN propagation over the normalized user–item train graph, layer
//! sums and dot-product scoring.

use crate::data::NormAdjacency;
use crate::error::{Error, Result};
use crate::tensor::{dot, Tensor};

/// One propagation layer: users take their items' vectors and vice versa.
pub fn propagate_layer(adj: &NormAdjacency, users: &Tensor, items: &Tensor) -> Result<(Tensor, Tensor)> {
    let op = adj.operator();
    if users.rows() != op.rows() || items.rows() != op.cols() {
        return Err(Error::Shape(format!(
            "adjacency {}x{} against {} users and {} items",
            op.rows(),
            op.cols(),
            users.rows(),
            items.rows()
        )));
    }
    Ok((op.apply(items)?, op.apply_adjoint(users)?))
}

/// All layers `0..=k`, layer 0 being the inputs.
pub fn layer_stack(adj: &NormAdjacency, users: &Tensor, items: &Tensor, k: usize) -> Result<Vec<(Tensor, Tensor)>> {
    let mut stack = vec![(users.clone(), items.clone())];
    for _ in 0..k {
        let (u, i) = stack.last().unwrap();
        let next = propagate_layer(adj, u, i)?;
        stack.push(next);
    }
    Ok(stack)
}

/// Unweighted sum over layers.
pub fn fuse_layers(stack: &[(Tensor, Tensor)]) -> (Tensor, Tensor) {
    let (mut u, mut i) = stack[0].clone();
    for (lu, li) in &stack[1..] {
        u.add_assign(lu);
        i.add_assign(li);
    }
    (u, i)
}

pub fn score_user_item(user: &[f64], item: &[f64]) -> f64 {
    dot(user, item)
}

pub fn score_group_item(group: &[f64], item: &[f64]) -> f64 {
    dot(group, item)
}
