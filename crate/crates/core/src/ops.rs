//! Stand-alone numeric primitives. The taped versions used in training live
//! on [`crate::autodiff::Tape`]; these operate on plain tensors.

use crate::autodiff::{cosine_parts, sigmoid_scalar};
use crate::error::{Error, Result};
use crate::tensor::{SparseMatrix, Tensor};

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(sigmoid_scalar)
}

/// Row-wise `softmax(logits / tau)`, stabilised by subtracting each row's
/// maximum.
pub fn softmax_temperature(logits: &Tensor, tau: f64) -> Result<Tensor> {
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("temperature must be positive, got {tau}")));
    }
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_slice_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for x in row.iter_mut() {
            *x = ((*x - max) / tau).exp();
            total += *x;
        }
        row.iter_mut().for_each(|x| *x /= total);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cosine {
    pub value: f64,
    /// Set when either input has norm below [`crate::autodiff::COSINE_EPS`].
    pub degenerate: bool,
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<Cosine> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("cosine of lengths {} and {}", a.len(), b.len())));
    }
    let (value, degenerate) = cosine_parts(a, b);
    Ok(Cosine { value, degenerate })
}

pub fn sparse_dense_matmul(a: &SparseMatrix, x: &Tensor) -> Result<Tensor> {
    a.to_csr().matmul_dense(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sigmoid_values() {
        let y = sigmoid(&Tensor::row(&[0.0, 3f64.ln()]));
        assert_eq!(y.data()[0], 0.5);
        assert!((y.data()[1] - 0.75).abs() < 1e-15);
        // saturation stays finite
        assert!(sigmoid(&Tensor::row(&[-800.0, 800.0])).is_finite());
    }

    #[test]
    fn softmax_examples() {
        let y = softmax_temperature(&Tensor::row(&[1.0, 1.0]), 0.5).unwrap();
        assert_eq!(y.data(), &[0.5, 0.5]);
        // e^2 / (e^2 + 1) = 0.880797077977882...
        let y = softmax_temperature(&Tensor::row(&[2.0, 0.0]), 1.0).unwrap();
        assert!((y.data()[0] - 0.8808).abs() < 1e-4);
        assert!((y.data()[1] - 0.1192).abs() < 1e-4);
        let y = softmax_temperature(&Tensor::row(&[2.0, 0.0]), 0.01).unwrap();
        assert!(y.data()[0] > 1.0 - 1e-8);
        assert!(softmax_temperature(&Tensor::row(&[1.0]), 0.0).is_err());
        assert!(softmax_temperature(&Tensor::row(&[1.0]), -1.0).is_err());
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap().value, 0.0);
        assert!((cosine_similarity(&[1.0, 2.0], &[2.0, 4.0]).unwrap().value - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[-1.0, 0.0]).unwrap().value, -1.0);
        let c = cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]).unwrap();
        assert_eq!(c, Cosine { value: 0.0, degenerate: true });
        assert!(cosine_similarity(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn sparse_product_hand_example() {
        let a = SparseMatrix::from_triples(2, 2, vec![(0, 0, 1.0), (0, 1, 1.0)]).unwrap();
        let x = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let y = sparse_dense_matmul(&a, &x).unwrap();
        assert_eq!(y.data(), &[4.0, 6.0, 0.0, 0.0]);
        assert!(sparse_dense_matmul(&a, &Tensor::zeros(3, 1)).is_err());
    }

    fn random_sparse(seed: u64, n: usize) -> (SparseMatrix, Tensor) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut triples = Vec::new();
        for r in 0..n {
            for c in 0..n {
                if rng.random::<f64>() < 0.2 {
                    triples.push((r, c, rng.random_range(-2.0..2.0)));
                }
            }
        }
        let x: Vec<f64> = (0..n * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        (SparseMatrix::from_triples(n, n, triples).unwrap(), Tensor::from_vec(n, 3, x).unwrap())
    }

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one_and_shift_invariant(
            logits in proptest::collection::vec(-30.0f64..30.0, 1..8),
            shift in -50.0f64..50.0,
            tau in 0.05f64..3.0,
        ) {
            let y = softmax_temperature(&Tensor::row(&logits), tau).unwrap();
            prop_assert!((y.sum() - 1.0).abs() < 1e-12);
            prop_assert!(y.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
            let shifted: Vec<f64> = logits.iter().map(|v| v + shift).collect();
            let z = softmax_temperature(&Tensor::row(&shifted), tau).unwrap();
            prop_assert!(y.max_abs_diff(&z) < 1e-12);
        }

        #[test]
        fn sparse_matches_dense_product(seed in 0u64..1000) {
            let (a, x) = random_sparse(seed, 20);
            let fast = sparse_dense_matmul(&a, &x).unwrap();
            let slow = a.to_dense().matmul(&x).unwrap();
            prop_assert!(fast.max_abs_diff(&slow) < 1e-12);
        }
    }
}
