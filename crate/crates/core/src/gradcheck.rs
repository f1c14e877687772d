//! Central-difference gradient checking for taped losses.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// `(param index, flat coordinate, analytic, numeric)` of the worst coordinate.
    pub worst: Option<(usize, usize, f64, f64)>,
    pub coords_checked: usize,
}

/// Compares the tape's gradient of `loss_fn` against central differences.
///
/// `loss_fn` builds a scalar loss on a fresh tape from one leaf per entry of
/// `params`; it must be deterministic. Up to `max_coords` evenly strided
/// coordinates are probed per parameter (all of them when the tensor is
/// small). The error for a coordinate is
/// `|analytic - numeric| / (|analytic| + |numeric| + 1e-12)`.
pub fn finite_difference_check<F>(loss_fn: F, params: &[Tensor], h: f64, max_coords: usize) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(1e-6..=1e-4).contains(&h) {
        return Err(Error::InvalidArgument(format!("step {h} outside [1e-6, 1e-4]")));
    }
    let eval = |ps: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.param(p.clone())).collect();
        let loss = loss_fn(&mut tape, &vars)?;
        Ok(tape.value(loss).item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = loss_fn(&mut tape, &vars)?;
    let grads = tape.backward(loss);
    let analytic: Vec<Tensor> = vars.iter().zip(params).map(|(&v, p)| grads.get_or_zeros(v, p)).collect();

    let mut work: Vec<Tensor> = params.to_vec();
    let mut report = GradCheck { max_rel_error: 0.0, worst: None, coords_checked: 0 };
    for (pi, p) in params.iter().enumerate() {
        let n = p.len();
        if n == 0 {
            continue;
        }
        let stride = n.div_ceil(max_coords.max(1)).max(1);
        for idx in (0..n).step_by(stride) {
            let orig = p.data()[idx];
            work[pi].data_mut()[idx] = orig + h;
            let plus = eval(&work)?;
            work[pi].data_mut()[idx] = orig - h;
            let minus = eval(&work)?;
            work[pi].data_mut()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[pi].data()[idx];
            let err = (a - numeric).abs() / (a.abs() + numeric.abs() + 1e-12);
            report.coords_checked += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((pi, idx, a, numeric));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_at_three() {
        let r = finite_difference_check(
            |t, v| {
                let sq = t.mul(v[0], v[0]);
                Ok(t.sum(sq))
            },
            &[Tensor::scalar(3.0)],
            1e-5,
            10,
        )
        .unwrap();
        let (_, _, a, n) = r.worst.unwrap();
        assert_eq!(a, 6.0);
        assert!((n - 6.0).abs() < 1e-8);
        assert!(r.max_rel_error < 1e-8);
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let r =
            finite_difference_check(|t, _| Ok(t.constant(Tensor::scalar(4.0))), &[Tensor::row(&[1.0, 2.0])], 1e-5, 10)
                .unwrap();
        assert_eq!(r.max_rel_error, 0.0);
        assert_eq!(r.worst.map(|w| (w.2, w.3)), Some((0.0, 0.0)));
    }

    #[test]
    fn rejects_bad_step() {
        let f = |t: &mut Tape, v: &[Var]| Ok(t.sum(v[0]));
        assert!(finite_difference_check(f, &[Tensor::scalar(1.0)], 1e-2, 1).is_err());
    }
}
