//! Group and user fusion. A group is averaged with its interest vector; a
//! user is averaged with the mean of the groups they joined.

use crate::error::{Error, Result};

/// `(e_g + interest) / 2`.
pub fn fuse_group(e_g: &[f64], interest: &[f64]) -> Result<Vec<f64>> {
    if e_g.len() != interest.len() {
        return Err(Error::Shape(format!("group vector {} vs interest {}", e_g.len(), interest.len())));
    }
    Ok(e_g.iter().zip(interest).map(|(a, b)| 0.5 * (a + b)).collect())
}

/// `(e_u + mean(groups)) / 2`, or `e_u` itself when the user has no groups.
pub fn fuse_user(e_u: &[f64], groups: &[&[f64]]) -> Result<Vec<f64>> {
    if groups.is_empty() {
        return Ok(e_u.to_vec());
    }
    if groups.iter().any(|g| g.len() != e_u.len()) {
        return Err(Error::Shape("group vectors differ in length from the user vector".into()));
    }
    let k = groups.len() as f64;
    Ok((0..e_u.len()).map(|j| 0.5 * (e_u[j] + groups.iter().map(|g| g[j]).sum::<f64>() / k)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn group_examples() {
        assert_eq!(fuse_group(&[1.5, -2.0], &[1.5, -2.0]).unwrap(), vec![1.5, -2.0]);
        assert_eq!(fuse_group(&[0.0, 0.0], &[3.0, -1.0]).unwrap(), vec![1.5, -0.5]);
        assert_eq!(fuse_group(&[2.0, 0.0], &[0.0, 2.0]).unwrap(), vec![1.0, 1.0]);
        assert!(fuse_group(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn user_examples() {
        assert_eq!(fuse_user(&[0.3, 0.7], &[]).unwrap(), vec![0.3, 0.7]);
        assert_eq!(fuse_user(&[0.3, 0.7], &[&[0.3, 0.7]]).unwrap(), vec![0.3, 0.7]);
        assert_eq!(fuse_user(&[4.0, 0.0], &[&[0.0, 4.0]]).unwrap(), vec![2.0, 2.0]);
    }

    proptest! {
        #[test]
        fn user_fusion_scales_and_ignores_order(
            e in prop::collection::vec(-5.0f64..5.0, 3),
            gs in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 1..5),
            c in -3.0f64..3.0,
        ) {
            let refs: Vec<&[f64]> = gs.iter().map(Vec::as_slice).collect();
            let base = fuse_user(&e, &refs).unwrap();
            let mut rev = refs.clone();
            rev.reverse();
            let flipped = fuse_user(&e, &rev).unwrap();
            for (a, b) in base.iter().zip(&flipped) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            let es: Vec<f64> = e.iter().map(|x| c * x).collect();
            let gss: Vec<Vec<f64>> = gs.iter().map(|g| g.iter().map(|x| c * x).collect()).collect();
            let srefs: Vec<&[f64]> = gss.iter().map(Vec::as_slice).collect();
            let scaled = fuse_user(&es, &srefs).unwrap();
            for (a, b) in base.iter().zip(&scaled) {
                prop_assert!((c * a - b).abs() < 1e-10);
            }
        }
    }
}
