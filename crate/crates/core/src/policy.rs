//! Linear policy rule `w = w_b + theta z`, the feasibility projection and
//! the straight-through gradient mask.

use nalgebra::{DVector, DVectorView};
use serde::{Deserialize, Serialize};

use crate::data::{ConstraintSet, PolicyMatrix};
use crate::error::{Error, Result};

const UNCHANGED_TOL: f64 = 1e-12;

/// How the straight-through estimator treats coordinates touched by the projection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskMode {
    /// Gradient flows only through coordinates the projection left unchanged.
    #[default]
    Untouched,
    /// Gradient flows through every coordinate as if the projection were the identity.
    PassThrough,
}

pub fn raw_weights(policy: &PolicyMatrix, z: DVectorView<'_, f64>) -> Result<DVector<f64>> {
    if z.len() != policy.n_signals() {
        return Err(Error::Dimension(format!(
            "signal vector has length {} but theta has {} columns",
            z.len(),
            policy.n_signals()
        )));
    }
    Ok(&policy.benchmark + &policy.theta * z)
}

/// Clips each position to `±position_cap`, then rescales if gross exposure
/// still exceeds `gross_cap`. The mask is `true` where the coordinate passed
/// through untouched.
pub fn project(w: &DVector<f64>, c: &ConstraintSet) -> (DVector<f64>, Vec<bool>) {
    let mut out = w.map(|x| x.clamp(-c.position_cap, c.position_cap));
    let mut mask: Vec<bool> = w
        .iter()
        .zip(out.iter())
        .map(|(a, b)| (a - b).abs() <= UNCHANGED_TOL)
        .collect();
    let gross: f64 = out.iter().map(|x| x.abs()).sum();
    if gross > c.gross_cap {
        out *= c.gross_cap / gross;
        mask.iter_mut().for_each(|m| *m = false);
    }
    (out, mask)
}

pub fn project_in_place(w: &mut DVector<f64>, c: &ConstraintSet) {
    let (p, _) = project(w, c);
    *w = p;
}

/// `r_f + w'r_excess`: unallocated capital earns the risk-free rate.
pub fn portfolio_return(w: &DVector<f64>, r_excess: DVectorView<'_, f64>, r_f: f64) -> Result<f64> {
    if w.len() != r_excess.len() {
        return Err(Error::Dimension(format!(
            "weights have length {} but returns have length {}",
            w.len(),
            r_excess.len()
        )));
    }
    Ok(r_f + w.dot(&r_excess))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::market_benchmark;
    use nalgebra::{dvector, DMatrix};
    use proptest::prelude::*;

    fn caps() -> ConstraintSet {
        ConstraintSet::default()
    }

    #[test]
    fn raw_weight_examples() {
        let p = PolicyMatrix::zeros(dvector![0.5, 0.5], 3).unwrap();
        let z = dvector![1.0, -2.0, 0.3];
        assert_eq!(raw_weights(&p, z.as_view()).unwrap(), p.benchmark);

        let p = PolicyMatrix::new(DMatrix::from_element(1, 1, 0.1), dvector![1.0]).unwrap();
        let w = raw_weights(&p, dvector![2.0].as_view()).unwrap();
        assert!((w[0] - 1.2).abs() < 1e-15);

        let p = PolicyMatrix::new(DMatrix::from_fn(2, 2, |i, j| (i + 2 * j) as f64), dvector![1.0, 0.0]).unwrap();
        assert_eq!(raw_weights(&p, dvector![0.0, 0.0].as_view()).unwrap(), p.benchmark);
        assert!(raw_weights(&p, dvector![1.0].as_view()).is_err());
    }

    #[test]
    fn projection_examples() {
        let (w, m) = project(&dvector![0.9, 0.0, 0.1], &caps());
        assert_eq!(w, dvector![0.6, 0.0, 0.1]);
        assert_eq!(m, vec![false, true, true]);

        let inside = dvector![0.3, -0.2, 0.5];
        let (w, m) = project(&inside, &caps());
        assert_eq!(w, inside);
        assert!(m.iter().all(|&x| x));

        let (w, m) = project(&dvector![0.6, 0.6, 0.6, 0.6], &caps());
        let expected = 0.6 * 2.0 / 2.4;
        assert!(w.iter().all(|x| (x - expected).abs() < 1e-15));
        assert!(m.iter().all(|&x| !x));
    }

    #[test]
    fn portfolio_return_examples() {
        let r = dvector![0.02, -0.01, 0.03];
        let wb = market_benchmark(3);
        assert!((portfolio_return(&wb, r.as_view(), 0.004).unwrap() - 0.024).abs() < 1e-15);
        assert_eq!(portfolio_return(&DVector::zeros(3), r.as_view(), 0.004).unwrap(), 0.004);
        let w = dvector![0.3, -0.45, 0.2];
        let oracle = 0.001 + 0.3 * 0.02 + (-0.45) * (-0.01) + 0.2 * 0.03;
        assert!((portfolio_return(&w, r.as_view(), 0.001).unwrap() - oracle).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn projection_is_idempotent_and_feasible(v in proptest::collection::vec(-3.0f64..3.0, 1..8)) {
            let c = caps();
            let w = DVector::from_vec(v);
            let (p1, _) = project(&w, &c);
            let (p2, m2) = project(&p1, &c);
            prop_assert!((&p1 - &p2).amax() <= 1e-12);
            prop_assert!(p1.iter().all(|x| x.abs() <= c.position_cap + 1e-15));
            prop_assert!(p1.iter().map(|x| x.abs()).sum::<f64>() <= c.gross_cap + 1e-12);
            // a second projection never touches anything unless it lands on the gross boundary
            if p1.iter().map(|x| x.abs()).sum::<f64>() < c.gross_cap - 1e-9 {
                prop_assert!(m2.iter().all(|&b| b));
            }
        }

        #[test]
        fn raw_weights_are_affine(
            th in proptest::collection::vec(-1.0f64..1.0, 6),
            z1 in proptest::collection::vec(-2.0f64..2.0, 3),
            z2 in proptest::collection::vec(-2.0f64..2.0, 3),
            a in -2.0f64..2.0, b in -2.0f64..2.0,
        ) {
            let p = PolicyMatrix::new(DMatrix::from_vec(2, 3, th), dvector![0.7, 0.3]).unwrap();
            let z1 = DVector::from_vec(z1);
            let z2 = DVector::from_vec(z2);
            let lhs = raw_weights(&p, (&z1 * a + &z2 * b).as_view()).unwrap();
            let rhs = raw_weights(&p, z1.as_view()).unwrap() * a + raw_weights(&p, z2.as_view()).unwrap() * b
                - &p.benchmark * (a + b - 1.0);
            prop_assert!((lhs - rhs).amax() < 1e-12);
        }
    }
}
