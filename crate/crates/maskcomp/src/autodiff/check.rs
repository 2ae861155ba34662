//! Central-difference gradient oracle.
//!
//! Every backward rule in this crate is validated against
//! [`finite_difference_check`]: the analytic gradient of a scalar-valued
//! function is compared element by element against
//! `(f(x + eps·e_i) - f(x - eps·e_i)) / (2·eps)`.

use super::{AutodiffError, Tape, TensorId};
use crate::num::Real;

/// Maximum relative disagreement between the analytic gradient of
/// `f(x)` and central differences, taken over all elements of `x`.
///
/// `f` must build the computation on the provided tape, reading the
/// perturbed input from the given leaf, and return a scalar. It is
/// invoked `2·numel(x) + 1` times and must be deterministic.
pub fn finite_difference_check<R, F>(
    f: F,
    x: &[R],
    shape: &[usize],
    eps: R,
) -> Result<f64, AutodiffError>
where
    R: Real,
    F: Fn(&mut Tape<R>, TensorId) -> TensorId,
{
    let e = eps.as_f64();
    if !(1e-7..=1e-3).contains(&e) {
        return Err(AutodiffError::BadEpsilon(e));
    }

    // analytic gradient
    let mut tape = Tape::new();
    let leaf = tape.leaf(x.to_vec(), shape, true);
    let loss = f(&mut tape, leaf);
    if tape.numel(loss) != 1 {
        return Err(AutodiffError::NonScalarFunction(tape.shape(loss).to_vec()));
    }
    tape.backward(loss)?;
    let analytic: Vec<f64> = tape.grad(leaf).unwrap().iter().map(|g| g.as_f64()).collect();

    let eval = |xs: &[R]| -> Result<f64, AutodiffError> {
        let mut t = Tape::new();
        let l = t.leaf(xs.to_vec(), shape, false);
        let out = f(&mut t, l);
        if t.numel(out) != 1 {
            return Err(AutodiffError::NonScalarFunction(t.shape(out).to_vec()));
        }
        Ok(t.value(out)[0].as_f64())
    };

    let mut worst = 0.0f64;
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + eps;
        let fp = eval(&probe)?;
        probe[i] = orig - eps;
        let fm = eval(&probe)?;
        probe[i] = orig;
        let cd = (fp - fm) / (2.0 * e);
        let denom = analytic[i].abs().max(cd.abs()).max(1e-12);
        let rel = (analytic[i] - cd).abs() / denom;
        if rel > worst {
            worst = rel;
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_has_exact_gradient() {
        // both analytic and central difference are exactly 1: dyadic
        // values and a power-of-two step keep every operation exact
        let x = vec![0.5, -1.25, 2.0];
        let eps = 2.0f64.powi(-17);
        let err = finite_difference_check(|t, leaf| t.sum(leaf), &x, &[3], eps).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn sum_of_squares_matches() {
        let x = vec![0.93, -0.41, 0.27, 1.6, -1.1, 0.05, 0.77, -0.33];
        let err = finite_difference_check(
            |t, leaf| {
                let s = t.mul(leaf, leaf);
                t.sum(s)
            },
            &x,
            &[8],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-8, "relative error {err}");
    }

    #[test]
    fn rejects_bad_epsilon() {
        let r = finite_difference_check(|t, l| t.sum(l), &[1.0f64], &[1], 1e-2);
        assert!(matches!(r, Err(AutodiffError::BadEpsilon(_))));
    }

    #[test]
    fn rejects_non_scalar_function() {
        let r = finite_difference_check(|t, l| t.add(l, l), &[1.0f64, 2.0], &[2], 1e-5);
        assert!(matches!(r, Err(AutodiffError::NonScalarFunction(_))));
    }
}
