use super::tape::{Tape, Var};
use super::tensor::{Element, Tensor};
use crate::error::{Error, Result};

/// Denominator floor for relative gradient errors.
pub const ABS_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Coordinate with the worst error.
    pub worst_index: Option<usize>,
    pub checked: usize,
    /// Coordinates skipped because `x ± step` crosses a ReLU kink.
    pub excluded: usize,
}

fn eval<E: Element, F>(f: &F, x: Tensor<E>, track: bool) -> Result<(Tape<E>, Var, Var)>
where
    F: Fn(&mut Tape<E>, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let leaf = tape.leaf(x, track);
    let out = f(&mut tape, leaf)?;
    if !tape.value(out).is_scalar() {
        return Err(Error::Backward("gradient check needs a scalar function"));
    }
    Ok((tape, leaf, out))
}

fn scalar<E: Element>(tape: &Tape<E>, v: Var) -> f64 {
    tape.value(v).data()[0].to_f64().unwrap_or(f64::NAN)
}

/// Compares the tape gradient of scalar `f` at `x` against central
/// differences, coordinate by coordinate.
pub fn finite_diff_check<E, F>(f: F, x: &Tensor<E>, step: E) -> Result<GradCheckReport>
where
    E: Element,
    F: Fn(&mut Tape<E>, Var) -> Result<Var>,
{
    let (tape, leaf, out) = eval(&f, x.clone(), true)?;
    let base_pattern = tape.relu_pattern();
    let grads = tape.backward(out)?;
    let analytic = grads
        .get(leaf)
        .map(|g| g.data().to_vec())
        .unwrap_or_else(|| vec![E::zero(); x.numel()]);

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: None,
        checked: 0,
        excluded: 0,
    };
    for i in 0..x.numel() {
        let mut plus = x.clone();
        plus.data_mut()[i] = plus.data()[i] + step;
        let mut minus = x.clone();
        minus.data_mut()[i] = minus.data()[i] - step;
        let span = (plus.data()[i] - minus.data()[i]).to_f64().unwrap_or(f64::NAN);

        let (tp, _, op) = eval(&f, plus, false)?;
        let (tm, _, om) = eval(&f, minus, false)?;
        if tp.relu_pattern() != base_pattern || tm.relu_pattern() != base_pattern {
            report.excluded += 1;
            continue;
        }
        let numeric = (scalar(&tp, op) - scalar(&tm, om)) / span;
        let a = analytic[i].to_f64().unwrap_or(f64::NAN);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(ABS_FLOOR);
        report.checked += 1;
        if rel.is_nan() || rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_index = Some(i);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_at_one_two() {
        let x = Tensor::<f64>::new(vec![2], vec![1.0, 2.0]).unwrap();
        let r = finite_diff_check(
            |t, x| {
                let sq = t.mul(x, x)?;
                t.sum(sq)
            },
            &x,
            1e-3,
        )
        .unwrap();
        assert_eq!(r.checked, 2);
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }

    #[test]
    fn linear_is_exact() {
        let x = Tensor::<f64>::from_fn(&[5], |i| i as f64 * 0.7 - 1.0);
        let r = finite_diff_check(
            |t, x| {
                let s = t.scale(x, 3.25)?;
                t.sum(s)
            },
            &x,
            1e-3,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-9, "{r:?}");
    }

    #[test]
    fn relu_kink_excluded() {
        let x = Tensor::<f64>::new(vec![3], vec![0.0, 1.5, -2.0]).unwrap();
        let r = finite_diff_check(
            |t, x| {
                let y = t.relu(x)?;
                t.sum(y)
            },
            &x,
            1e-3,
        )
        .unwrap();
        assert_eq!(r.excluded, 1);
        assert_eq!(r.checked, 2);
        assert!(r.max_rel_error < 1e-9);
    }
}
