use super::{Tape, Tensor, Var};
use crate::error::{Result, SomoError};

/// `|analytic − numeric| / max(1, |analytic|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(1.0)
}

/// Central difference `(f(x+eps·e_i) − f(x−eps·e_i)) / 2eps`, where `f`
/// maps a perturbed copy of `x` to a scalar.
pub fn central_difference(
    x: &Tensor,
    index: usize,
    eps: f64,
    mut f: impl FnMut(&Tensor) -> Result<f64>,
) -> Result<f64> {
    let mut probe = x.clone();
    let base = probe.data()[index];
    probe.data_mut()[index] = base + eps;
    let plus = f(&probe)?;
    probe.data_mut()[index] = base - eps;
    let minus = f(&probe)?;
    Ok((plus - minus) / (2.0 * eps))
}

fn eval_scalar<F>(f: &F, x: &Tensor) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let v = tape.constant(x.clone());
    let out = f(&mut tape, v)?;
    let value = tape.value(out);
    if value.len() != 1 {
        return Err(SomoError::dim("grad_check", value.shape(), &[1]));
    }
    let s = value.data()[0];
    if !s.is_finite() {
        return Err(SomoError::Numerical(format!("f(x) evaluated to {s}")));
    }
    Ok(s)
}

/// Largest relative error between the tape gradient of `f` at `x` and
/// central differences, over every coordinate of `x`.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let all: Vec<usize> = (0..x.len()).collect();
    grad_check_at(f, x, eps, &all)
}

/// As [`grad_check`], restricted to the listed coordinates.
pub fn grad_check_at<F>(f: F, x: &Tensor, eps: f64, coords: &[usize]) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(SomoError::Config(format!(
            "finite-difference step {eps} outside [1e-7, 1e-3]"
        )));
    }
    let mut tape = Tape::new();
    let v = tape.input(x.clone());
    let out = f(&mut tape, v)?;
    let s = tape.value(out).data()[0];
    if !s.is_finite() {
        return Err(SomoError::Numerical(format!("f(x) evaluated to {s}")));
    }
    let analytic = tape.backward(out)?.wrt(&tape, v);

    let mut worst = 0.0f64;
    for &i in coords {
        let numeric = central_difference(x, i, eps, |p| eval_scalar(&f, p))?;
        worst = worst.max(relative_error(analytic.data()[i], numeric));
    }
    Ok(worst)
}
