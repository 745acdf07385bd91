//! Central finite-difference oracle for the gradient tape.

use super::matrix::Matrix;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Outcome of comparing reverse-mode gradients against central differences.
#[derive(Debug, Clone)]
pub struct GradCheck {
    /// `max_i |g_ad − g_fd| / max(1, |g_fd|)`.
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

/// Central-difference gradient `(f(θ + h·e_i) − f(θ − h·e_i)) / 2h`.
pub fn central_difference(mut eval: impl FnMut(&[f64]) -> Result<f64>, theta: &[f64], h: f64) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return Err(Error::config(format!("finite-difference step must be positive, got {h}")));
    }
    let mut probe = theta.to_vec();
    let mut out = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let plus = eval(&probe)?;
        probe[i] = orig - h;
        let minus = eval(&probe)?;
        probe[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Numeric(format!("non-finite function value probing coordinate {i}")));
        }
        out.push((plus - minus) / (2.0 * h));
    }
    Ok(out)
}

/// `max_i |a_i − n_i| / max(1, |n_i|)` and the index attaining it.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> (f64, usize) {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / n.abs().max(1.0))
        .enumerate()
        .fold((0.0, 0), |(best, bi), (i, e)| if e > best { (e, i) } else { (best, bi) })
}

/// Checks the tape's gradient of the scalar function `f` at `theta`.
///
/// `f` receives a fresh tape and a `1 × n` leaf holding the parameter
/// vector, and must return a scalar node.
pub fn grad_check<F>(f: F, theta: &[f64], h: f64) -> Result<GradCheck>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let x = tape.leaf(Matrix::row_vector(theta.to_vec()));
    let out = f(&mut tape, x)?;
    let analytic = tape.backward(out)?.get(x).into_vec();
    let numeric = central_difference(
        |p| {
            let mut t = Tape::new();
            let x = t.leaf(Matrix::row_vector(p.to_vec()));
            let out = f(&mut t, x)?;
            Ok(t.value(out).get(0, 0))
        },
        theta,
        h,
    )?;
    let (max_rel_error, worst_index) = max_relative_error(&analytic, &numeric);
    Ok(GradCheck {
        max_rel_error,
        worst_index,
        analytic,
        numeric,
    })
}
