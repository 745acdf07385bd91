//! Layer and group normalization kernels (population variance).

use super::matrix::Matrix;
use super::real::Real;
use crate::error::{Error, Result};

/// Default epsilon for every normalization in the model.
pub const NORM_EPS: f64 = 1e-5;

fn mean_and_rstd<T: Real>(x: &[T], eps: T) -> (T, T) {
    let n = T::from_count(x.len());
    let mut sum = T::zero();
    for &v in x {
        sum += v;
    }
    let mean = sum / n;
    let mut sq = T::zero();
    for &v in x {
        let d = v - mean;
        sq += d * d;
    }
    let var = sq / n;
    (mean, T::one() / (var + eps).sqrt())
}

fn layer_norm_into<T: Real>(x: &[T], gamma: &[T], beta: &[T], eps: T, out: &mut [T]) {
    let (mean, rstd) = mean_and_rstd(x, eps);
    for i in 0..x.len() {
        out[i] = (x[i] - mean) * rstd * gamma[i] + beta[i];
    }
}

/// `(x − mean) / sqrt(var + eps) ⊙ gamma + beta` over the whole vector.
pub fn layer_norm<T: Real>(x: &[T], gamma: &[T], beta: &[T], eps: T) -> Vec<T> {
    assert!(!x.is_empty() && x.len() == gamma.len() && x.len() == beta.len());
    let mut out = vec![T::zero(); x.len()];
    layer_norm_into(x, gamma, beta, eps, &mut out);
    out
}

/// Layer norm applied independently to `groups` contiguous slices of `x`.
pub fn group_norm<T: Real>(x: &[T], groups: usize, gamma: &[T], beta: &[T], eps: T) -> Result<Vec<T>> {
    let mut out = vec![T::zero(); x.len()];
    group_norm_into(x, groups, gamma, beta, eps, &mut out)?;
    Ok(out)
}

fn group_norm_into<T: Real>(
    x: &[T],
    groups: usize,
    gamma: &[T],
    beta: &[T],
    eps: T,
    out: &mut [T],
) -> Result<()> {
    if groups == 0 || x.len() % groups != 0 {
        return Err(Error::config(format!(
            "group_norm: width {} is not divisible by {groups} groups",
            x.len()
        )));
    }
    if gamma.len() != x.len() || beta.len() != x.len() {
        return Err(Error::Shape {
            op: "group_norm",
            left: (1, x.len()),
            right: (gamma.len(), beta.len()),
        });
    }
    let g = x.len() / groups;
    for h in 0..groups {
        let s = h * g..(h + 1) * g;
        layer_norm_into(&x[s.clone()], &gamma[s.clone()], &beta[s.clone()], eps, &mut out[s]);
    }
    Ok(())
}

/// Row-wise group norm of an `n × D` matrix with `1 × D` affine rows.
pub fn group_norm_rows<T: Real>(
    x: &Matrix<T>,
    groups: usize,
    gamma: &Matrix<T>,
    beta: &Matrix<T>,
    eps: T,
) -> Result<Matrix<T>> {
    let mut out = Matrix::zeros(x.rows(), x.cols());
    for r in 0..x.rows() {
        group_norm_into(x.row(r), groups, gamma.as_slice(), beta.as_slice(), eps, out.row_mut(r))?;
    }
    Ok(out)
}

/// Gradients of [`group_norm_rows`] with respect to `(x, gamma, beta)`.
pub(crate) fn group_norm_rows_backward<T: Real>(
    x: &Matrix<T>,
    groups: usize,
    gamma: &Matrix<T>,
    eps: T,
    grad_out: &Matrix<T>,
) -> (Matrix<T>, Matrix<T>, Matrix<T>) {
    let d = x.cols();
    let g = d / groups;
    let n = T::from_count(g);
    let gam = gamma.as_slice();
    let mut gx = Matrix::zeros(x.rows(), d);
    let mut ggamma = vec![T::zero(); d];
    let mut gbeta = vec![T::zero(); d];
    let mut xhat = vec![T::zero(); g];
    let mut gxhat = vec![T::zero(); g];
    for r in 0..x.rows() {
        let xr = x.row(r);
        let gy = grad_out.row(r);
        for h in 0..groups {
            let off = h * g;
            let (mean, rstd) = mean_and_rstd(&xr[off..off + g], eps);
            let mut sum_g = T::zero();
            let mut sum_gx = T::zero();
            for i in 0..g {
                xhat[i] = (xr[off + i] - mean) * rstd;
                gxhat[i] = gy[off + i] * gam[off + i];
                ggamma[off + i] += gy[off + i] * xhat[i];
                gbeta[off + i] += gy[off + i];
                sum_g += gxhat[i];
                sum_gx += gxhat[i] * xhat[i];
            }
            let mean_g = sum_g / n;
            let mean_gx = sum_gx / n;
            let out = &mut gx.row_mut(r)[off..off + g];
            for i in 0..g {
                out[i] = rstd * (gxhat[i] - mean_g - xhat[i] * mean_gx);
            }
        }
    }
    (gx, Matrix::row_vector(ggamma), Matrix::row_vector(gbeta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_input_maps_to_zero() {
        assert_eq!(layer_norm(&[1.0f64, 1.0], &[1.0, 1.0], &[0.0, 0.0], 1e-5), vec![0.0, 0.0]);
    }

    #[test]
    fn symmetric_pair_is_unit() {
        let y = layer_norm(&[1.0f64, -1.0], &[1.0, 1.0], &[0.0, 0.0], 1e-12);
        assert!((y[0] - 1.0).abs() < 1e-9 && (y[1] + 1.0).abs() < 1e-9, "{y:?}");
    }

    #[test]
    fn beta_passes_through_on_constant_input() {
        assert_eq!(layer_norm(&[2.0f64, 2.0], &[1.0, 1.0], &[3.0, 3.0], 1e-5), vec![3.0, 3.0]);
    }

    #[test]
    fn single_group_is_layer_norm_bitwise() {
        let x = [0.3f32, -1.7, 2.2, 0.01, 5.5, -0.25];
        let gamma = [1.1f32, 0.9, 1.0, 1.3, 0.7, 1.0];
        let beta = [0.0f32, 0.1, -0.2, 0.3, 0.0, 0.05];
        assert_eq!(group_norm(&x, 1, &gamma, &beta, 1e-5).unwrap(), layer_norm(&x, &gamma, &beta, 1e-5));
    }

    #[test]
    fn unit_groups_collapse_to_beta() {
        let beta = [0.5f64, -1.0, 2.0, 0.0];
        let y = group_norm(&[7.0, -3.0, 1.0, 9.0], 4, &[1.0; 4], &beta, 1e-5).unwrap();
        assert_eq!(y, beta.to_vec());
    }

    #[test]
    fn two_groups_by_hand() {
        let y = group_norm(&[1.0f64, -1.0, 10.0, 10.0], 2, &[1.0; 4], &[0.0; 4], 1e-12).unwrap();
        let expected = [1.0, -1.0, 0.0, 0.0];
        for (a, b) in y.iter().zip(expected) {
            assert!((a - b).abs() < 1e-9, "{y:?}");
        }
    }

    #[test]
    fn indivisible_groups_is_config_error() {
        let err = group_norm(&[1.0f64; 5], 2, &[1.0; 5], &[0.0; 5], 1e-5).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    proptest! {
        #[test]
        fn standardizes_nonconstant_input(x in proptest::collection::vec(-100.0f64..100.0, 2..64)) {
            let spread = x.iter().cloned().fold(f64::MIN, f64::max) - x.iter().cloned().fold(f64::MAX, f64::min);
            prop_assume!(spread > 1e-2);
            let ones = vec![1.0; x.len()];
            let zeros = vec![0.0; x.len()];
            let y = layer_norm(&x, &ones, &zeros, 1e-10);
            let n = y.len() as f64;
            let mean = y.iter().sum::<f64>() / n;
            let std = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            prop_assert!(mean.abs() < 1e-6);
            prop_assert!((std - 1.0).abs() < 1e-6);
        }
    }
}
