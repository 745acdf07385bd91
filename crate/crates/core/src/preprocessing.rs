//! Per-instance normalization and patch tokenization of univariate series.

use crate::error::{Error, Result};
use crate::numeric::{Matrix, Real};

/// Statistics captured by [`instance_normalize`] and reapplied to forecasts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormStats<T> {
    pub mean: T,
    /// Population standard deviation, floored at `eps`.
    pub std: T,
    pub eps: T,
}

impl<T: Real> NormStats<T> {
    pub fn identity() -> Self {
        NormStats {
            mean: T::zero(),
            std: T::one(),
            eps: T::from_f64_lossy(1e-5),
        }
    }
}

/// Standardizes `series` to zero mean and unit population std.
pub fn instance_normalize<T: Real>(series: &[T], eps: T) -> Result<(Vec<T>, NormStats<T>)> {
    if series.is_empty() {
        return Err(Error::data("instance_normalize: empty series"));
    }
    if !(eps > T::zero()) {
        return Err(Error::config(format!("instance_normalize: eps must be positive, got {eps}")));
    }
    if let Some(i) = series.iter().position(|v| !v.is_finite()) {
        return Err(Error::data(format!("instance_normalize: non-finite value at index {i}")));
    }
    let n = T::from_count(series.len());
    // Summing offsets from the first value keeps a constant series' mean exact.
    let pivot = series[0];
    let mut sum = T::zero();
    for &v in series {
        sum += v - pivot;
    }
    let mean = pivot + sum / n;
    let mut sq = T::zero();
    for &v in series {
        sq += (v - mean) * (v - mean);
    }
    let std = (sq / n).sqrt().max(eps);
    let normalized = series.iter().map(|&v| (v - mean) / std).collect();
    Ok((normalized, NormStats { mean, std, eps }))
}

/// Inverse of [`instance_normalize`]: `values · std + mean`.
pub fn instance_denormalize<T: Real>(values: &[T], stats: &NormStats<T>) -> Vec<T> {
    values.iter().map(|&v| v * stats.std + stats.mean).collect()
}

/// Number of patches produced from a length-`source_len` series:
/// `⌊(L − P) / S⌋ + 2`.
pub fn count_patches(source_len: usize, patch_len: usize, stride: usize) -> Result<usize> {
    if patch_len == 0 || stride == 0 {
        return Err(Error::config(format!(
            "patch length and stride must be positive (P={patch_len}, S={stride})"
        )));
    }
    if patch_len > source_len {
        return Err(Error::config(format!(
            "patch length {patch_len} exceeds series length {source_len}"
        )));
    }
    Ok((source_len - patch_len) / stride + 2)
}

/// A series cut into overlapping or disjoint windows.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSequence<T> {
    /// `N × P`, one window per row.
    pub patches: Matrix<T>,
    pub patch_len: usize,
    pub stride: usize,
    pub source_len: usize,
}

impl<T> PatchSequence<T> {
    pub fn count(&self) -> usize {
        self.patches.rows()
    }
}

/// Pads `series` with `stride` copies of its last value and emits every
/// length-`patch_len` window at step `stride` over the padded series.
pub fn make_patches<T: Real>(series: &[T], patch_len: usize, stride: usize) -> Result<PatchSequence<T>> {
    let n = count_patches(series.len(), patch_len, stride)?;
    let mut out = Matrix::zeros(n, patch_len);
    write_patches(series, patch_len, stride, out.as_mut_slice());
    Ok(PatchSequence {
        patches: out,
        patch_len,
        stride,
        source_len: series.len(),
    })
}

/// Writes the patches of `series` row-major into `out` (`N · P` values).
/// Callers validate the geometry with [`count_patches`] first.
pub(crate) fn write_patches<T: Real>(series: &[T], patch_len: usize, stride: usize, out: &mut [T]) {
    let len = series.len();
    let last = series[len - 1];
    let n = out.len() / patch_len;
    for p in 0..n {
        let start = p * stride;
        let row = &mut out[p * patch_len..(p + 1) * patch_len];
        for (j, slot) in row.iter_mut().enumerate() {
            let idx = start + j;
            *slot = if idx < len { series[idx] } else { last };
        }
    }
}
