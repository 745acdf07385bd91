//! Sequence kernels shared by the parallel block forward and the tape.
//!
//! Activations for a batch of independent series are stacked as an
//! `(series · seq_len) × D` matrix, rows grouped by series. Both kernels
//! restart at every series boundary.

use super::matrix::Matrix;
use super::real::Real;
use crate::error::{Error, Result};

pub(crate) fn check_seq(x: &Matrix<impl Real>, seq_len: usize, op: &'static str) -> Result<usize> {
    if seq_len == 0 || x.rows() % seq_len != 0 {
        return Err(Error::Shape {
            op,
            left: x.shape(),
            right: (seq_len, x.cols()),
        });
    }
    Ok(x.rows() / seq_len)
}

/// `mu ⊙ x_t + (1 − mu) ⊙ x_{t−1}` for every row, where `x_{−1}` is the
/// matching row of `init` (zero when absent).
pub fn token_shift_seq<T: Real>(
    x: &Matrix<T>,
    mu: &Matrix<T>,
    seq_len: usize,
    init: Option<&Matrix<T>>,
) -> Result<Matrix<T>> {
    let series = check_seq(x, seq_len, "token_shift")?;
    let d = x.cols();
    if mu.shape() != (1, d) {
        return Err(Error::Shape {
            op: "token_shift",
            left: x.shape(),
            right: mu.shape(),
        });
    }
    if let Some(init) = init {
        if init.shape() != (series, d) {
            return Err(Error::Shape {
                op: "token_shift",
                left: (series, d),
                right: init.shape(),
            });
        }
    }
    let mu = mu.as_slice();
    let zero = vec![T::zero(); d];
    let mut out = Matrix::zeros(x.rows(), d);
    for s in 0..series {
        for t in 0..seq_len {
            let row = s * seq_len + t;
            let prev = if t > 0 {
                x.row(row - 1)
            } else {
                init.map_or(zero.as_slice(), |m| m.row(s))
            };
            let cur = x.row(row);
            let o = out.row_mut(row);
            for c in 0..d {
                o[c] = mu[c] * cur[c] + (T::one() - mu[c]) * prev[c];
            }
        }
    }
    Ok(out)
}

pub(crate) fn token_shift_backward<T: Real>(
    x: &Matrix<T>,
    mu: &Matrix<T>,
    seq_len: usize,
    grad: &Matrix<T>,
) -> (Matrix<T>, Matrix<T>) {
    let d = x.cols();
    let series = x.rows() / seq_len;
    let mu = mu.as_slice();
    let mut gx = Matrix::zeros(x.rows(), d);
    let mut gmu = vec![T::zero(); d];
    for s in 0..series {
        for t in 0..seq_len {
            let row = s * seq_len + t;
            let g = grad.row(row);
            let cur = x.row(row);
            for c in 0..d {
                let prev = if t > 0 { x.get(row - 1, c) } else { T::zero() };
                gmu[c] += g[c] * (cur[c] - prev);
            }
            {
                let gr = gx.row_mut(row);
                for c in 0..d {
                    gr[c] += g[c] * mu[c];
                }
            }
            if t > 0 {
                let gp = gx.row_mut(row - 1);
                for c in 0..d {
                    gp[c] += g[c] * (T::one() - mu[c]);
                }
            }
        }
    }
    (gx, Matrix::row_vector(gmu))
}

/// `exp(−exp(w_raw))`, mapping any finite value into (0, 1).
pub fn decay_from_raw<T: Real>(w_raw: T) -> T {
    (-(w_raw.exp())).exp()
}

/// Per-head WKV accumulators for a batch of series, laid out as
/// `[series][head][d][d]` in one flat buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct WkvStates<T> {
    pub series: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub data: Vec<T>,
}

impl<T: Real> WkvStates<T> {
    pub fn zeros(series: usize, heads: usize, head_dim: usize) -> Self {
        WkvStates {
            series,
            heads,
            head_dim,
            data: vec![T::zero(); series * heads * head_dim * head_dim],
        }
    }

    pub fn block(&self, series: usize, head: usize) -> &[T] {
        let n = self.head_dim * self.head_dim;
        let off = (series * self.heads + head) * n;
        &self.data[off..off + n]
    }

    pub fn block_mut(&mut self, series: usize, head: usize) -> &mut [T] {
        let n = self.head_dim * self.head_dim;
        let off = (series * self.heads + head) * n;
        &mut self.data[off..off + n]
    }
}

/// Multi-head WKV with receptance readout over whole sequences.
///
/// Per head, with `s` the running `d × d` accumulator:
/// `y_t = r_t · (s + diag(u)·k_tᵀ·v_t)` and then `s ← diag(w)·s + k_tᵀ·v_t`.
/// `w` is the already-transformed decay. Work is O(rows · D · d); no
/// `seq_len × seq_len` interaction is formed.
#[allow(clippy::too_many_arguments)]
pub fn wkv_scan<T: Real>(
    r: &Matrix<T>,
    k: &Matrix<T>,
    v: &Matrix<T>,
    w: &[T],
    u: &[T],
    heads: usize,
    seq_len: usize,
    init: Option<&WkvStates<T>>,
) -> Result<(Matrix<T>, WkvStates<T>)> {
    let series = check_seq(r, seq_len, "wkv")?;
    let width = r.cols();
    if k.shape() != r.shape() || v.shape() != r.shape() {
        return Err(Error::Shape {
            op: "wkv",
            left: k.shape(),
            right: v.shape(),
        });
    }
    if w.len() != width || u.len() != width {
        return Err(Error::Shape {
            op: "wkv",
            left: (1, width),
            right: (w.len(), u.len()),
        });
    }
    if heads == 0 || width % heads != 0 {
        return Err(Error::config(format!("wkv: width {width} not divisible by {heads} heads")));
    }
    let d = width / heads;
    let mut states = match init {
        Some(s) if (s.series, s.heads, s.head_dim) == (series, heads, d) => s.clone(),
        Some(s) => {
            return Err(Error::Shape {
                op: "wkv",
                left: (series, heads * d),
                right: (s.series, s.heads * s.head_dim),
            })
        }
        None => WkvStates::zeros(series, heads, d),
    };
    let mut y = Matrix::zeros(r.rows(), width);
    for s in 0..series {
        for h in 0..heads {
            let off = h * d;
            let (wh, uh) = (&w[off..off + d], &u[off..off + d]);
            let st = states.block_mut(s, h);
            for t in 0..seq_len {
                let row = s * seq_len + t;
                let rt = &r.row(row)[off..off + d];
                let kt = &k.row(row)[off..off + d];
                let vt = &v.row(row)[off..off + d];
                let yt = &mut y.row_mut(row)[off..off + d];
                let mut bonus = T::zero();
                for i in 0..d {
                    bonus += rt[i] * uh[i] * kt[i];
                }
                for i in 0..d {
                    let ri = rt[i];
                    let si = &st[i * d..(i + 1) * d];
                    for j in 0..d {
                        yt[j] += ri * si[j];
                    }
                }
                for j in 0..d {
                    yt[j] += bonus * vt[j];
                }
                for i in 0..d {
                    let (wi, ki) = (wh[i], kt[i]);
                    let si = &mut st[i * d..(i + 1) * d];
                    for j in 0..d {
                        si[j] = wi * si[j] + ki * vt[j];
                    }
                }
            }
        }
    }
    Ok((y, states))
}

pub(crate) struct WkvGrads<T> {
    pub r: Matrix<T>,
    pub k: Matrix<T>,
    pub v: Matrix<T>,
    pub w_raw: Matrix<T>,
    pub u: Matrix<T>,
}

/// Backward pass of [`wkv_scan`] from zero initial state, with the decay
/// parameterized by `w_raw`. States are recomputed one (series, head)
/// at a time, so scratch memory is `seq_len · d²`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn wkv_backward<T: Real>(
    r: &Matrix<T>,
    k: &Matrix<T>,
    v: &Matrix<T>,
    w_raw: &[T],
    u: &[T],
    heads: usize,
    seq_len: usize,
    grad: &Matrix<T>,
) -> WkvGrads<T> {
    let width = r.cols();
    let d = width / heads;
    let series = r.rows() / seq_len;
    let w: Vec<T> = w_raw.iter().map(|&x| decay_from_raw(x)).collect();
    let mut gr = Matrix::zeros(r.rows(), width);
    let mut gk = Matrix::zeros(r.rows(), width);
    let mut gv = Matrix::zeros(r.rows(), width);
    let mut gw = vec![T::zero(); width];
    let mut gu = vec![T::zero(); width];
    let dd = d * d;
    let mut history = vec![T::zero(); seq_len * dd];
    let mut acc = vec![T::zero(); dd];
    for s in 0..series {
        for h in 0..heads {
            let off = h * d;
            let (wh, uh) = (&w[off..off + d], &u[off..off + d]);
            // history[t] holds the state seen by step t.
            for x in history[..dd].iter_mut() {
                *x = T::zero();
            }
            for t in 1..seq_len {
                let row = s * seq_len + t - 1;
                let kt = &k.row(row)[off..off + d];
                let vt = &v.row(row)[off..off + d];
                let (prev, next) = history.split_at_mut(t * dd);
                let prev = &prev[(t - 1) * dd..];
                let next = &mut next[..dd];
                for i in 0..d {
                    for j in 0..d {
                        next[i * d + j] = wh[i] * prev[i * d + j] + kt[i] * vt[j];
                    }
                }
            }
            for x in acc.iter_mut() {
                *x = T::zero();
            }
            for t in (0..seq_len).rev() {
                let row = s * seq_len + t;
                let rt = &r.row(row)[off..off + d];
                let kt = &k.row(row)[off..off + d];
                let vt = &v.row(row)[off..off + d];
                let gy = &grad.row(row)[off..off + d];
                let prev = &history[t * dd..(t + 1) * dd];
                // acc = dL/d(state after step t)
                {
                    let gvr = &mut gv.row_mut(row)[off..off + d];
                    for i in 0..d {
                        for j in 0..d {
                            gvr[j] += acc[i * d + j] * kt[i];
                        }
                    }
                }
                {
                    let gkr = &mut gk.row_mut(row)[off..off + d];
                    for i in 0..d {
                        let mut sum = T::zero();
                        for j in 0..d {
                            sum += acc[i * d + j] * vt[j];
                        }
                        gkr[i] += sum;
                    }
                }
                for i in 0..d {
                    let mut sum = T::zero();
                    for j in 0..d {
                        sum += acc[i * d + j] * prev[i * d + j];
                    }
                    gw[off + i] += sum;
                }
                // Direct contribution of y_t.
                let mut gy_dot_v = T::zero();
                for j in 0..d {
                    gy_dot_v += gy[j] * vt[j];
                }
                let mut bonus = T::zero();
                for i in 0..d {
                    bonus += rt[i] * uh[i] * kt[i];
                }
                {
                    let grr = &mut gr.row_mut(row)[off..off + d];
                    for i in 0..d {
                        let mut sum = T::zero();
                        for j in 0..d {
                            sum += gy[j] * prev[i * d + j];
                        }
                        grr[i] += sum + uh[i] * kt[i] * gy_dot_v;
                    }
                }
                {
                    let gkr = &mut gk.row_mut(row)[off..off + d];
                    for i in 0..d {
                        gkr[i] += rt[i] * uh[i] * gy_dot_v;
                    }
                }
                {
                    let gvr = &mut gv.row_mut(row)[off..off + d];
                    for j in 0..d {
                        gvr[j] += bonus * gy[j];
                    }
                }
                for i in 0..d {
                    gu[off + i] += rt[i] * kt[i] * gy_dot_v;
                }
                // Propagate to the state before step t.
                for i in 0..d {
                    for j in 0..d {
                        acc[i * d + j] = wh[i] * acc[i * d + j] + rt[i] * gy[j];
                    }
                }
            }
        }
    }
    let gw_raw: Vec<T> = gw
        .iter()
        .zip(w_raw)
        .zip(&w)
        .map(|((&g, &raw), &wv)| -g * raw.exp() * wv)
        .collect();
    WkvGrads {
        r: gr,
        k: gk,
        v: gv,
        w_raw: Matrix::row_vector(gw_raw),
        u: Matrix::row_vector(gu),
    }
}
